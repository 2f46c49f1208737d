//! Contiguous k-fold ridge encoding models scored by Pearson correlation.

mod folds;
mod pearson;
mod regression;
mod ridge;

pub use folds::{make_folds, Fold, FoldPlan, Split};
pub use pearson::{pearson, pearson_columns, Pearson};
pub use regression::{
    run_regression, score_fold_split, LambdaGroup, LayerScores, ModelFeatures, ModelScores, RidgeConfig, ScoreTensor, Selection,
};
pub use ridge::{ridge_fit, RidgeSystem};
