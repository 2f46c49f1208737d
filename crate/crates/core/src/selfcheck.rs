//! Analytic self-checks of the numerical kernels against independent
//! reference implementations, run by the `selfcheck` command.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::comparison::fdr_adjust;
use crate::encoder::{pearson, ridge_fit};
use crate::feature_store::{jl_dimension, sparse_projection, FeatureMatrix, ProjectionPlan};
use crate::rng::{keyed_rng, label_key};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::eye(n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))?;
        if m[[pivot, col]].abs() < 1e-300 {
            return None;
        }
        for k in 0..n {
            m.swap([col, k], [pivot, k]);
            inv.swap([col, k], [pivot, k]);
        }
        let d = m[[col, col]];
        for k in 0..n {
            m[[col, k]] /= d;
            inv[[col, k]] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[[i, col]];
                for k in 0..n {
                    m[[i, k]] -= f * m[[col, k]];
                    inv[[i, k]] -= f * inv[[col, k]];
                }
            }
        }
    }
    Some(inv)
}

/// Ridge coefficients from the explicit inverse of `PᵀP + λI`.
pub fn ridge_reference(p: &Array2<f64>, y: &Array2<f64>, lambda: f64) -> Option<Array2<f64>> {
    let mut g = p.t().dot(p);
    for i in 0..g.nrows() {
        g[[i, i]] += lambda;
    }
    Some(gauss_jordan_inverse(&g)?.dot(&p.t().dot(y)))
}

/// Pearson correlation straight from the definition, two passes.
pub fn pearson_reference(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

/// Benjamini-Hochberg by exhaustive search for the largest passing rank.
pub fn bh_reference(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut best: Option<f64> = None;
    for &cand in p {
        let rank = p.iter().filter(|&&q| q <= cand).count();
        if cand <= rank as f64 * alpha / m as f64 && best.is_none_or(|b| cand > b) {
            best = Some(cand);
        }
    }
    p.iter().map(|&q| best.is_some_and(|b| q <= b)).collect()
}

/// Fraction of point pairs whose squared distance is preserved within `1 ± eps`.
pub fn jl_preserved_fraction(x: &Array2<f64>, y: &Array2<f64>, eps: f64) -> f64 {
    let n = x.nrows();
    let (mut ok, mut total) = (0usize, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let d0 = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum();
            let d1 = (&y.row(i) - &y.row(j)).mapv(|v| v * v).sum();
            total += 1;
            ok += usize::from((1.0 - eps) * d0 <= d1 && d1 <= (1.0 + eps) * d0);
        }
    }
    ok as f64 / total as f64
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn check_ridge() -> CheckResult {
    let mut rng = keyed_rng(1, label_key("selfcheck/ridge"), 0);
    let mut worst = 0.0f64;
    for t in 0..50 {
        let n = rng.random_range(12..50);
        let d = rng.random_range(1..10);
        let p = gaussian(n, d, &mut rng);
        let y = gaussian(n, 2, &mut rng);
        let lambda = [0.1, 1.0, 10.0][t % 3];
        let (Ok(fit), Some(reference)) = (ridge_fit(p.view(), y.view(), lambda), ridge_reference(&p, &y, lambda)) else {
            return CheckResult {
                name: "ridge",
                passed: false,
                detail: format!("instance {t} failed to solve"),
            };
        };
        let err = (&fit - &reference).mapv(f64::abs).sum() / reference.mapv(f64::abs).sum().max(1e-300);
        worst = worst.max(err);
    }
    CheckResult {
        name: "ridge",
        passed: worst <= 1e-8,
        detail: format!("max relative error {worst:.3e} (limit 1e-8)"),
    }
}

fn check_pearson() -> CheckResult {
    let mut rng = keyed_rng(1, label_key("selfcheck/pearson"), 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(3..200);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let r = pearson(&x, &y).map(|p| p.r).unwrap_or(f64::NAN);
        worst = worst.max((r - pearson_reference(&x, &y)).abs());
    }
    CheckResult {
        name: "pearson",
        passed: worst <= 1e-12,
        detail: format!("max abs deviation {worst:.3e} (limit 1e-12)"),
    }
}

fn check_bh() -> CheckResult {
    let mut rng = keyed_rng(1, label_key("selfcheck/bh"), 0);
    let mut mismatches = 0;
    for _ in 0..200 {
        let m = rng.random_range(1..=64);
        let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(3)).collect();
        match fdr_adjust(&p, 0.05) {
            Ok(r) if r.rejected == bh_reference(&p, 0.05) => {}
            _ => mismatches += 1,
        }
    }
    let worked = fdr_adjust(&[0.005, 0.011, 0.02, 0.04], 0.05).is_ok_and(|r| r.rejected == vec![true; 4])
        && fdr_adjust(&[0.001, 0.02, 0.04, 0.045, 0.3], 0.05)
            .is_ok_and(|r| r.rejected == vec![true, true, false, false, false]);
    CheckResult {
        name: "benjamini-hochberg",
        passed: mismatches == 0 && worked,
        detail: format!("{mismatches} mismatches in 200 random families; worked examples {}", if worked { "ok" } else { "FAILED" }),
    }
}

fn check_jl() -> CheckResult {
    let (n, d, eps) = (100, 4000, 0.25);
    let mut rng = keyed_rng(1, label_key("selfcheck/jl"), 0);
    let x = gaussian(n, d, &mut rng);
    let fm = FeatureMatrix::new("selfcheck", "jl", x.clone());
    let result = ProjectionPlan::new(n, d, eps, 7).and_then(|plan| sparse_projection(&fm, &plan));
    match result {
        Ok(p) => {
            let frac = jl_preserved_fraction(&x, &p.data, eps);
            CheckResult {
                name: "johnson-lindenstrauss",
                passed: frac >= 0.99 && p.dim() == jl_dimension(n, eps).unwrap_or(0),
                detail: format!("{:.4} of pairs within 1±{eps} at p = {}", frac, p.dim()),
            }
        }
        Err(e) => CheckResult {
            name: "johnson-lindenstrauss",
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn run_selfcheck() -> Vec<CheckResult> {
    vec![check_ridge(), check_pearson(), check_bh(), check_jl()]
}
