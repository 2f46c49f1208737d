//! Event structures, dataset alignments and peri-event response extraction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which modality anchors the event onsets of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Alignment {
    /// Word onsets; text is the prior sentence context, image the closest following frame.
    LanguageAligned,
    /// Scene cuts; image is the cut frame, text the closest following sentence.
    VisionAligned,
}

impl Alignment {
    pub const ALL: [Alignment; 2] = [Alignment::LanguageAligned, Alignment::VisionAligned];

    /// Short name used in file names and config sections.
    pub fn short_name(self) -> &'static str {
        match self {
            Alignment::LanguageAligned => "language",
            Alignment::VisionAligned => "vision",
        }
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alignment::LanguageAligned => "LanguageAligned",
            Alignment::VisionAligned => "VisionAligned",
        })
    }
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "languagealigned" | "language" => Ok(Alignment::LanguageAligned),
            "visionaligned" | "vision" => Ok(Alignment::VisionAligned),
            other => Err(Error::data(format!("unknown alignment `{other}`"))),
        }
    }
}

/// One image-text pair with its onset in the movie; the unit of resampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStructure {
    pub event_id: u64,
    pub onset_ms: f64,
    pub text: String,
    pub image_ref: String,
    pub alignment: Alignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeMeta {
    pub electrode_id: u32,
    pub subject_id: u32,
    pub region_label: String,
    pub coordinates: Option<[f64; 3]>,
}

/// A single-electrode recording.
#[derive(Clone, Debug)]
pub struct RawSignal<T> {
    pub electrode_id: u32,
    pub samples: Vec<T>,
    pub sample_rate_hz: f64,
}

impl<T> RawSignal<T> {
    pub const DEFAULT_RATE_HZ: f64 = 2000.0;

    pub fn new(electrode_id: u32, samples: Vec<T>) -> Self {
        Self {
            electrode_id,
            samples,
            sample_rate_hz: Self::DEFAULT_RATE_HZ,
        }
    }
}

/// Peri-event window split into overlapping averaging sub-windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Total window, centred on the onset.
    pub window_ms: f64,
    pub sub_window_ms: f64,
    pub stride_ms: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_ms: 4000.0,
            sub_window_ms: 200.0,
            stride_ms: 25.0,
        }
    }
}

impl WindowSpec {
    pub fn new(window_ms: f64, sub_window_ms: f64, stride_ms: f64) -> Result<Self> {
        let spec = Self {
            window_ms,
            sub_window_ms,
            stride_ms,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.window_ms, self.sub_window_ms, self.stride_ms]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.window_ms <= 0.0 || self.sub_window_ms <= 0.0 {
            return Err(Error::config(format!("window lengths must be positive: {self:?}")));
        }
        if self.stride_ms <= 0.0 {
            return Err(Error::config("stride_ms must be > 0"));
        }
        if self.sub_window_ms > self.window_ms {
            return Err(Error::config(format!(
                "sub_window_ms ({}) exceeds window_ms ({})",
                self.sub_window_ms, self.window_ms
            )));
        }
        Ok(())
    }

    /// Number of sub-window bins, `floor((window - sub) / stride) + 1`.
    pub fn bin_count(&self) -> Result<usize> {
        self.validate()?;
        let span = (self.window_ms - self.sub_window_ms) / self.stride_ms;
        // guard against 199.99999 from decimal strides
        Ok((span + 1e-9).floor() as usize + 1)
    }

    /// Bin centres relative to the onset, in milliseconds.
    pub fn bin_centers_ms(&self) -> Result<Vec<f64>> {
        let n = self.bin_count()?;
        let start = -self.window_ms / 2.0 + self.sub_window_ms / 2.0;
        Ok((0..n).map(|b| start + b as f64 * self.stride_ms).collect())
    }

    /// Window, sub-window and stride expressed in samples at `rate_hz`.
    pub fn sample_counts(&self, rate_hz: f64) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(Error::config(format!("sample rate must be positive, got {rate_hz}")));
        }
        let to_samples = |ms: f64, name: &str| -> Result<usize> {
            let s = ms * rate_hz / 1000.0;
            let r = s.round();
            if (s - r).abs() > 1e-6 || r < 1.0 {
                return Err(Error::config(format!(
                    "{name} = {ms} ms is not a whole number of samples at {rate_hz} Hz"
                )));
            }
            Ok(r as usize)
        };
        Ok((
            to_samples(self.window_ms, "window_ms")?,
            to_samples(self.sub_window_ms, "sub_window_ms")?,
            to_samples(self.stride_ms, "stride_ms")?,
        ))
    }
}

/// Electrode × event × bin mean-activity targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseTensor<T> {
    pub electrodes: Vec<ElectrodeMeta>,
    /// `[n_electrodes, n_events, n_bins]`
    pub values: Array3<T>,
    pub bin_centers_ms: Vec<f64>,
}

impl<T: Real> ResponseTensor<T> {
    pub fn new(electrodes: Vec<ElectrodeMeta>, values: Array3<T>, bin_centers_ms: Vec<f64>) -> Result<Self> {
        let (e, _, b) = values.dim();
        if e != electrodes.len() {
            return Err(Error::data(format!(
                "response tensor has {e} electrode rows but {} electrode records",
                electrodes.len()
            )));
        }
        if b != bin_centers_ms.len() {
            return Err(Error::data(format!(
                "response tensor has {b} bins but {} bin centres",
                bin_centers_ms.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("response tensor contains missing or non-finite values"));
        }
        Ok(Self {
            electrodes,
            values,
            bin_centers_ms,
        })
    }

    pub fn n_electrodes(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_events(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_bins(&self) -> usize {
        self.values.dim().2
    }

    pub fn n_targets(&self) -> usize {
        self.n_electrodes() * self.n_bins()
    }

    /// Regression targets, `[n_events, n_electrodes * n_bins]` with column `e * n_bins + b`.
    pub fn targets(&self) -> Array2<T> {
        let (e, n, b) = self.values.dim();
        let mut out = Array2::zeros((n, e * b));
        for ((ei, i, bi), v) in self.values.indexed_iter() {
            out[[i, ei * b + bi]] = *v;
        }
        out
    }

    pub fn select_events(&self, rows: &[usize]) -> Self {
        Self {
            electrodes: self.electrodes.clone(),
            values: self.values.select(Axis(1), rows),
            bin_centers_ms: self.bin_centers_ms.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    /// Window starts before the first sample.
    BeforeRecordingStart,
    /// Window extends past the last sample.
    PastRecordingEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectedEvent {
    pub event_id: u64,
    pub electrode_id: u32,
    pub reason: RejectReason,
}

/// Binned responses of one electrode for the events whose window fits the recording.
#[derive(Clone, Debug)]
pub struct Extraction<T> {
    /// `[kept events, n_bins]`
    pub values: Array2<T>,
    /// Indices into the input event list.
    pub kept: Vec<usize>,
    pub rejected: Vec<RejectedEvent>,
}

/// Bin means of one electrode: `value[e, b]` is the mean of the samples in the
/// half-open sub-window `b` of event `e`. Events whose window leaves the
/// recording are dropped and reported.
pub fn extract_response<T: Real>(
    signal: &RawSignal<T>,
    events: &[EventStructure],
    spec: &WindowSpec,
) -> Result<Extraction<T>> {
    let (window, sub, stride) = spec.sample_counts(signal.sample_rate_hz)?;
    let n_bins = spec.bin_count()?;
    let per_ms = signal.sample_rate_hz / 1000.0;
    let len = signal.samples.len();
    let inv_sub = T::one() / T::from_usize_lossy(sub);

    let mut kept = Vec::with_capacity(events.len());
    let mut rejected = Vec::new();
    let mut rows: Vec<T> = Vec::with_capacity(events.len() * n_bins);
    for (idx, event) in events.iter().enumerate() {
        // first sample at or after the window start
        let start = ((event.onset_ms - spec.window_ms / 2.0) * per_ms - 1e-9).ceil();
        let reason = if start < 0.0 {
            Some(RejectReason::BeforeRecordingStart)
        } else if start as usize + window > len {
            Some(RejectReason::PastRecordingEnd)
        } else {
            None
        };
        if let Some(reason) = reason {
            log::debug!("dropping event {} on electrode {}: {reason:?}", event.event_id, signal.electrode_id);
            rejected.push(RejectedEvent {
                event_id: event.event_id,
                electrode_id: signal.electrode_id,
                reason,
            });
            continue;
        }
        let start = start as usize;
        for b in 0..n_bins {
            let lo = start + b * stride;
            let sum: T = signal.samples[lo..lo + sub].iter().copied().sum();
            rows.push(sum * inv_sub);
        }
        kept.push(idx);
    }
    let values = Array2::from_shape_vec((kept.len(), n_bins), rows)
        .map_err(|e| Error::data(format!("response shape: {e}")))?;
    Ok(Extraction {
        values,
        kept,
        rejected,
    })
}

/// Extracts every electrode and assembles a tensor over the events kept by all
/// electrodes. Returns the tensor, the kept events and the rejection log.
pub fn build_response_tensor<T: Real>(
    signals: &[RawSignal<T>],
    electrodes: Vec<ElectrodeMeta>,
    events: &[EventStructure],
    spec: &WindowSpec,
) -> Result<(ResponseTensor<T>, Vec<EventStructure>, Vec<RejectedEvent>)> {
    if signals.len() != electrodes.len() {
        return Err(Error::data(format!(
            "{} signals but {} electrode records",
            signals.len(),
            electrodes.len()
        )));
    }
    let extractions: Vec<Extraction<T>> = signals
        .par_iter()
        .map(|s| extract_response(s, events, spec))
        .collect::<Result<_>>()?;

    let mut keep = vec![true; events.len()];
    let mut rejected = Vec::new();
    for ex in &extractions {
        for r in &ex.rejected {
            if let Some(pos) = events.iter().position(|e| e.event_id == r.event_id) {
                keep[pos] = false;
            }
        }
        rejected.extend(ex.rejected.iter().cloned());
    }
    let kept_idx: Vec<usize> = (0..events.len()).filter(|&i| keep[i]).collect();
    let n_bins = spec.bin_count()?;
    let mut values = Array3::zeros((signals.len(), kept_idx.len(), n_bins));
    for (e, ex) in extractions.iter().enumerate() {
        let local: BTreeMap<usize, usize> = ex.kept.iter().enumerate().map(|(row, &ev)| (ev, row)).collect();
        for (out_row, ev) in kept_idx.iter().enumerate() {
            let row = local[ev];
            values
                .slice_mut(ndarray::s![e, out_row, ..])
                .assign(&ex.values.row(row));
        }
    }
    let kept_events = kept_idx.iter().map(|&i| events[i].clone()).collect();
    let tensor = ResponseTensor::new(electrodes, values, spec.bin_centers_ms()?)?;
    Ok((tensor, kept_events, rejected))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonMonotoneOnsets,
    NegativeOnset,
    MixedAlignment,
    EventCountMismatch,
    BinCountMismatch,
    DuplicateElectrode,
    NonFiniteValue,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

/// Structural checks on an event list and its response tensor.
pub fn validate_dataset<T: Real>(
    events: &[EventStructure],
    responses: &ResponseTensor<T>,
    window: Option<&WindowSpec>,
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |kind, message: String| violations.push(Violation { kind, message });

    for ev in events.iter().filter(|e| e.onset_ms < 0.0 || !e.onset_ms.is_finite()) {
        push(
            ViolationKind::NegativeOnset,
            format!("event {} has onset {}", ev.event_id, ev.onset_ms),
        );
    }
    if let Some(pair) = events
        .windows(2)
        .find(|w| w[1].onset_ms < w[0].onset_ms || w[1].event_id <= w[0].event_id)
    {
        push(
            ViolationKind::NonMonotoneOnsets,
            format!(
                "non-monotone onsets: event {} ({} ms) follows event {} ({} ms)",
                pair[1].event_id, pair[1].onset_ms, pair[0].event_id, pair[0].onset_ms
            ),
        );
    }
    let alignments: BTreeSet<Alignment> = events.iter().map(|e| e.alignment).collect();
    if alignments.len() > 1 {
        push(
            ViolationKind::MixedAlignment,
            format!("dataset mixes alignments {alignments:?}"),
        );
    }
    if events.len() != responses.n_events() {
        push(
            ViolationKind::EventCountMismatch,
            format!("{} events but {} response rows", events.len(), responses.n_events()),
        );
    }
    if responses.bin_centers_ms.len() != responses.n_bins() {
        push(
            ViolationKind::BinCountMismatch,
            format!(
                "{} bin centres for {} bins",
                responses.bin_centers_ms.len(),
                responses.n_bins()
            ),
        );
    }
    if let Some(spec) = window {
        match spec.bin_count() {
            Ok(n) if n != responses.n_bins() => push(
                ViolationKind::BinCountMismatch,
                format!("window spec gives {n} bins, tensor has {}", responses.n_bins()),
            ),
            Ok(_) => {}
            Err(e) => push(ViolationKind::BinCountMismatch, e.to_string()),
        }
    }
    let mut seen = BTreeSet::new();
    for el in &responses.electrodes {
        if !seen.insert((el.subject_id, el.electrode_id)) {
            push(
                ViolationKind::DuplicateElectrode,
                format!(
                    "duplicate electrode {} for subject {}",
                    el.electrode_id, el.subject_id
                ),
            );
        }
    }
    let non_finite = responses.values.iter().filter(|v| !v.is_finite()).count();
    if non_finite > 0 {
        push(
            ViolationKind::NonFiniteValue,
            format!("{non_finite} missing or non-finite response values"),
        );
    }

    ValidationReport {
        passed: violations.is_empty(),
        violations,
    }
}
