//! In-memory representations shared by every processing stage.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards; every operation returns a new value.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::{s, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("unknown channel: {0}")]
    UnknownChannel(String),
    #[error("duplicate channel label: {0}")]
    DuplicateChannel(String),
    #[error("no usable markers of kind {0}")]
    NoMarkers(MarkerKind),
    #[error("marker at sample {sample} lies outside a record of {n_samples} samples")]
    MarkerOutOfRange { sample: usize, n_samples: usize },
    #[error("bad channel index {0} out of range")]
    BadChannelIndex(usize),
    #[error("invalid sampling rate or repetition time: {0}")]
    InvalidRate(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rate mismatch: {0} vs {1}")]
    RateMismatch(f64, f64),
    #[error("statistic out of range for map kind {kind:?}: {value}")]
    StatOutOfRange { kind: StatKind, value: f64 },
    #[error("empty epoch window")]
    EmptyWindow,
    #[error("nothing to concatenate")]
    NoRuns,
}

/// Closed vocabulary of event kinds carried in a marker stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MarkerKind {
    VolumeTrigger,
    SliceTrigger,
    StimulusOn,
    StimulusOff,
    RPeak,
    Other,
}

impl fmt::Display for MarkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub sample: usize,
    pub kind: MarkerKind,
    pub label: String,
}

impl Marker {
    pub fn new(sample: usize, kind: MarkerKind, label: impl Into<String>) -> Self {
        Self { sample, kind, label: label.into() }
    }
}

/// Marker stream kept sorted by sample index (stable for equal indices).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMarkers {
    entries: Vec<Marker>,
}

impl EventMarkers {
    pub fn new(mut entries: Vec<Marker>) -> Self {
        entries.sort_by_key(|m| m.sample);
        Self { entries }
    }

    pub fn entries(&self) -> &[Marker] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Marker> {
        self.entries.iter()
    }

    pub fn of_kind(&self, kind: MarkerKind) -> impl Iterator<Item = &Marker> {
        self.entries.iter().filter(move |m| m.kind == kind)
    }

    pub fn samples_of(&self, kind: MarkerKind) -> Vec<usize> {
        self.of_kind(kind).map(|m| m.sample).collect()
    }

    pub fn count(&self, kind: MarkerKind) -> usize {
        self.of_kind(kind).count()
    }

    /// Returns a copy with `more` merged in, keeping sample order.
    pub fn merged(&self, more: impl IntoIterator<Item = Marker>) -> Self {
        let mut entries = self.entries.clone();
        entries.extend(more);
        Self::new(entries)
    }

    /// Returns a copy without markers of `kind`.
    pub fn without(&self, kind: MarkerKind) -> Self {
        Self { entries: self.entries.iter().filter(|m| m.kind != kind).cloned().collect() }
    }

    fn shifted(&self, offset: usize) -> impl Iterator<Item = Marker> + '_ {
        self.entries.iter().map(move |m| Marker { sample: m.sample + offset, ..m.clone() })
    }
}

/// Multichannel EEG time series in µV.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    channel_labels: Vec<String>,
    sampling_rate: f64,
    data: Array2<f64>,
    markers: EventMarkers,
    bad_channels: BTreeSet<usize>,
}

impl EegRecording {
    pub fn new(channel_labels: Vec<String>, sampling_rate: f64, data: Array2<f64>, markers: EventMarkers) -> Result<Self, DataError> {
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return Err(DataError::InvalidRate(sampling_rate));
        }
        if data.nrows() != channel_labels.len() {
            return Err(DataError::ShapeMismatch(format!("{} labels for {} data rows", channel_labels.len(), data.nrows())));
        }
        let mut seen = BTreeSet::new();
        for label in &channel_labels {
            if !seen.insert(label.as_str()) {
                return Err(DataError::DuplicateChannel(label.clone()));
            }
        }
        let n_samples = data.ncols();
        if let Some(m) = markers.iter().find(|m| m.sample >= n_samples) {
            return Err(DataError::MarkerOutOfRange { sample: m.sample, n_samples });
        }
        Ok(Self { channel_labels, sampling_rate, data, markers, bad_channels: BTreeSet::new() })
    }

    pub fn with_bad_channels(mut self, bad: impl IntoIterator<Item = usize>) -> Result<Self, DataError> {
        let bad: BTreeSet<usize> = bad.into_iter().collect();
        if let Some(&i) = bad.iter().find(|&&i| i >= self.n_channels()) {
            return Err(DataError::BadChannelIndex(i));
        }
        self.bad_channels = bad;
        Ok(self)
    }

    /// Same montage and markers, new sample matrix of identical shape.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self, DataError> {
        if data.dim() != self.data.dim() {
            return Err(DataError::ShapeMismatch(format!("expected {:?}, got {:?}", self.data.dim(), data.dim())));
        }
        Ok(Self { data, ..self.clone() })
    }

    pub fn with_markers(&self, markers: EventMarkers) -> Result<Self, DataError> {
        let n_samples = self.n_samples();
        if let Some(m) = markers.iter().find(|m| m.sample >= n_samples) {
            return Err(DataError::MarkerOutOfRange { sample: m.sample, n_samples });
        }
        Ok(Self { markers, ..self.clone() })
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn markers(&self) -> &EventMarkers {
        &self.markers
    }

    pub fn bad_channels(&self) -> &BTreeSet<usize> {
        &self.bad_channels
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels.iter().position(|l| l == label)
    }

    pub fn channel(&self, label: &str) -> Result<ArrayView1<'_, f64>, DataError> {
        let i = self.channel_index(label).ok_or_else(|| DataError::UnknownChannel(label.to_string()))?;
        Ok(self.data.row(i))
    }

    pub fn is_bad(&self, channel: usize) -> bool {
        self.bad_channels.contains(&channel)
    }
}

/// 4-D BOLD series. Data layout follows NIfTI: x fastest, then y, z, t.
#[derive(Debug, Clone, PartialEq)]
pub struct FmriSeries {
    dims: [usize; 4],
    voxel_size: [f64; 3],
    tr: f64,
    data: Vec<f64>,
}

impl FmriSeries {
    pub fn new(dims: [usize; 4], voxel_size: [f64; 3], tr: f64, data: Vec<f64>) -> Result<Self, DataError> {
        if !(tr.is_finite() && tr > 0.0) {
            return Err(DataError::InvalidRate(tr));
        }
        if dims[3] < 2 {
            return Err(DataError::ShapeMismatch(format!("need at least 2 volumes, got {}", dims[3])));
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(DataError::ShapeMismatch(format!("dims {dims:?} need {expected} values, got {}", data.len())));
        }
        Ok(Self { dims, voxel_size, tr, data })
    }

    /// Builds a series from a voxel-major matrix (voxels × volumes).
    pub fn from_voxel_matrix(spatial: [usize; 3], voxel_size: [f64; 3], tr: f64, matrix: &Array2<f64>) -> Result<Self, DataError> {
        let nvox = spatial.iter().product::<usize>();
        if matrix.nrows() != nvox {
            return Err(DataError::ShapeMismatch(format!("{} rows for {nvox} voxels", matrix.nrows())));
        }
        let nt = matrix.ncols();
        let mut data = vec![0.0; nvox * nt];
        for ((v, t), &x) in matrix.indexed_iter() {
            data[t * nvox + v] = x;
        }
        Self::new([spatial[0], spatial[1], spatial[2], nt], voxel_size, tr, data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2]]
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn n_volumes(&self) -> usize {
        self.dims[3]
    }

    pub fn volume(&self, t: usize) -> &[f64] {
        let n = self.n_voxels();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn voxel_series(&self, voxel: usize) -> Vec<f64> {
        let n = self.n_voxels();
        (0..self.n_volumes()).map(|t| self.data[t * n + voxel]).collect()
    }

    /// Voxel-major copy (voxels × volumes) for per-voxel statistics.
    pub fn voxel_matrix(&self) -> Array2<f64> {
        let n = self.n_voxels();
        let nt = self.n_volumes();
        Array2::from_shape_fn((n, nt), |(v, t)| self.data[t * n + v])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatKind {
    R,
    T,
    P,
    Q,
    Mask,
}

/// 3-D scalar field tagged with the statistic it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct StatMap {
    dims: [usize; 3],
    values: Vec<f64>,
    kind: StatKind,
}

impl StatMap {
    pub fn new(dims: [usize; 3], values: Vec<f64>, kind: StatKind) -> Result<Self, DataError> {
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(DataError::ShapeMismatch(format!("dims {dims:?} need {n} values, got {}", values.len())));
        }
        let ok = |v: f64| match kind {
            StatKind::R => (-1.0..=1.0).contains(&v),
            StatKind::P | StatKind::Q => (0.0..=1.0).contains(&v),
            StatKind::Mask => v == 0.0 || v == 1.0,
            StatKind::T => !v.is_nan(),
        };
        if let Some(&bad) = values.iter().find(|&&v| !ok(v)) {
            return Err(DataError::StatOutOfRange { kind, value: bad });
        }
        Ok(Self { dims, values, kind })
    }

    pub fn mask(dims: [usize; 3], flags: &[bool]) -> Result<Self, DataError> {
        Self::new(dims, flags.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(), StatKind::Mask)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> StatKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mask maps as booleans; other kinds report non-zero entries.
    pub fn flags(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v != 0.0).collect()
    }
}

/// Marker-locked windows cut from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Epochs {
    /// epochs × channels × samples_per_epoch
    pub data: Array3<f64>,
    pub origin_indices: Vec<usize>,
    pub dropped: usize,
}

impl Epochs {
    pub fn n_epochs(&self) -> usize {
        self.origin_indices.len()
    }

    pub fn samples_per_epoch(&self) -> usize {
        self.data.len_of(Axis(2))
    }
}

/// Picks channels by label, in the requested order.
pub fn select_channels<S: AsRef<str>>(rec: &EegRecording, labels: &[S]) -> Result<EegRecording, DataError> {
    let idx = labels
        .iter()
        .map(|l| rec.channel_index(l.as_ref()).ok_or_else(|| DataError::UnknownChannel(l.as_ref().to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let data = rec.data.select(Axis(0), &idx);
    let bad = idx.iter().enumerate().filter(|(_, &i)| rec.is_bad(i)).map(|(k, _)| k);
    EegRecording::new(labels.iter().map(|l| l.as_ref().to_string()).collect(), rec.sampling_rate, data, rec.markers.clone())?
        .with_bad_channels(bad)
}

/// Cuts `[marker - pre, marker + post)` windows around every marker of
/// `kind`. Windows that leave the record are dropped, never padded.
pub fn epoch_by_markers(rec: &EegRecording, kind: MarkerKind, pre_samples: usize, post_samples: usize) -> Result<Epochs, DataError> {
    let len = pre_samples + post_samples;
    if len == 0 {
        return Err(DataError::EmptyWindow);
    }
    let n = rec.n_samples();
    let mut origins: Vec<usize> = Vec::new();
    let mut dropped = 0;
    for m in rec.markers.of_kind(kind) {
        let fits = m.sample >= pre_samples && m.sample + post_samples <= n;
        let start = m.sample.wrapping_sub(pre_samples);
        if fits && origins.last().is_none_or(|&last| start > last) {
            origins.push(start);
        } else {
            dropped += 1;
        }
    }
    if origins.is_empty() {
        return Err(DataError::NoMarkers(kind));
    }
    let mut data = Array3::zeros((origins.len(), rec.n_channels(), len));
    for (e, &start) in origins.iter().enumerate() {
        data.slice_mut(s![e, .., ..]).assign(&rec.data.slice(s![.., start..start + len]));
    }
    Ok(Epochs { data, origin_indices: origins, dropped })
}

/// Types whose runs can be appended along time.
pub trait Run: Sized {
    fn concatenate(runs: &[Self]) -> Result<Self, DataError>;
}

/// Appends runs in order; later marker indices are offset by the samples
/// that precede them.
pub fn concatenate_runs<T: Run>(runs: &[T]) -> Result<T, DataError> {
    T::concatenate(runs)
}

fn rates_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

impl Run for EegRecording {
    fn concatenate(runs: &[Self]) -> Result<Self, DataError> {
        let first = runs.first().ok_or(DataError::NoRuns)?;
        for r in &runs[1..] {
            if r.channel_labels != first.channel_labels {
                return Err(DataError::ShapeMismatch("runs carry different channel sets".into()));
            }
            if !rates_match(r.sampling_rate, first.sampling_rate) {
                return Err(DataError::RateMismatch(first.sampling_rate, r.sampling_rate));
            }
        }
        let views: Vec<_> = runs.iter().map(|r| r.data.view()).collect();
        let data = ndarray::concatenate(Axis(1), &views).map_err(|e| DataError::ShapeMismatch(e.to_string()))?;
        let mut markers = Vec::new();
        let mut offset = 0;
        let mut bad = BTreeSet::new();
        for r in runs {
            markers.extend(r.markers.shifted(offset));
            offset += r.n_samples();
            bad.extend(r.bad_channels.iter().copied());
        }
        EegRecording::new(first.channel_labels.clone(), first.sampling_rate, data, EventMarkers::new(markers))?.with_bad_channels(bad)
    }
}

impl Run for FmriSeries {
    fn concatenate(runs: &[Self]) -> Result<Self, DataError> {
        let first = runs.first().ok_or(DataError::NoRuns)?;
        for r in &runs[1..] {
            if r.spatial_dims() != first.spatial_dims() {
                return Err(DataError::ShapeMismatch(format!("{:?} vs {:?}", first.spatial_dims(), r.spatial_dims())));
            }
            if !rates_match(r.tr, first.tr) {
                return Err(DataError::RateMismatch(first.tr, r.tr));
            }
        }
        let nt: usize = runs.iter().map(|r| r.n_volumes()).sum();
        let data: Vec<f64> = runs.iter().flat_map(|r| r.data.iter().copied()).collect();
        let [nx, ny, nz] = first.spatial_dims();
        FmriSeries::new([nx, ny, nz, nt], first.voxel_size, first.tr, data)
    }
}
