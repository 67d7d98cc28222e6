//! Hemodynamic predictors, voxel-wise correlation and GLM maps, FDR
//! thresholding, map comparison and EEG spectral contrasts.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::datamodel::{DataError, EegRecording, FmriSeries, MarkerKind, StatKind, StatMap};
use crate::dsp::{self, analytic_envelope, band_power, bin_to_tr, design_bandpass, filt_zero_phase, DspError, PsdEstimate};

/// Variance at or below which a voxel is treated as outside the brain.
pub const MIN_VOXEL_VARIANCE: f64 = 1e-12;
/// |t| ceiling for exact fits.
pub const T_MAX: f64 = 1e6;
pub const DEFAULT_Q: f64 = 0.05;
pub const PREDICTOR_ORDER: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("block of {block_s} s is not a whole number of {tr_s} s volumes")]
    NonIntegerBlock { block_s: f64, tr_s: f64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least 3 samples, got {0}")]
    DegenerateSample(usize),
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("PSD frequency grids differ")]
    GridMismatch,
    #[error("montages differ")]
    MontageMismatch,
    #[error("maps have different shapes")]
    ShapeMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Double-gamma shape parameters, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrfParams {
    pub peak_delay: f64,
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    pub ratio: f64,
    pub duration: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        Self { peak_delay: 6.0, undershoot_delay: 16.0, peak_dispersion: 1.0, undershoot_dispersion: 1.0, ratio: 6.0, duration: 32.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hrf {
    pub samples: Vec<f64>,
    pub tr: f64,
    pub params: HrfParams,
}

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * t.ln() - t / scale - ln_gamma(shape) - shape * scale.ln()).exp()
}

impl HrfParams {
    /// Unnormalised response at time `t` seconds.
    pub fn eval(&self, t: f64) -> f64 {
        let a1 = self.peak_delay / self.peak_dispersion;
        let a2 = self.undershoot_delay / self.undershoot_dispersion;
        gamma_pdf(t, a1, self.peak_dispersion) - gamma_pdf(t, a2, self.undershoot_dispersion) / self.ratio
    }
}

pub fn canonical_hrf(tr_s: f64) -> Hrf {
    hrf_with(tr_s, HrfParams::default())
}

/// Samples the double-gamma on `0, tr, 2 tr, …` up to `duration` and scales
/// the largest sample to 1.
pub fn hrf_with(tr_s: f64, params: HrfParams) -> Hrf {
    let n = (params.duration / tr_s + 1e-9).floor() as usize + 1;
    let raw: Vec<f64> = (0..n).map(|i| params.eval(i as f64 * tr_s)).collect();
    let peak = raw.iter().cloned().fold(f64::MIN, f64::max);
    Hrf { samples: raw.iter().map(|v| v / peak).collect(), tr: tr_s, params }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictorKind {
    EegEnvelope,
    Boxcar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub channel: String,
    pub band_hz: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub values: Vec<f64>,
    pub kind: PredictorKind,
    pub tr: f64,
    pub provenance: Option<Provenance>,
}

/// Alternating on/off spans of `block_s` starting with `first_on`.
pub fn boxcar_regressor(block_s: f64, n_volumes: usize, tr_s: f64, first_on: bool) -> Result<Predictor, FusionError> {
    let ratio = block_s / tr_s;
    let per = ratio.round();
    if !(tr_s > 0.0) || per < 1.0 || (ratio - per).abs() > 1e-9 {
        return Err(FusionError::NonIntegerBlock { block_s, tr_s });
    }
    let per = per as usize;
    let values = (0..n_volumes).map(|i| if (i / per).is_multiple_of(2) == first_on { 1.0 } else { 0.0 }).collect();
    Ok(Predictor { values, kind: PredictorKind::Boxcar, tr: tr_s, provenance: None })
}

/// Causal convolution, truncated to the input length.
pub fn convolve_hrf(series: &[f64], hrf: &Hrf) -> Vec<f64> {
    (0..series.len()).map(|i| hrf.samples.iter().take(i + 1).enumerate().map(|(k, h)| h * series[i - k]).sum()).collect()
}

/// Zero mean, unit population variance. Constant input maps to zeros.
pub fn zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    if sd <= 1e-15 * m.abs().max(1.0) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - m) / sd).collect()
}

/// Boxcar convolved with the HRF and z-scored.
pub fn boxcar_predictor(block_s: f64, n_volumes: usize, tr_s: f64, first_on: bool, hrf: &Hrf) -> Result<Predictor, FusionError> {
    let b = boxcar_regressor(block_s, n_volumes, tr_s, first_on)?;
    Ok(Predictor { values: zscore(&convolve_hrf(&b.values, hrf)), ..b })
}

/// Band-limited power of one EEG channel on the fMRI grid: band-pass,
/// envelope, TR averaging, HRF convolution, z-score. Time zero is the first
/// volume trigger when the recording has one.
pub fn build_eeg_predictor(
    rec: &EegRecording,
    channel: &str,
    band_hz: (f64, f64),
    tr_s: f64,
    n_volumes: usize,
    hrf: &Hrf,
) -> Result<Predictor, FusionError> {
    let x = rec.channel(channel)?;
    let start = rec.markers().samples_of(MarkerKind::VolumeTrigger).first().copied().unwrap_or(0);
    let sos = design_bandpass(band_hz.0, band_hz.1, PREDICTOR_ORDER, rec.sampling_rate())?;
    let filtered = filt_zero_phase(&x.to_vec(), &sos)?;
    let env = analytic_envelope(&filtered)?;
    let binned = bin_to_tr(&env[start..], rec.sampling_rate(), tr_s, n_volumes)?;
    Ok(Predictor {
        values: zscore(&convolve_hrf(&binned, hrf)),
        kind: PredictorKind::EegEnvelope,
        tr: tr_s,
        provenance: Some(Provenance { channel: channel.to_string(), band_hz }),
    })
}

/// Voxel-major copy of a series, one contiguous row per voxel.
fn voxel_rows(fmri: &FmriSeries) -> Vec<Vec<f64>> {
    let nv = fmri.n_voxels();
    let nt = fmri.n_volumes();
    let d = fmri.data();
    (0..nv).into_par_iter().map(|v| (0..nt).map(|t| d[t * nv + v]).collect()).collect()
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// In-brain mask: voxels whose temporal variance exceeds the floor.
pub fn brain_mask(fmri: &FmriSeries) -> Vec<bool> {
    voxel_rows(fmri).par_iter().map(|s| variance(s) > MIN_VOXEL_VARIANCE).collect()
}

/// Two-pass Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub r: StatMap,
    /// true where the voxel had usable variance
    pub mask: Vec<bool>,
}

/// Per-voxel Pearson r against the predictor; flat voxels get r = 0 and
/// are cleared in the mask.
pub fn pearson_map(fmri: &FmriSeries, predictor: &[f64]) -> Result<CorrelationMap, FusionError> {
    if predictor.len() != fmri.n_volumes() {
        return Err(FusionError::LengthMismatch { expected: fmri.n_volumes(), got: predictor.len() });
    }
    let (r, mask): (Vec<f64>, Vec<bool>) = voxel_rows(fmri)
        .par_iter()
        .map(|s| if variance(s) > MIN_VOXEL_VARIANCE { (pearson(s, predictor), true) } else { (0.0, false) })
        .unzip();
    Ok(CorrelationMap { r: StatMap::new(fmri.spatial_dims(), r, StatKind::R)?, mask })
}

/// Two-sided p of Student t with `dof` degrees of freedom.
pub fn t_to_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Two-sided p of a sample correlation from `n` pairs.
pub fn r_to_p(r: f64, n: usize) -> Result<f64, FusionError> {
    if n < 3 {
        return Err(FusionError::DegenerateSample(n));
    }
    if !(r.abs() <= 1.0) {
        return Err(FusionError::InvalidParameter(format!("|r| = {r} exceeds 1")));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let dof = (n - 2) as f64;
    Ok(t_to_p(r * (dof / (1.0 - r * r)).sqrt(), dof))
}

/// p-values for a correlation map; masked voxels get p = 1.
pub fn r_map_pvalues(map: &CorrelationMap, n: usize) -> Result<StatMap, FusionError> {
    let p = map.r.values().iter().zip(&map.mask).map(|(&r, &m)| if m { r_to_p(r, n) } else { Ok(1.0) }).collect::<Result<Vec<_>, _>>()?;
    Ok(StatMap::new(map.r.dims(), p, StatKind::P)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    /// number of cosine drift regressors beyond the intercept
    pub drift_order: usize,
    /// estimate one AR(1) coefficient over the brain and refit on
    /// prewhitened data
    pub prewhiten: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmResult {
    pub beta: Vec<f64>,
    pub t: StatMap,
    pub p: StatMap,
    pub dof: usize,
    /// voxels whose |t| hit the ceiling
    pub capped: Vec<bool>,
    pub mask: Vec<bool>,
    pub ar1: Option<f64>,
}

/// Cosine drift order matching a high-pass cutoff on the TR grid.
pub fn drift_order_for(n_volumes: usize, tr_s: f64, cutoff_hz: f64) -> usize {
    dsp::dct_basis(n_volumes, tr_s, cutoff_hz).ncols() - 1
}

/// Columns: predictor, intercept, cosines 1..=drift_order.
pub fn design_matrix(predictor: &[f64], drift_order: usize) -> DMatrix<f64> {
    let n = predictor.len();
    DMatrix::from_fn(n, drift_order + 2, |t, j| match j {
        0 => predictor[t],
        1 => 1.0,
        _ => {
            let k = (j - 1) as f64;
            (2.0 / n as f64).sqrt() * (std::f64::consts::PI * k * (2 * t + 1) as f64 / (2 * n) as f64).cos()
        }
    })
}

/// `(X'X)^-1`, refusing near-singular designs.
fn normal_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>, FusionError> {
    let xtx = x.transpose() * x;
    let eig = SymmetricEigen::new(xtx.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(FusionError::SingularDesign);
    }
    xtx.try_inverse().ok_or(FusionError::SingularDesign)
}

struct Fit {
    beta: f64,
    t: f64,
    capped: bool,
}

fn fit_voxel(x: &DMatrix<f64>, pinv: &DMatrix<f64>, c00: f64, y: &DVector<f64>, dof: usize) -> (Fit, DVector<f64>) {
    let b = pinv * y;
    let resid = y - x * &b;
    let rss = resid.norm_squared();
    let se = (rss / dof as f64 * c00).sqrt();
    let raw = b[0] / se;
    let scale = y.amax().max(1.0);
    let (t, capped) = if !raw.is_finite() || raw.abs() > T_MAX || se <= 1e-12 * scale * c00.sqrt() {
        (if b[0] == 0.0 { 0.0 } else { T_MAX.copysign(b[0]) }, true)
    } else {
        (raw, false)
    };
    (Fit { beta: b[0], t, capped }, resid)
}

/// Ordinary least squares t-map for the predictor column.
pub fn glm_tmap(fmri: &FmriSeries, predictor: &[f64], drift_order: usize) -> Result<GlmResult, FusionError> {
    glm_tmap_with(fmri, predictor, &GlmOptions { drift_order, prewhiten: false })
}

pub fn glm_tmap_with(fmri: &FmriSeries, predictor: &[f64], opts: &GlmOptions) -> Result<GlmResult, FusionError> {
    let n = fmri.n_volumes();
    if predictor.len() != n {
        return Err(FusionError::LengthMismatch { expected: n, got: predictor.len() });
    }
    let x = design_matrix(predictor, opts.drift_order);
    let p = x.ncols();
    if n <= p {
        return Err(FusionError::SingularDesign);
    }
    let dof = n - p;
    let rows = voxel_rows(fmri);
    let mask: Vec<bool> = rows.par_iter().map(|s| variance(s) > MIN_VOXEL_VARIANCE).collect();

    let (x, ar1) = if opts.prewhiten {
        let inv = normal_inverse(&x)?;
        let pinv = &inv * x.transpose();
        // per-voxel terms first, then a sequential sum so the result does
        // not depend on how rayon splits the work
        let terms: Vec<(f64, f64)> = rows
            .par_iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(s, _)| {
                let y = DVector::from_column_slice(s);
                let r = &y - &x * (&pinv * &y);
                let num: f64 = (1..n).map(|t| r[t] * r[t - 1]).sum();
                (num, r.norm_squared())
            })
            .collect();
        let (num, den) = terms.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let raw = if den > 0.0 { num / den } else { 0.0 };
        let rho = debias_ar1(&x, &pinv, raw);
        (prais_winsten(&x, rho), Some(rho))
    } else {
        (x, None)
    };
    let inv = normal_inverse(&x)?;
    let pinv = &inv * x.transpose();
    let c00 = inv[(0, 0)];
    let rho = ar1.unwrap_or(0.0);

    let fits: Vec<Option<Fit>> = rows
        .par_iter()
        .zip(&mask)
        .map(|(s, &m)| {
            if !m {
                return None;
            }
            let y = if ar1.is_some() { prais_winsten_vec(s, rho) } else { DVector::from_column_slice(s) };
            Some(fit_voxel(&x, &pinv, c00, &y, dof).0)
        })
        .collect();
    let beta = fits.iter().map(|f| f.as_ref().map_or(0.0, |f| f.beta)).collect();
    let t: Vec<f64> = fits.iter().map(|f| f.as_ref().map_or(0.0, |f| f.t)).collect();
    let capped = fits.iter().map(|f| f.as_ref().is_some_and(|f| f.capped)).collect();
    let pv = t.iter().zip(&mask).map(|(&t, &m)| if m { t_to_p(t, dof as f64) } else { 1.0 }).collect();
    let dims = fmri.spatial_dims();
    Ok(GlmResult { beta, t: StatMap::new(dims, t, StatKind::T)?, p: StatMap::new(dims, pv, StatKind::P)?, dof, capped, mask, ar1 })
}

/// Maps the pooled lag-1 residual autocorrelation to the AR(1) coefficient
/// whose expected residual autocorrelation under this design matches it.
fn debias_ar1(x: &DMatrix<f64>, pinv: &DMatrix<f64>, observed: f64) -> f64 {
    let n = x.nrows();
    let r = DMatrix::<f64>::identity(n, n) - x * pinv;
    // R D R, with (D e)_t = e_{t-1}
    let mut rd = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 1..n {
            rd[(i, j - 1)] = r[(i, j)];
        }
    }
    let rdr = &rd * &r;
    let expected = |rho: f64| {
        let (mut a0, mut a1) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let v = rho.powi((i as i32 - j as i32).abs());
                a0 += r[(i, j)] * v;
                a1 += rdr[(i, j)] * v;
            }
        }
        a1 / a0
    };
    let (mut lo, mut hi) = (-0.95, 0.95);
    if observed <= expected(lo) {
        return lo;
    }
    if observed >= expected(hi) {
        return hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < observed {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn prais_winsten(x: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let s = (1.0 - rho * rho).sqrt();
    DMatrix::from_fn(n, x.ncols(), |t, j| if t == 0 { s * x[(0, j)] } else { x[(t, j)] - rho * x[(t - 1, j)] })
}

fn prais_winsten_vec(y: &[f64], rho: f64) -> DVector<f64> {
    let s = (1.0 - rho * rho).sqrt();
    DVector::from_iterator(y.len(), (0..y.len()).map(|t| if t == 0 { s * y[0] } else { y[t] - rho * y[t - 1] }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdrResult {
    pub rejected: Vec<bool>,
    /// largest rejected p, absent when nothing is rejected
    pub p_threshold: Option<f64>,
}

/// Benjamini-Hochberg step-up over all entries of `p`.
pub fn fdr_bh(p: &[f64], q: f64) -> FdrResult {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let k = (1..=m).rev().find(|&k| p[order[k - 1]] <= k as f64 * q / m as f64);
    match k {
        None => FdrResult { rejected: vec![false; m], p_threshold: None },
        Some(k) => {
            let thr = p[order[k - 1]];
            FdrResult { rejected: p.iter().map(|&v| v <= thr).collect(), p_threshold: Some(thr) }
        }
    }
}

/// BH restricted to `mask`; voxels outside never enter the family.
pub fn fdr_map(p: &StatMap, mask: &[bool], q: f64) -> Result<(StatMap, Option<f64>), FusionError> {
    if mask.len() != p.len() {
        return Err(FusionError::ShapeMismatch);
    }
    let idx: Vec<usize> = (0..p.len()).filter(|&i| mask[i]).collect();
    let sub: Vec<f64> = idx.iter().map(|&i| p.values()[i]).collect();
    let res = fdr_bh(&sub, q);
    let mut flags = vec![false; p.len()];
    for (k, &i) in idx.iter().enumerate() {
        flags[i] = res.rejected[k];
    }
    Ok((StatMap::mask(p.dims(), &flags)?, res.p_threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapComparison {
    pub spatial_r: f64,
    pub dice: Option<f64>,
}

/// Spatial Pearson r over `brain` voxels and Dice overlap of two masks.
pub fn compare_maps(a: &StatMap, b: &StatMap, mask_a: &[bool], mask_b: &[bool], brain: &[bool]) -> Result<MapComparison, FusionError> {
    let n = a.len();
    if a.dims() != b.dims() || mask_a.len() != n || mask_b.len() != n || brain.len() != n {
        return Err(FusionError::ShapeMismatch);
    }
    let (va, vb): (Vec<f64>, Vec<f64>) = (0..n).filter(|&i| brain[i]).map(|i| (a.values()[i], b.values()[i])).unzip();
    let both = mask_a.iter().zip(mask_b).filter(|(x, y)| **x && **y).count();
    let total = mask_a.iter().filter(|&&x| x).count() + mask_b.iter().filter(|&&x| x).count();
    Ok(MapComparison { spatial_r: pearson(&va, &vb), dice: (total > 0).then(|| 2.0 * both as f64 / total as f64) })
}

/// Task minus rest, per channel and frequency.
pub fn spectral_contrast(task: &PsdEstimate, rest: &PsdEstimate) -> Result<Array2<f64>, FusionError> {
    if task.freqs != rest.freqs {
        return Err(FusionError::GridMismatch);
    }
    if task.channel_labels != rest.channel_labels {
        return Err(FusionError::MontageMismatch);
    }
    Ok(&task.power - &rest.power)
}

/// Indices of positive local maxima of `curve`, largest first.
pub fn ranked_peaks(curve: &[f64]) -> Vec<usize> {
    let n = curve.len();
    let mut peaks: Vec<usize> =
        (1..n.saturating_sub(1)).filter(|&i| curve[i] > 0.0 && curve[i] > curve[i - 1] && curve[i] >= curve[i + 1]).collect();
    peaks.sort_by(|&a, &b| curve[b].total_cmp(&curve[a]));
    peaks
}

/// Per-channel band power difference around `freq_hz`. Channels marked bad
/// in either input are left out.
pub fn topography_from_psd(
    task: &PsdEstimate,
    rest: &PsdEstimate,
    bad: &std::collections::BTreeSet<usize>,
    freq_hz: f64,
    bandwidth_hz: f64,
) -> Result<Vec<(String, f64)>, FusionError> {
    if task.channel_labels != rest.channel_labels {
        return Err(FusionError::MontageMismatch);
    }
    if task.freqs != rest.freqs {
        return Err(FusionError::GridMismatch);
    }
    let band = (freq_hz - bandwidth_hz / 2.0, freq_hz + bandwidth_hz / 2.0);
    let pt = band_power(task, band)?;
    let pr = band_power(rest, band)?;
    Ok(task.channel_labels.iter().enumerate().filter(|(i, _)| !bad.contains(i)).map(|(i, l)| (l.clone(), pt[i] - pr[i])).collect())
}

/// Topography from two recordings with default Welch settings.
pub fn topography(task: &EegRecording, rest: &EegRecording, freq_hz: f64, bandwidth_hz: f64) -> Result<Vec<(String, f64)>, FusionError> {
    if task.channel_labels() != rest.channel_labels() {
        return Err(FusionError::MontageMismatch);
    }
    let pt = dsp::welch_psd(task, 4.0, 0.5)?;
    let pr = dsp::welch_psd(rest, 4.0, 0.5)?;
    let bad = task.bad_channels() | rest.bad_channels();
    topography_from_psd(&pt, &pr, &bad, freq_hz, bandwidth_hz)
}

/// Smooths every volume with an isotropic Gaussian of `fwhm_mm`.
pub fn smooth_series(fmri: &FmriSeries, fwhm_mm: f64) -> Result<FmriSeries, FusionError> {
    let dims = fmri.spatial_dims();
    let vols: Vec<Vec<f64>> = (0..fmri.n_volumes())
        .into_par_iter()
        .map(|t| dsp::gaussian_smooth_3d(fmri.volume(t), dims, fwhm_mm, fmri.voxel_size()))
        .collect::<Result<_, _>>()?;
    Ok(FmriSeries::new(fmri.dims(), fmri.voxel_size(), fmri.tr(), vols.concat())?)
}
