//! Deflationary FastICA, artifact-component scoring and back-projection with
//! rejected components removed.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DataError, EegRecording};
use crate::dsp::analytic_envelope;

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_COMPONENTS: usize = 30;
pub const DEFAULT_REJECT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcaError {
    #[error("requested {requested} components but covariance rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("unknown component {0}")]
    UnknownComponent(usize),
    #[error("model channel {0} missing from recording")]
    MissingChannel(String),
    #[error("invalid ICA parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Fitted decomposition. Sources are `unmixing · whitening · (x - means)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaModel {
    pub n_components: usize,
    pub channel_labels: Vec<String>,
    pub channel_means: Vec<f64>,
    /// components × channels
    pub whitening: Array2<f64>,
    /// channels × components
    pub dewhitening: Array2<f64>,
    /// components × components, rows orthonormal
    pub unmixing: Array2<f64>,
    /// channels × components
    pub mixing: Array2<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

/// Mean-removed data projected to unit covariance.
#[derive(Debug, Clone)]
pub struct Whitened {
    /// components × samples
    pub data: Array2<f64>,
    pub channel_labels: Vec<String>,
    pub channel_means: Vec<f64>,
    pub whitening: Array2<f64>,
    pub dewhitening: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcaOptions {
    pub n_components: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// fit on every `stride`-th sample
    pub stride: usize,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self { n_components: None, max_iter: DEFAULT_MAX_ITER, tol: DEFAULT_TOL, seed: 0, stride: 1 }
    }
}

/// `min(good channels - 1, 30)`, at least one.
pub fn default_n_components(rec: &EegRecording) -> usize {
    let good = rec.n_channels() - rec.bad_channels().len();
    good.saturating_sub(1).clamp(1, DEFAULT_MAX_COMPONENTS)
}

/// Whitens the good channels of `rec` through the eigendecomposition of
/// their covariance, keeping the `n_components` largest directions.
pub fn whiten(rec: &EegRecording, n_components: usize) -> Result<Whitened, IcaError> {
    whiten_strided(rec, n_components, 1)
}

fn whiten_strided(rec: &EegRecording, n_components: usize, stride: usize) -> Result<Whitened, IcaError> {
    let good: Vec<usize> = (0..rec.n_channels()).filter(|&c| !rec.is_bad(c)).collect();
    let stride = stride.max(1);
    let x = rec.data().select(Axis(0), &good);
    let x = x.slice(ndarray::s![.., ..;stride]).to_owned();
    let (ch, n) = x.dim();
    if n_components == 0 || n_components > ch || n < 2 {
        return Err(IcaError::RankDeficient { requested: n_components, rank: ch.min(n.saturating_sub(1)) });
    }
    let means = x.mean_axis(Axis(1)).expect("non-empty");
    let xc = &x - &means.view().insert_axis(Axis(1));
    let cov = xc.dot(&xc.t()) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(ch, ch, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..ch).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > 1e-12 * top.max(f64::MIN_POSITIVE)).count();
    if n_components > rank {
        return Err(IcaError::RankDeficient { requested: n_components, rank });
    }
    let mut w = Array2::zeros((n_components, ch));
    let mut dw = Array2::zeros((ch, n_components));
    for (k, &i) in order.iter().take(n_components).enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        // sign convention: largest loading positive
        let big = v.iter().cloned().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        for c in 0..ch {
            w[[k, c]] = sign * v[c] / s;
            dw[[c, k]] = sign * v[c] * s;
        }
    }
    let data = w.dot(&xc);
    Ok(Whitened {
        data,
        channel_labels: good.iter().map(|&c| rec.channel_labels()[c].clone()).collect(),
        channel_means: means.to_vec(),
        whitening: w,
        dewhitening: dw,
    })
}

/// Deflationary FastICA with the log-cosh (tanh) contrast. Components whose
/// weight vector has not settled within `max_iter` are flagged, not fatal.
/// The result is ordered by the variance each component contributes to the
/// channels.
pub fn fastica(white: &Whitened, max_iter: usize, tol: f64, seed: u64) -> Result<IcaModel, IcaError> {
    if max_iter == 0 || !(tol > 0.0 && tol < 1.0) {
        return Err(IcaError::InvalidParameter(format!("max_iter {max_iter}, tol {tol}")));
    }
    let z = &white.data;
    let (k, n) = z.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unmix = Array2::<f64>::zeros((k, k));
    let mut iterations = Vec::with_capacity(k);
    let mut converged = Vec::with_capacity(k);
    for p in 0..k {
        let mut w: Array1<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        deflate(&mut w, &unmix, p);
        let mut done = false;
        let mut it = 0;
        while it < max_iter {
            it += 1;
            let wx = w.dot(z);
            let g = wx.mapv(f64::tanh);
            let gp_mean = g.iter().map(|v| 1.0 - v * v).sum::<f64>() / n as f64;
            let mut w_new = z.dot(&g) / n as f64 - &w * gp_mean;
            deflate(&mut w_new, &unmix, p);
            let dot = w_new.dot(&w).abs();
            w = w_new;
            if 1.0 - dot < tol {
                done = true;
                break;
            }
        }
        unmix.row_mut(p).assign(&w);
        iterations.push(it);
        converged.push(done);
    }

    // order by back-projected variance (sources have unit variance)
    let mixing = white.dewhitening.dot(&unmix.t());
    let power: Vec<f64> = (0..k).map(|j| mixing.column(j).iter().map(|v| v * v).sum()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| power[b].total_cmp(&power[a]));
    Ok(IcaModel {
        n_components: k,
        channel_labels: white.channel_labels.clone(),
        channel_means: white.channel_means.clone(),
        whitening: white.whitening.clone(),
        dewhitening: white.dewhitening.clone(),
        unmixing: unmix.select(Axis(0), &order),
        mixing: mixing.select(Axis(1), &order),
        iterations: order.iter().map(|&i| iterations[i]).collect(),
        converged: order.iter().map(|&i| converged[i]).collect(),
    })
}

/// Gram-Schmidt against the first `p` rows of `basis`, then normalise.
fn deflate(w: &mut Array1<f64>, basis: &Array2<f64>, p: usize) {
    for q in 0..p {
        let b = basis.row(q);
        let d = w.dot(&b);
        w.scaled_add(-d, &b);
    }
    let norm = w.dot(w).sqrt();
    if norm > 0.0 {
        *w /= norm;
    }
}

/// Whitening plus FastICA in one call.
pub fn fit(rec: &EegRecording, opts: &IcaOptions) -> Result<IcaModel, IcaError> {
    let k = opts.n_components.unwrap_or_else(|| default_n_components(rec));
    let white = whiten_strided(rec, k, opts.stride)?;
    fastica(&white, opts.max_iter, opts.tol, opts.seed)
}

impl IcaModel {
    fn channel_rows(&self, rec: &EegRecording) -> Result<Vec<usize>, IcaError> {
        self.channel_labels.iter().map(|l| rec.channel_index(l).ok_or_else(|| IcaError::MissingChannel(l.clone()))).collect()
    }

    /// components × samples activations of `rec`.
    pub fn sources(&self, rec: &EegRecording) -> Result<Array2<f64>, IcaError> {
        let rows = self.channel_rows(rec)?;
        let x = rec.data().select(Axis(0), &rows);
        let means = Array1::from(self.channel_means.clone());
        let xc = &x - &means.insert_axis(Axis(1));
        Ok(self.unmixing.dot(&self.whitening).dot(&xc))
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Back-projects all but the `rejected` components. Channels outside the
/// model pass through unchanged.
pub fn remove_components(rec: &EegRecording, model: &IcaModel, rejected: &BTreeSet<usize>) -> Result<EegRecording, IcaError> {
    if let Some(&bad) = rejected.iter().find(|&&c| c >= model.n_components) {
        return Err(IcaError::UnknownComponent(bad));
    }
    let rows = model.channel_rows(rec)?;
    let mut s = model.sources(rec)?;
    for &c in rejected {
        s.row_mut(c).fill(0.0);
    }
    let back = model.mixing.dot(&s);
    let mut data = rec.data().clone();
    for (i, &r) in rows.iter().enumerate() {
        let m = model.channel_means[i];
        data.row_mut(r).assign(&back.row(i).mapv(|v| v + m));
    }
    Ok(rec.with_data(data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Keep,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub component: usize,
    pub bcg_score: f64,
    pub gradient_score: f64,
    pub verdict: Verdict,
}

/// Gaussian kernel width used for the cardiac indicator, seconds.
const CARDIAC_SMOOTH_S: f64 = 0.100;
/// Envelope/indicator grid used for cross-correlation, Hz.
const SCORE_GRID_HZ: f64 = 50.0;
/// Lags searched for the cardiac cross-correlation, seconds after the R-peak.
const CARDIAC_LAGS_S: (f64, f64) = (-0.2, 0.6);
/// Half-width of each slice-harmonic band, Hz.
const HARMONIC_HALF_WIDTH: f64 = 0.5;

/// Scores every row of `sources` (components × samples) for cardiac and
/// gradient content. A component is rejected when either score exceeds
/// `threshold`.
pub fn score_components(
    sources: ArrayView2<'_, f64>,
    rate_hz: f64,
    r_peaks: &[usize],
    slice_freq_hz: f64,
    threshold: f64,
) -> Vec<ComponentScore> {
    let n = sources.ncols();
    let step = ((rate_hz / SCORE_GRID_HZ).round() as usize).max(1);
    let grid_rate = rate_hz / step as f64;
    let m = n / step;
    let indicator = cardiac_indicator(r_peaks, step, m, grid_rate);
    sources
        .outer_iter()
        .enumerate()
        .map(|(component, s)| {
            let x = s.to_vec();
            let mean = x.iter().sum::<f64>() / n.max(1) as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
            let (bcg_score, gradient_score) = if var <= 1e-24 || m < 2 {
                (0.0, 0.0)
            } else {
                let env = analytic_envelope(&x).unwrap_or_else(|_| vec![0.0; n]);
                let env_grid: Vec<f64> = (0..m).map(|i| env[i * step..(i + 1) * step].iter().sum::<f64>() / step as f64).collect();
                (max_lagged_corr(&env_grid, &indicator, grid_rate), harmonic_fraction(&x, rate_hz, slice_freq_hz))
            };
            let verdict = if bcg_score > threshold || gradient_score > threshold { Verdict::Reject } else { Verdict::Keep };
            ComponentScore { component, bcg_score, gradient_score, verdict }
        })
        .collect()
}

/// R-peak impulse train on the score grid, smoothed by a Gaussian.
fn cardiac_indicator(r_peaks: &[usize], step: usize, m: usize, grid_rate: f64) -> Vec<f64> {
    let mut train = vec![0.0; m];
    for &p in r_peaks {
        if let Some(v) = train.get_mut(p / step) {
            *v += 1.0;
        }
    }
    let kernel = crate::dsp::gaussian_kernel(CARDIAC_SMOOTH_S * grid_rate);
    let h = kernel.len() / 2;
    (0..m)
        .map(|i| kernel.iter().enumerate().filter_map(|(j, w)| (i + j).checked_sub(h).and_then(|t| train.get(t)).map(|v| v * w)).sum())
        .collect()
}

/// Largest |Pearson r| between `a(t)` and `b(t - lag)` over the cardiac lags.
fn max_lagged_corr(a: &[f64], b: &[f64], grid_rate: f64) -> f64 {
    let lo = (CARDIAC_LAGS_S.0 * grid_rate).round() as isize;
    let hi = (CARDIAC_LAGS_S.1 * grid_rate).round() as isize;
    let m = a.len() as isize;
    let mut best = 0.0f64;
    for lag in lo..=hi {
        let (mut sa, mut sb, mut saa, mut sbb, mut sab, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in lo.abs().max(hi.abs())..m - lo.abs().max(hi.abs()) {
            let x = a[i as usize];
            let y = b[(i - lag) as usize];
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
            cnt += 1.0;
        }
        if cnt < 3.0 {
            continue;
        }
        let cov = sab - sa * sb / cnt;
        let va = saa - sa * sa / cnt;
        let vb = sbb - sb * sb / cnt;
        if va > 0.0 && vb > 0.0 {
            best = best.max((cov / (va * vb).sqrt()).abs());
        }
    }
    best.min(1.0)
}

/// Share of periodogram power within ±0.5 Hz of any slice harmonic.
fn harmonic_fraction(x: &[f64], rate_hz: f64, slice_freq_hz: f64) -> f64 {
    use rustfft::FftPlanner;
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<num_complex::Complex64> = x.iter().map(|v| (v - mean).into()).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = rate_hz / n as f64;
    let (mut total, mut inside) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let p = c.norm_sqr();
        total += p;
        let f = k as f64 * df;
        if slice_freq_hz > 0.0 {
            let h = (f / slice_freq_hz).round().max(1.0);
            if (f - h * slice_freq_hz).abs() <= HARMONIC_HALF_WIDTH {
                inside += p;
            }
        }
    }
    if total > 0.0 {
        (inside / total).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EventMarkers;
    use rand::RngExt;
    use std::f64::consts::PI;

    fn rec_from(data: Array2<f64>, rate: f64) -> EegRecording {
        let labels = (0..data.nrows()).map(|i| format!("E{i}")).collect();
        EegRecording::new(labels, rate, data, EventMarkers::default()).unwrap()
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        c / (va * vb).sqrt()
    }

    fn mixed(seed: u64, n: usize) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array2::from_shape_fn((3, n), |(c, i)| {
            let t = i as f64 / 250.0;
            match c {
                0 => (2.0 * PI * 12.0 * t).sin(),
                1 => rng.random::<f64>() * 2.0 - 1.0,
                _ => ((2.0 * PI * 0.7 * t).sin() * 3.0).signum(),
            }
        });
        let a = Array2::from_shape_fn((3, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        (s, a)
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let (s, a) = mixed(1, 5000);
        let w = whiten(&rec_from(a.dot(&s), 250.0), 3).unwrap();
        let cov = w.data.dot(&w.data.t()) / (w.data.ncols() - 1) as f64;
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
        assert!(matches!(whiten(&rec_from(a.dot(&s), 250.0), 4), Err(IcaError::RankDeficient { .. })));
    }

    #[test]
    fn recovers_mixed_sources() {
        let (s, a) = mixed(5, 8000);
        let model = fit(&rec_from(a.dot(&s), 250.0), &IcaOptions { n_components: Some(3), seed: 2, ..Default::default() }).unwrap();
        let rec = rec_from(a.dot(&s), 250.0);
        let est = model.sources(&rec).unwrap();
        for truth in s.outer_iter() {
            let best = est.outer_iter().map(|e| corr(&e.to_vec(), &truth.to_vec()).abs()).fold(0.0, f64::max);
            assert!(best >= 0.95, "{best}");
        }
        // unmixing rows orthonormal
        let g = model.unmixing.dot(&model.unmixing.t());
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
        assert!(model.converged.iter().all(|&c| c));
    }

    #[test]
    fn max_iter_one_flags() {
        let (s, a) = mixed(2, 3000);
        let model = fit(&rec_from(a.dot(&s), 250.0), &IcaOptions { n_components: Some(3), max_iter: 1, ..Default::default() }).unwrap();
        assert!(model.converged.iter().any(|&c| !c));
    }

    #[test]
    fn reconstruction_identity_and_zero_subspace() {
        let (s, a) = mixed(3, 4000);
        let rec = rec_from(a.dot(&s) + 5.0, 250.0);
        let model = fit(&rec, &IcaOptions { n_components: Some(3), ..Default::default() }).unwrap();
        let same = remove_components(&rec, &model, &BTreeSet::new()).unwrap();
        let scale = rec.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in same.data().iter().zip(rec.data()) {
            assert!((x - y).abs() <= 1e-6 * scale);
        }
        let all: BTreeSet<usize> = (0..3).collect();
        let flat = remove_components(&rec, &model, &all).unwrap();
        for (c, row) in flat.data().outer_iter().enumerate() {
            assert!(row.iter().all(|&v| (v - model.channel_means[c]).abs() < 1e-9));
        }
        assert_eq!(remove_components(&rec, &model, &[7].into()), Err(IcaError::UnknownComponent(7)));
    }

    #[test]
    fn json_round_trip() {
        let (s, a) = mixed(4, 2000);
        let model = fit(&rec_from(a.dot(&s), 250.0), &IcaOptions { n_components: Some(2), ..Default::default() }).unwrap();
        assert_eq!(IcaModel::from_json(&model.to_json().unwrap()).unwrap(), model);
    }

    #[test]
    fn scores_separate_cardiac_alpha_and_silence() {
        let rate = 250.0;
        let n = 120 * 250;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut peaks = Vec::new();
        let mut t = 0.5;
        while t < 119.0 {
            peaks.push((t * rate) as usize);
            t += 0.9 + 0.2 * rng.random::<f64>();
        }
        let mut bcg = vec![0.0; n];
        for &p in &peaks {
            for l in 0..(0.5 * rate) as usize {
                let tt = l as f64 / rate;
                if let Some(v) = bcg.get_mut(p + 52 + l) {
                    *v += (-tt / 0.15).exp() * (2.0 * PI * 5.0 * tt).sin();
                }
            }
        }
        let alpha: Vec<f64> = (0..n).map(|i| (2.0 * PI * 10.0 * i as f64 / rate + 0.3).sin()).collect();
        let mut src = Array2::zeros((3, n));
        src.row_mut(0).assign(&Array1::from(bcg));
        src.row_mut(1).assign(&Array1::from(alpha));
        let sc = score_components(src.view(), rate, &peaks, 20.0 / 3.0, 0.7);
        assert!(sc[0].bcg_score > 0.7 && sc[0].verdict == Verdict::Reject, "{:?}", sc[0]);
        assert!(sc[1].bcg_score < 0.3 && sc[1].gradient_score < 0.3 && sc[1].verdict == Verdict::Keep, "{:?}", sc[1]);
        assert_eq!((sc[2].bcg_score, sc[2].gradient_score, sc[2].verdict), (0.0, 0.0, Verdict::Keep));
    }
}
