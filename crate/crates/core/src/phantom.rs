//! Deterministic synthetic EEG-fMRI datasets with known ground truth.
//!
//! Every signal component draws from its own ChaCha stream so that, for a
//! given seed, changing one component's parameters leaves the others
//! bit-identical. Components are snapped to a 2^-24 µV grid, which keeps
//! `clean + bcg + ga` and its differences exact in `f64`.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DataError, EegRecording, EventMarkers, FmriSeries, Marker, MarkerKind};
use crate::fusion::{boxcar_regressor, canonical_hrf, convolve_hrf, drift_order_for, zscore, FusionError};

pub const ECG_LABEL: &str = "ECG";

/// 32-channel MR cap layout.
pub const MONTAGE_32: [&str; 32] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz", "C4", "T8", "TP9", "CP5", "CP1", "CP2",
    "CP6", "TP10", "P7", "P3", "Pz", "P4", "P8", "PO9", "O1", "Oz", "O2", "PO10",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub eeg_rate_hz: f64,
    pub n_channels: usize,
    pub occipital_channels: Vec<String>,
    pub stimulus_hz: f64,
    pub harmonic_amplitudes: Vec<f64>,
    /// fundamental SSVEP amplitude at full weight, µV
    pub ssvep_amplitude_uv: f64,
    /// phase coherence time of each SSVEP harmonic, s
    pub ssvep_coherence_s: f64,
    pub alpha_band_hz: (f64, f64),
    pub alpha_peak_hz: f64,
    pub alpha_rms_uv: f64,
    /// fractional alpha amplitude drop during stimulation
    pub alpha_task_suppression: f64,
    pub background_rms_uv: f64,
    pub block_s: f64,
    pub first_block_on: bool,
    pub tr_s: f64,
    pub n_slices: usize,
    pub slice_triggers: bool,
    /// RMS of the gradient artifact, µV
    pub ga_amplitude_uv: f64,
    pub ga_harmonics: usize,
    /// peak of the pulse artifact at full channel weight, µV
    pub bcg_amplitude_uv: f64,
    pub bcg_delay_s: f64,
    pub bcg_decay_s: f64,
    pub bcg_freq_hz: (f64, f64),
    pub bcg_jitter: f64,
    pub heart_bpm: f64,
    /// RR standard deviation as a fraction of the mean interval
    pub heart_variability: f64,
    pub ecg_amplitude_uv: f64,
    pub ecg_noise_uv: f64,
    pub fmri_dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    /// inclusive-exclusive voxel ranges of the activated box
    pub active_box: [(usize, usize); 3],
    pub cnr: f64,
    pub fmri_baseline: f64,
    pub fmri_noise_sd: f64,
    pub ar1: f64,
    /// drift amplitude in units of the noise SD
    pub drift_amplitude: f64,
    pub drift_cutoff_hz: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 300.0,
            eeg_rate_hz: 500.0,
            n_channels: 32,
            occipital_channels: vec!["O1".into(), "Oz".into(), "O2".into()],
            stimulus_hz: 12.0,
            harmonic_amplitudes: vec![1.0, 0.4, 0.2],
            ssvep_amplitude_uv: 16.0,
            ssvep_coherence_s: 1.0,
            alpha_band_hz: (8.0, 13.0),
            alpha_peak_hz: 10.0,
            alpha_rms_uv: 16.0,
            alpha_task_suppression: 0.5,
            background_rms_uv: 10.0,
            block_s: 24.0,
            first_block_on: false,
            tr_s: 3.0,
            n_slices: 20,
            slice_triggers: true,
            ga_amplitude_uv: 2000.0,
            ga_harmonics: 10,
            bcg_amplitude_uv: 150.0,
            bcg_delay_s: 0.21,
            bcg_decay_s: 0.15,
            bcg_freq_hz: (4.0, 6.0),
            bcg_jitter: 0.1,
            heart_bpm: 67.0,
            heart_variability: 0.05,
            ecg_amplitude_uv: 1000.0,
            ecg_noise_uv: 10.0,
            fmri_dims: [20, 24, 16],
            voxel_size_mm: [3.3, 3.3, 4.0],
            active_box: [(7, 13), (2, 7), (5, 10)],
            cnr: 1.0,
            fmri_baseline: 1000.0,
            fmri_noise_sd: 10.0,
            ar1: 0.3,
            drift_amplitude: 2.0,
            drift_cutoff_hz: 0.005,
        }
    }
}

impl PhantomConfig {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.eeg_rate_hz).round() as usize
    }

    pub fn n_volumes(&self) -> usize {
        (self.duration_s / self.tr_s + 1e-9).floor() as usize
    }

    pub fn slice_hz(&self) -> f64 {
        self.n_slices as f64 / self.tr_s
    }

    pub fn channel_labels(&self) -> Vec<String> {
        (0..self.n_channels).map(|i| MONTAGE_32.get(i).map_or_else(|| format!("E{}", i + 1), |s| s.to_string())).collect()
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: &str| Err(PhantomError::InvalidConfig(m.to_string()));
        let pos = [
            self.duration_s,
            self.eeg_rate_hz,
            self.stimulus_hz,
            self.block_s,
            self.tr_s,
            self.heart_bpm,
            self.bcg_decay_s,
            self.ssvep_coherence_s,
            self.fmri_noise_sd,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("rates, durations and noise levels must be positive");
        }
        if self.n_channels == 0 || self.n_slices == 0 {
            return bad("need at least one channel and one slice");
        }
        if self.cnr < 0.0 || self.ga_amplitude_uv < 0.0 || self.bcg_amplitude_uv < 0.0 || self.bcg_jitter < 0.0 {
            return bad("amplitudes and cnr must be non-negative");
        }
        if !(0.0..1.0).contains(&self.ar1.abs()) || !(0.0..=1.0).contains(&self.alpha_task_suppression) {
            return bad("ar1 must lie in (-1, 1) and alpha suppression in [0, 1]");
        }
        let labels = self.channel_labels();
        if let Some(o) = self.occipital_channels.iter().find(|o| !labels.contains(o)) {
            return Err(PhantomError::InvalidConfig(format!("occipital channel {o} not in montage")));
        }
        let nyq = self.eeg_rate_hz / 2.0;
        if self.stimulus_hz * self.harmonic_amplitudes.len() as f64 >= nyq || self.slice_hz() * self.ga_harmonics as f64 >= nyq {
            return bad("stimulus or gradient harmonics exceed Nyquist");
        }
        if !(self.alpha_band_hz.0 > 0.0 && self.alpha_band_hz.0 < self.alpha_band_hz.1 && self.alpha_band_hz.1 < nyq) {
            return bad("alpha band out of range");
        }
        let per_slice = self.eeg_rate_hz * self.tr_s / self.n_slices as f64;
        if (per_slice - per_slice.round()).abs() > 1e-9 {
            return bad("TR / n_slices must be a whole number of EEG samples");
        }
        if self.n_volumes() < 2 {
            return bad("run shorter than two volumes");
        }
        if self.fmri_dims.contains(&0) || self.voxel_size_mm.iter().any(|&v| !(v > 0.0)) {
            return bad("fMRI grid must be non-empty");
        }
        if (0..3).any(|a| self.active_box[a].0 > self.active_box[a].1 || self.active_box[a].1 > self.fmri_dims[a]) {
            return bad("active box outside the volume");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    /// channels × samples; the ECG row holds the clean ECG
    pub clean: Array2<f64>,
    pub ga: Array2<f64>,
    pub bcg: Array2<f64>,
    pub r_peaks: Vec<usize>,
    /// mean squared SSVEP amplitude at full weight, per volume
    pub ssvep_power: Vec<f64>,
    pub active_mask: Vec<bool>,
    pub brain_mask: Vec<bool>,
    /// z-scored boxcar ⊗ HRF
    pub bold_regressor: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub config: PhantomConfig,
    pub labels: Vec<String>,
    pub markers: EventMarkers,
    pub fmri: FmriSeries,
    pub truth: PhantomTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Outside,
    ScannerOff,
    ScannerOn,
}

/// Independent RNG stream per signal component.
#[derive(Clone, Copy)]
enum Stream {
    Background = 1,
    Alpha,
    Ssvep,
    Gradient,
    Pulse,
    Heart,
    Fmri,
    Ecg,
}

fn rng(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

const GRID: f64 = 16_777_216.0; // 2^24

fn snap(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Spatial gain of posterior rhythms by electrode row.
fn posterior_weight(label: &str) -> f64 {
    let l = label.to_ascii_uppercase();
    if l.starts_with("PO") || l.starts_with('O') {
        1.0
    } else if l.starts_with('P') {
        0.7
    } else if l.starts_with("CP") || l.starts_with("TP") {
        0.45
    } else if l.starts_with('C') || l.starts_with('T') {
        0.3
    } else if l.starts_with("FP") {
        0.1
    } else {
        0.15
    }
}

/// White noise shaped in frequency by `gain(f)`, scaled to `rms`.
fn shaped_noise(r: &mut ChaCha8Rng, n: usize, rate: f64, rms: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(normal(r), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * rate / n as f64;
        *v *= gain(f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let m = x.iter().sum::<f64>() / n as f64;
    let s = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    if s == 0.0 {
        return vec![0.0; n];
    }
    x.iter().map(|v| (v - m) * rms / s).collect()
}

/// Sample-level stimulation state, smoothed by a 0.5 s moving average.
fn task_gate(cfg: &PhantomConfig) -> Vec<f64> {
    let n = cfg.n_samples();
    let rate = cfg.eeg_rate_hz;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let b = (i as f64 / rate / cfg.block_s).floor() as usize;
            if b.is_multiple_of(2) == cfg.first_block_on {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let w = ((0.5 * rate).round() as usize).max(1);
    let mut cs = vec![0.0; n + 1];
    for i in 0..n {
        cs[i + 1] = cs[i] + raw[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(w / 2);
            let hi = (i + w - w / 2).min(n);
            (cs[hi] - cs[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Stimulus on/off boundaries in samples.
pub fn stimulus_markers(cfg: &PhantomConfig) -> Vec<Marker> {
    let n = cfg.n_samples();
    let mut out = Vec::new();
    let mut b = 0usize;
    loop {
        let start = (b as f64 * cfg.block_s * cfg.eeg_rate_hz).round() as usize;
        if start >= n {
            break;
        }
        let on = b.is_multiple_of(2) == cfg.first_block_on;
        if b > 0 || on {
            out.push(if on {
                Marker::new(start, MarkerKind::StimulusOn, "S  1")
            } else {
                Marker::new(start, MarkerKind::StimulusOff, "S  2")
            });
        }
        b += 1;
    }
    out
}

fn scanner_markers(cfg: &PhantomConfig) -> Vec<Marker> {
    let per_vol = (cfg.tr_s * cfg.eeg_rate_hz).round() as usize;
    let per_slice = per_vol / cfg.n_slices;
    let mut out = Vec::new();
    for v in 0..cfg.n_volumes() {
        let t0 = v * per_vol;
        out.push(Marker::new(t0, MarkerKind::VolumeTrigger, "R128"));
        if cfg.slice_triggers {
            for s in 0..cfg.n_slices {
                out.push(Marker::new(t0 + s * per_slice, MarkerKind::SliceTrigger, "Slice"));
            }
        }
    }
    out
}

/// Beat times (s) with Gaussian RR variability.
fn heart_beats(cfg: &PhantomConfig) -> Vec<f64> {
    let mut r = rng(cfg.seed, Stream::Heart);
    let rr = 60.0 / cfg.heart_bpm;
    let mut t = 0.4 * rr;
    let mut beats = Vec::new();
    while t < cfg.duration_s - 0.2 {
        beats.push(t);
        let z = normal(&mut r).clamp(-2.5, 2.5);
        t += rr * (1.0 + cfg.heart_variability * z).max(0.3);
    }
    beats
}

fn gauss(t: f64, c: f64, sd: f64) -> f64 {
    (-((t - c) / sd).powi(2) / 2.0).exp()
}

fn ecg_waveform(cfg: &PhantomConfig, beats: &[f64]) -> Vec<f64> {
    let n = cfg.n_samples();
    let rate = cfg.eeg_rate_hz;
    let a = cfg.ecg_amplitude_uv;
    let mut x = vec![0.0; n];
    for &b in beats {
        let lo = (((b - 0.35) * rate).floor().max(0.0)) as usize;
        let hi = (((b + 0.6) * rate).ceil() as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 / rate - b;
            *v += a
                * (0.08 * gauss(t, -0.20, 0.025) - 0.10 * gauss(t, -0.025, 0.008) + gauss(t, 0.0, 0.010) - 0.20 * gauss(t, 0.03, 0.010)
                    + 0.25 * gauss(t, 0.30, 0.050));
        }
    }
    let mut r = rng(cfg.seed, Stream::Ecg);
    x.iter().map(|v| v + cfg.ecg_noise_uv * normal(&mut r)).collect()
}

struct EegParts {
    clean: Array2<f64>,
    ga: Array2<f64>,
    bcg: Array2<f64>,
    r_peaks: Vec<usize>,
    ssvep_power: Vec<f64>,
}

fn gen_eeg(cfg: &PhantomConfig, labels: &[String]) -> EegParts {
    let n = cfg.n_samples();
    let rate = cfg.eeg_rate_hz;
    let ne = labels.len();
    let nch = ne + 1;
    let mut clean = Array2::zeros((nch, n));

    // 1/f background, independent per channel
    let mut r = rng(cfg.seed, Stream::Background);
    for c in 0..ne {
        let x = shaped_noise(&mut r, n, rate, cfg.background_rms_uv, |f| if f <= 0.0 { 0.0 } else { 1.0 / f.max(1.0).sqrt() });
        clean.row_mut(c).assign(&ndarray::Array1::from(x));
    }

    // one alpha generator, posterior gain, suppressed by the task
    let gate = task_gate(cfg);
    let mut r = rng(cfg.seed, Stream::Alpha);
    let (lo, hi) = cfg.alpha_band_hz;
    let pk = cfg.alpha_peak_hz;
    let alpha = shaped_noise(&mut r, n, rate, cfg.alpha_rms_uv, |f| if f >= lo && f <= hi { gauss(f, pk, 1.0) } else { 0.0 });
    let supp: Vec<f64> = gate.iter().map(|g| 1.0 - cfg.alpha_task_suppression * g).collect();
    for c in 0..ne {
        let w = posterior_weight(&labels[c]);
        for i in 0..n {
            clean[[c, i]] += w * alpha[i] * supp[i];
        }
    }

    // SSVEP harmonics with slowly diffusing phase, occipital channels only
    let mut r = rng(cfg.seed, Stream::Ssvep);
    let dt = 1.0 / rate;
    let step = (dt / cfg.ssvep_coherence_s).sqrt();
    let mut ssvep = vec![0.0; n];
    for (h, &amp) in cfg.harmonic_amplitudes.iter().enumerate() {
        let f = cfg.stimulus_hz * (h + 1) as f64;
        let mut phi = 2.0 * PI * r.random::<f64>();
        for (i, s) in ssvep.iter_mut().enumerate() {
            *s += amp * (2.0 * PI * f * i as f64 * dt + phi).sin();
            phi += step * normal(&mut r);
        }
    }
    for (s, g) in ssvep.iter_mut().zip(&gate) {
        *s *= cfg.ssvep_amplitude_uv * g;
    }
    for o in &cfg.occipital_channels {
        let c = labels.iter().position(|l| l == o).expect("validated");
        let w = if o.eq_ignore_ascii_case("Oz") { 1.0 } else { 0.85 };
        for i in 0..n {
            clean[[c, i]] += w * ssvep[i];
        }
    }
    let per_vol = (cfg.tr_s * rate).round() as usize;
    let ssvep_power = (0..cfg.n_volumes())
        .map(|v| {
            let a = v * per_vol;
            let b = ((v + 1) * per_vol).min(n);
            gate[a..b].iter().map(|g| g * g).sum::<f64>() / (b - a) as f64
                * cfg.harmonic_amplitudes.iter().map(|a| a * a / 2.0).sum::<f64>()
                * cfg.ssvep_amplitude_uv.powi(2)
        })
        .collect();

    // ECG
    let beats = heart_beats(cfg);
    let ecg = ecg_waveform(cfg, &beats);
    clean.row_mut(ne).assign(&ndarray::Array1::from(ecg));
    clean.mapv_inplace(snap);
    let r_peaks: Vec<usize> = beats.iter().map(|b| (b * rate).round() as usize).filter(|&s| s < n).collect();

    // pulse artifact: damped sinusoid per channel at R + delay
    let mut bcg = Array2::zeros((nch, n));
    if cfg.bcg_amplitude_uv > 0.0 {
        let mut r = rng(cfg.seed, Stream::Pulse);
        let shape: Vec<(f64, f64, f64)> = (0..ne)
            .map(|_| {
                let w = (0.5 + 0.5 * r.random::<f64>()) * if r.random::<bool>() { 1.0 } else { -1.0 };
                let f = cfg.bcg_freq_hz.0 + (cfg.bcg_freq_hz.1 - cfg.bcg_freq_hz.0) * r.random::<f64>();
                (w, f, PI * (r.random::<f64>() - 0.5) * 0.5)
            })
            .collect();
        let len = (6.0 * cfg.bcg_decay_s * rate).ceil() as usize;
        // per-channel peak normalisation of the unit waveform
        let wave = |f: f64, ph: f64, l: usize| {
            let t = l as f64 / rate;
            (-t / cfg.bcg_decay_s).exp() * ((2.0 * PI * f * t + ph).sin() - ph.sin() * (-t / 0.01).exp())
        };
        let peaks: Vec<f64> = shape.iter().map(|&(_, f, ph)| (0..len).map(|l| wave(f, ph, l).abs()).fold(0.0, f64::max)).collect();
        let delay = (cfg.bcg_delay_s * rate).round() as usize;
        for &p in &r_peaks {
            let j = 1.0 + cfg.bcg_jitter * (2.0 * r.random::<f64>() - 1.0);
            for c in 0..ne {
                let (w, f, ph) = shape[c];
                let g = cfg.bcg_amplitude_uv * w * j / peaks[c];
                for l in 0..len {
                    let t = p + delay + l;
                    if t >= n {
                        break;
                    }
                    bcg[[c, t]] += g * wave(f, ph, l);
                }
            }
        }
        bcg.mapv_inplace(snap);
    }

    // gradient artifact: slice-periodic harmonic series on every channel
    let mut ga = Array2::zeros((nch, n));
    if cfg.ga_amplitude_uv > 0.0 {
        let mut r = rng(cfg.seed, Stream::Gradient);
        let fs = cfg.slice_hz();
        let phases: Vec<f64> = (0..cfg.ga_harmonics).map(|_| 2.0 * PI * r.random::<f64>()).collect();
        // unit RMS before the per-channel gain
        let norm = (1..=cfg.ga_harmonics).map(|k| 0.5 / (k * k) as f64).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let per_slice = (rate / fs).round() as usize;
        let unit: Vec<f64> = (0..per_slice)
            .map(|i| {
                let t = i as f64 / rate;
                phases.iter().enumerate().map(|(k, ph)| (2.0 * PI * fs * (k + 1) as f64 * t + ph).sin() / (k + 1) as f64).sum::<f64>()
                    / norm
            })
            .collect();
        let scanning = cfg.n_volumes() * (cfg.tr_s * rate).round() as usize;
        for c in 0..nch {
            let g = cfg.ga_amplitude_uv * (0.7 + 0.6 * r.random::<f64>());
            for i in 0..scanning.min(n) {
                ga[[c, i]] = snap(g * unit[i % per_slice]);
            }
        }
    }
    EegParts { clean, ga, bcg, r_peaks, ssvep_power }
}

/// Ellipsoid brain filling most of the grid.
fn brain_ellipsoid(dims: [usize; 3]) -> Vec<bool> {
    let c: Vec<f64> = dims.iter().map(|&d| (d as f64 - 1.0) / 2.0).collect();
    let r: Vec<f64> = dims.iter().map(|&d| (d as f64 / 2.0 - 0.5).max(0.5)).collect();
    let mut m = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x, y, z];
                let s: f64 = (0..3).map(|a| ((p[a] as f64 - c[a]) / r[a]).powi(2)).sum();
                m.push(s <= 1.0);
            }
        }
    }
    m
}

/// fMRI part alone: series, activation mask, brain mask, true regressor.
pub fn gen_fmri(cfg: &PhantomConfig) -> Result<(FmriSeries, Vec<bool>, Vec<bool>, Vec<f64>), PhantomError> {
    cfg.validate()?;
    let dims = cfg.fmri_dims;
    let nt = cfg.n_volumes();
    let nv: usize = dims.iter().product();
    let hrf = canonical_hrf(cfg.tr_s);
    let box_ = boxcar_regressor(cfg.block_s, nt, cfg.tr_s, cfg.first_block_on)?;
    let regressor = zscore(&convolve_hrf(&box_.values, &hrf));
    let brain = brain_ellipsoid(dims);
    let active: Vec<bool> = (0..nv)
        .map(|i| {
            let p = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
            brain[i] && (0..3).all(|a| p[a] >= cfg.active_box[a].0 && p[a] < cfg.active_box[a].1)
        })
        .collect();
    let k = drift_order_for(nt, cfg.tr_s, cfg.drift_cutoff_hz);
    let mut r = rng(cfg.seed, Stream::Fmri);
    let sd = cfg.fmri_noise_sd;
    let innov = (1.0 - cfg.ar1 * cfg.ar1).sqrt();
    let mut data = vec![0.0; nv * nt];
    for v in 0..nv {
        if !brain[v] {
            continue;
        }
        let coef: Vec<f64> = (1..=k).map(|j| cfg.drift_amplitude * sd * normal(&mut r) / j as f64).collect();
        let mut e = sd * normal(&mut r);
        for t in 0..nt {
            if t > 0 {
                e = cfg.ar1 * e + innov * sd * normal(&mut r);
            }
            let drift: f64 =
                coef.iter().enumerate().map(|(j, c)| c * (PI * (j + 1) as f64 * (2 * t + 1) as f64 / (2 * nt) as f64).cos()).sum();
            let sig = if active[v] { cfg.cnr * sd * regressor[t] } else { 0.0 };
            data[t * nv + v] = cfg.fmri_baseline + sig + e + drift;
        }
    }
    let fmri = FmriSeries::new([dims[0], dims[1], dims[2], nt], cfg.voxel_size_mm, cfg.tr_s, data)?;
    Ok((fmri, active, brain, regressor))
}

pub fn gen_phantom(cfg: &PhantomConfig) -> Result<Phantom, PhantomError> {
    cfg.validate()?;
    let labels = cfg.channel_labels();
    let parts = gen_eeg(cfg, &labels);
    let (fmri, active, brain, regressor) = gen_fmri(cfg)?;
    let mut all_labels = labels;
    all_labels.push(ECG_LABEL.to_string());
    let markers = EventMarkers::new(scanner_markers(cfg).into_iter().chain(stimulus_markers(cfg)).collect());
    Ok(Phantom {
        config: cfg.clone(),
        labels: all_labels,
        markers,
        fmri,
        truth: PhantomTruth {
            clean: parts.clean,
            ga: parts.ga,
            bcg: parts.bcg,
            r_peaks: parts.r_peaks,
            ssvep_power: parts.ssvep_power,
            active_mask: active,
            brain_mask: brain,
            bold_regressor: regressor,
            seed: cfg.seed,
        },
    })
}

impl Phantom {
    pub fn emit(&self, condition: Condition) -> EegRecording {
        emit_condition(self, condition)
    }

    pub fn ecg_index(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn r_peak_markers(&self) -> EventMarkers {
        EventMarkers::new(self.truth.r_peaks.iter().map(|&s| Marker::new(s, MarkerKind::RPeak, "R")).collect())
    }
}

/// Outside: clean only, no scanner markers. ScannerOff: clean + pulse
/// artifact. ScannerOn: clean + pulse + gradient artifact.
pub fn emit_condition(p: &Phantom, condition: Condition) -> EegRecording {
    let t = &p.truth;
    let (data, markers) = match condition {
        Condition::Outside => (t.clean.clone(), EventMarkers::new(stimulus_markers(&p.config))),
        Condition::ScannerOff => (&t.clean + &t.bcg, EventMarkers::new(stimulus_markers(&p.config))),
        Condition::ScannerOn => (&(&t.clean + &t.bcg) + &t.ga, p.markers.clone()),
    };
    EegRecording::new(p.labels.clone(), p.config.eeg_rate_hz, data, markers).expect("phantom shapes are consistent")
}

/// Task and rest spans (samples) derived from the stimulus markers.
pub fn task_rest_spans(markers: &EventMarkers, n_samples: usize) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut task = Vec::new();
    let mut rest = Vec::new();
    let mut state_on = false;
    let mut since = 0usize;
    for m in markers.iter() {
        let to_on = match m.kind {
            MarkerKind::StimulusOn => true,
            MarkerKind::StimulusOff => false,
            _ => continue,
        };
        if to_on == state_on {
            continue;
        }
        if m.sample > since {
            if state_on { &mut task } else { &mut rest }.push((since, m.sample));
        }
        state_on = to_on;
        since = m.sample;
    }
    if n_samples > since {
        if state_on { &mut task } else { &mut rest }.push((since, n_samples));
    }
    (task, rest)
}

/// Run-length encoding of a flag vector as `[start, length]` pairs.
pub fn rle(flags: &[bool]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if flags[i] {
            let s = i;
            while i < flags.len() && flags[i] {
                i += 1;
            }
            out.push([s, i - s]);
        } else {
            i += 1;
        }
    }
    out
}

pub fn unrle(runs: &[[usize; 2]], len: usize) -> Vec<bool> {
    let mut v = vec![false; len];
    for &[s, l] in runs {
        for f in v.iter_mut().skip(s).take(l) {
            *f = true;
        }
    }
    v
}
