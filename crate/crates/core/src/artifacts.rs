//! Scanner artifact removal: average artifact subtraction (AAS) for gradient
//! artifacts, ECG R-peak detection and R-peak-locked pulse artifact (BCG)
//! template subtraction.

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DataError, EegRecording, EventMarkers, Marker, MarkerKind};
use crate::dsp::{design_bandpass, filt_zero_phase, DspError};

pub const DEFAULT_AAS_WINDOW: usize = 15;
pub const DEFAULT_BCG_WINDOW: usize = 30;
pub const DEFAULT_BCG_DELAY_S: f64 = 0.21;
/// Longest cardiac template, seconds.
pub const MAX_BCG_WINDOW_S: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArtifactError {
    #[error("trigger spacing jitters by {jitter} samples (limit 1)")]
    IrregularTriggers { jitter: usize },
    #[error("need at least {needed} epochs, found {got}")]
    TooFewEpochs { needed: usize, got: usize },
    #[error("ECG channel is flat")]
    FlatSignal,
    #[error("ECG too short: {got_s:.1} s, need {needed_s} s")]
    TooShort { needed_s: f64, got_s: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Mean artifact waveform of one correction pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactTemplate {
    /// channels × template samples, µV
    pub waveform: Array2<f64>,
    pub epoch_indices: Vec<usize>,
    pub alignment: MarkerKind,
    /// offset of template sample 0 relative to its anchor marker
    pub lag_samples: isize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanResult {
    pub cleaned: EegRecording,
    pub artifact_estimate: Array2<f64>,
    pub epoch_residual_rms: Vec<f64>,
    /// grand average over all epochs, for reporting
    pub template: ArtifactTemplate,
}

/// Indices of the `window` epochs nearest to `i`, excluding `i`: a block of
/// `window + 1` consecutive epochs, centred on `i` where the edges allow.
fn neighbour_block(i: usize, n: usize, window: usize) -> std::ops::Range<usize> {
    let start = i.saturating_sub(window / 2).min(n - 1 - window);
    start..start + window + 1
}

/// Sliding-mean subtraction shared by both correctors. `anchors` are epoch
/// origins (template sample 0); `owned[k]` is the sub-range of lags epoch `k`
/// is allowed to correct.
fn subtract_sliding_mean(
    rec: &EegRecording,
    channels: &[usize],
    anchors: &[isize],
    len: usize,
    owned: &[std::ops::Range<usize>],
    window: usize,
) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let n = rec.n_samples() as isize;
    let data = rec.data();
    let ne = anchors.len();
    let mut estimate = Array2::zeros(data.dim());
    let mut grand = Array2::zeros((rec.n_channels(), len));
    let mut sq = vec![0.0; ne];
    let mut cnt = vec![0usize; ne];

    for &c in channels {
        let x = data.row(c);
        // epoch matrix; lags outside the record stay NaN and are skipped
        let mut ep = Array2::from_elem((ne, len), f64::NAN);
        for (k, &a) in anchors.iter().enumerate() {
            for l in 0..len {
                let t = a + l as isize;
                if (0..n).contains(&t) {
                    ep[[k, l]] = x[t as usize];
                }
            }
        }
        for l in 0..len {
            let (mut s, mut m) = (0.0, 0usize);
            for k in 0..ne {
                if ep[[k, l]].is_finite() {
                    s += ep[[k, l]];
                    m += 1;
                }
            }
            grand[[c, l]] = if m > 0 { s / m as f64 } else { 0.0 };
        }
        let mut est_row = estimate.row_mut(c);
        for k in 0..ne {
            let block = neighbour_block(k, ne, window);
            for l in owned[k].clone() {
                let t = anchors[k] + l as isize;
                if !(0..n).contains(&t) {
                    continue;
                }
                let (mut s, mut m) = (0.0, 0usize);
                for j in block.clone() {
                    if j != k && ep[[j, l]].is_finite() {
                        s += ep[[j, l]];
                        m += 1;
                    }
                }
                if m > 0 {
                    let e = s / m as f64;
                    est_row[t as usize] = e;
                    let r = x[t as usize] - e;
                    sq[k] += r * r;
                    cnt[k] += 1;
                }
            }
        }
    }
    let rms = sq.iter().zip(&cnt).map(|(s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 }).collect();
    (estimate, rms, grand)
}

fn finish(
    rec: &EegRecording,
    estimate: Array2<f64>,
    rms: Vec<f64>,
    grand: Array2<f64>,
    alignment: MarkerKind,
    lag: isize,
) -> Result<CleanResult, ArtifactError> {
    let cleaned = rec.with_data(rec.data() - &estimate)?;
    let template = ArtifactTemplate { waveform: grand, epoch_indices: (0..rms.len()).collect(), alignment, lag_samples: lag };
    Ok(CleanResult { cleaned, artifact_estimate: estimate, epoch_residual_rms: rms, template })
}

fn median_usize(v: &mut [usize]) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Gradient artifact removal by average artifact subtraction. Epochs start at
/// each trigger of `trigger_kind` and span the median trigger interval; each
/// is corrected with the mean of its `window_epochs` nearest neighbours.
/// Samples outside every epoch are left untouched. Bad channels are skipped.
pub fn aas_correct(rec: &EegRecording, trigger_kind: MarkerKind, window_epochs: usize) -> Result<CleanResult, ArtifactError> {
    if window_epochs == 0 {
        return Err(ArtifactError::InvalidParameter("AAS window must be at least one epoch".into()));
    }
    let trig = rec.markers().samples_of(trigger_kind);
    if trig.is_empty() {
        return Err(DataError::NoMarkers(trigger_kind).into());
    }
    let mut gaps: Vec<usize> = trig.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return Err(ArtifactError::TooFewEpochs { needed: window_epochs + 1, got: 1 });
    }
    let len = median_usize(&mut gaps);
    let jitter = gaps.iter().map(|&g| g.abs_diff(len)).max().unwrap_or(0);
    if jitter > 1 {
        return Err(ArtifactError::IrregularTriggers { jitter });
    }
    // the final epoch must fit inside the record
    let anchors: Vec<isize> = trig.iter().filter(|&&t| t + len <= rec.n_samples()).map(|&t| t as isize).collect();
    if anchors.len() < window_epochs + 1 {
        return Err(ArtifactError::TooFewEpochs { needed: window_epochs + 1, got: anchors.len() });
    }
    // with 1-sample jitter consecutive epochs may overlap by one sample;
    // the later epoch owns it
    let owned: Vec<_> = anchors
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let end = anchors.get(k + 1).map_or(len, |&b| ((b - a) as usize).min(len));
            0..end
        })
        .collect();
    let channels: Vec<usize> = (0..rec.n_channels()).filter(|&c| !rec.is_bad(c)).collect();
    let (est, rms, grand) = subtract_sliding_mean(rec, &channels, &anchors, len, &owned, window_epochs);
    finish(rec, est, rms, grand, trigger_kind, 0)
}

/// Pan-Tompkins style QRS detector. Returns one `RPeak` marker per beat.
pub fn detect_r_peaks(ecg: ArrayView1<'_, f64>, rate_hz: f64) -> Result<EventMarkers, ArtifactError> {
    let n = ecg.len();
    let dur = n as f64 / rate_hz;
    if dur < 10.0 {
        return Err(ArtifactError::TooShort { needed_s: 10.0, got_s: dur });
    }
    let mean = ecg.mean().unwrap_or(0.0);
    let var = ecg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var < 1e-12 {
        return Err(ArtifactError::FlatSignal);
    }
    let x: Vec<f64> = ecg.iter().map(|v| v - mean).collect();
    let bp = filt_zero_phase(&x, &design_bandpass(5.0, 15.0, 4, rate_hz)?)?;

    let sq: Vec<f64> = std::iter::once(0.0).chain(bp.windows(2).map(|w| (w[1] - w[0]).powi(2))).collect();
    // centred 150 ms moving integration
    let w = ((0.150 * rate_hz).round() as usize).max(1);
    let mut cs = vec![0.0; n + 1];
    for i in 0..n {
        cs[i + 1] = cs[i] + sq[i];
    }
    let integ: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(w / 2);
            let hi = (lo + w).min(n);
            (cs[hi] - cs[lo]) / (hi - lo) as f64
        })
        .collect();

    // threshold from the 95th percentile of each 10 s block
    let block = (10.0 * rate_hz) as usize;
    let n_blocks = (n / block).max(1);
    let thresh: Vec<f64> = (0..n_blocks)
        .map(|b| {
            let hi = if b + 1 == n_blocks { n } else { (b + 1) * block };
            let mut v = integ[b * block..hi].to_vec();
            let k = ((v.len() as f64 * 0.95) as usize).min(v.len() - 1);
            let (_, p, _) = v.select_nth_unstable_by(k, f64::total_cmp);
            0.4 * *p
        })
        .collect();
    let th = |i: usize| thresh[(i / block).min(n_blocks - 1)];

    // one candidate per supra-threshold run
    let mut regions = Vec::new();
    let mut i = 0;
    while i < n {
        if integ[i] > th(i) && th(i) > 0.0 {
            let start = i;
            while i < n && integ[i] > th(i) {
                i += 1;
            }
            regions.push(start..i);
        } else {
            i += 1;
        }
    }
    let search = ((0.075 * rate_hz).round() as usize).max(1);
    let widen = |r: &std::ops::Range<usize>| r.start.saturating_sub(search)..(r.end + search).min(n);
    let (mut pos, mut neg) = (0.0, 0.0);
    for r in &regions {
        let seg = &bp[widen(r)];
        pos += seg.iter().cloned().fold(f64::MIN, f64::max);
        neg += -seg.iter().cloned().fold(f64::MAX, f64::min);
    }
    let sign = if pos >= neg { 1.0 } else { -1.0 };

    let mut peaks: Vec<(usize, f64)> = regions
        .iter()
        .map(|r| {
            let rr = widen(r);
            let (k, v) =
                bp[rr.clone()].iter().enumerate().map(|(k, &v)| (k, sign * v)).fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
            (rr.start + k, v)
        })
        .collect();
    peaks.sort_by_key(|p| p.0);

    let refractory = (0.25 * rate_hz).round() as usize;
    let mut kept: Vec<(usize, f64)> = Vec::with_capacity(peaks.len());
    for p in peaks {
        match kept.last_mut() {
            Some(last) if p.0 - last.0 < refractory => {
                if p.1 > last.1 {
                    *last = p;
                }
            }
            _ => kept.push(p),
        }
    }
    Ok(EventMarkers::new(kept.into_iter().map(|(s, _)| Marker::new(s, MarkerKind::RPeak, "R")).collect()))
}

/// Pulse artifact removal on every good channel.
pub fn bcg_correct(rec: &EegRecording, r_peaks: &[usize], delay_s: f64, window_epochs: usize) -> Result<CleanResult, ArtifactError> {
    bcg_correct_except::<&str>(rec, r_peaks, delay_s, window_epochs, &[])
}

/// Pulse artifact removal; channels named in `skip` (typically the ECG) and
/// bad channels pass through unchanged.
///
/// Templates are anchored at R-peak + `delay_s` and span
/// `min(median RR, 1.5 s)` centred on the anchor. A sample is corrected only
/// by the epoch whose anchor is nearest to it.
pub fn bcg_correct_except<S: AsRef<str>>(
    rec: &EegRecording,
    r_peaks: &[usize],
    delay_s: f64,
    window_epochs: usize,
    skip: &[S],
) -> Result<CleanResult, ArtifactError> {
    if window_epochs == 0 || !delay_s.is_finite() {
        return Err(ArtifactError::InvalidParameter("BCG window must be positive and delay finite".into()));
    }
    if r_peaks.len() < window_epochs + 1 {
        return Err(ArtifactError::TooFewEpochs { needed: window_epochs + 1, got: r_peaks.len() });
    }
    let mut peaks = r_peaks.to_vec();
    peaks.sort_unstable();
    let rate = rec.sampling_rate();
    let mut rr: Vec<usize> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    let len = median_usize(&mut rr).min((MAX_BCG_WINDOW_S * rate).round() as usize).max(2);
    let half = (len / 2) as isize;
    let delay = (delay_s * rate).round() as isize;
    let centres: Vec<isize> = peaks.iter().map(|&p| p as isize + delay).collect();
    let anchors: Vec<isize> = centres.iter().map(|&c| c - half).collect();

    // nearest-anchor ownership: boundaries halfway between centres
    let owned: Vec<_> = centres
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let lo = if k == 0 { c - half } else { ((centres[k - 1] + c) / 2 + 1).max(c - half) };
            let hi =
                if k + 1 == centres.len() { c - half + len as isize } else { ((c + centres[k + 1]) / 2 + 1).min(c - half + len as isize) };
            ((lo - (c - half)).max(0) as usize)..((hi - (c - half)).max(0) as usize)
        })
        .collect();
    let skip_idx: Vec<usize> = skip.iter().filter_map(|s| rec.channel_index(s.as_ref())).collect();
    let channels: Vec<usize> = (0..rec.n_channels()).filter(|&c| !rec.is_bad(c) && !skip_idx.contains(&c)).collect();
    let (est, rms, grand) = subtract_sliding_mean(rec, &channels, &anchors, len, &owned, window_epochs);
    finish(rec, est, rms, grand, MarkerKind::RPeak, delay - half)
}

/// Power of `x` inside `[lo, hi]` Hz relative to the same band of `reference`,
/// in dB, from the mean-removed periodogram of each.
pub fn attenuation_db(reference: &[f64], x: &[f64], rate_hz: f64, freqs: &[f64], half_width_hz: f64) -> f64 {
    let p_ref = tone_power(reference, rate_hz, freqs, half_width_hz);
    let p_x = tone_power(x, rate_hz, freqs, half_width_hz);
    10.0 * (p_ref / p_x.max(f64::MIN_POSITIVE)).log10()
}

/// Periodogram power summed over `f ± half_width` for every `f`.
fn tone_power(x: &[f64], rate_hz: f64, freqs: &[f64], half_width_hz: f64) -> f64 {
    use rustfft::FftPlanner;
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<num_complex::Complex64> = x.iter().map(|v| (v - mean).into()).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = rate_hz / n as f64;
    freqs
        .iter()
        .map(|&f| {
            let lo = ((f - half_width_hz) / df).ceil().max(0.0) as usize;
            let hi = (((f + half_width_hz) / df).floor() as usize).min(n / 2);
            (lo..=hi).map(|k| buf[k].norm_sqr()).sum::<f64>()
        })
        .sum()
}

/// Residual RMS of `est - truth` relative to RMS of `truth` over `channels`.
pub fn relative_residual(estimate: &Array2<f64>, truth: &Array2<f64>, channels: &[usize], range: std::ops::Range<usize>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &c in channels {
        let e = estimate.slice(s![c, range.clone()]);
        let t = truth.slice(s![c, range.clone()]);
        for (a, b) in e.iter().zip(t.iter()) {
            num += (a - b).powi(2);
            den += b * b;
        }
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}
