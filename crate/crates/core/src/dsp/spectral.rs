//! FFT-based kernels: analytic envelope, Welch PSD, band power.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use super::DspError;
use crate::datamodel::EegRecording;

/// Magnitude of the analytic signal, built by zeroing negative frequencies
/// and doubling positive ones (DC and Nyquist kept once).
pub fn analytic_envelope(signal: &[f64]) -> Result<Vec<f64>, DspError> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite);
    }
    let n = signal.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let scale = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= scale;
    }
    inv.process(&mut buf);
    let norm = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.norm() * norm).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    /// channels × freqs, µV²/Hz
    pub power: Array2<f64>,
    pub channel_labels: Vec<String>,
    pub segment_length: usize,
    pub overlap: usize,
    pub window: &'static str,
    pub n_segments: usize,
}

impl PsdEstimate {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Index of the bin closest to `freq_hz`.
    pub fn bin_of(&self, freq_hz: f64) -> usize {
        let df = self.df();
        if df <= 0.0 {
            return 0;
        }
        ((freq_hz / df).round().max(0.0) as usize).min(self.freqs.len() - 1)
    }

    pub fn channel(&self, label: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.channel_labels.iter().position(|l| l == label).map(|i| self.power.row(i))
    }
}

fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()).collect()
}

/// Welch PSD over the whole record: Hann segments, mean removed per segment,
/// one-sided density scaling.
pub fn welch_psd(rec: &EegRecording, segment_seconds: f64, overlap_fraction: f64) -> Result<PsdEstimate, DspError> {
    welch_psd_spans(rec, &[(0, rec.n_samples())], segment_seconds, overlap_fraction)
}

/// Welch PSD using only segments that fit inside the given `[start, end)`
/// sample spans; periodograms from every span are pooled.
pub fn welch_psd_spans(
    rec: &EegRecording,
    spans: &[(usize, usize)],
    segment_seconds: f64,
    overlap_fraction: f64,
) -> Result<PsdEstimate, DspError> {
    let fs = rec.sampling_rate();
    let seg = (segment_seconds * fs).round() as usize;
    if seg < 2 || !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DspError::InvalidSegment { segment: seg, overlap: overlap_fraction });
    }
    let overlap = (overlap_fraction * seg as f64).round() as usize;
    let step = seg - overlap;
    let mut starts = Vec::new();
    for &(a, b) in spans {
        let b = b.min(rec.n_samples());
        let mut s = a;
        while s + seg <= b {
            starts.push(s);
            s += step;
        }
    }
    if starts.len() < 2 {
        let got = spans.iter().map(|&(a, b)| b.saturating_sub(a)).sum();
        return Err(DspError::SignalTooShort { needed: seg + step, got });
    }

    let window = hann_periodic(seg);
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let nfreq = seg / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(seg);
    let mut power = Array2::zeros((rec.n_channels(), nfreq));
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    for (c, row) in rec.data().outer_iter().enumerate() {
        let owned;
        let row: &[f64] = match row.as_slice() {
            Some(r) => r,
            None => {
                owned = row.to_vec();
                &owned
            }
        };
        let mut acc = vec![0.0; nfreq];
        for &s in &starts {
            let x = &row[s..s + seg];
            let mean = x.iter().sum::<f64>() / seg as f64;
            for ((b, &v), &w) in buf.iter_mut().zip(x).zip(&window) {
                *b = Complex64::new((v - mean) * w, 0.0);
            }
            fft.process(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                *a += buf[k].norm_sqr();
            }
        }
        let scale = 1.0 / (fs * wss * starts.len() as f64);
        for (k, a) in acc.iter().enumerate() {
            let one_sided = if k == 0 || (seg.is_multiple_of(2) && k == nfreq - 1) { 1.0 } else { 2.0 };
            power[[c, k]] = a * scale * one_sided;
        }
    }
    Ok(PsdEstimate {
        freqs: (0..nfreq).map(|k| k as f64 * fs / seg as f64).collect(),
        power,
        channel_labels: rec.channel_labels().to_vec(),
        segment_length: seg,
        overlap,
        window: "hann",
        n_segments: starts.len(),
    })
}

/// Trapezoidal integral of each channel's density over `[lo, hi]` Hz, with
/// linear interpolation at band edges that fall between bins.
pub fn band_power(psd: &PsdEstimate, band_hz: (f64, f64)) -> Result<Vec<f64>, DspError> {
    let (lo, hi) = band_hz;
    let fmax = *psd.freqs.last().unwrap_or(&0.0);
    if !(lo >= 0.0 && lo < hi && hi <= fmax + 1e-9) {
        return Err(DspError::InvalidBand { low: lo, high: hi, rate: 2.0 * fmax });
    }
    let f = &psd.freqs;
    let interp = |row: &ndarray::ArrayView1<f64>, x: f64| -> f64 {
        let df = f[1] - f[0];
        let i = ((x / df).floor() as usize).min(f.len() - 2);
        let t = (x - f[i]) / df;
        row[i] * (1.0 - t) + row[i + 1] * t
    };
    Ok(psd
        .power
        .outer_iter()
        .map(|row| {
            let mut xs = vec![lo];
            xs.extend(f.iter().copied().filter(|&x| x > lo && x < hi));
            xs.push(hi);
            xs.windows(2).map(|w| 0.5 * (interp(&row, w[0]) + interp(&row, w[1])) * (w[1] - w[0])).sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EventMarkers;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rec_from(rows: Vec<Vec<f64>>, fs: f64) -> EegRecording {
        let n = rows[0].len();
        let labels = (0..rows.len()).map(|c| format!("C{c}")).collect();
        let data = Array2::from_shape_vec((rows.len(), n), rows.concat()).unwrap();
        EegRecording::new(labels, fs, data, EventMarkers::default()).unwrap()
    }

    fn white(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn envelope_of_pure_tone() {
        let fs = 500.0;
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|i| 3.0 * (2.0 * PI * 12.0 * i as f64 / fs).sin()).collect();
        let env = analytic_envelope(&x).unwrap();
        let edge = n / 20;
        for &e in &env[edge..n - edge] {
            assert!((e - 3.0).abs() < 0.03, "{e}");
        }
        assert!(analytic_envelope(&vec![0.0; 64]).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(analytic_envelope(&[1.0, f64::NAN]), Err(DspError::NonFinite)));
    }

    #[test]
    fn envelope_tracks_am_tone() {
        let fs = 500.0;
        let n = 20_000;
        let t = |i: usize| i as f64 / fs;
        let m = |i: usize| 1.0 + 0.5 * (2.0 * PI * 0.5 * t(i)).sin();
        let x: Vec<f64> = (0..n).map(|i| m(i) * (2.0 * PI * 12.0 * t(i)).sin()).collect();
        let env = analytic_envelope(&x).unwrap();
        for i in n / 20..n - n / 20 {
            assert!((env[i] - m(i)).abs() <= 0.02 * m(i), "{i}: {} vs {}", env[i], m(i));
        }
    }

    #[test]
    fn envelope_of_tone_plus_dc() {
        // |analytic(c + A sin wt)| = sqrt(c^2 + A^2 + 2 c A sin wt)
        let fs = 500.0;
        let n = 10_000;
        let (c, a) = (0.7, 2.0);
        let x: Vec<f64> = (0..n).map(|i| c + a * (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
        let env = analytic_envelope(&x).unwrap();
        for i in n / 20..n - n / 20 {
            let s = (2.0 * PI * 10.0 * i as f64 / fs).sin();
            let expect = (c * c + a * a + 2.0 * c * a * s).sqrt();
            assert!((env[i] - expect).abs() <= 0.02 * expect);
        }
    }

    #[test]
    fn welch_parseval_white_noise() {
        let x = white(11, 200_000);
        let var = variance(&x);
        let psd = welch_psd(&rec_from(vec![x], 500.0), 4.0, 0.5).unwrap();
        let total: f64 = psd.power.row(0).sum() * psd.df();
        assert!((total / var - 1.0).abs() < 0.05, "{total} vs {var}");
        assert!(psd.power.iter().all(|&p| p >= 0.0));
        assert_eq!(psd.freqs[0], 0.0);
    }

    #[test]
    fn welch_tone_peak_and_band_power() {
        let fs = 500.0;
        let x: Vec<f64> = (0..60_000).map(|i| (2.0 * PI * 12.0 * i as f64 / fs).sin()).collect();
        let psd = welch_psd(&rec_from(vec![x.clone()], fs), 4.0, 0.5).unwrap();
        let row = psd.power.row(0);
        let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, psd.bin_of(12.0));

        let y: Vec<f64> = (0..60_000).map(|i| 2.0 * (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
        let psd = welch_psd(&rec_from(vec![y.clone()], fs), 4.0, 0.5).unwrap();
        let alpha = band_power(&psd, (8.0, 13.0)).unwrap()[0];
        assert!((alpha / variance(&y) - 1.0).abs() < 0.02, "{alpha}");
        let beta = band_power(&psd, (20.0, 30.0)).unwrap()[0];
        assert!(beta < 1e-6 * alpha);
        assert!(band_power(&psd, (13.0, 8.0)).is_err());
        assert!(band_power(&psd, (100.0, 400.0)).is_err());
    }

    #[test]
    fn welch_independent_runs_agree() {
        // Monte-Carlo: average ratio between two independent noise PSDs is 1
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let a = welch_psd(&rec_from(vec![white(100 + seed, 50_000)], 500.0), 4.0, 0.5).unwrap();
            let b = welch_psd(&rec_from(vec![white(900 + seed, 50_000)], 500.0), 4.0, 0.5).unwrap();
            let pa = band_power(&a, (5.0, 200.0)).unwrap()[0];
            let pb = band_power(&b, (5.0, 200.0)).unwrap()[0];
            ratios.push(pa / pb);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn welch_needs_two_segments() {
        let x = white(1, 2500);
        assert!(matches!(welch_psd(&rec_from(vec![x], 500.0), 4.0, 0.5), Err(DspError::SignalTooShort { .. })));
    }

    #[test]
    fn spans_pool_only_inside_segments() {
        let x = white(5, 20_000);
        let rec = rec_from(vec![x], 500.0);
        let psd = welch_psd_spans(&rec, &[(0, 4000), (10_000, 14_000)], 4.0, 0.5).unwrap();
        assert_eq!(psd.n_segments, 6);
    }
}
