//! Butterworth band-pass design as cascaded biquads, plus forward-backward
//! application.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    /// Transposed direct-form II state after an infinitely long constant
    /// unit input.
    fn step_state(&self) -> [f64; 2] {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2]);
        let s2 = self.b[2] - self.a[2] * gain;
        let s1 = self.b[1] - self.a[1] * gain + s2;
        [s1, s2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDesign {
    pub kind: String,
    pub band_hz: (f64, f64),
    pub order: usize,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosFilter {
    sections: Vec<Biquad>,
    design: FilterDesign,
}

impl SosFilter {
    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn design(&self) -> &FilterDesign {
        &self.design
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.design.rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Samples for the slowest pole to decay by 60 dB.
    pub fn settling_length(&self) -> usize {
        let r = self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        if r <= 0.0 {
            return 1;
        }
        ((1e-3f64).ln() / r.ln()).ceil().max(1.0) as usize
    }

    /// Causal single pass from rest.
    pub fn filter(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        for sec in &self.sections {
            run_section(sec, &mut out, 0.0);
        }
        out
    }
}

/// Designs a Butterworth band-pass of total `order` (even) as `order / 2`
/// biquads using the bilinear transform with pre-warped band edges. The
/// response is normalised to unity at the geometric band centre.
pub fn design_bandpass(low_hz: f64, high_hz: f64, order: usize, rate_hz: f64) -> Result<SosFilter, DspError> {
    if !(rate_hz > 0.0 && low_hz > 0.0 && low_hz < high_hz && high_hz < rate_hz / 2.0) {
        return Err(DspError::InvalidBand { low: low_hz, high: high_hz, rate: rate_hz });
    }
    if order == 0 || !order.is_multiple_of(2) {
        return Err(DspError::InvalidOrder(order));
    }
    let n = order / 2;
    let w1 = (PI * low_hz / rate_hz).tan();
    let w2 = (PI * high_hz / rate_hz).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    // analog low-pass prototype poles, mapped to band-pass then to z
    let mut zpoles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
            zpoles.push((1.0 + s) / (1.0 - s));
        }
    }

    let mut upper: Vec<Complex64> = zpoles.iter().copied().filter(|z| z.im > 1e-12).collect();
    let mut real: Vec<f64> = zpoles.iter().filter(|z| z.im.abs() <= 1e-12).map(|z| z.re).collect();
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    let mut sections: Vec<Biquad> = upper.iter().map(|z| Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -2.0 * z.re, z.norm_sqr()] }).collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -(r1 + r2), r1 * r2] });
    }
    if sections.len() != n {
        return Err(DspError::UnstableDesign(format!("expected {n} sections, built {}", sections.len())));
    }

    let center = 2.0 * w0_sq.sqrt().atan();
    let z_inv = Complex64::from_polar(1.0, -center);
    for sec in &mut sections {
        let g = 1.0 / sec.response(z_inv).norm();
        for b in &mut sec.b {
            *b *= g;
        }
    }

    let filter =
        SosFilter { sections, design: FilterDesign { kind: "butterworth-bandpass".into(), band_hz: (low_hz, high_hz), order, rate_hz } };
    if !filter.is_stable() {
        return Err(DspError::UnstableDesign("pole on or outside the unit circle".into()));
    }
    Ok(filter)
}

/// Forward-backward filtering with odd-reflection padding and steady-state
/// initial conditions. Net phase is zero; magnitude is `|H|^2`.
pub fn filt_zero_phase(signal: &[f64], filter: &SosFilter) -> Result<Vec<f64>, DspError> {
    let settle = filter.settling_length();
    let n = signal.len();
    if n <= 3 * settle {
        return Err(DspError::SignalTooShort { needed: 3 * settle + 1, got: n });
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite);
    }
    let pad = settle.min(n - 1);
    let first = signal[0];
    let last = signal[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    run_cascade(filter, &mut ext);
    ext.reverse();
    run_cascade(filter, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Runs every section with its state initialised to the steady state for a
/// constant input equal to the first sample reaching that section.
fn run_cascade(filter: &SosFilter, x: &mut [f64]) {
    let mut level = x.first().copied().unwrap_or(0.0);
    for sec in &filter.sections {
        run_section(sec, x, level);
        level *= sec.dc_gain();
    }
}

/// Transposed direct-form II pass, state preset for a constant input `level`.
fn run_section(sec: &Biquad, x: &mut [f64], level: f64) {
    let [b0, b1, b2] = sec.b;
    let [_, a1, a2] = sec.a;
    let st = sec.step_state();
    let (mut s1, mut s2) = (st[0] * level, st[1] * level);
    for v in x.iter_mut() {
        let input = *v;
        let y = b0 * input + s1;
        s1 = b1 * input - a1 * y + s2;
        s2 = b2 * input - a2 * y;
        *v = y;
    }
}
