//! Independent reference implementations and the checks built on them.
//! Each `check_*` returns the worst observed error so callers can both
//! assert and report it.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use neurofuse::datamodel::{EegRecording, EventMarkers, FmriSeries};
use neurofuse::{dsp, fusion, ica};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn recording(data: Array2<f64>, rate: f64) -> EegRecording {
    let labels = (0..data.nrows()).map(|i| format!("C{i}")).collect();
    EegRecording::new(labels, rate, data, EventMarkers::default()).unwrap()
}

// ---------------------------------------------------------------- Pearson

/// Single-pass textbook formula.
pub fn pearson_direct(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

pub fn check_pearson(trials: usize) -> f64 {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = r.random_range(5..=50);
        let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let mix: f64 = r.random_range(-1.0..1.0);
        let y: Vec<f64> = x.iter().map(|v| mix * v + r.sample::<f64, _>(StandardNormal)).collect();
        worst = worst.max((fusion::pearson(&x, &y) - pearson_direct(&x, &y)).abs());
    }
    worst
}

// ---------------------------------------------------------------- BH

/// Step-up without sorting: the threshold is the largest p that is at most
/// `k q / m`, where `k` counts the p-values not above it.
pub fn bh_brute(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len();
    let thr = p
        .iter()
        .copied()
        .filter(|&t| {
            let k = p.iter().filter(|&&v| v <= t).count();
            t <= k as f64 * q / m as f64
        })
        .fold(f64::NEG_INFINITY, f64::max);
    p.iter().map(|&v| v <= thr).collect()
}

pub const BH_GRID: [f64; 6] = [0.001, 0.01, 0.03, 0.05, 0.2, 1.0];

/// Every vector of length 1..=`max_len` over the grid, at two q levels.
/// Returns (vectors checked, mismatches).
pub fn check_bh(max_len: usize) -> (usize, usize) {
    let g = BH_GRID.len();
    let (mut checked, mut bad) = (0, 0);
    for q in [0.05, 0.25] {
        for m in 1..=max_len {
            let total = g.pow(m as u32);
            let mut p = vec![0.0; m];
            for code in 0..total {
                let mut c = code;
                for slot in p.iter_mut() {
                    *slot = BH_GRID[c % g];
                    c /= g;
                }
                checked += 1;
                if fusion::fdr_bh(&p, q).rejected != bh_brute(&p, q) {
                    bad += 1;
                }
            }
        }
    }
    (checked, bad)
}

// ---------------------------------------------------------------- Butterworth

/// Closed-form magnitude of a bilinear-transformed Butterworth band-pass with
/// `order / 2` prototype poles and pre-warped edges.
pub fn butterworth_bandpass_db(f: f64, lo: f64, hi: f64, order: usize, fs: f64) -> f64 {
    let w = |x: f64| (PI * x / fs).tan();
    let (w1, w2, om) = (w(lo), w(hi), w(f));
    let n = (order / 2) as i32;
    let ratio = (om * om - w1 * w2) / ((w2 - w1) * om);
    -10.0 * (1.0 + ratio.powi(2 * n)).log10()
}

/// Worst |dB| difference over 50 probes per design, for probes where the
/// analytic response is above -120 dB.
pub fn check_butterworth() -> f64 {
    let designs = [(8.0, 13.0, 4, 500.0), (11.0, 13.0, 4, 500.0), (1.0, 40.0, 8, 250.0), (30.0, 90.0, 6, 1000.0)];
    let mut worst: f64 = 0.0;
    for (lo, hi, order, fs) in designs {
        let filt = dsp::design_bandpass(lo, hi, order, fs).unwrap();
        for k in 0..50 {
            let f = 0.2 + (fs / 2.0 - 0.4) * k as f64 / 49.0;
            let want = butterworth_bandpass_db(f, lo, hi, order, fs);
            if want > -120.0 {
                worst = worst.max((filt.magnitude_db(f) - want).abs());
            }
        }
    }
    worst
}

// ---------------------------------------------------------------- envelope

/// Worst relative envelope error on pure and AM tones, ignoring the outer
/// 10% at each end.
pub fn check_envelope() -> f64 {
    let fs = 500.0;
    let n = 5000;
    let t = |i: usize| i as f64 / fs;
    let cases: Vec<(Vec<f64>, Vec<f64>)> = vec![
        ((0..n).map(|i| 3.0 * (2.0 * PI * 12.0 * t(i)).sin()).collect(), vec![3.0; n]),
        ((0..n).map(|i| 0.5 * (2.0 * PI * 40.3 * t(i) + 0.7).cos()).collect(), vec![0.5; n]),
        (
            (0..n).map(|i| 2.0 * (1.0 + 0.5 * (2.0 * PI * 0.5 * t(i)).cos()) * (2.0 * PI * 12.0 * t(i)).cos()).collect(),
            (0..n).map(|i| 2.0 * (1.0 + 0.5 * (2.0 * PI * 0.5 * t(i)).cos())).collect(),
        ),
        (
            (0..n).map(|i| (1.0 + 0.8 * (2.0 * PI * 1.3 * t(i)).sin()) * (2.0 * PI * 30.0 * t(i)).sin()).collect(),
            (0..n).map(|i| 1.0 + 0.8 * (2.0 * PI * 1.3 * t(i)).sin()).collect(),
        ),
    ];
    let mut worst: f64 = 0.0;
    for (x, want) in cases {
        let env = dsp::analytic_envelope(&x).unwrap();
        let peak = want.iter().cloned().fold(0.0, f64::max);
        for i in n / 10..n - n / 10 {
            worst = worst.max((env[i] - want[i]).abs() / peak);
        }
    }
    worst
}

// ---------------------------------------------------------------- Welch

/// |integrated PSD / variance - 1| for noise plus tones, worst case.
pub fn check_parseval() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut r = rng(100 + seed);
        let fs = 250.0;
        let n = 30_000;
        let noise = Normal::new(0.0, 2.0 + seed as f64).unwrap();
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                noise.sample(&mut r) + 5.0 * (2.0 * PI * 10.0 * t).sin() + 1.5 * (2.0 * PI * 37.1 * t).cos()
            })
            .collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let rec = recording(Array2::from_shape_vec((1, n), x).unwrap(), fs);
        let psd = dsp::welch_psd(&rec, 4.0, 0.5).unwrap();
        let total: f64 = psd.power.row(0).sum() * psd.df();
        worst = worst.max((total / var - 1.0).abs());
    }
    worst
}

// ---------------------------------------------------------------- OLS

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting and
/// returns the inverse of `a` alongside.
fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                let src = m[col].clone();
                for (v, s) in m[row].iter_mut().zip(src) {
                    *v -= f * s;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// t of the first column via `(X'X)^-1 X'y`.
pub fn ols_t_oracle(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = y.len();
    let p = x[0].len();
    let xtx: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| (0..n).map(|t| x[t][i] * x[t][j]).sum()).collect()).collect();
    let xty: Vec<f64> = (0..p).map(|i| (0..n).map(|t| x[t][i] * y[t]).sum()).collect();
    let inv = gauss_jordan_inverse(&xtx);
    let beta: Vec<f64> = (0..p).map(|i| (0..p).map(|j| inv[i][j] * xty[j]).sum()).collect();
    let rss: f64 = (0..n).map(|t| (y[t] - (0..p).map(|j| x[t][j] * beta[j]).sum::<f64>()).powi(2)).sum();
    beta[0] / (rss / (n - p) as f64 * inv[0][0]).sqrt()
}

/// Worst relative t difference over random voxels and designs.
pub fn check_ols() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..4u64 {
        let mut r = rng(200 + seed);
        let (nt, order) = (60 + 10 * seed as usize, 1 + seed as usize);
        let pred: Vec<f64> = (0..nt).map(|_| r.sample(StandardNormal)).collect();
        let design: Vec<Vec<f64>> = (0..nt)
            .map(|t| {
                let mut row = vec![pred[t], 1.0];
                row.extend((1..=order).map(|k| (2.0 / nt as f64).sqrt() * (PI * k as f64 * (2 * t + 1) as f64 / (2 * nt) as f64).cos()));
                row
            })
            .collect();
        let spatial = [3, 2, 2];
        let nv = 12;
        let gain: Vec<f64> = (0..nv).map(|v| v as f64 * 0.3 - 1.0).collect();
        let m = Array2::from_shape_fn((nv, nt), |(v, t)| 500.0 + gain[v] * pred[t] + r.sample::<f64, _>(StandardNormal) * 2.0);
        let fmri = FmriSeries::from_voxel_matrix(spatial, [2.0; 3], 2.0, &m).unwrap();
        let res = fusion::glm_tmap(&fmri, &pred, order).unwrap();
        for v in 0..nv {
            let want = ols_t_oracle(&design, &m.row(v).to_vec());
            let got = res.t.values()[v];
            worst = worst.max((got - want).abs() / want.abs().max(1e-12));
        }
    }
    worst
}

// ---------------------------------------------------------------- FastICA

/// Smallest best-match |corr| between true and recovered sources over
/// `seeds` random 3-source mixtures.
pub fn check_fastica(seeds: u64) -> f64 {
    let mut worst: f64 = 1.0;
    for seed in 0..seeds {
        let mut r = rng(300 + seed);
        let n = 5000;
        let fs = 250.0;
        let sources: Vec<Vec<f64>> = vec![
            (0..n).map(|i| (2.0 * PI * 3.0 * i as f64 / fs).sin()).collect(),
            (0..n).map(|i| ((1.7 * i as f64 / fs).fract() * 2.0) - 1.0).collect(),
            (0..n)
                .map(|_| {
                    let u: f64 = r.random_range(-0.5..0.5);
                    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
                })
                .collect(),
        ];
        let a = Array2::from_shape_fn((3, 3), |_| r.random_range(-1.0..1.0));
        let s = Array2::from_shape_fn((3, n), |(i, t)| sources[i][t]);
        let x = a.dot(&s);
        let rec = recording(x, fs);
        let opts = ica::IcaOptions { n_components: Some(3), seed, ..Default::default() };
        let model = ica::fit(&rec, &opts).unwrap();
        let est = model.sources(&rec).unwrap();
        for src in &sources {
            let best = (0..3).map(|k| pearson_direct(src, &est.row(k).to_vec()).abs()).fold(0.0, f64::max);
            worst = worst.min(best);
        }
    }
    worst
}
