use super::DspError;

/// Averages `envelope` into `n_volumes` bins of `tr_s` seconds. Sample `i`
/// belongs to bin `k` when `i / rate` lies in `[k tr, (k+1) tr)`. The last
/// bin may be partially covered, down to half its nominal length.
pub fn bin_to_tr(envelope: &[f64], rate_hz: f64, tr_s: f64, n_volumes: usize) -> Result<Vec<f64>, DspError> {
    let edge = |k: usize| ((k as f64 * tr_s * rate_hz) - 1e-9).ceil().max(0.0) as usize;
    let n = envelope.len();
    if n_volumes == 0 {
        return Ok(Vec::new());
    }
    let last_start = edge(n_volumes - 1);
    let last_len = edge(n_volumes) - last_start;
    if n < edge(n_volumes) && (n <= last_start || 2 * (n - last_start) < last_len) {
        return Err(DspError::CoverageTooShort { needed: edge(n_volumes), got: n });
    }
    Ok((0..n_volumes)
        .map(|k| {
            let a = edge(k);
            let b = edge(k + 1).min(n);
            envelope[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_bins() {
        let v = bin_to_tr(&vec![2.0; 4500], 500.0, 3.0, 3).unwrap();
        assert_eq!(v, vec![2.0; 3]);
    }

    #[test]
    fn samples_per_bin() {
        // each bin sums its own index, so bin k averages k
        let env: Vec<f64> = (0..4500).map(|i| (i / 1500) as f64).collect();
        assert_eq!(bin_to_tr(&env, 500.0, 3.0, 3).unwrap(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn ramp_means() {
        let n = 3000;
        let env: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let v = bin_to_tr(&env, 500.0, 3.0, 2).unwrap();
        let one_sample = 1.0 / n as f64;
        assert!((v[0] - 0.25).abs() <= one_sample);
        assert!((v[1] - 0.75).abs() <= one_sample);
    }

    #[test]
    fn coverage() {
        assert!(bin_to_tr(&vec![1.0; 3750], 500.0, 3.0, 3).is_ok());
        assert!(matches!(bin_to_tr(&vec![1.0; 3700], 500.0, 3.0, 3), Err(DspError::CoverageTooShort { .. })));
    }
}
