//! Separable 3-D Gaussian smoothing in voxel space.

use super::DspError;

/// Normalised 1-D Gaussian taps for `sigma` voxels, truncated at 4 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Smooths a volume (x fastest) with a Gaussian of `fwhm_mm`. Near the
/// borders the in-bounds taps are renormalised, so a constant volume stays
/// constant.
pub fn gaussian_smooth_3d(volume: &[f64], dims: [usize; 3], fwhm_mm: f64, voxel_size_mm: [f64; 3]) -> Result<Vec<f64>, DspError> {
    let n: usize = dims.iter().product();
    if volume.len() != n {
        return Err(DspError::ShapeMismatch { needed: n, got: volume.len() });
    }
    let mut out = volume.to_vec();
    if fwhm_mm <= 0.0 {
        return Ok(out);
    }
    let to_sigma = fwhm_mm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut line = Vec::new();
    for axis in 0..3 {
        let kernel = gaussian_kernel(to_sigma / voxel_size_mm[axis]);
        if kernel.len() == 1 {
            continue;
        }
        let r = (kernel.len() / 2) as isize;
        let len = dims[axis];
        let stride = strides[axis];
        for base in 0..n {
            // visit each line once, from its first voxel
            if !(base / stride).is_multiple_of(len) {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|i| out[base + i * stride]));
            for i in 0..len {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (k, &w) in kernel.iter().enumerate() {
                    let j = i as isize + k as isize - r;
                    if j >= 0 && (j as usize) < len {
                        acc += w * line[j as usize];
                        wsum += w;
                    }
                }
                out[base + i * stride] = acc / wsum;
            }
        }
    }
    Ok(out)
}
