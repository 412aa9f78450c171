//! Reconstruction quality metrics. `reference` is always the ground truth.

use crate::cube::Cube;
use crate::error::{Error, Result};

use super::ssim::{ms_ssim_plane, ssim_plane, MsSsimConfig, Plane};

/// Reported for (near-)exact reconstructions.
pub const PSNR_CAP_DB: f64 = 99.0;

const EXACT_MSE: f64 = 1e-12;

pub fn mse(estimate: &Cube, reference: &Cube) -> Result<f64> {
    estimate.ensure_same_shape(reference, "mse")?;
    let s: f64 = estimate.data().iter().zip(reference.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / estimate.len() as f64)
}

/// PSNR in dB for a given peak value, capped at [`PSNR_CAP_DB`].
pub fn psnr_with_peak(estimate: &Cube, reference: &Cube, peak: f64) -> Result<f64> {
    let e = mse(estimate, reference)?;
    if e < EXACT_MSE {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / e).log10()).min(PSNR_CAP_DB))
}

pub fn psnr(estimate: &Cube, reference: &Cube) -> Result<f64> {
    psnr_with_peak(estimate, reference, 1.0)
}

pub(crate) fn band_plane(c: &Cube, b: usize) -> Plane {
    Plane::new(c.rows(), c.cols(), c.band(b).to_vec())
}

/// Single-scale SSIM averaged over bands.
pub fn ssim(estimate: &Cube, reference: &Cube) -> Result<f64> {
    ssim_with(estimate, reference, &MsSsimConfig::single_scale())
}

/// Single-scale SSIM averaged over bands using the window, sigma and peak of `cfg`.
pub fn ssim_with(estimate: &Cube, reference: &Cube, cfg: &MsSsimConfig) -> Result<f64> {
    estimate.ensure_same_shape(reference, "ssim")?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for b in 0..estimate.bands() {
        total += ssim_plane(&band_plane(reference, b), &band_plane(estimate, b), cfg.window, cfg.sigma, c1, c2)?.ssim;
    }
    Ok(total / estimate.bands() as f64)
}

/// Largest odd window no longer than `window` that fits a `rows × cols` image.
pub fn fitted_window(rows: usize, cols: usize, window: usize) -> usize {
    let side = rows.min(cols).min(window).max(1);
    if side % 2 == 1 {
        side
    } else {
        side - 1
    }
}

/// MS-SSIM averaged over bands.
pub fn ms_ssim(estimate: &Cube, reference: &Cube, cfg: &MsSsimConfig) -> Result<f64> {
    estimate.ensure_same_shape(reference, "ms-ssim")?;
    let mut total = 0.0;
    for b in 0..estimate.bands() {
        total += ms_ssim_plane(&band_plane(reference, b), &band_plane(estimate, b), cfg, false)?.0;
    }
    Ok(total / estimate.bands() as f64)
}

/// Mean spectral angle in radians over pixels where both spectra are nonzero.
pub fn sam(estimate: &Cube, reference: &Cube) -> Result<f64> {
    estimate.ensure_same_shape(reference, "sam")?;
    let (m, n, l) = estimate.dims();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..m {
        for j in 0..n {
            let (mut dot, mut ne, mut nr) = (0.0, 0.0, 0.0);
            for b in 0..l {
                let (e, r) = (estimate.get(i, j, b), reference.get(i, j, b));
                dot += e * r;
                ne += e * e;
                nr += r * r;
            }
            if ne == 0.0 || nr == 0.0 {
                continue;
            }
            total += (dot / (ne.sqrt() * nr.sqrt())).clamp(-1.0, 1.0).acos();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidValue("sam undefined: every pixel has a zero spectrum".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_constant_offset() {
        let r = Cube::filled(4, 4, 2, 0.5);
        let e = Cube::filled(4, 4, 2, 0.6);
        // mse = 0.01 -> 20 dB
        assert!((psnr(&e, &r).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_exact_is_capped() {
        let r = Cube::filled(3, 3, 1, 0.2);
        assert_eq!(psnr(&r, &r).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn sam_of_scaled_spectrum_is_zero() {
        let r = Cube::from_fn(2, 2, 3, |i, j, b| 0.1 + 0.1 * (i + j + b) as f64);
        let e = r.scaled(0.5);
        assert!(sam(&e, &r).unwrap() < 1e-7);
    }

    #[test]
    fn sam_orthogonal_spectra() {
        let r = Cube::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let e = Cube::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert!((sam(&e, &r).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn sam_skips_zero_pixels() {
        let r = Cube::new(1, 2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let e = Cube::new(1, 2, 2, vec![0.5, 0.3, 0.5, 0.0]).unwrap();
        // band-major: pixel 0 is (1,1) vs (0.5,0.5); pixel 1 is zero in the reference
        assert!(sam(&e, &r).unwrap() < 1e-7);
        assert!(sam(&Cube::zeros(1, 2, 2), &r).is_err());
    }

    #[test]
    fn ssim_rejects_small_images() {
        let r = Cube::filled(8, 8, 1, 0.5);
        assert!(ssim(&r, &r).is_err());
        assert_eq!(fitted_window(8, 9, 11), 7);
        assert_eq!(fitted_window(32, 32, 11), 11);
    }

    #[test]
    fn ssim_identical_is_one() {
        let r = Cube::from_fn(12, 12, 2, |i, j, b| ((i * 7 + j * 3 + b) % 5) as f64 / 5.0);
        assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
    }
}
