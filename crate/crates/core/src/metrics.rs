//! PSNR and SSIM, computed per band and averaged.

use std::fmt::Write as _;

use crate::cube::SpectralCube;
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_DATA_RANGE: f64 = 1.0;

fn check_range(data_range: f64) -> Result<()> {
    if !data_range.is_finite() || data_range <= 0.0 {
        return Err(Error::Config(format!(
            "data range must be > 0, got {data_range}"
        )));
    }
    Ok(())
}

pub fn mse(reference: &[f64], reconstruction: &[f64]) -> Result<f64> {
    if reference.len() != reconstruction.len() || reference.is_empty() {
        return Err(Error::Shape(format!(
            "cannot compare {} values against {}",
            reference.len(),
            reconstruction.len()
        )));
    }
    let sum: f64 = reference
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10·log10(range² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(reference: &[f64], reconstruction: &[f64], data_range: f64) -> Result<f64> {
    check_range(data_range)?;
    let err = mse(reference, reconstruction)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / err).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable Gaussian filter: output is `(h − 10) x (w − 10)`.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..SSIM_WINDOW).map(|t| k[t] * img[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|t| k[t] * tmp[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully-interior 11x11 Gaussian windows (σ = 1.5).
pub fn ssim(
    reference: &[f64],
    reconstruction: &[f64],
    height: usize,
    width: usize,
    data_range: f64,
) -> Result<f64> {
    check_range(data_range)?;
    if reference.len() != height * width || reconstruction.len() != height * width {
        return Err(Error::Shape(format!(
            "ssim inputs must both be {height}x{width}"
        )));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {height}x{width}"
        )));
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);

    let xx: Vec<f64> = reference.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = reconstruction.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = reference
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| a * b)
        .collect();
    let mx = filter_valid(reference, height, width, &k);
    let my = filter_valid(reconstruction, height, width, &k);
    let mxx = filter_valid(&xx, height, width, &k);
    let myy = filter_valid(&yy, height, width, &k);
    let mxy = filter_valid(&xy, height, width, &k);

    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub data_range: f64,
}

impl EvalReport {
    /// `band,psnr_db,ssim` rows followed by a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("band,psnr_db,ssim\n");
        for (b, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(s, "{b},{},{}", fmt_db(*p), q);
        }
        let _ = writeln!(s, "mean,{},{}", fmt_db(self.mean_psnr), self.mean_ssim);
        s
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn evaluate_cube(
    reference: &SpectralCube,
    reconstruction: &SpectralCube,
) -> Result<EvalReport> {
    evaluate_cube_with_range(reference, reconstruction, DEFAULT_DATA_RANGE)
}

pub fn evaluate_cube_with_range(
    reference: &SpectralCube,
    reconstruction: &SpectralCube,
    data_range: f64,
) -> Result<EvalReport> {
    if !reference.same_dims(reconstruction) {
        return Err(Error::Shape(format!(
            "reference {:?} vs reconstruction {:?}",
            reference.dims(),
            reconstruction.dims()
        )));
    }
    let (h, w, bands) = reference.dims();
    let mut psnrs = Vec::with_capacity(bands);
    let mut ssims = Vec::with_capacity(bands);
    for b in 0..bands {
        psnrs.push(psnr(reference.band(b), reconstruction.band(b), data_range)?);
        ssims.push(ssim(
            reference.band(b),
            reconstruction.band(b),
            h,
            w,
            data_range,
        )?);
    }
    let n = bands as f64;
    Ok(EvalReport {
        mean_psnr: psnrs.iter().sum::<f64>() / n,
        mean_ssim: ssims.iter().sum::<f64>() / n,
        psnr: psnrs,
        ssim: ssims,
        data_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// Same pseudo-random pattern is generated in the reference script.
    fn hash_image(h: usize, w: usize, phase: f64) -> Vec<f64> {
        (0..h * w)
            .map(|k| {
                let (i, j) = ((k / w) as f64, (k % w) as f64);
                let s = ((i * 12.9898 + j * 78.233 + phase).sin() * 43758.5453).abs();
                s - s.floor()
            })
            .collect()
    }

    /// Direct per-window SSIM with two-pass moments.
    fn ssim_brute(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> f64 {
        let r = 5i64;
        let mut g = vec![0.0; 121];
        for y in -r..=r {
            for x in -r..=r {
                g[((y + r) * 11 + x + r) as usize] = (-((x * x + y * y) as f64) / 4.5).exp();
            }
        }
        let gs: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= gs);
        let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for r0 in 0..=h - 11 {
            for c0 in 0..=w - 11 {
                let at = |img: &[f64], t: usize| img[(r0 + t / 11) * w + c0 + t % 11];
                let ux: f64 = (0..121).map(|t| g[t] * at(a, t)).sum();
                let uy: f64 = (0..121).map(|t| g[t] * at(b, t)).sum();
                let vx: f64 = (0..121).map(|t| g[t] * (at(a, t) - ux).powi(2)).sum();
                let vy: f64 = (0..121).map(|t| g[t] * (at(b, t) - uy).powi(2)).sum();
                let cxy: f64 = (0..121)
                    .map(|t| g[t] * (at(a, t) - ux) * (at(b, t) - uy))
                    .sum();
                total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random(64, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_closed_form() {
        let p = psnr(&[0.0; 16], &[0.1; 16], 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_direct_loop() {
        let (a, b) = (random(300, 2), random(300, 3));
        let mut acc = 0.0;
        for k in 0..300 {
            acc += (a[k] - b[k]) * (a[k] - b[k]);
        }
        let expect = 10.0 * (0.25 / (acc / 300.0)).log10();
        assert!((psnr(&a, &b, 0.5).unwrap() - expect).abs() < 1e-10);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_errors() {
        assert!(matches!(
            psnr(&[0.0; 3], &[0.0; 4], 1.0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            psnr(&[0.0; 3], &[0.0; 3], 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random(32 * 32, 4);
        assert!((ssim(&a, &a, 32, 32, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_closed_form() {
        let (a, b) = (0.3, 0.7);
        let c1 = 0.01f64.powi(2);
        let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let got = ssim(&vec![a; 400], &vec![b; 400], 20, 20, 1.0).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_brute_force_and_reference() {
        let a = hash_image(32, 32, 0.0);
        let b: Vec<f64> = a
            .iter()
            .zip(hash_image(32, 32, 1.7))
            .map(|(p, q)| 0.6 * p + 0.4 * q)
            .collect();
        let got = ssim(&a, &b, 32, 32, 1.0).unwrap();
        assert!((got - ssim_brute(&a, &b, 32, 32, 1.0)).abs() < 1e-10);
        // skimage.metrics.structural_similarity(gaussian_weights=True, sigma=1.5,
        // use_sample_covariance=False, data_range=1.0) on the same pair
        assert!((got - SKIMAGE_REFERENCE).abs() < 1e-6, "{got}");
    }

    const SKIMAGE_REFERENCE: f64 = 0.778_403_522_917_362_9;

    #[test]
    fn ssim_symmetric_and_too_small() {
        let (a, b) = (random(144, 5), random(144, 6));
        let ab = ssim(&a, &b, 12, 12, 1.0).unwrap();
        let ba = ssim(&b, &a, 12, 12, 1.0).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        assert!((-1.0..=1.0).contains(&ab));
        assert!(matches!(
            ssim(&a[..100], &b[..100], 10, 10, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn evaluate_band_independence() {
        let r = SpectralCube::new(12, 12, 3, random(432, 7)).unwrap();
        let same = evaluate_cube(&r, &r).unwrap();
        assert_eq!(same.mean_psnr, f64::INFINITY);
        assert!((same.mean_ssim - 1.0).abs() < 1e-12);

        let mut bad = r.clone();
        bad.band_mut(1).iter_mut().for_each(|v| *v *= 0.5);
        let rep = evaluate_cube(&r, &bad).unwrap();
        assert_eq!(rep.psnr[0], f64::INFINITY);
        assert_eq!(rep.psnr[2], f64::INFINITY);
        assert!(rep.psnr[1].is_finite());
        assert_eq!(rep.ssim[0], same.ssim[0]);
        assert_eq!(rep.ssim[2], same.ssim[2]);
        assert!(rep.ssim[1] < 1.0);
    }

    #[test]
    fn evaluate_means_are_band_averages() {
        let r = SpectralCube::new(16, 16, 4, random(1024, 8)).unwrap();
        let x = SpectralCube::new(16, 16, 4, random(1024, 9)).unwrap();
        let rep = evaluate_cube(&r, &x).unwrap();
        let mut ps = 0.0;
        let mut ss = 0.0;
        for b in 0..4 {
            ps += psnr(r.band(b), x.band(b), 1.0).unwrap();
            ss += ssim_brute(r.band(b), x.band(b), 16, 16, 1.0);
        }
        assert!((rep.mean_psnr - ps / 4.0).abs() < 1e-12);
        assert!((rep.mean_ssim - ss / 4.0).abs() < 1e-10);
        let csv = rep.to_csv();
        assert!(csv.starts_with("band,psnr_db,ssim\n0,"));
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn psnr_drops_with_noise() {
        use rand_distr::{Distribution, StandardNormal};
        let img = random(32 * 32, 10);
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.05, 0.1] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let noisy: Vec<f64> = img
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + sigma * z
                })
                .collect();
            let p = psnr(&img, &noisy, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn mismatched_cubes() {
        let a = SpectralCube::zeros(12, 12, 2);
        let b = SpectralCube::zeros(12, 12, 3);
        assert!(matches!(evaluate_cube(&a, &b), Err(Error::Shape(_))));
    }
}
