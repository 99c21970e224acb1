//! Chromaticity-intensity decomposition and spectral statistics.

use nalgebra::DMatrix;

use crate::cube::{GuidanceCube, IntensityMap, RgbImage, SpectralCube};
use crate::error::{Error, Result};

/// Default stabilizer added to the intensity before normalizing.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Splits a radiance cube into its band-mean intensity and chromaticity.
///
/// `I(u,v)` is the mean over bands and `C = X / (I + epsilon)`. With
/// `epsilon == 0` every pixel must have positive intensity.
pub fn decompose(cube: &SpectralCube, epsilon: f64) -> Result<(IntensityMap, SpectralCube)> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::Config(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    cube.ensure_nonnegative()?;
    let (h, w, bands) = cube.dims();
    let n = h * w;

    let mut sums = vec![0.0; n];
    for band in cube.bands_iter() {
        for (s, v) in sums.iter_mut().zip(band) {
            *s += v;
        }
    }
    let intensity: Vec<f64> = sums.iter().map(|s| s / bands as f64).collect();

    if epsilon == 0.0 {
        if let Some(i) = intensity.iter().position(|&v| v == 0.0) {
            return Err(Error::DivisionHazard {
                row: i / w,
                col: i % w,
            });
        }
    }

    let mut chroma = cube.clone();
    for band in chroma.data_mut().chunks_exact_mut(n) {
        for (x, i) in band.iter_mut().zip(&intensity) {
            *x /= i + epsilon;
        }
    }
    Ok((IntensityMap::new(h, w, intensity)?, chroma))
}

/// `X(u,v,λ) = C(u,v,λ) · I(u,v)`.
pub fn recompose(chroma: &SpectralCube, intensity: &IntensityMap) -> Result<SpectralCube> {
    if chroma.height() != intensity.height() || chroma.width() != intensity.width() {
        return Err(Error::Shape(format!(
            "chromaticity is {}x{} but intensity is {}x{}",
            chroma.height(),
            chroma.width(),
            intensity.height(),
            intensity.width()
        )));
    }
    let mut out = chroma.clone();
    let n = out.plane_len();
    for band in out.data_mut().chunks_exact_mut(n) {
        for (x, i) in band.iter_mut().zip(intensity.values()) {
            *x *= i;
        }
    }
    Ok(out)
}

/// Recomposition against either guidance mode; PAN reduces to [`recompose`].
pub fn recompose_with_guidance(
    chroma: &SpectralCube,
    guidance: &GuidanceCube,
) -> Result<SpectralCube> {
    match guidance {
        GuidanceCube::Pan(map) => recompose(chroma, map),
        GuidanceCube::RgbExpanded(g) => {
            if !chroma.same_dims(g) {
                return Err(Error::Shape(format!(
                    "chromaticity {:?} vs guidance {:?}",
                    chroma.dims(),
                    g.dims()
                )));
            }
            let data = chroma
                .data()
                .iter()
                .zip(g.data())
                .map(|(c, i)| c * i)
                .collect();
            SpectralCube::new(chroma.height(), chroma.width(), chroma.bands(), data)
        }
    }
}

/// Pearson correlation between every pair of bands over all pixels.
pub fn spectral_correlation(cube: &SpectralCube) -> Result<DMatrix<f64>> {
    let bands = cube.bands();
    if bands < 2 {
        return Err(Error::Config(format!(
            "correlation needs at least 2 bands, got {bands}"
        )));
    }
    let n = cube.plane_len() as f64;

    let centered: Vec<Vec<f64>> = cube
        .bands_iter()
        .map(|band| {
            let mean = band.iter().sum::<f64>() / n;
            band.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let flat: Vec<usize> = cube
        .bands_iter()
        .enumerate()
        .filter(|(b, band)| norms[*b] == 0.0 || band.iter().all(|&v| v == band[0]))
        .map(|(b, _)| b)
        .collect();
    if !flat.is_empty() {
        return Err(Error::ZeroVariance(flat));
    }

    let mut corr = DMatrix::identity(bands, bands);
    for i in 0..bands {
        for j in i + 1..bands {
            let cov: f64 = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum();
            let r = (cov / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            corr[(i, j)] = r;
            corr[(j, i)] = r;
        }
    }
    Ok(corr)
}

/// Interpolates a 3-channel image onto `band_centers`.
///
/// Each output band is the piecewise-linear interpolation between the two
/// nearest anchors; centers outside the anchor range take the end channel.
pub fn expand_rgb_guidance(
    rgb: &RgbImage,
    band_centers: &[f64],
    anchor_centers: [f64; 3],
) -> Result<GuidanceCube> {
    if !(anchor_centers[0] < anchor_centers[1] && anchor_centers[1] < anchor_centers[2]) {
        return Err(Error::Config(format!(
            "anchor centers must be strictly increasing, got {anchor_centers:?}"
        )));
    }
    if band_centers.is_empty() || band_centers.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "band centers must be finite and non-empty".into(),
        ));
    }

    // (lower anchor, upper anchor, weight on upper) per band
    let weights: Vec<(usize, usize, f64)> = band_centers
        .iter()
        .map(|&x| {
            if x <= anchor_centers[0] {
                (0, 0, 0.0)
            } else if x >= anchor_centers[2] {
                (2, 2, 0.0)
            } else {
                let k = if x < anchor_centers[1] { 0 } else { 1 };
                let t = (x - anchor_centers[k]) / (anchor_centers[k + 1] - anchor_centers[k]);
                (k, k + 1, t)
            }
        })
        .collect();

    let (h, w) = (rgb.height(), rgb.width());
    let mut data = Vec::with_capacity(h * w * band_centers.len());
    for &(lo, hi, t) in &weights {
        let (a, b) = (rgb.plane(lo), rgb.plane(hi));
        if t == 0.0 {
            data.extend_from_slice(a);
        } else {
            data.extend(a.iter().zip(b).map(|(p, q)| (1.0 - t) * p + t * q));
        }
    }
    Ok(GuidanceCube::RgbExpanded(SpectralCube::new(
        h,
        w,
        band_centers.len(),
        data,
    )?))
}
