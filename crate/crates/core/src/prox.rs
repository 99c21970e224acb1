//! Proximal denoisers `prox_{w·R}(c) = argmin_z ½‖z − c‖² + w·R(z)`.

use crate::cube::SpectralCube;

/// Dual step of the projection iteration.
pub const TV_STEP: f64 = 0.25;
pub const DEFAULT_TV_ITERS: usize = 20;

/// A proximal map for some image prior. Implementations must be
/// deterministic and shape-preserving, and strength 0 must return the input.
pub trait Denoiser {
    fn denoise(&self, cube: &SpectralCube, weight: f64) -> SpectralCube;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, cube: &SpectralCube, _weight: f64) -> SpectralCube {
        cube.clone()
    }
}

pub fn identity_denoise(cube: &SpectralCube, weight: f64) -> SpectralCube {
    IdentityDenoiser.denoise(cube, weight)
}

/// Isotropic spatial total variation, applied per band.
#[derive(Debug, Clone, Copy)]
pub struct TvDenoiser {
    pub inner_iters: usize,
}

impl Default for TvDenoiser {
    fn default() -> Self {
        Self {
            inner_iters: DEFAULT_TV_ITERS,
        }
    }
}

impl Denoiser for TvDenoiser {
    fn denoise(&self, cube: &SpectralCube, weight: f64) -> SpectralCube {
        tv_denoise(cube, weight, self.inner_iters)
    }
}

/// Chambolle dual projection for `½‖z − c‖² + weight·TV(z)` on each band,
/// with Neumann boundaries and a fixed dual step of [`TV_STEP`].
pub fn tv_denoise(cube: &SpectralCube, weight: f64, inner_iters: usize) -> SpectralCube {
    assert!(weight >= 0.0, "tv weight must be nonnegative");
    if weight == 0.0 {
        return cube.clone();
    }
    let (h, w, _) = cube.dims();
    let mut out = cube.clone();
    for band in out.data_mut().chunks_exact_mut(h * w) {
        chambolle_band(band, h, w, weight, inner_iters.max(1));
    }
    out
}

fn chambolle_band(g: &mut [f64], h: usize, w: usize, weight: f64, iters: usize) {
    let n = h * w;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut div = vec![0.0; n];
    let mut term = vec![0.0; n];
    let inv = 1.0 / weight;

    for _ in 0..iters {
        divergence(&px, &py, h, w, &mut div);
        for k in 0..n {
            term[k] = div[k] - g[k] * inv;
        }
        for r in 0..h {
            for c in 0..w {
                let k = r * w + c;
                let gx = if c + 1 < w {
                    term[k + 1] - term[k]
                } else {
                    0.0
                };
                let gy = if r + 1 < h {
                    term[k + w] - term[k]
                } else {
                    0.0
                };
                let denom = 1.0 + TV_STEP * (gx * gx + gy * gy).sqrt();
                px[k] = (px[k] + TV_STEP * gx) / denom;
                py[k] = (py[k] + TV_STEP * gy) / denom;
            }
        }
    }
    divergence(&px, &py, h, w, &mut div);
    for k in 0..n {
        g[k] -= weight * div[k];
    }
}

/// Negative adjoint of the forward-difference gradient.
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            let dx = match c {
                _ if w == 1 => 0.0,
                0 => px[k],
                _ if c == w - 1 => -px[k - 1],
                _ => px[k] - px[k - 1],
            };
            let dy = match r {
                _ if h == 1 => 0.0,
                0 => py[k],
                _ if r == h - 1 => -py[k - w],
                _ => py[k] - py[k - w],
            };
            out[k] = dx + dy;
        }
    }
}

/// `Σ_bands Σ_pixels sqrt(∂x² + ∂y²)` with forward differences.
pub fn tv_isotropic(cube: &SpectralCube) -> f64 {
    let (h, w, _) = cube.dims();
    cube.bands_iter()
        .map(|band| {
            let mut total = 0.0;
            for r in 0..h {
                for c in 0..w {
                    let k = r * w + c;
                    let gx = if c + 1 < w {
                        band[k + 1] - band[k]
                    } else {
                        0.0
                    };
                    let gy = if r + 1 < h {
                        band[k + w] - band[k]
                    } else {
                        0.0
                    };
                    total += (gx * gx + gy * gy).sqrt();
                }
            }
            total
        })
        .sum()
}

/// `½‖z − c‖² + weight·TV(z)`.
pub fn tv_objective(z: &SpectralCube, c: &SpectralCube, weight: f64) -> f64 {
    let fit: f64 = z
        .data()
        .iter()
        .zip(c.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    0.5 * fit + weight * tv_isotropic(z)
}
