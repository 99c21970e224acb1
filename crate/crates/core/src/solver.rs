//! Half-quadratic splitting for chromaticity recovery under diagonal noise.
//!
//! Each stage estimates a noise map, takes the closed-form data step
//! `c = z + Hᵀ(HHᵀ + μΣ)⁻¹(y − Hz)`, which is cheap because `HHᵀ` is
//! diagonal for this operator, then applies a proximal denoiser to `c`.

use nalgebra::{DMatrix, DVector};

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::prox::{Denoiser, IdentityDenoiser, TvDenoiser, DEFAULT_TV_ITERS};
use crate::sensing::{Measurement, NoiseModel, SensingOperator};

pub const DEFAULT_GRAM_FLOOR: f64 = 1e-9;
const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenoiserKind {
    Identity,
    Tv { inner_iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseEstimatorKind {
    /// Uniform `fixed_sigma`; denoiser strength `τ/μ`.
    Fixed,
    /// Local residual energy, see [`estimate_noise_residual`].
    Residual { window: usize, floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub stages: usize,
    pub mu: f64,
    pub tau: f64,
    pub denoiser: DenoiserKind,
    pub noise_estimator: NoiseEstimatorKind,
    pub fixed_sigma: f64,
    pub gram_floor: f64,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            stages: 30,
            mu: 1.0,
            tau: 1.0,
            denoiser: DenoiserKind::Tv {
                inner_iters: DEFAULT_TV_ITERS,
            },
            noise_estimator: NoiseEstimatorKind::Fixed,
            fixed_sigma: 0.0,
            gram_floor: DEFAULT_GRAM_FLOOR,
            record_trace: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages < 1 {
            return Err(Error::Config("stage count must be >= 1".into()));
        }
        if !self.mu.is_finite() || self.mu <= 0.0 {
            return Err(Error::Config(format!("mu must be > 0, got {}", self.mu)));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(Error::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.gram_floor.is_nan() || self.gram_floor <= 0.0 {
            return Err(Error::Config(format!(
                "gram floor must be > 0, got {}",
                self.gram_floor
            )));
        }
        if self.fixed_sigma.is_nan() || self.fixed_sigma < 0.0 {
            return Err(Error::Config(format!(
                "fixed sigma must be >= 0, got {}",
                self.fixed_sigma
            )));
        }
        if let DenoiserKind::Tv { inner_iters } = self.denoiser {
            if inner_iters < 1 {
                return Err(Error::Config("tv inner iterations must be >= 1".into()));
            }
        }
        if let NoiseEstimatorKind::Residual { window, floor } = self.noise_estimator {
            if window.is_multiple_of(2) {
                return Err(Error::Config(format!("window must be odd, got {window}")));
            }
            if floor.is_nan() || floor <= 0.0 {
                return Err(Error::Config(format!(
                    "noise floor must be > 0, got {floor}"
                )));
            }
        }
        Ok(())
    }

    fn build_denoiser(&self) -> Box<dyn Denoiser> {
        match self.denoiser {
            DenoiserKind::Identity => Box::new(IdentityDenoiser),
            DenoiserKind::Tv { inner_iters } => Box::new(TvDenoiser { inner_iters }),
        }
    }
}

/// Per-stage diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    /// `‖y − H z⁽ᵏ⁺¹⁾‖` after the denoiser.
    pub residual_norm: Vec<f64>,
    /// `‖y − H c⁽ᵏ⁺¹⁾‖` right after the data step.
    pub consistency_norm: Vec<f64>,
    pub mean_sigma: Vec<f64>,
    pub omega: Vec<f64>,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.residual_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual_norm.is_empty()
    }
}

fn residual(y: &Measurement, op: &SensingOperator, z: &SpectralCube) -> Result<Measurement> {
    let hz = op.apply_forward(z)?;
    let values = y
        .values()
        .iter()
        .zip(hz.values())
        .map(|(a, b)| a - b)
        .collect();
    Measurement::new(y.height(), y.width(), values)
}

/// Data step `c = z + Hᵀ r`, `r_i = (y_i − [Hz]_i) / max(h_i + μσ_i², δ)`.
pub fn gradient_projection(
    z: &SpectralCube,
    y: &Measurement,
    op: &SensingOperator,
    sigma: &[f64],
    mu: f64,
    gram_floor: f64,
) -> Result<SpectralCube> {
    let gram = op.gram_diagonal();
    gradient_projection_with_gram(z, y, op, &gram, sigma, mu, gram_floor)
}

fn gradient_projection_with_gram(
    z: &SpectralCube,
    y: &Measurement,
    op: &SensingOperator,
    gram: &[f64],
    sigma: &[f64],
    mu: f64,
    gram_floor: f64,
) -> Result<SpectralCube> {
    if sigma.len() != gram.len() {
        return Err(Error::Shape(format!(
            "sigma map has {} entries, measurement has {}",
            sigma.len(),
            gram.len()
        )));
    }
    let mut r = residual(y, op, z)?;
    for ((v, h), s) in r.values_mut().iter_mut().zip(gram).zip(sigma) {
        *v /= (h + mu * s * s).max(gram_floor);
    }
    let update = op.apply_adjoint(&r)?;
    let data = z
        .data()
        .iter()
        .zip(update.data())
        .map(|(a, b)| a + b)
        .collect();
    SpectralCube::new(z.height(), z.width(), z.bands(), data)
}

/// Result of the dense reference solve.
#[derive(Debug, Clone)]
pub struct DirectSolution {
    pub chroma: SpectralCube,
    /// Max-abs relative gap between `(HᵀΣ⁻¹H + μI)⁻¹` computed directly and
    /// via the Woodbury expansion `μ⁻¹I − μ⁻²Hᵀ(Σ + μ⁻¹HHᵀ)⁻¹H`.
    pub woodbury_rel_err: f64,
}

/// Variances below this are floored in the dense reference solve.
pub const DIRECT_VARIANCE_FLOOR: f64 = 1e-9;

/// `(HᵀΣ⁻¹H + μI)⁻¹` by Cholesky on the full `N x N` system.
pub fn direct_inverse(dense_h: &DMatrix<f64>, sigma: &[f64], mu: f64) -> Result<DMatrix<f64>> {
    let inv_var = inverse_variances(dense_h, sigma)?;
    let weighted = DMatrix::from_fn(dense_h.nrows(), dense_h.ncols(), |i, j| {
        dense_h[(i, j)] * inv_var[i]
    });
    let mut normal = dense_h.transpose() * weighted;
    for k in 0..normal.nrows() {
        normal[(k, k)] += mu;
    }
    normal
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidData("normal matrix is not positive definite".into()))
}

/// `μ⁻¹I − μ⁻²Hᵀ(Σ + μ⁻¹HHᵀ)⁻¹H`, with the inner `M x M` inverse taken densely.
pub fn woodbury_inverse(dense_h: &DMatrix<f64>, sigma: &[f64], mu: f64) -> Result<DMatrix<f64>> {
    let inv_var = inverse_variances(dense_h, sigma)?;
    let mut inner = dense_h * dense_h.transpose() / mu;
    for (k, iv) in inv_var.iter().enumerate() {
        inner[(k, k)] += 1.0 / iv;
    }
    let inner_inv = inner
        .try_inverse()
        .ok_or_else(|| Error::InvalidData("Σ + μ⁻¹HHᵀ is singular".into()))?;
    let n = dense_h.ncols();
    let correction = dense_h.transpose() * inner_inv * dense_h / (mu * mu);
    Ok(DMatrix::identity(n, n) / mu - correction)
}

fn inverse_variances(dense_h: &DMatrix<f64>, sigma: &[f64]) -> Result<Vec<f64>> {
    if sigma.len() != dense_h.nrows() {
        return Err(Error::Shape(format!(
            "sigma has {} entries, dense operator has {} rows",
            sigma.len(),
            dense_h.nrows()
        )));
    }
    Ok(sigma
        .iter()
        .map(|s| 1.0 / (s * s).max(DIRECT_VARIANCE_FLOOR))
        .collect())
}

fn max_rel_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
        / scale
}

/// Dense reference for the data step:
/// `c = (HᵀΣ⁻¹H + μI)⁻¹ (HᵀΣ⁻¹y + μz)`.
///
/// Requires a positive noise level; variances are floored at
/// [`DIRECT_VARIANCE_FLOOR`]. Fails if the Woodbury form disagrees with the
/// direct inverse by more than `1e-8` relative.
pub fn closed_form_direct(
    z: &SpectralCube,
    y: &Measurement,
    dense_h: &DMatrix<f64>,
    sigma: &[f64],
    mu: f64,
) -> Result<DirectSolution> {
    if dense_h.ncols() != z.data().len() || dense_h.nrows() != y.values().len() {
        return Err(Error::Shape(format!(
            "dense operator {}x{} vs cube {} / measurement {}",
            dense_h.nrows(),
            dense_h.ncols(),
            z.data().len(),
            y.values().len()
        )));
    }
    let direct = direct_inverse(dense_h, sigma, mu)?;
    let woodbury = woodbury_inverse(dense_h, sigma, mu)?;
    let gap = max_rel_gap(&direct, &woodbury);
    if gap > 1e-8 {
        return Err(Error::InvalidData(format!(
            "Woodbury expansion disagrees with direct inverse: {gap:e}"
        )));
    }

    let inv_var = inverse_variances(dense_h, sigma)?;
    let wy = DVector::from_iterator(
        y.values().len(),
        y.values().iter().zip(&inv_var).map(|(v, w)| v * w),
    );
    let rhs = dense_h.transpose() * wy + DVector::from_column_slice(z.data()) * mu;
    let c = direct * rhs;
    Ok(DirectSolution {
        chroma: SpectralCube::new(z.height(), z.width(), z.bands(), c.as_slice().to_vec())?,
        woodbury_rel_err: gap,
    })
}

/// Analytic noise estimator: local mean of the squared residual `y − Hz`
/// over a `window x window` box (clipped at the borders), floored.
/// `ω = sqrt(mean σ²)`.
pub fn estimate_noise_residual(
    z: &SpectralCube,
    y: &Measurement,
    op: &SensingOperator,
    window: usize,
    floor: f64,
) -> Result<NoiseModel> {
    if window.is_multiple_of(2) {
        return Err(Error::Config(format!("window must be odd, got {window}")));
    }
    if floor.is_nan() || floor <= 0.0 {
        return Err(Error::Config(format!("floor must be > 0, got {floor}")));
    }
    let r = residual(y, op, z)?;
    let (h, w) = r.dims();
    let sq: Vec<f64> = r.values().iter().map(|v| v * v).collect();
    let variance = box_mean(&sq, h, w, window / 2);

    let variance: Vec<f64> = variance.into_iter().map(|v| v.max(floor)).collect();
    let omega = (variance.iter().sum::<f64>() / variance.len() as f64).sqrt();
    NoiseModel::new(h, w, variance.into_iter().map(f64::sqrt).collect(), omega)
}

/// Separable box mean with windows clipped to the image.
fn box_mean(values: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let mut rows = vec![0.0; h * w];
    for r in 0..h {
        let line = &values[r * w..(r + 1) * w];
        for c in 0..w {
            let (lo, hi) = (c.saturating_sub(radius), (c + radius).min(w - 1));
            rows[r * w + c] = line[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
    let mut out = vec![0.0; h * w];
    for c in 0..w {
        for r in 0..h {
            let (lo, hi) = (r.saturating_sub(radius), (r + radius).min(h - 1));
            let s: f64 = (lo..=hi).map(|k| rows[k * w + c]).sum();
            out[r * w + c] = s / (hi - lo + 1) as f64;
        }
    }
    out
}

/// Runs `config.stages` HQS stages and returns the last denoised iterate.
///
/// Without `initial`, starts from `Hᵀy / max(h)`. Aborts if the residual
/// grows past `1e3` times its starting value.
pub fn run_hqs(
    y: &Measurement,
    op: &SensingOperator,
    config: &SolverConfig,
    initial: Option<&SpectralCube>,
) -> Result<(SpectralCube, SolveTrace)> {
    config.validate()?;
    if y.dims() != op.measurement_dims() {
        return Err(Error::Shape(format!(
            "measurement {:?} vs operator {:?}",
            y.dims(),
            op.measurement_dims()
        )));
    }
    let gram = op.gram_diagonal();
    let mut z = match initial {
        Some(z0) => z0.clone(),
        None => {
            let peak = gram.iter().fold(0.0f64, |m, &h| m.max(h));
            let back = op.apply_adjoint(y)?;
            if peak > 0.0 {
                back.scaled(1.0 / peak)
            } else {
                back
            }
        }
    };
    let initial_residual = residual(y, op, &z)?.norm();
    let guard = DIVERGENCE_FACTOR
        * if initial_residual > 0.0 {
            initial_residual
        } else {
            y.norm()
        };

    let denoiser = config.build_denoiser();
    let (mh, mw) = op.measurement_dims();
    let mut trace = SolveTrace::default();

    for stage in 0..config.stages {
        let noise = match config.noise_estimator {
            NoiseEstimatorKind::Fixed => {
                NoiseModel::uniform(mh, mw, config.fixed_sigma, 1.0 / config.mu)?
            }
            NoiseEstimatorKind::Residual { window, floor } => {
                estimate_noise_residual(&z, y, op, window, floor)?
            }
        };
        let c = gradient_projection_with_gram(
            &z,
            y,
            op,
            &gram,
            &noise.sigma,
            config.mu,
            config.gram_floor,
        )?;
        z = denoiser.denoise(&c, noise.omega * config.tau);

        let res = residual(y, op, &z)?.norm();
        if !res.is_finite() || (guard > 0.0 && res > guard) {
            return Err(Error::Divergence {
                stage: stage + 1,
                residual: res,
                initial: initial_residual,
            });
        }
        if config.record_trace {
            trace.residual_norm.push(res);
            trace.consistency_norm.push(residual(y, op, &c)?.norm());
            trace.mean_sigma.push(noise.mean_sigma());
            trace.omega.push(noise.omega);
        }
    }
    Ok((z, trace))
}
