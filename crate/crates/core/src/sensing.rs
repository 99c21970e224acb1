//! Dual-camera CASSI forward model.
//!
//! Each band is modulated by the effective mask `M'(u,v,λ) = g(u,v,λ)·M⁰(u,v)`
//! (guidance times coded aperture), shifted by `d·λ` pixels along the
//! dispersion axis in the positive index direction, and summed onto the
//! sensor. Band 0 is the unshifted reference band, so the measurement is
//! `d·(Nλ − 1)` pixels longer than the scene along the dispersion axis.
//! Source pixels never leave the extended plane; every band lands fully.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cube::{GuidanceCube, SpectralCube};
use crate::error::{Error, Result};

/// Default per-side limit for [`densify`].
pub const DENSE_CAP: usize = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Coded aperture transmission in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl CodedMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(format!(
                "mask value {} at row {}, col {} outside [0, 1]",
                values[i],
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![1.0; height * width]).expect("valid unit mask")
    }

    /// Bernoulli binary mask from a seeded ChaCha20 stream.
    pub fn random_binary(height: usize, width: usize, density: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let values = (0..height * width)
            .map(|_| {
                if rng.random::<f64>() < density {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(height, width, values).expect("valid binary mask")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Sensor-plane image, dispersion-extended.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Measurement {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Shape(format!(
                "measurement {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite measurement value".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Measurement) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn to_cube(&self) -> SpectralCube {
        SpectralCube::new(self.height, self.width, 1, self.values.clone())
            .expect("measurement values are finite")
    }

    pub fn from_cube(cube: &SpectralCube) -> Result<Self> {
        if cube.bands() != 1 {
            return Err(Error::Shape(format!(
                "measurement file must have 1 band, got {}",
                cube.bands()
            )));
        }
        Self::new(cube.height(), cube.width(), cube.data().to_vec())
    }
}

/// Diagonal noise covariance (as standard deviations) plus denoiser strength.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub height: usize,
    pub width: usize,
    pub sigma: Vec<f64>,
    pub omega: f64,
}

impl NoiseModel {
    pub fn new(height: usize, width: usize, sigma: Vec<f64>, omega: f64) -> Result<Self> {
        if sigma.len() != height * width {
            return Err(Error::Shape(format!(
                "sigma map {height}x{width} needs {} values, got {}",
                height * width,
                sigma.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {s}")));
        }
        if omega.is_nan() || omega < 0.0 {
            return Err(Error::Config(format!("omega must be >= 0, got {omega}")));
        }
        Ok(Self {
            height,
            width,
            sigma,
            omega,
        })
    }

    pub fn uniform(height: usize, width: usize, sigma: f64, omega: f64) -> Result<Self> {
        Self::new(height, width, vec![sigma; height * width], omega)
    }

    pub fn mean_sigma(&self) -> f64 {
        self.sigma.iter().sum::<f64>() / self.sigma.len() as f64
    }
}

/// Matrix-free sensing operator `H` acting on chromaticity cubes.
#[derive(Debug, Clone)]
pub struct SensingOperator {
    height: usize,
    width: usize,
    bands: usize,
    step: usize,
    axis: Axis,
    mask: CodedMask,
    guidance: GuidanceCube,
    /// `M'` in band-major layout.
    effective: Vec<f64>,
}

impl SensingOperator {
    pub fn new(
        mask: CodedMask,
        guidance: GuidanceCube,
        step: usize,
        axis: Axis,
        bands: usize,
    ) -> Result<Self> {
        let (height, width) = (mask.height(), mask.width());
        if bands == 0 {
            return Err(Error::Shape("band count must be positive".into()));
        }
        if guidance.height() != height || guidance.width() != width {
            return Err(Error::Shape(format!(
                "guidance is {}x{} but mask is {height}x{width}",
                guidance.height(),
                guidance.width()
            )));
        }
        if let Some(gb) = guidance.bands() {
            if gb != bands {
                return Err(Error::Shape(format!(
                    "guidance has {gb} bands, scene has {bands}"
                )));
            }
        }
        let mut effective = Vec::with_capacity(height * width * bands);
        for b in 0..bands {
            for r in 0..height {
                for c in 0..width {
                    effective.push(guidance.get(b, r, c) * mask.values()[r * width + c]);
                }
            }
        }
        Ok(Self {
            height,
            width,
            bands,
            step,
            axis,
            mask,
            guidance,
            effective,
        })
    }

    pub fn scene_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn measurement_dims(&self) -> (usize, usize) {
        let ext = self.step * (self.bands - 1);
        match self.axis {
            Axis::Horizontal => (self.height, self.width + ext),
            Axis::Vertical => (self.height + ext, self.width),
        }
    }

    pub fn measurement_len(&self) -> usize {
        let (h, w) = self.measurement_dims();
        h * w
    }

    pub fn scene_len(&self) -> usize {
        self.height * self.width * self.bands
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn mask(&self) -> &CodedMask {
        &self.mask
    }

    pub fn guidance(&self) -> &GuidanceCube {
        &self.guidance
    }

    pub fn effective_mask(&self) -> &[f64] {
        &self.effective
    }

    /// Row and column offset of band `b` on the sensor.
    #[inline]
    fn offset(&self, band: usize) -> (usize, usize) {
        let s = self.step * band;
        match self.axis {
            Axis::Horizontal => (0, s),
            Axis::Vertical => (s, 0),
        }
    }

    /// Visits `(scene index, measurement index, M')` for every band and
    /// pixel in band-ascending order.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, f64)) {
        let (_, mw) = self.measurement_dims();
        let plane = self.height * self.width;
        for b in 0..self.bands {
            let (dr, dc) = self.offset(b);
            for r in 0..self.height {
                let src = b * plane + r * self.width;
                let dst = (r + dr) * mw + dc;
                for c in 0..self.width {
                    f(src + c, dst + c, self.effective[src + c]);
                }
            }
        }
    }

    fn check_scene(&self, cube: &SpectralCube) -> Result<()> {
        if cube.dims() != self.scene_dims() {
            return Err(Error::Shape(format!(
                "cube {:?} does not match operator scene dims {:?}",
                cube.dims(),
                self.scene_dims()
            )));
        }
        Ok(())
    }

    fn check_measurement(&self, y: &Measurement) -> Result<()> {
        if y.dims() != self.measurement_dims() {
            return Err(Error::Shape(format!(
                "measurement {:?} does not match operator measurement dims {:?}",
                y.dims(),
                self.measurement_dims()
            )));
        }
        Ok(())
    }

    /// `y = H c`.
    pub fn apply_forward(&self, cube: &SpectralCube) -> Result<Measurement> {
        self.check_scene(cube)?;
        let (mh, mw) = self.measurement_dims();
        let mut y = Measurement::zeros(mh, mw);
        let x = cube.data();
        let out = y.values_mut();
        self.for_each_tap(|src, dst, m| out[dst] += m * x[src]);
        Ok(y)
    }

    /// `c = Hᵀ y`.
    pub fn apply_adjoint(&self, y: &Measurement) -> Result<SpectralCube> {
        self.check_measurement(y)?;
        let mut out = vec![0.0; self.scene_len()];
        let v = y.values();
        self.for_each_tap(|src, dst, m| out[src] = m * v[dst]);
        SpectralCube::new(self.height, self.width, self.bands, out)
    }

    /// `diag(H Hᵀ)`: per measurement pixel, the sum of squared effective
    /// mask values of every band landing there.
    pub fn gram_diagonal(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.measurement_len()];
        self.for_each_tap(|_, dst, m| h[dst] += m * m);
        h
    }
}

/// Validates dimensions and builds the operator for a `height x width x bands` scene.
pub fn build_operator(
    mask: CodedMask,
    guidance: GuidanceCube,
    step: usize,
    axis: Axis,
    dims: (usize, usize, usize),
) -> Result<SensingOperator> {
    let (h, w, b) = dims;
    if mask.height() != h || mask.width() != w {
        return Err(Error::Shape(format!(
            "mask is {}x{} but scene is {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }
    SensingOperator::new(mask, guidance, step, axis, b)
}

/// Dense `M x (H·W·Nλ)` matrix of the operator. Refuses when either side
/// exceeds `cap`.
pub fn densify(op: &SensingOperator, cap: usize) -> Result<DMatrix<f64>> {
    let (rows, cols) = (op.measurement_len(), op.scene_len());
    if rows > cap || cols > cap {
        return Err(Error::TooLarge { rows, cols, cap });
    }
    let mut dense = DMatrix::zeros(rows, cols);
    op.for_each_tap(|src, dst, m| dense[(dst, src)] = m);
    Ok(dense)
}

/// Adds `n_i ~ N(0, σ_i²)` drawn from a ChaCha20 stream seeded by `seed`.
///
/// Standard normals come from `rand_distr::StandardNormal` (ziggurat); one
/// draw is consumed per pixel in row-major order, including pixels with
/// `σ_i = 0`.
pub fn add_noise(y: &Measurement, noise: &NoiseModel, seed: u64) -> Result<Measurement> {
    if (noise.height, noise.width) != y.dims() {
        return Err(Error::Shape(format!(
            "sigma map {}x{} vs measurement {:?}",
            noise.height,
            noise.width,
            y.dims()
        )));
    }
    if let Some(s) = noise.sigma.iter().find(|s| s.is_nan() || **s < 0.0) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {s}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = y.clone();
    for (v, s) in out.values_mut().iter_mut().zip(&noise.sigma) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += s * z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::IntensityMap;
    use rand::Rng;

    fn random_cube(h: usize, w: usize, b: usize, rng: &mut impl Rng) -> SpectralCube {
        SpectralCube::from_fn(h, w, b, |_, _, _| rng.random::<f64>())
    }

    fn random_operator(
        h: usize,
        w: usize,
        b: usize,
        d: usize,
        axis: Axis,
        seed: u64,
    ) -> SensingOperator {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mask = CodedMask::random_binary(h, w, 0.5, seed);
        let guide = IntensityMap::new(
            h,
            w,
            (0..h * w).map(|_| 0.2 + rng.random::<f64>()).collect(),
        )
        .unwrap();
        build_operator(mask, GuidanceCube::Pan(guide), d, axis, (h, w, b)).unwrap()
    }

    /// Column-by-column probing with standard basis cubes.
    fn probe_dense(op: &SensingOperator) -> DMatrix<f64> {
        let (h, w, b) = op.scene_dims();
        let mut dense = DMatrix::zeros(op.measurement_len(), op.scene_len());
        for j in 0..op.scene_len() {
            let mut e = SpectralCube::zeros(h, w, b);
            e.data_mut()[j] = 1.0;
            let col = op.apply_forward(&e).unwrap();
            for (i, v) in col.values().iter().enumerate() {
                dense[(i, j)] = *v;
            }
        }
        dense
    }

    #[test]
    fn measurement_extent() {
        let op = |h, w, b, d, axis| {
            build_operator(
                CodedMask::ones(h, w),
                GuidanceCube::uniform(h, w),
                d,
                axis,
                (h, w, b),
            )
            .unwrap()
        };
        assert_eq!(
            op(256, 256, 28, 2, Axis::Horizontal).measurement_dims(),
            (256, 310)
        );
        assert_eq!(
            op(350, 260, 26, 1, Axis::Vertical).measurement_dims(),
            (375, 260)
        );
        assert_eq!(op(7, 5, 4, 0, Axis::Vertical).measurement_dims(), (7, 5));
    }

    #[test]
    fn identity_sensing_single_band() {
        let op = build_operator(
            CodedMask::ones(3, 4),
            GuidanceCube::uniform(3, 4),
            2,
            Axis::Horizontal,
            (3, 4, 1),
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = random_cube(3, 4, 1, &mut rng);
        assert_eq!(op.apply_forward(&x).unwrap().values(), x.data());
        assert!(op.gram_diagonal().iter().all(|&h| h == 1.0));
    }

    #[test]
    fn two_band_row_sums_overlap() {
        let (a, b, c, d) = (0.1, 0.2, 0.3, 0.4);
        let x = SpectralCube::new(1, 2, 2, vec![a, b, c, d]).unwrap();
        let op = build_operator(
            CodedMask::ones(1, 2),
            GuidanceCube::uniform(1, 2),
            1,
            Axis::Horizontal,
            (1, 2, 2),
        )
        .unwrap();
        assert_eq!(op.apply_forward(&x).unwrap().values(), &[a, b + c, d]);
        let dense = densify(&op, DENSE_CAP).unwrap();
        let expect =
            DMatrix::from_row_slice(3, 4, &[1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0., 1.]);
        assert_eq!(dense, expect);
    }

    #[test]
    fn forward_and_adjoint_match_dense() {
        for (axis, seed) in [(Axis::Horizontal, 5), (Axis::Vertical, 6)] {
            let op = random_operator(8, 8, 4, 2, axis, seed);
            let dense = densify(&op, DENSE_CAP).unwrap();
            assert_eq!(dense, probe_dense(&op));

            let mut rng = ChaCha20Rng::seed_from_u64(seed + 10);
            let x = random_cube(8, 8, 4, &mut rng);
            let y = op.apply_forward(&x).unwrap();
            let dy = &dense * nalgebra::DVector::from_column_slice(x.data());
            for (p, q) in y.values().iter().zip(dy.iter()) {
                assert!((p - q).abs() < 1e-12);
            }

            let (mh, mw) = op.measurement_dims();
            let m = Measurement::new(
                mh,
                mw,
                (0..mh * mw).map(|_| rng.random::<f64>() - 0.5).collect(),
            )
            .unwrap();
            let back = op.apply_adjoint(&m).unwrap();
            let dback = dense.transpose() * nalgebra::DVector::from_column_slice(m.values());
            for (p, q) in back.data().iter().zip(dback.iter()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_matches_dense_and_is_diagonal() {
        let op = random_operator(8, 8, 4, 2, Axis::Horizontal, 21);
        let dense = densify(&op, DENSE_CAP).unwrap();
        let gram = &dense * dense.transpose();
        let h = op.gram_diagonal();
        for i in 0..gram.nrows() {
            assert!((gram[(i, i)] - h[i]).abs() < 1e-12);
            for j in 0..gram.ncols() {
                if i != j {
                    assert_eq!(gram[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn binary_gram_counts_bands() {
        let mask = CodedMask::random_binary(6, 6, 0.5, 3);
        let op = build_operator(
            mask.clone(),
            GuidanceCube::uniform(6, 6),
            1,
            Axis::Vertical,
            (6, 6, 3),
        )
        .unwrap();
        let h = op.gram_diagonal();
        let (_, mw) = op.measurement_dims();
        for (i, v) in h.iter().enumerate() {
            let (r, c) = (i / mw, i % mw);
            let count = (0..3)
                .filter(|&b| r >= b && r - b < 6 && mask.values()[(r - b) * 6 + c] == 1.0)
                .count();
            assert_eq!(*v, count as f64);
        }
    }

    #[test]
    fn zero_inputs() {
        let op = random_operator(4, 5, 3, 1, Axis::Horizontal, 1);
        let (mh, mw) = op.measurement_dims();
        assert!(op
            .apply_adjoint(&Measurement::zeros(mh, mw))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let zero = build_operator(
            CodedMask::new(4, 5, vec![0.0; 20]).unwrap(),
            GuidanceCube::uniform(4, 5),
            1,
            Axis::Horizontal,
            (4, 5, 3),
        )
        .unwrap();
        assert!(densify(&zero, DENSE_CAP).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_cap_refuses() {
        let op = random_operator(8, 8, 4, 1, Axis::Horizontal, 1);
        assert!(matches!(densify(&op, 100), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn shape_errors() {
        let op = random_operator(4, 4, 2, 1, Axis::Horizontal, 1);
        assert!(matches!(
            op.apply_forward(&SpectralCube::zeros(4, 4, 3)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            op.apply_adjoint(&Measurement::zeros(4, 4)),
            Err(Error::Shape(_))
        ));
        assert!(build_operator(
            CodedMask::ones(3, 4),
            GuidanceCube::uniform(3, 4),
            1,
            Axis::Vertical,
            (4, 4, 2)
        )
        .is_err());
        assert!(build_operator(
            CodedMask::ones(4, 4),
            GuidanceCube::uniform(3, 4),
            1,
            Axis::Vertical,
            (4, 4, 2)
        )
        .is_err());
    }

    #[test]
    fn rgb_guidance_band_count_checked() {
        let g = GuidanceCube::RgbExpanded(SpectralCube::filled(2, 2, 3, 0.5));
        assert!(build_operator(
            CodedMask::ones(2, 2),
            g.clone(),
            1,
            Axis::Horizontal,
            (2, 2, 4)
        )
        .is_err());
        let op = build_operator(CodedMask::ones(2, 2), g, 1, Axis::Horizontal, (2, 2, 3)).unwrap();
        assert!(op.effective_mask().iter().all(|&m| m == 0.5));
    }

    #[test]
    fn noise_zero_sigma_and_determinism() {
        let y = Measurement::new(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let zero = NoiseModel::uniform(2, 3, 0.0, 0.0).unwrap();
        assert_eq!(add_noise(&y, &zero, 1).unwrap(), y);
        let n = NoiseModel::uniform(2, 3, 0.3, 0.0).unwrap();
        assert_eq!(
            add_noise(&y, &n, 42).unwrap(),
            add_noise(&y, &n, 42).unwrap()
        );
        assert_ne!(
            add_noise(&y, &n, 42).unwrap(),
            add_noise(&y, &n, 43).unwrap()
        );
    }

    #[test]
    fn noise_sample_std() {
        let y = Measurement::zeros(64, 64);
        let n = NoiseModel::uniform(64, 64, 0.1, 0.0).unwrap();
        let out = add_noise(&y, &n, 7).unwrap();
        let k = out.values().len() as f64;
        let mean = out.values().iter().sum::<f64>() / k;
        let var = out.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let sd = var.sqrt();
        assert!((0.09..=0.11).contains(&sd), "sample std {sd}");
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(matches!(
            NoiseModel::uniform(1, 1, -0.1, 0.0),
            Err(Error::Config(_))
        ));
        let bad = NoiseModel {
            height: 1,
            width: 1,
            sigma: vec![-1.0],
            omega: 0.0,
        };
        assert!(matches!(
            add_noise(&Measurement::zeros(1, 1), &bad, 0),
            Err(Error::Config(_))
        ));
    }
}
