//! Spectral volumes and per-pixel planes.
//!
//! All volumes use band-major layout: band is the slowest index, then row,
//! then column. `data[(b * height + r) * width + c]` is band `b` at pixel
//! `(r, c)`. The same ordering is the on-disk payload order of cube files.

use crate::error::{Error, Result};

/// An `height x width x bands` volume in double precision.
///
/// Radiance and chromaticity cubes are nonnegative; solver iterates and
/// adjoint images may carry signed values, so the constructor only enforces
/// finiteness. Use [`SpectralCube::ensure_nonnegative`] at boundaries where
/// physical data is required.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

impl SpectralCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dims must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        Self::filled(height, width, bands, 0.0)
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f64) -> Self {
        assert!(
            height > 0 && width > 0 && bands > 0,
            "cube dims must be positive"
        );
        Self {
            height,
            width,
            bands,
            data: vec![value; height * width * bands],
        }
    }

    /// Builds a cube from a closure evaluated at `(band, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * bands);
        for b in 0..bands {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(b, r, c));
                }
            }
        }
        Self::new(height, width, bands, data).expect("from_fn produced an invalid cube")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        (band * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(band, row, col)]
    }

    #[inline]
    pub fn set(&mut self, band: usize, row: usize, col: usize, value: f64) {
        let i = self.index(band, row, col);
        self.data[i] = value;
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[band * n..(band + 1) * n]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[band * n..(band + 1) * n]
    }

    pub fn bands_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.plane_len())
    }

    pub fn same_dims(&self, other: &SpectralCube) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_nonnegative(&self) -> Result<()> {
        match self.data.iter().position(|&v| v < 0.0) {
            Some(i) => {
                let n = self.plane_len();
                Err(Error::InvalidData(format!(
                    "negative value {} at band {}, row {}, col {}",
                    self.data[i],
                    i / n,
                    (i % n) / self.width,
                    i % self.width
                )))
            }
            None => Ok(()),
        }
    }

    pub fn scaled(&self, factor: f64) -> SpectralCube {
        SpectralCube {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn dot(&self, other: &SpectralCube) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Per-pixel intensity plane, the band mean of a radiance cube.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl IntensityMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "intensity dims must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "intensity {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData(format!(
                "intensity at row {}, col {} is {} (must be finite and >= 0)",
                i / width,
                i % width,
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("invalid constant intensity")
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

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Single-band cube view, as written to disk.
    pub fn to_cube(&self) -> SpectralCube {
        SpectralCube::new(self.height, self.width, 1, self.values.clone())
            .expect("intensity map is always a valid cube")
    }

    pub fn from_cube(cube: &SpectralCube) -> Result<Self> {
        if cube.bands() != 1 {
            return Err(Error::Shape(format!(
                "intensity file must have 1 band, got {}",
                cube.bands()
            )));
        }
        Self::new(cube.height(), cube.width(), cube.data().to_vec())
    }
}

/// Per-band guidance intensities multiplied into the coded mask.
#[derive(Debug, Clone, PartialEq)]
pub enum GuidanceCube {
    /// One grayscale plane shared by every band.
    Pan(IntensityMap),
    /// A full per-band cube interpolated from an RGB image.
    RgbExpanded(SpectralCube),
}

impl GuidanceCube {
    /// Guidance identically 1: the plain coded-mask system.
    pub fn uniform(height: usize, width: usize) -> Self {
        GuidanceCube::Pan(IntensityMap::filled(height, width, 1.0))
    }

    pub fn height(&self) -> usize {
        match self {
            GuidanceCube::Pan(m) => m.height(),
            GuidanceCube::RgbExpanded(c) => c.height(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            GuidanceCube::Pan(m) => m.width(),
            GuidanceCube::RgbExpanded(c) => c.width(),
        }
    }

    /// Band count for RGB mode; `None` for PAN, which fits any band count.
    pub fn bands(&self) -> Option<usize> {
        match self {
            GuidanceCube::Pan(_) => None,
            GuidanceCube::RgbExpanded(c) => Some(c.bands()),
        }
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        match self {
            GuidanceCube::Pan(m) => m.get(row, col),
            GuidanceCube::RgbExpanded(c) => c.get(band, row, col),
        }
    }
}

/// Three-plane color image, planes ordered as the anchor wavelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    planes: [Vec<f64>; 3],
}

impl RgbImage {
    pub fn new(height: usize, width: usize, planes: [Vec<f64>; 3]) -> Result<Self> {
        for (k, p) in planes.iter().enumerate() {
            if p.len() != height * width {
                return Err(Error::Shape(format!(
                    "rgb plane {k} has {} values, expected {}",
                    p.len(),
                    height * width
                )));
            }
            if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidData(format!(
                    "rgb plane {k} has negative or non-finite values"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            planes,
        })
    }

    pub fn from_cube(cube: &SpectralCube) -> Result<Self> {
        if cube.bands() != 3 {
            return Err(Error::Shape(format!(
                "rgb image needs 3 bands, got {}",
                cube.bands()
            )));
        }
        Self::new(
            cube.height(),
            cube.width(),
            [
                cube.band(0).to_vec(),
                cube.band(1).to_vec(),
                cube.band(2).to_vec(),
            ],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        &self.planes[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_major_indexing() {
        let cube = SpectralCube::from_fn(2, 3, 2, |b, r, c| (b * 100 + r * 10 + c) as f64);
        assert_eq!(cube.data()[0..3], [0.0, 1.0, 2.0]);
        assert_eq!(cube.band(1)[4], 111.0);
        assert_eq!(cube.get(1, 1, 2), 112.0);
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(matches!(
            SpectralCube::new(2, 2, 2, vec![0.0; 7]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            SpectralCube::new(1, 1, 2, vec![0.0, f64::NAN]),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn nonnegative_check_names_location() {
        let mut cube = SpectralCube::zeros(2, 2, 2);
        cube.set(1, 0, 1, -0.5);
        let err = cube.ensure_nonnegative().unwrap_err().to_string();
        assert!(err.contains("band 1, row 0, col 1"), "{err}");
    }

    #[test]
    fn intensity_rejects_negative() {
        assert!(IntensityMap::new(1, 2, vec![0.1, -0.1]).is_err());
    }

    #[test]
    fn pan_guidance_is_band_independent() {
        let g = GuidanceCube::Pan(IntensityMap::new(1, 2, vec![0.3, 0.7]).unwrap());
        assert_eq!(g.get(0, 0, 1), g.get(5, 0, 1));
        assert_eq!(g.bands(), None);
    }
}
