//! Synthetic scenes with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::cube::SpectralCube;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Axis-aligned rectangles, each with its own flat spectrum, on a flat background.
    Blobs,
    /// Per-band sinusoidal ramps.
    Gradients,
    /// Alternating cells with rising and falling spectral ramps.
    Checkerboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub generator: Generator,
    pub seed: u64,
    #[serde(default = "default_blobs")]
    pub blobs: usize,
    #[serde(default = "default_cell")]
    pub cell: usize,
}

fn default_blobs() -> usize {
    6
}

fn default_cell() -> usize {
    8
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, bands: usize, generator: Generator, seed: u64) -> Self {
        Self {
            height,
            width,
            bands,
            generator,
            seed,
            blobs: default_blobs(),
            cell: default_cell(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Blob grid as `(rows, cols)`.
    fn blob_grid(&self) -> (usize, usize) {
        let cols = (self.blobs as f64).sqrt().ceil().max(1.0) as usize;
        (self.blobs.div_ceil(cols), cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Config(format!(
                "scene dims must be positive, got {}x{}x{}",
                self.height, self.width, self.bands
            )));
        }
        match self.generator {
            Generator::Blobs if self.blobs > 0 => {
                let (rows, cols) = self.blob_grid();
                // each cell must hold a 2x2 blob with a one-pixel margin
                if self.height / rows < 4 || self.width / cols < 4 {
                    return Err(Error::Config(format!(
                        "{} blobs do not fit in {}x{}",
                        self.blobs, self.height, self.width
                    )));
                }
            }
            Generator::Checkerboard if self.cell == 0 => {
                return Err(Error::Config("checkerboard cell must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SpectralCube> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    Ok(match spec.generator {
        Generator::Blobs => blobs(spec, &mut rng),
        Generator::Gradients => gradients(spec, &mut rng),
        Generator::Checkerboard => checkerboard(spec, &mut rng),
    })
}

fn spectrum(rng: &mut impl Rng, bands: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..bands)
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect()
}

fn blobs(spec: &SceneSpec, rng: &mut impl Rng) -> SpectralCube {
    let (h, w, nb) = (spec.height, spec.width, spec.bands);
    let background = spectrum(rng, nb, 0.05, 0.35);
    // label 0 is background, blob k is label k+1
    let mut labels = vec![0usize; h * w];
    let mut spectra = vec![background];
    if spec.blobs > 0 {
        let (rows, cols) = spec.blob_grid();
        let (ch, cw) = (h / rows, w / cols);
        for k in 0..spec.blobs {
            let (r0, c0) = ((k / cols) * ch, (k % cols) * cw);
            let bh = rng.random_range(2.max(ch / 3)..=ch - 2);
            let bw = rng.random_range(2.max(cw / 3)..=cw - 2);
            let top = r0 + rng.random_range(1..=ch - 1 - bh);
            let left = c0 + rng.random_range(1..=cw - 1 - bw);
            for r in top..top + bh {
                labels[r * w + left..r * w + left + bw].fill(k + 1);
            }
            spectra.push(spectrum(rng, nb, 0.4, 1.0));
        }
    }
    SpectralCube::from_fn(h, w, nb, |b, r, c| spectra[labels[r * w + c]][b])
}

fn gradients(spec: &SceneSpec, rng: &mut impl Rng) -> SpectralCube {
    let (h, w, nb) = (spec.height, spec.width, spec.bands);
    let params: Vec<[f64; 3]> = (0..nb)
        .map(|_| {
            [
                rng.random::<f64>() * std::f64::consts::TAU,
                0.5 + 1.5 * rng.random::<f64>(),
                0.5 + 1.5 * rng.random::<f64>(),
            ]
        })
        .collect();
    SpectralCube::from_fn(h, w, nb, |b, r, c| {
        let [phase, fr, fc] = params[b];
        let t =
            phase + std::f64::consts::PI * (fr * r as f64 / h as f64 + fc * c as f64 / w as f64);
        0.5 + 0.4 * t.sin()
    })
}

fn checkerboard(spec: &SceneSpec, rng: &mut impl Rng) -> SpectralCube {
    let (h, w, nb, s) = (spec.height, spec.width, spec.bands, spec.cell);
    let (cells_r, cells_c) = (h.div_ceil(s), w.div_ceil(s));
    let gains: Vec<f64> = (0..cells_r * cells_c)
        .map(|_| 0.5 + 0.5 * rng.random::<f64>())
        .collect();
    let ramp = |b: usize| {
        if nb > 1 {
            b as f64 / (nb - 1) as f64
        } else {
            0.5
        }
    };
    SpectralCube::from_fn(h, w, nb, |b, r, c| {
        let (i, j) = (r / s, c / s);
        let t = if (i + j) % 2 == 0 {
            ramp(b)
        } else {
            1.0 - ramp(b)
        };
        gains[i * cells_c + j] * (0.1 + 0.8 * t)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 4-connected components of pixels whose spectrum differs from the top-left pixel.
    fn count_components(x: &SpectralCube) -> usize {
        let (h, w, _) = x.dims();
        let spec_at =
            |r: usize, c: usize| (0..x.bands()).map(|b| x.get(b, r, c)).collect::<Vec<_>>();
        let bg = spec_at(0, 0);
        let mut seen = vec![false; h * w];
        let mut count = 0;
        for start in 0..h * w {
            if seen[start] || spec_at(start / w, start % w) == bg {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                let (r, c) = (p / w, p % w);
                let here = spec_at(r, c);
                let mut nbrs = Vec::new();
                if r > 0 {
                    nbrs.push(p - w);
                }
                if r + 1 < h {
                    nbrs.push(p + w);
                }
                if c > 0 {
                    nbrs.push(p - 1);
                }
                if c + 1 < w {
                    nbrs.push(p + 1);
                }
                for q in nbrs {
                    if !seen[q] && spec_at(q / w, q % w) == here {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn blob_count_matches_labeling() {
        for (n, seed) in [(1, 3), (4, 5), (6, 7), (9, 11), (12, 2)] {
            let mut spec = SceneSpec::new(48, 64, 5, Generator::Blobs, seed);
            spec.blobs = n;
            let x = generate_scene(&spec).unwrap();
            assert_eq!(x.dims(), (48, 64, 5));
            assert_eq!(count_components(&x), n, "blobs={n}");
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        for g in [
            Generator::Blobs,
            Generator::Gradients,
            Generator::Checkerboard,
        ] {
            let spec = SceneSpec::new(20, 24, 6, g, 42);
            let a = generate_scene(&spec).unwrap();
            let b = generate_scene(&spec).unwrap();
            assert_eq!(a.data(), b.data());
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let other = generate_scene(&SceneSpec { seed: 43, ..spec }).unwrap();
            assert_ne!(a.data(), other.data());
        }
    }

    #[test]
    fn piecewise_constant_has_sparse_gradient() {
        for g in [Generator::Blobs, Generator::Checkerboard] {
            let mut spec = SceneSpec::new(64, 64, 8, g, 9);
            spec.cell = 16;
            let x = generate_scene(&spec).unwrap();
            for b in 0..x.bands() {
                let band = x.band(b);
                let mut nonzero = 0;
                for r in 0..63 {
                    for c in 0..63 {
                        let v = band[r * 64 + c];
                        if band[r * 64 + c + 1] != v || band[(r + 1) * 64 + c] != v {
                            nonzero += 1;
                        }
                    }
                }
                assert!(nonzero * 5 < 63 * 63, "{g:?} band {b}: {nonzero}");
            }
        }
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let spec = SceneSpec::from_json(
            r#"{"height":16,"width":16,"bands":4,"generator":"checkerboard","seed":1}"#,
        )
        .unwrap();
        assert_eq!(spec.cell, 8);
        assert_eq!(spec.blobs, 6);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(SceneSpec::from_json(&text).unwrap(), spec);
        assert!(SceneSpec::from_json(
            r#"{"height":16,"width":16,"bands":4,"generator":"plaid","seed":1}"#
        )
        .is_err());
    }

    #[test]
    fn crowded_blobs_rejected() {
        let mut spec = SceneSpec::new(8, 8, 2, Generator::Blobs, 0);
        spec.blobs = 16;
        assert!(matches!(generate_scene(&spec), Err(Error::Config(_))));
        spec.height = 0;
        assert!(spec.validate().is_err());
    }
}
