//! Forward-only attention kernels over `height x width x channels` features.
//!
//! Feature maps are stored pixel-major with channels fastest:
//! `data[(row * width + col) * channels + ch]`.

mod spatial;
mod spectral;

pub use spatial::{spatial_attention_maps, window_msa, SpatialBlockParams};
pub use spectral::{
    multi_ratio_attention, ratio_to_k, spectral_attention_maps, topk_retained,
    topk_spectral_attention, SpectralAttentionParams, FUSION_RATIOS,
};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn random(height: usize, width: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let data = (0..height * width * channels)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        Self::new(height, width, channels, data).expect("valid random features")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn token(&self, row: usize, col: usize) -> &[f64] {
        let k = (row * self.width + col) * self.channels;
        &self.data[k..k + self.channels]
    }

    fn token_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let k = (row * self.width + col) * self.channels;
        &mut self.data[k..k + self.channels]
    }
}

/// One `size x size` spatial window, tokens row-major, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub size: usize,
    pub channels: usize,
    pub tokens: Vec<f64>,
}

impl Window {
    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.channels..(i + 1) * self.channels]
    }

    pub fn len(&self) -> usize {
        self.size * self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

/// Windows of a zero-padded feature map plus the geometry to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub windows: Vec<Window>,
    pub size: usize,
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub channels: usize,
}

impl Partition {
    pub fn windows_per_row(&self) -> usize {
        self.padded_width / self.size
    }

    /// Reassembles `windows` (same geometry as the partition) and crops the padding.
    pub fn merge(&self, windows: &[Window]) -> Result<FeatureMap> {
        let per_row = self.windows_per_row();
        let expected = per_row * (self.padded_height / self.size);
        if windows.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} windows, got {}",
                windows.len()
            )));
        }
        let mut out = FeatureMap::zeros(self.height, self.width, self.channels);
        for (wi, win) in windows.iter().enumerate() {
            if win.size != self.size || win.channels != self.channels {
                return Err(Error::Shape(format!("window {wi} has mismatched geometry")));
            }
            let (r0, c0) = ((wi / per_row) * self.size, (wi % per_row) * self.size);
            for i in 0..self.size {
                for j in 0..self.size {
                    let (r, c) = (r0 + i, c0 + j);
                    if r < self.height && c < self.width {
                        out.token_mut(r, c)
                            .copy_from_slice(win.token(i * self.size + j));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Splits `f` into non-overlapping `n x n` windows in row-major order,
/// zero-padding the bottom and right edges to a multiple of `n`.
pub fn window_partition(f: &FeatureMap, n: usize) -> Result<Partition> {
    if n == 0 {
        return Err(Error::Config("window size must be positive".into()));
    }
    let ph = f.height.div_ceil(n) * n;
    let pw = f.width.div_ceil(n) * n;
    let ch = f.channels;
    let mut windows = Vec::with_capacity((ph / n) * (pw / n));
    for r0 in (0..ph).step_by(n) {
        for c0 in (0..pw).step_by(n) {
            let mut tokens = vec![0.0; n * n * ch];
            for i in 0..n {
                for j in 0..n {
                    let (r, c) = (r0 + i, c0 + j);
                    if r < f.height && c < f.width {
                        let k = (i * n + j) * ch;
                        tokens[k..k + ch].copy_from_slice(f.token(r, c));
                    }
                }
            }
            windows.push(Window {
                size: n,
                channels: ch,
                tokens,
            });
        }
    }
    Ok(Partition {
        windows,
        size: n,
        height: f.height,
        width: f.width,
        padded_height: ph,
        padded_width: pw,
        channels: ch,
    })
}

pub fn window_merge(partition: &Partition) -> FeatureMap {
    partition
        .merge(&partition.windows)
        .expect("partition windows always match their own geometry")
}

/// Row softmax that treats `-inf` entries as exact zeros.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY {
            0.0
        } else {
            (*v - max).exp()
        };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `out = W x (+ b)` with `W` row-major `rows x x.len()`.
pub(crate) fn matvec(w: &[f64], x: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    if let Some(b) = bias {
        for (o, bv) in out.iter_mut().zip(b) {
            *o += bv;
        }
    }
}

pub(crate) fn uniform_init(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect()
}

pub(crate) fn check_len(name: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Shape(format!(
            "parameter {name} has {} values, expected {expected}",
            v.len()
        )));
    }
    Ok(())
}
