//! Swin-style windowed spatial attention block:
//! `Z = MSA(LN(X)) + X`, `out = FFN(LN(Z)) + Z`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_len, matvec, softmax_in_place, uniform_init, window_partition, FeatureMap, Window,
};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Block weights; matrices are row-major `(out, in)`.
///
/// `rel_bias` holds `(2M − 1)² x heads` entries indexed by
/// `((Δr + M − 1)(2M − 1) + Δc + M − 1) * heads + head`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBlockParams {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub shift: usize,
    pub hidden: usize,
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub rel_bias: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl SpatialBlockParams {
    /// Every projection, bias and FFN weight zero; unit layer-norm scale.
    pub fn zeroed(channels: usize, heads: usize, window: usize, hidden: usize) -> Self {
        let c = channels;
        Self {
            channels,
            heads,
            window,
            shift: window / 2,
            hidden,
            ln1_gamma: vec![1.0; c],
            ln1_beta: vec![0.0; c],
            wq: vec![0.0; c * c],
            bq: vec![0.0; c],
            wk: vec![0.0; c * c],
            bk: vec![0.0; c],
            wv: vec![0.0; c * c],
            bv: vec![0.0; c],
            wo: vec![0.0; c * c],
            bo: vec![0.0; c],
            rel_bias: vec![0.0; (2 * window - 1).pow(2) * heads],
            ln2_gamma: vec![1.0; c],
            ln2_beta: vec![0.0; c],
            w1: vec![0.0; hidden * c],
            b1: vec![0.0; hidden],
            w2: vec![0.0; c * hidden],
            b2: vec![0.0; c],
        }
    }

    /// Seeded uniform initialization; the relative position bias stays zero.
    pub fn random(channels: usize, heads: usize, window: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = channels;
        let mut p = Self::zeroed(channels, heads, window, hidden);
        p.wq = uniform_init(&mut rng, c * c, c);
        p.bq = uniform_init(&mut rng, c, c);
        p.wk = uniform_init(&mut rng, c * c, c);
        p.bk = uniform_init(&mut rng, c, c);
        p.wv = uniform_init(&mut rng, c * c, c);
        p.bv = uniform_init(&mut rng, c, c);
        p.wo = uniform_init(&mut rng, c * c, c);
        p.bo = uniform_init(&mut rng, c, c);
        p.w1 = uniform_init(&mut rng, hidden * c, c);
        p.b1 = uniform_init(&mut rng, hidden, c);
        p.w2 = uniform_init(&mut rng, c * hidden, hidden);
        p.b2 = uniform_init(&mut rng, c, hidden);
        p
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || self.heads == 0 || self.window == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "channels, heads, window and hidden must be positive".into(),
            ));
        }
        if !c.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{c} channels do not split into {} heads",
                self.heads
            )));
        }
        if self.shift >= self.window {
            return Err(Error::Config(format!(
                "shift {} must be smaller than window {}",
                self.shift, self.window
            )));
        }
        for (name, v, n) in [
            ("ln1_gamma", &self.ln1_gamma, c),
            ("ln1_beta", &self.ln1_beta, c),
            ("wq", &self.wq, c * c),
            ("bq", &self.bq, c),
            ("wk", &self.wk, c * c),
            ("bk", &self.bk, c),
            ("wv", &self.wv, c * c),
            ("bv", &self.bv, c),
            ("wo", &self.wo, c * c),
            ("bo", &self.bo, c),
            (
                "rel_bias",
                &self.rel_bias,
                (2 * self.window - 1).pow(2) * self.heads,
            ),
            ("ln2_gamma", &self.ln2_gamma, c),
            ("ln2_beta", &self.ln2_beta, c),
            ("w1", &self.w1, self.hidden * c),
            ("b1", &self.b1, self.hidden),
            ("w2", &self.w2, c * self.hidden),
            ("b2", &self.b2, c),
        ] {
            check_len(name, v, n)?;
        }
        Ok(())
    }
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for k in 0..x.len() {
        out[k] = (x[k] - mean) * inv * gamma[k] + beta[k];
    }
}

/// tanh approximation of GELU.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Cyclic shift: `out[r][c] = f[(r + dr) % H][(c + dc) % W]`.
fn roll(f: &FeatureMap, dr: usize, dc: usize) -> FeatureMap {
    let (h, w, ch) = (f.height(), f.width(), f.channels());
    let mut out = FeatureMap::zeros(h, w, ch);
    for r in 0..h {
        for c in 0..w {
            out.token_mut(r, c)
                .copy_from_slice(f.token((r + dr) % h, (c + dc) % w));
        }
    }
    out
}

/// Region labels of the shifted layout; tokens in different regions of a
/// window must not attend to each other.
fn region_labels(len: usize, window: usize, shift: usize) -> Vec<usize> {
    (0..len)
        .map(|i| {
            if i < len - window {
                0
            } else if i < len - shift {
                1
            } else {
                2
            }
        })
        .collect()
}

struct WindowAttention {
    out: Window,
    maps: Vec<Vec<f64>>,
}

fn attend_window(
    win: &Window,
    labels: Option<&[usize]>,
    p: &SpatialBlockParams,
) -> WindowAttention {
    let (m, c) = (win.size, p.channels);
    let n = m * m;
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let span = 2 * m - 1;

    let mut q = vec![0.0; n * c];
    let mut k = vec![0.0; n * c];
    let mut v = vec![0.0; n * c];
    for i in 0..n {
        let t = win.token(i);
        matvec(&p.wq, t, Some(&p.bq), &mut q[i * c..(i + 1) * c]);
        matvec(&p.wk, t, Some(&p.bk), &mut k[i * c..(i + 1) * c]);
        matvec(&p.wv, t, Some(&p.bv), &mut v[i * c..(i + 1) * c]);
    }

    let mut mixed = vec![0.0; n * c];
    let mut maps = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let off = h * dh;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut a[i * n..(i + 1) * n];
            for j in 0..n {
                if labels.is_some_and(|l| l[i] != l[j]) {
                    row[j] = f64::NEG_INFINITY;
                    continue;
                }
                let dot: f64 = (0..dh)
                    .map(|e| q[i * c + off + e] * k[j * c + off + e])
                    .sum();
                let dr = i / m + m - 1 - j / m;
                let dc = i % m + m - 1 - j % m;
                row[j] = dot * scale + p.rel_bias[(dr * span + dc) * p.heads + h];
            }
            softmax_in_place(row);
            for j in 0..n {
                let w = row[j];
                if w != 0.0 {
                    for e in 0..dh {
                        mixed[i * c + off + e] += w * v[j * c + off + e];
                    }
                }
            }
        }
        maps.push(a);
    }

    let mut tokens = vec![0.0; n * c];
    for i in 0..n {
        matvec(
            &p.wo,
            &mixed[i * c..(i + 1) * c],
            Some(&p.bo),
            &mut tokens[i * c..(i + 1) * c],
        );
    }
    WindowAttention {
        out: Window {
            size: m,
            channels: c,
            tokens,
        },
        maps,
    }
}

struct MsaPass {
    out: FeatureMap,
    maps: Vec<Vec<Vec<f64>>>,
}

fn msa(normed: &FeatureMap, p: &SpatialBlockParams, shifted: bool) -> Result<MsaPass> {
    let m = p.window;
    let (h, w, ch) = (normed.height(), normed.width(), normed.channels());
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);

    let mut padded = FeatureMap::zeros(ph, pw, ch);
    for r in 0..h {
        for c in 0..w {
            padded.token_mut(r, c).copy_from_slice(normed.token(r, c));
        }
    }
    let shift = if shifted { p.shift } else { 0 };
    let work = if shift > 0 {
        roll(&padded, shift, shift)
    } else {
        padded
    };

    let part = window_partition(&work, m)?;
    let per_row = part.windows_per_row();
    let (row_labels, col_labels) = (region_labels(ph, m, shift), region_labels(pw, m, shift));

    let mut outs = Vec::with_capacity(part.windows.len());
    let mut maps = Vec::with_capacity(part.windows.len());
    for (wi, win) in part.windows.iter().enumerate() {
        let (r0, c0) = ((wi / per_row) * m, (wi % per_row) * m);
        let labels: Option<Vec<usize>> = (shift > 0).then(|| {
            (0..m * m)
                .map(|i| row_labels[r0 + i / m] * 3 + col_labels[c0 + i % m])
                .collect()
        });
        let att = attend_window(win, labels.as_deref(), p);
        outs.push(att.out);
        maps.push(att.maps);
    }
    let merged = part.merge(&outs)?;
    let unrolled = if shift > 0 {
        roll(&merged, ph - shift, pw - shift)
    } else {
        merged
    };

    let mut out = FeatureMap::zeros(h, w, ch);
    for r in 0..h {
        for c in 0..w {
            out.token_mut(r, c).copy_from_slice(unrolled.token(r, c));
        }
    }
    Ok(MsaPass { out, maps })
}

fn check_input(f: &FeatureMap, p: &SpatialBlockParams) -> Result<()> {
    p.validate()?;
    if f.channels() != p.channels {
        return Err(Error::Shape(format!(
            "feature map has {} channels, parameters expect {}",
            f.channels(),
            p.channels
        )));
    }
    Ok(())
}

fn normalized(f: &FeatureMap, gamma: &[f64], beta: &[f64]) -> FeatureMap {
    let mut out = FeatureMap::zeros(f.height(), f.width(), f.channels());
    for r in 0..f.height() {
        for c in 0..f.width() {
            layer_norm(f.token(r, c), gamma, beta, out.token_mut(r, c));
        }
    }
    out
}

/// One spatial transformer block over `M x M` windows, optionally with the
/// cyclic shift (and cross-region masking) of the shifted-window layout.
pub fn window_msa(
    f: &FeatureMap,
    params: &SpatialBlockParams,
    shifted: bool,
) -> Result<FeatureMap> {
    check_input(f, params)?;
    let attn = msa(
        &normalized(f, &params.ln1_gamma, &params.ln1_beta),
        params,
        shifted,
    )?
    .out;

    let mut z = f.clone();
    for (zv, av) in z.data.iter_mut().zip(&attn.data) {
        *zv += av;
    }

    let normed = normalized(&z, &params.ln2_gamma, &params.ln2_beta);
    let mut hidden = vec![0.0; params.hidden];
    let mut ffn = vec![0.0; params.channels];
    let mut out = z.clone();
    for r in 0..f.height() {
        for c in 0..f.width() {
            matvec(
                &params.w1,
                normed.token(r, c),
                Some(&params.b1),
                &mut hidden,
            );
            hidden.iter_mut().for_each(|v| *v = gelu(*v));
            matvec(&params.w2, &hidden, Some(&params.b2), &mut ffn);
            for (o, d) in out.token_mut(r, c).iter_mut().zip(&ffn) {
                *o += d;
            }
        }
    }
    Ok(out)
}

/// Attention maps `[window][head]` (each `M² x M²`, row-major) of the MSA
/// sub-layer.
pub fn spatial_attention_maps(
    f: &FeatureMap,
    params: &SpatialBlockParams,
    shifted: bool,
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_input(f, params)?;
    Ok(msa(
        &normalized(f, &params.ln1_gamma, &params.ln1_beta),
        params,
        shifted,
    )?
    .maps)
}
