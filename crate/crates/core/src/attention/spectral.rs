//! Sparse TopK attention across spectral channels.
//!
//! At every spatial location each channel is a token: a 1x1 projection maps
//! the `C` channel values to `C x heads x d` query, key and value entries,
//! the `C x C` score matrix `QKᵀ/√d` keeps its `k` largest entries per row,
//! and the softmax-weighted values are projected back to `C` channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_len, matvec, softmax_in_place, uniform_init, Window};
use crate::error::{Error, Result};

/// Fusion ratios of the multi-ratio variant, as fractions of `C`.
pub const FUSION_RATIOS: [f64; 4] = [1.0 / 2.0, 2.0 / 3.0, 3.0 / 4.0, 4.0 / 5.0];

/// Projection weights, row-major `(out, in)`. The embedding index is
/// `(head * channels + channel) * head_dim + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAttentionParams {
    pub channels: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

impl SpectralAttentionParams {
    pub fn embed_len(&self) -> usize {
        self.channels * self.heads * self.head_dim
    }

    pub fn random(channels: usize, heads: usize, head_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = channels * heads * head_dim;
        Self {
            channels,
            heads,
            head_dim,
            wq: uniform_init(&mut rng, e * channels, channels),
            wk: uniform_init(&mut rng, e * channels, channels),
            wv: uniform_init(&mut rng, e * channels, channels),
            wo: uniform_init(&mut rng, channels * e, e),
            bo: uniform_init(&mut rng, channels, e),
        }
    }

    /// Single head, `d = 1`, every projection the identity and no bias.
    pub fn identity(channels: usize) -> Self {
        let mut eye = vec![0.0; channels * channels];
        for k in 0..channels {
            eye[k * channels + k] = 1.0;
        }
        Self {
            channels,
            heads: 1,
            head_dim: 1,
            wq: eye.clone(),
            wk: eye.clone(),
            wv: eye.clone(),
            wo: eye,
            bo: vec![0.0; channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Config(
                "channels, heads and head_dim must be positive".into(),
            ));
        }
        let e = self.embed_len();
        check_len("wq", &self.wq, e * self.channels)?;
        check_len("wk", &self.wk, e * self.channels)?;
        check_len("wv", &self.wv, e * self.channels)?;
        check_len("wo", &self.wo, self.channels * e)?;
        check_len("bo", &self.bo, self.channels)
    }
}

/// `ceil(ratio · C)` clamped to `[1, C]`.
pub fn ratio_to_k(ratio: f64, channels: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!(
            "ratio must be in (0, 1], got {ratio}"
        )));
    }
    // guard against 0.8 * 5 = 4.000000000000001
    let k = (ratio * channels as f64 - 1e-9).ceil() as usize;
    Ok(k.clamp(1, channels))
}

/// Indices of the `k` largest scores, ties going to the lower index.
pub fn topk_retained(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

struct Projected {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

fn project(token: &[f64], p: &SpectralAttentionParams) -> Projected {
    let e = p.embed_len();
    let mut q = vec![0.0; e];
    let mut k = vec![0.0; e];
    let mut v = vec![0.0; e];
    matvec(&p.wq, token, None, &mut q);
    matvec(&p.wk, token, None, &mut k);
    matvec(&p.wv, token, None, &mut v);
    Projected { q, k, v }
}

fn scores(proj: &Projected, p: &SpectralAttentionParams, head: usize) -> Vec<f64> {
    let (c, d) = (p.channels, p.head_dim);
    let scale = 1.0 / (d as f64).sqrt();
    let base = head * c * d;
    let mut s = vec![0.0; c * c];
    for a in 0..c {
        let qa = &proj.q[base + a * d..base + (a + 1) * d];
        for b in 0..c {
            let kb = &proj.k[base + b * d..base + (b + 1) * d];
            s[a * c + b] = qa.iter().zip(kb).map(|(x, y)| x * y).sum::<f64>() * scale;
        }
    }
    s
}

fn masked_softmax(scores: &[f64], c: usize, k: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; c * c];
    for a in 0..c {
        let row = &scores[a * c..(a + 1) * c];
        let dst = &mut out[a * c..(a + 1) * c];
        for j in topk_retained(row, k) {
            dst[j] = row[j];
        }
        softmax_in_place(dst);
    }
    out
}

/// `Σ_r α_r · A⁽ʳ⁾V` for one token, before the output projection.
fn fused_values(token: &[f64], p: &SpectralAttentionParams, ks: &[(usize, f64)]) -> Vec<f64> {
    let (c, d) = (p.channels, p.head_dim);
    let proj = project(token, p);
    let mut z = vec![0.0; p.embed_len()];
    for head in 0..p.heads {
        let s = scores(&proj, p, head);
        let base = head * c * d;
        for &(k, alpha) in ks {
            let a = masked_softmax(&s, c, k);
            for row in 0..c {
                for col in 0..c {
                    let w = alpha * a[row * c + col];
                    if w == 0.0 {
                        continue;
                    }
                    for e in 0..d {
                        z[base + row * d + e] += w * proj.v[base + col * d + e];
                    }
                }
            }
        }
    }
    z
}

fn apply(window: &Window, p: &SpectralAttentionParams, ks: &[(usize, f64)]) -> Result<Window> {
    p.validate()?;
    if window.channels != p.channels {
        return Err(Error::Shape(format!(
            "window has {} channels, parameters expect {}",
            window.channels, p.channels
        )));
    }
    let mut tokens = vec![0.0; window.tokens.len()];
    for (i, out) in tokens.chunks_exact_mut(p.channels).enumerate() {
        let z = fused_values(window.token(i), p, ks);
        matvec(&p.wo, &z, Some(&p.bo), out);
    }
    Ok(Window {
        size: window.size,
        channels: window.channels,
        tokens,
    })
}

/// Spectral attention keeping the top `k` scores of every row.
pub fn topk_spectral_attention(
    window: &Window,
    params: &SpectralAttentionParams,
    k: usize,
) -> Result<Window> {
    if k < 1 || k > params.channels {
        return Err(Error::Config(format!(
            "k must be in [1, {}], got {k}",
            params.channels
        )));
    }
    apply(window, params, &[(k, 1.0)])
}

/// Weighted fusion of TopK attention at several sparsity ratios sharing one
/// Q/K/V projection; the output projection is applied once to the sum.
pub fn multi_ratio_attention(
    window: &Window,
    params: &SpectralAttentionParams,
    ratios: &[f64],
    weights: &[f64],
) -> Result<Window> {
    if ratios.len() != weights.len() || ratios.is_empty() {
        return Err(Error::Config(format!(
            "{} ratios but {} weights",
            ratios.len(),
            weights.len()
        )));
    }
    let ks = ratios
        .iter()
        .zip(weights)
        .map(|(&r, &w)| Ok((ratio_to_k(r, params.channels)?, w)))
        .collect::<Result<Vec<_>>>()?;
    apply(window, params, &ks)
}

/// Row-stochastic attention maps (`C x C`, one per head) for a single token.
pub fn spectral_attention_maps(
    token: &[f64],
    params: &SpectralAttentionParams,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if token.len() != params.channels || k < 1 || k > params.channels {
        return Err(Error::Config("token length or k out of range".into()));
    }
    let proj = project(token, params);
    Ok((0..params.heads)
        .map(|h| masked_softmax(&scores(&proj, params, h), params.channels, k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_window(n: usize, c: usize, seed: u64) -> Window {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Window {
            size: n,
            channels: c,
            tokens: (0..n * n * c)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect(),
        }
    }

    /// Plain dense attention written out independently of the kernel.
    fn dense_attention(token: &[f64], p: &SpectralAttentionParams) -> Vec<f64> {
        let (c, d, e) = (p.channels, p.head_dim, p.embed_len());
        let lin = |w: &[f64]| -> Vec<f64> {
            (0..e)
                .map(|o| (0..c).map(|i| w[o * c + i] * token[i]).sum())
                .collect()
        };
        let (q, k, v) = (lin(&p.wq), lin(&p.wk), lin(&p.wv));
        let mut z = vec![0.0; e];
        for h in 0..p.heads {
            for a in 0..c {
                let logits: Vec<f64> = (0..c)
                    .map(|b| {
                        (0..d)
                            .map(|t| q[(h * c + a) * d + t] * k[(h * c + b) * d + t])
                            .sum::<f64>()
                            / (d as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = ex.iter().sum();
                for b in 0..c {
                    for t in 0..d {
                        z[(h * c + a) * d + t] += ex[b] / s * v[(h * c + b) * d + t];
                    }
                }
            }
        }
        (0..c)
            .map(|o| p.bo[o] + (0..e).map(|i| p.wo[o * e + i] * z[i]).sum::<f64>())
            .collect()
    }

    #[test]
    fn full_k_equals_dense() {
        let p = SpectralAttentionParams::random(6, 2, 3, 1);
        let win = random_window(2, 6, 2);
        let out = topk_spectral_attention(&win, &p, 6).unwrap();
        for i in 0..4 {
            let expect = dense_attention(win.token(i), &p);
            for (a, b) in out.token(i).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_with_k_nonzeros() {
        let p = SpectralAttentionParams::random(7, 2, 2, 3);
        let win = random_window(1, 7, 4);
        for k in 1..=7 {
            for map in spectral_attention_maps(win.token(0), &p, k).unwrap() {
                for row in map.chunks_exact(7) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row.iter().filter(|v| **v != 0.0).count() <= k);
                }
            }
        }
    }

    #[test]
    fn three_channel_brute_force() {
        // identity projections, d = 1: scores are x_a * x_b
        let x = [0.5, -1.0, 2.0];
        let p = SpectralAttentionParams::identity(3);
        let win = Window {
            size: 1,
            channels: 3,
            tokens: x.to_vec(),
        };
        let out = topk_spectral_attention(&win, &p, 2).unwrap();
        for a in 0..3 {
            let s: Vec<f64> = (0..3).map(|b| x[a] * x[b]).collect();
            // the dropped index is the minimum; on ties the higher index goes
            let mut drop = 0;
            for b in 1..3 {
                if s[b] <= s[drop] {
                    drop = b;
                }
            }
            let kept: Vec<usize> = (0..3).filter(|&b| b != drop).collect();
            let den: f64 = kept.iter().map(|&b| s[b].exp()).sum();
            let expect: f64 = kept.iter().map(|&b| s[b].exp() / den * x[b]).sum();
            assert!((out.tokens[a] - expect).abs() < 1e-12, "row {a}");
        }
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(topk_retained(&[1.0, 2.0, 2.0, 0.0], 2), vec![1, 2]);
        assert_eq!(topk_retained(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn single_ratio_matches_topk() {
        let p = SpectralAttentionParams::random(5, 1, 2, 5);
        let win = random_window(2, 5, 6);
        let k = ratio_to_k(0.6, 5).unwrap();
        assert_eq!(k, 3);
        assert_eq!(
            multi_ratio_attention(&win, &p, &[0.6], &[1.0]).unwrap(),
            topk_spectral_attention(&win, &p, k).unwrap()
        );
    }

    #[test]
    fn zero_weights_leave_bias() {
        let p = SpectralAttentionParams::random(5, 2, 2, 7);
        let win = random_window(2, 5, 8);
        let out = multi_ratio_attention(&win, &p, &FUSION_RATIOS, &[0.0; 4]).unwrap();
        for i in 0..4 {
            assert_eq!(out.token(i), p.bo.as_slice());
        }
    }

    #[test]
    fn ratio_rounding() {
        assert_eq!(ratio_to_k(0.8, 5).unwrap(), 4);
        assert_eq!(ratio_to_k(0.5, 5).unwrap(), 3);
        assert_eq!(ratio_to_k(2.0 / 3.0, 28).unwrap(), 19);
        assert_eq!(ratio_to_k(0.01, 4).unwrap(), 1);
        assert!(ratio_to_k(0.0, 4).is_err());
        assert!(ratio_to_k(1.5, 4).is_err());
    }

    #[test]
    fn config_errors() {
        let p = SpectralAttentionParams::random(4, 1, 1, 9);
        let win = random_window(1, 4, 9);
        assert!(matches!(
            topk_spectral_attention(&win, &p, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            topk_spectral_attention(&win, &p, 5),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            multi_ratio_attention(&win, &p, &[0.5, 0.5], &[1.0]),
            Err(Error::Config(_))
        ));
        let other = random_window(1, 3, 9);
        assert!(matches!(
            topk_spectral_attention(&other, &p, 2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn retained_sets_are_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            // coarse values force ties
            let s: Vec<f64> = (0..9)
                .map(|_| (rng.random::<f64>() * 4.0).floor())
                .collect();
            for k in 1..9 {
                let small = topk_retained(&s, k);
                let big = topk_retained(&s, k + 1);
                assert!(small.iter().all(|i| big.contains(i)));
            }
        }
    }

    #[test]
    fn permuting_locations_permutes_outputs() {
        let p = SpectralAttentionParams::random(4, 2, 2, 11);
        let win = random_window(2, 4, 12);
        let perm = [2usize, 0, 3, 1];
        let mut permuted = win.clone();
        for (dst, &src) in perm.iter().enumerate() {
            permuted.tokens[dst * 4..dst * 4 + 4].copy_from_slice(win.token(src));
        }
        let a = topk_spectral_attention(&win, &p, 2).unwrap();
        let b = topk_spectral_attention(&permuted, &p, 2).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(b.token(dst), a.token(src));
        }
    }
}
