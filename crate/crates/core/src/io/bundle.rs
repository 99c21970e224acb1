//! Attention parameter bundles: a directory holding `manifest.json` and one
//! cube file per tensor.
//!
//! Tensors are stored as single-band cubes of shape `1 x len`; the manifest
//! records the logical shape. Values pass through float32 on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_cube, write_atomic, write_cube};
use crate::attention::{SpatialBlockParams, SpectralAttentionParams};
use crate::cube::SpectralCube;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SPECTRAL_KIND: &str = "spectral-attention";
pub const SPATIAL_KIND: &str = "spatial-block";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub meta: BTreeMap<String, usize>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub kind: String,
    pub meta: BTreeMap<String, usize>,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Bundle {
    fn new(kind: &str, meta: &[(&str, usize)]) -> Self {
        Self {
            kind: kind.into(),
            meta: meta.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            tensors: BTreeMap::new(),
        }
    }

    fn put(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        self.tensors
            .insert(name.into(), (shape.to_vec(), values.to_vec()));
    }

    fn meta(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .copied()
            .ok_or_else(|| Error::Config(format!("bundle meta is missing {key:?}")))
    }

    fn take(&mut self, name: &str) -> Result<Vec<f64>> {
        self.tensors
            .remove(name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Config(format!("bundle is missing tensor {name:?}")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!(
                "bundle kind {:?}, expected {kind:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn write_bundle(bundle: &Bundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(bundle.tensors.len());
    for (name, (shape, values)) in &bundle.tensors {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Shape(format!(
                "tensor {name:?} shape {shape:?} vs {} values",
                values.len()
            )));
        }
        let file = format!("{name}.cidc");
        let cube = SpectralCube::new(1, values.len(), 1, values.clone())?;
        write_cube(&cube, dir.join(&file))?;
        entries.push(TensorEntry {
            name: name.clone(),
            file,
            shape: shape.clone(),
        });
    }
    let manifest = Manifest {
        kind: bundle.kind.clone(),
        meta: bundle.meta.clone(),
        tensors: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(dir.join(MANIFEST), text.as_bytes())
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Bundle> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut tensors = BTreeMap::new();
    for entry in manifest.tensors {
        if entry.file.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "tensor file {:?} must be a bare name",
                entry.file
            )));
        }
        let values = read_cube(dir.join(&entry.file))?.into_data();
        if entry.shape.iter().product::<usize>() != values.len() {
            return Err(Error::Shape(format!(
                "tensor {:?} shape {:?} vs {} stored values",
                entry.name,
                entry.shape,
                values.len()
            )));
        }
        tensors.insert(entry.name, (entry.shape, values));
    }
    Ok(Bundle {
        kind: manifest.kind,
        meta: manifest.meta,
        tensors,
    })
}

pub fn spectral_to_bundle(p: &SpectralAttentionParams) -> Bundle {
    let (c, e) = (p.channels, p.embed_len());
    let mut b = Bundle::new(
        SPECTRAL_KIND,
        &[
            ("channels", c),
            ("heads", p.heads),
            ("head_dim", p.head_dim),
        ],
    );
    b.put("wq", &[e, c], &p.wq);
    b.put("wk", &[e, c], &p.wk);
    b.put("wv", &[e, c], &p.wv);
    b.put("wo", &[c, e], &p.wo);
    b.put("bo", &[c], &p.bo);
    b
}

pub fn spectral_from_bundle(mut b: Bundle) -> Result<SpectralAttentionParams> {
    b.expect_kind(SPECTRAL_KIND)?;
    let p = SpectralAttentionParams {
        channels: b.meta("channels")?,
        heads: b.meta("heads")?,
        head_dim: b.meta("head_dim")?,
        wq: b.take("wq")?,
        wk: b.take("wk")?,
        wv: b.take("wv")?,
        wo: b.take("wo")?,
        bo: b.take("bo")?,
    };
    p.validate()?;
    Ok(p)
}

pub fn spatial_to_bundle(p: &SpatialBlockParams) -> Bundle {
    let (c, hd) = (p.channels, p.hidden);
    let rel = (2 * p.window - 1).pow(2);
    let mut b = Bundle::new(
        SPATIAL_KIND,
        &[
            ("channels", c),
            ("heads", p.heads),
            ("window", p.window),
            ("shift", p.shift),
            ("hidden", hd),
        ],
    );
    for (name, shape, v) in [
        ("ln1_gamma", vec![c], &p.ln1_gamma),
        ("ln1_beta", vec![c], &p.ln1_beta),
        ("wq", vec![c, c], &p.wq),
        ("bq", vec![c], &p.bq),
        ("wk", vec![c, c], &p.wk),
        ("bk", vec![c], &p.bk),
        ("wv", vec![c, c], &p.wv),
        ("bv", vec![c], &p.bv),
        ("wo", vec![c, c], &p.wo),
        ("bo", vec![c], &p.bo),
        ("rel_bias", vec![rel, p.heads], &p.rel_bias),
        ("ln2_gamma", vec![c], &p.ln2_gamma),
        ("ln2_beta", vec![c], &p.ln2_beta),
        ("w1", vec![hd, c], &p.w1),
        ("b1", vec![hd], &p.b1),
        ("w2", vec![c, hd], &p.w2),
        ("b2", vec![c], &p.b2),
    ] {
        b.put(name, &shape, v);
    }
    b
}

pub fn spatial_from_bundle(mut b: Bundle) -> Result<SpatialBlockParams> {
    b.expect_kind(SPATIAL_KIND)?;
    let p = SpatialBlockParams {
        channels: b.meta("channels")?,
        heads: b.meta("heads")?,
        window: b.meta("window")?,
        shift: b.meta("shift")?,
        hidden: b.meta("hidden")?,
        ln1_gamma: b.take("ln1_gamma")?,
        ln1_beta: b.take("ln1_beta")?,
        wq: b.take("wq")?,
        bq: b.take("bq")?,
        wk: b.take("wk")?,
        bk: b.take("bk")?,
        wv: b.take("wv")?,
        bv: b.take("bv")?,
        wo: b.take("wo")?,
        bo: b.take("bo")?,
        rel_bias: b.take("rel_bias")?,
        ln2_gamma: b.take("ln2_gamma")?,
        ln2_beta: b.take("ln2_beta")?,
        w1: b.take("w1")?,
        b1: b.take("b1")?,
        w2: b.take("w2")?,
        b2: b.take("b2")?,
    };
    p.validate()?;
    Ok(p)
}

pub fn save_spectral_params(p: &SpectralAttentionParams, dir: impl AsRef<Path>) -> Result<()> {
    write_bundle(&spectral_to_bundle(p), dir)
}

pub fn load_spectral_params(dir: impl AsRef<Path>) -> Result<SpectralAttentionParams> {
    spectral_from_bundle(read_bundle(dir)?)
}

pub fn save_spatial_params(p: &SpatialBlockParams, dir: impl AsRef<Path>) -> Result<()> {
    write_bundle(&spatial_to_bundle(p), dir)
}

pub fn load_spatial_params(dir: impl AsRef<Path>) -> Result<SpatialBlockParams> {
    spatial_from_bundle(read_bundle(dir)?)
}
