//! Named parameter tensors, initializers and checkpoints.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::TensorArchive;
use crate::error::{arg, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Orthogonal rows/columns scaled by `gain`.
    Orthogonal(f64),
    Normal(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return arg(format!("duplicate parameter name {name}"));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect(),
            Init::Orthogonal(gain) => {
                if shape.len() != 2 {
                    return arg(format!(
                        "orthogonal init needs a matrix, {name} has shape {shape:?}"
                    ));
                }
                orthogonal(shape[0], shape[1], gain, rng)
            }
        };
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(
            self.params
                .iter()
                .map(|p| vec![0.0; p.data.len()])
                .collect(),
        )
    }

    pub fn to_archive(&self) -> TensorArchive {
        TensorArchive {
            entries: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.shape.clone(), p.data.clone()))
                .collect(),
        }
    }

    /// Overwrites values from an archive; names and shapes must match exactly.
    pub fn load_archive(&mut self, archive: &TensorArchive) -> Result<()> {
        if archive.entries.len() != self.params.len() {
            return arg(format!(
                "archive has {} tensors, model has {}",
                archive.entries.len(),
                self.params.len()
            ));
        }
        for (name, shape, data) in &archive.entries {
            let Some(&i) = self.index.get(name) else {
                return arg(format!("archive tensor {name} not in model"));
            };
            if &self.params[i].shape != shape {
                return arg(format!(
                    "tensor {name}: archive shape {shape:?}, model {:?}",
                    self.params[i].shape
                ));
            }
            self.params[i].data.clone_from(data);
        }
        Ok(())
    }
}

/// Gradients aligned with a store's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

/// Gram–Schmidt on a Gaussian matrix; rows orthonormal when `rows <= cols`,
/// columns otherwise.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let (n, m) = if rows <= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(n);
    while v.len() < n {
        let mut x: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &v {
                let d: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
                x.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            x.iter_mut().for_each(|a| *a /= norm);
            v.push(x);
        } else {
            // Degenerate draw; retry with a fresh vector.
            let _ = rng.random::<u64>();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (i, u) in v.iter().enumerate() {
        for (j, &x) in u.iter().enumerate() {
            if rows <= cols {
                out[i * cols + j] = gain * x;
            } else {
                out[j * cols + i] = gain * x;
            }
        }
    }
    out
}

/// JSON side-car written next to a checkpoint's tensor container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub step: u64,
    pub seed: u64,
    pub tensors: Vec<(String, Vec<usize>)>,
    /// Free-form architecture description supplied by the model.
    pub architecture: serde_json::Value,
}

pub const CHECKPOINT_FORMAT: &str = "clrm-checkpoint-1";

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_checkpoint(
    store: &ParamStore,
    stem: &Path,
    step: u64,
    seed: u64,
    architecture: serde_json::Value,
) -> Result<()> {
    let bin = stem.with_extension("bin");
    store
        .to_archive()
        .write_to(BufWriter::new(File::create(&bin)?))?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        step,
        seed,
        tensors: store
            .iter()
            .map(|p| (p.name.clone(), p.shape.clone()))
            .collect(),
        architecture,
    };
    std::fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn read_checkpoint(stem: &Path) -> Result<(CheckpointManifest, TensorArchive)> {
    let load_err = |path: &Path, e: &dyn std::fmt::Display| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let json = stem.with_extension("json");
    let text = std::fs::read_to_string(&json).map_err(|e| load_err(&json, &e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| load_err(&json, &e))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(load_err(
            &json,
            &format!("unknown format {}", manifest.format),
        ));
    }
    let bin = stem.with_extension("bin");
    let file = File::open(&bin).map_err(|e| load_err(&bin, &e))?;
    let archive = TensorArchive::read_from(BufReader::new(file)).map_err(|e| load_err(&bin, &e))?;
    let listed: Vec<(String, Vec<usize>)> = archive
        .entries
        .iter()
        .map(|(n, s, _)| (n.clone(), s.clone()))
        .collect();
    if listed != manifest.tensors {
        return Err(load_err(&bin, &"tensor list disagrees with manifest"));
    }
    Ok((manifest, archive))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn orthogonal_rows_and_columns() {
        let mut rng = rng_for(3, &[]);
        for (r, c) in [(4, 9), (9, 4), (6, 6)] {
            let w = orthogonal(r, c, 1.0, &mut rng);
            let (n, inner, rows_major) = if r <= c { (r, c, true) } else { (c, r, false) };
            for a in 0..n {
                for b in 0..n {
                    let d: f64 = (0..inner)
                        .map(|k| {
                            if rows_major {
                                w[a * c + k] * w[b * c + k]
                            } else {
                                w[k * c + a] * w[k * c + b]
                            }
                        })
                        .sum();
                    assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        let mut rng = rng_for(0, &[]);
        s.add("w", &[2, 2], Init::Zeros, &mut rng).unwrap();
        assert!(s.add("w", &[2], Init::Zeros, &mut rng).is_err());
        assert_eq!(s.count(), 4);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let mut rng = rng_for(1, &[]);
        let mut s = ParamStore::new();
        s.add("a", &[3, 4], Init::Orthogonal(1.0), &mut rng)
            .unwrap();
        s.add("b", &[4], Init::Normal(0.5), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ck");
        save_checkpoint(&s, &stem, 7, 11, serde_json::json!({"kind": "test"})).unwrap();
        let (m, arch) = read_checkpoint(&stem).unwrap();
        assert_eq!((m.step, m.seed), (7, 11));
        let mut t = s.clone();
        t.iter_mut()
            .for_each(|p| p.data.iter_mut().for_each(|x| *x = 0.0));
        t.load_archive(&arch).unwrap();
        assert_eq!(t, s);

        let mut other = ParamStore::new();
        other.add("a", &[4, 3], Init::Zeros, &mut rng).unwrap();
        other.add("b", &[4], Init::Zeros, &mut rng).unwrap();
        assert!(other.load_archive(&arch).is_err());
        assert!(read_checkpoint(&dir.path().join("missing")).is_err());
    }
}
