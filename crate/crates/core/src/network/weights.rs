//! Weight files: a binary parameter blob (`SGWTS\0\0\x01`, tensor count, then
//! per tensor its name, dims and little-endian `f32` values) next to a JSON
//! sidecar `{config_hash, stage, epoch, loss_cls, loss_rec}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::{Parameters, Real};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"SGWTS\0\0\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSidecar {
    pub config_hash: String,
    pub stage: String,
    pub epoch: usize,
    pub loss_cls: Option<f64>,
    pub loss_rec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Serialized parameters of a network plus the sidecar that binds them to
/// the architecture that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub tensors: Vec<NamedTensor>,
    pub sidecar: WeightSidecar,
}

impl ModelWeights {
    pub fn capture<T: Real, M: Parameters<T>>(model: &M, sidecar: WeightSidecar) -> Self {
        let tensors = model
            .named_params()
            .into_iter()
            .map(|(name, p)| NamedTensor {
                name,
                shape: p.shape.clone(),
                values: p.value.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        ModelWeights { tensors, sidecar }
    }

    /// Copies every stored tensor whose name starts with one of `prefixes`
    /// into `model`. Names and shapes must match.
    pub fn restore_into<T: Real, M: Parameters<T>>(&self, model: &mut M, prefixes: &[&str]) -> Result<usize> {
        let mut params = model.named_params_mut();
        let mut restored = 0;
        for t in self.tensors.iter().filter(|t| prefixes.iter().any(|p| t.name.starts_with(p))) {
            let (_, p) = params
                .iter_mut()
                .find(|(n, _)| *n == t.name)
                .ok_or_else(|| Error::IncompatibleWeights(format!("model has no parameter {}", t.name)))?;
            if p.shape != t.shape {
                return Err(Error::IncompatibleWeights(format!(
                    "{}: stored shape {:?}, model shape {:?}",
                    t.name, t.shape, p.shape
                )));
            }
            for (dst, &src) in p.value.iter_mut().zip(&t.values) {
                *dst = T::from_f64(src as f64);
            }
            restored += 1;
        }
        Ok(restored)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], sidecar: WeightSidecar) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptWeights(m.to_string());
        if bytes.len() < 12 || bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut pos = 8;
        let u32_at = |pos: &mut usize| -> Result<usize> {
            let b = bytes.get(*pos..*pos + 4).ok_or_else(|| corrupt("truncated"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
        };
        let count = u32_at(&mut pos)?;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = u32_at(&mut pos)?;
            let name = bytes.get(pos..pos + len).ok_or_else(|| corrupt("truncated name"))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| corrupt("name is not UTF-8"))?;
            pos += len;
            let ndim = u32_at(&mut pos)?;
            let shape = (0..ndim).map(|_| u32_at(&mut pos)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| corrupt("truncated values"))?;
            pos += 4 * n;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(ModelWeights { tensors, sidecar })
    }

    /// Writes `<path>` and the sidecar `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_vec_pretty(&self.sidecar)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let sidecar: WeightSidecar = serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelWeights::decode(&bytes, sidecar)
    }

    pub fn check_hash(&self, expected: &str) -> Result<()> {
        if self.sidecar.config_hash != expected {
            return Err(Error::IncompatibleWeights(format!(
                "weights were produced by config {}, model config is {expected}",
                self.sidecar.config_hash
            )));
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::model::{params_checksum, ModelConfig, SemanticGenesisNet};
    use crate::types::Shape3;

    fn tiny(seed: u64) -> SemanticGenesisNet<f32> {
        let cfg = ModelConfig {
            depth: 2,
            base_width: 2,
            fc_widths: vec![8, 3],
            seed,
            ..ModelConfig::new(Shape3::new(8, 8, 4), 3)
        };
        SemanticGenesisNet::build(&cfg).unwrap()
    }

    #[test]
    fn save_load_restore_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = tiny(1);
        let side = WeightSidecar {
            config_hash: src.config.config_hash(),
            stage: "joint".into(),
            epoch: 3,
            loss_cls: Some(1.5),
            loss_rec: None,
        };
        let w = ModelWeights::capture(&src, side);
        let path = dir.path().join("model.sgw");
        w.save(&path).unwrap();
        let back = ModelWeights::load(&path).unwrap();
        assert_eq!(back, w);
        let mut dst = tiny(2);
        back.check_hash(&dst.config.config_hash()).unwrap();
        back.restore_into(&mut dst, &[""]).unwrap();
        assert_eq!(params_checksum(&dst.named_params()), params_checksum(&src.named_params()));
    }

    #[test]
    fn hash_mismatch_and_corruption_detected() {
        let src = tiny(1);
        let side = WeightSidecar {
            config_hash: "abc".into(),
            stage: "warmup".into(),
            epoch: 0,
            loss_cls: None,
            loss_rec: None,
        };
        let w = ModelWeights::capture(&src, side.clone());
        assert!(matches!(w.check_hash(&src.config.config_hash()), Err(Error::IncompatibleWeights(_))));
        let bytes = w.encode();
        assert!(ModelWeights::decode(&bytes[..bytes.len() - 2], side).is_err());
    }
}
