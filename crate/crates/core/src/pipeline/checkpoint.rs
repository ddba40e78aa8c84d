use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{decode_checkpoint, encode_checkpoint, read_file, write_file, NamedTensor};
use crate::model::{DualEncoder, ModelDims};
use crate::params::{ParamGroup, ParamSet};
use crate::pipeline::stream_rng;
use crate::rerank::CrossEncoderParams;
use crate::scalar::Scalar;

/// Trained dual encoder plus the optional reranker.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub dims: ModelDims,
    pub encoder: DualEncoder<T>,
    pub cross: Option<CrossEncoderParams<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    frame_dim: usize,
    text_dim: usize,
    dim: usize,
    heads: usize,
    layers: usize,
    t_max: usize,
    temporal: bool,
    /// Zero when the checkpoint has no reranker.
    cross_layers: usize,
}

impl<T: Scalar> Checkpoint<T> {
    fn meta(&self) -> Meta {
        let d = self.dims;
        Meta {
            frame_dim: d.frame_dim,
            text_dim: d.text_dim,
            dim: d.dim,
            heads: d.heads,
            layers: d.layers,
            t_max: d.t_max,
            temporal: d.temporal,
            cross_layers: self.cross.as_ref().map_or(0, |c| c.layers.len()),
        }
    }

    fn tensors(&self) -> Vec<NamedTensor> {
        let mut refs = Vec::new();
        self.encoder.visit("encoder", ParamGroup::Base, &mut refs);
        if let Some(c) = &self.cross {
            c.visit("cross", ParamGroup::Base, &mut refs);
        }
        refs.into_iter()
            .map(|p| NamedTensor {
                name: p.name,
                shape: p.shape,
                data: p.data.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect(),
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = toml::to_string(&self.meta()).expect("meta serializes");
        encode_checkpoint(&meta, &self.tensors())
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        let (meta_text, tensors) = decode_checkpoint(path, bytes)?;
        let meta: Meta = toml::from_str(&meta_text).map_err(|e| malformed(e.to_string()))?;
        let dims = ModelDims {
            frame_dim: meta.frame_dim,
            text_dim: meta.text_dim,
            dim: meta.dim,
            heads: meta.heads,
            layers: meta.layers,
            t_max: meta.t_max,
            temporal: meta.temporal,
        };
        // build the layout, then overwrite every tensor
        let mut rng = stream_rng(0, 0);
        let encoder = DualEncoder::init(&mut rng.clone(), &mut rng, &dims).map_err(|e| malformed(e.to_string()))?;
        let cross = if meta.cross_layers > 0 {
            Some(CrossEncoderParams::init(&mut rng, dims.dim, dims.heads, meta.cross_layers).map_err(|e| malformed(e.to_string()))?)
        } else {
            None
        };
        let mut ckpt = Self { dims, encoder, cross };
        {
            let mut slots = Vec::new();
            ckpt.encoder.visit_mut("encoder", ParamGroup::Base, &mut slots);
            if let Some(c) = &mut ckpt.cross {
                c.visit_mut("cross", ParamGroup::Base, &mut slots);
            }
            if slots.len() != tensors.len() {
                return Err(malformed(format!("expected {} tensors, found {}", slots.len(), tensors.len())));
            }
            for (slot, t) in slots.into_iter().zip(tensors) {
                if slot.name != t.name || slot.shape != t.shape {
                    return Err(malformed(format!(
                        "expected tensor {} {:?}, found {} {:?}",
                        slot.name, slot.shape, t.name, t.shape
                    )));
                }
                for (d, x) in slot.data.iter_mut().zip(t.data) {
                    *d = T::from_f32(x).unwrap();
                }
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(temporal: bool) -> ModelDims {
        ModelDims {
            frame_dim: 6,
            text_dim: 5,
            dim: 4,
            heads: 2,
            layers: 2,
            t_max: 8,
            temporal,
        }
    }

    fn sample(temporal: bool, cross: bool) -> Checkpoint<f32> {
        let mut a = stream_rng(11, 1);
        let mut b = stream_rng(11, 2);
        let d = dims(temporal);
        Checkpoint {
            dims: d,
            encoder: DualEncoder::init(&mut a, &mut b, &d).unwrap(),
            cross: cross.then(|| CrossEncoderParams::init(&mut a, 4, 2, 2).unwrap()),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (t, c) in [(true, true), (false, true), (true, false), (false, false)] {
            let ck = sample(t, c);
            let bytes = ck.to_bytes();
            let back = Checkpoint::<f32>::from_bytes(Path::new("c"), &bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn corrupted_checkpoints() {
        let bytes = sample(true, true).to_bytes();
        let p = Path::new("c");
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(p, &bytes[..bytes.len() / 2]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f32>::from_bytes(p, &bad), Err(Error::BadMagic { .. })));
        // a pooled layout cannot absorb temporal tensors
        let pooled = sample(false, true);
        let mut tensors = pooled.tensors();
        tensors.swap(0, 1);
        let meta = toml::to_string(&pooled.meta()).unwrap();
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(p, &encode_checkpoint(&meta, &tensors)),
            Err(Error::Malformed { .. })
        ));
    }
}
