//! Binary checkpoint format.
//!
//! ```text
//! "ARCKPT01"                      8 bytes
//! header length                   u32 LE
//! header                          UTF-8 JSON (config, seed, tensor table)
//! tensor data                     f32 LE, per layer: weight (C_out,C_in,K,K) then bias
//! ```
//!
//! Tensor offsets in the header are relative to the start of the data section.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArModel, ModelConfig, Standardizer};
use crate::tensor::{ConvWeights, Element};

pub const MAGIC: &[u8; 8] = b"ARCKPT01";
const MAGIC_PREFIX: &[u8; 6] = b"ARCKPT";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardize: Option<Standardizer>,
    tensors: Vec<TensorEntry>,
}

/// Serializes parameters as 32-bit floats.
pub fn save_checkpoint<T: Element>(model: &ArModel<T>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    for (l, wts) in model.layers().iter().enumerate() {
        let k = wts.kernel();
        for (suffix, values, shape) in [
            ("weight", &wts.w, vec![wts.c_out(), wts.c_in(), k, k]),
            ("bias", &wts.b, vec![wts.c_out()]),
        ] {
            tensors.push(TensorEntry {
                name: format!("layers.{l}.{suffix}"),
                shape,
                offset: data.len() as u64,
                len: values.len() as u64,
            });
            for v in values {
                data.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
    }
    let header = Header {
        config: model.config().clone(),
        seed: model.seed(),
        standardize: model.standardizer().cloned(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

/// Parses a checkpoint and verifies that every masked tap is exactly zero.
pub fn load_checkpoint(bytes: &[u8]) -> Result<ArModel<f32>> {
    let model = load_checkpoint_unchecked(bytes)?;
    model.check_masks()?;
    Ok(model)
}

/// Parses a checkpoint without the masked-tap check.
pub fn load_checkpoint_unchecked(bytes: &[u8]) -> Result<ArModel<f32>> {
    let need = |offset: usize, n: usize| -> Result<()> {
        if bytes.len() < offset + n {
            Err(Error::Truncated {
                offset: bytes.len() as u64,
                needed: (offset + n - bytes.len()) as u64,
            })
        } else {
            Ok(())
        }
    };
    let bad_magic = || Error::BadMagic {
        expected: String::from_utf8_lossy(MAGIC).into(),
        found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into(),
    };
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            Error::Truncated {
                offset: bytes.len() as u64,
                needed: (MAGIC.len() - bytes.len()) as u64,
            }
        } else {
            bad_magic()
        });
    }
    if &bytes[..6] != MAGIC_PREFIX {
        return Err(bad_magic());
    }
    if &bytes[..8] != MAGIC {
        let found = std::str::from_utf8(&bytes[6..8])
            .ok()
            .and_then(|s| s.parse::<u32>().ok());
        return match found {
            Some(v) => Err(Error::BadVersion { expected: 1, found: v }),
            None => Err(bad_magic()),
        };
    }
    need(8, 4)?;
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    need(12, hlen)?;
    let header: Header = serde_json::from_slice(&bytes[12..12 + hlen]).map_err(|e| Error::Format {
        offset: 12,
        what: format!("invalid checkpoint header: {e}"),
    })?;
    header.config.validate()?;
    let data_start = 12 + hlen;

    let expected_tensors = header.config.layers.len() * 2;
    if header.tensors.len() != expected_tensors {
        return Err(Error::Format {
            offset: 12,
            what: format!(
                "header lists {} tensors, config needs {expected_tensors}",
                header.tensors.len()
            ),
        });
    }
    let read = |entry: &TensorEntry, want: usize| -> Result<Vec<f32>> {
        if entry.len as usize != want {
            return Err(Error::Format {
                offset: 12,
                what: format!("tensor {} has {} values, expected {want}", entry.name, entry.len),
            });
        }
        let start = data_start + entry.offset as usize;
        need(start, want * 4)?;
        Ok(bytes[start..start + want * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let mut layers = Vec::with_capacity(header.config.layers.len());
    for (l, spec) in header.config.layers.iter().enumerate() {
        let nw = spec.c_out * spec.c_in * spec.k * spec.k;
        let w = read(&header.tensors[2 * l], nw)?;
        let b = read(&header.tensors[2 * l + 1], spec.c_out)?;
        layers.push(ConvWeights::new(spec.c_out, spec.c_in, spec.k, spec.dilation, w, b)?);
    }
    let data_len: u64 = header.tensors.iter().map(|t| t.len * 4).sum();
    if bytes.len() as u64 > data_start as u64 + data_len {
        return Err(Error::Format {
            offset: data_start as u64 + data_len,
            what: "trailing bytes after tensor data".into(),
        });
    }
    ArModel::from_parts(header.config, header.seed, layers, header.standardize)
}

/// Byte offset of weight `index` of layer `layer` within a checkpoint.
pub fn weight_byte_offset(bytes: &[u8], layer: usize, index: usize) -> Result<usize> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            offset: bytes.len() as u64,
            needed: (12 - bytes.len()) as u64,
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(&bytes[12..12 + hlen])?;
    let entry = header.tensors.get(2 * layer).ok_or(Error::Format {
        offset: 12,
        what: format!("no layer {layer}"),
    })?;
    Ok(12 + hlen + entry.offset as usize + 4 * index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn model() -> ArModel<f32> {
        ArModel::init(&ModelConfig::stack(3, 5, 3, 3, 2, Variant::Causal), 99).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = save_checkpoint(&m);
        assert_eq!(&bytes[..8], MAGIC);
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.seed(), 99);
        for (a, b) in back.layers().iter().zip(m.layers()) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.w), bits(&b.w));
            assert_eq!(bits(&a.b), bits(&b.b));
        }
        assert_eq!(save_checkpoint(&back), bytes);
    }

    #[test]
    fn standardizer_survives() {
        let mut m = model();
        m.set_standardizer(Some(Standardizer {
            mean: vec![0.5, -1.0, 2.0],
            std: vec![1.5, 0.25, 3.0],
        }));
        let back = load_checkpoint(&save_checkpoint(&m)).unwrap();
        assert_eq!(back.standardizer(), m.standardizer());
    }

    #[test]
    fn corrupted_masked_weight_is_rejected() {
        let m = model();
        let mut bytes = save_checkpoint(&m);
        // tap (2, 2) of the first slice is masked in causal_a
        let off = weight_byte_offset(&bytes, 0, 8).unwrap();
        bytes[off..off + 4].copy_from_slice(&1.0f32.to_le_bytes());
        match load_checkpoint(&bytes) {
            Err(Error::MaskViolation { layer: 0, index: 8, value }) => assert_eq!(value, 1.0),
            other => panic!("expected mask violation, got {other:?}"),
        }
        assert!(load_checkpoint_unchecked(&bytes).is_ok());
    }

    #[test]
    fn truncation_and_magic_errors_are_distinct() {
        let bytes = save_checkpoint(&model());
        assert!(matches!(
            load_checkpoint(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(load_checkpoint(&bytes[..5]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut v2 = bytes.clone();
        v2[7] = b'2';
        assert!(matches!(
            load_checkpoint(&v2),
            Err(Error::BadVersion { found: 2, .. })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(load_checkpoint(&extra), Err(Error::Format { .. })));
    }
}
