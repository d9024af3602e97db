//! On-disk checkpoint format.
//!
//! ```text
//! {"format_version":1,...,"crc32":...}\n
//! \n
//! <param_count little-endian f64><ceil(param_count / 8) mask bytes>
//! ```
//!
//! Mask bit `i` is bit `i % 8` (least significant first) of byte `i / 8`;
//! padding bits are zero. The CRC32 covers the whole binary payload.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkSpec, ParamVector};
use crate::numerics::DenseVector;
use crate::pruning::Mask;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Init,
    RewindPoint,
    Minimum,
    Variant(String),
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Init => f.write_str("init"),
            Role::RewindPoint => f.write_str("rewind_point"),
            Role::Minimum => f.write_str("minimum"),
            Role::Variant(name) => write!(f, "variant:{name}"),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Role::Init),
            "rewind_point" => Ok(Role::RewindPoint),
            "minimum" => Ok(Role::Minimum),
            _ => match s.strip_prefix("variant:") {
                Some(name) if !name.is_empty() => Ok(Role::Variant(name.to_string())),
                _ => Err(Error::Parse {
                    location: "checkpoint header".into(),
                    message: format!("unknown role {s:?}"),
                }),
            },
        }
    }
}

impl Serialize for Role {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub level: usize,
    pub role: Role,
    pub step: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub param_count: usize,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamVector,
    pub mask: Mask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub level: usize,
    pub step: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

impl Checkpoint {
    pub fn new(
        spec: &NetworkSpec,
        role: Role,
        meta: CheckpointMeta,
        params: ParamVector,
        mask: Mask,
    ) -> Result<Self> {
        let d = spec.param_count();
        crate::error::check_len(d, params.len())?;
        crate::error::check_len(d, mask.len())?;
        let payload = payload_bytes(&params, &mask);
        Ok(Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                spec: spec.clone(),
                level: meta.level,
                role,
                step: meta.step,
                seed: meta.seed,
                train_loss: meta.train_loss,
                test_accuracy: meta.test_accuracy,
                param_count: d,
                crc32: crc32fast::hash(&payload),
            },
            params,
            mask,
        })
    }
}

fn mask_bytes(len: usize) -> usize {
    len.div_ceil(8)
}

fn payload_bytes(params: &ParamVector, mask: &Mask) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 8 + mask_bytes(mask.len()));
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let mut packed = vec![0u8; mask_bytes(mask.len())];
    for (i, &on) in mask.bits().iter().enumerate() {
        if on {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    out
}

pub fn encode(cp: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(&cp.header)?;
    out.extend_from_slice(b"\n\n");
    out.extend_from_slice(&payload_bytes(&cp.params, &cp.mask));
    Ok(out)
}

fn parse_err(message: impl Into<String>) -> Error {
    Error::Parse {
        location: "checkpoint".into(),
        message: message.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err("missing header line"))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[..nl])?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_err("header has no format_version"))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let header: CheckpointHeader = serde_json::from_value(raw)?;
    header.spec.validate()?;
    if header.param_count != header.spec.param_count() {
        return Err(parse_err(format!(
            "param_count {} does not match the network ({})",
            header.param_count,
            header.spec.param_count()
        )));
    }
    if bytes.get(nl + 1) != Some(&b'\n') {
        return Err(parse_err("missing blank line after header"));
    }
    let payload = &bytes[nl + 2..];
    let d = header.param_count;
    let expected = d * 8 + mask_bytes(d);
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(parse_err(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let found = crc32fast::hash(payload);
    if found != header.crc32 {
        return Err(Error::ChecksumMismatch {
            expected: header.crc32,
            found,
        });
    }
    let params: Vec<f64> = payload[..d * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let packed = &payload[d * 8..];
    let bits: Vec<bool> = (0..d).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
    if d % 8 != 0 && packed[d / 8] >> (d % 8) != 0 {
        return Err(parse_err("nonzero mask padding bits"));
    }
    let mask = Mask::with_prunable(bits, header.spec.prunable())?;
    Ok(Checkpoint {
        params: DenseVector::new(params)?,
        mask,
        header,
    })
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode(cp)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::numerics::RngStream;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::new(vec![2, 5, 3]).unwrap();
        let w = init_params(&spec, RngStream::new(4, 4));
        let mut bits = vec![true; spec.param_count()];
        for (i, &p) in spec.prunable().iter().enumerate() {
            if p && i % 3 == 0 {
                bits[i] = false;
            }
        }
        let mask = Mask::with_prunable(bits, spec.prunable()).unwrap();
        let w = crate::model::apply_mask(&w, &mask).unwrap();
        let meta = CheckpointMeta {
            level: 3,
            step: 1234,
            seed: 4,
            train_loss: 0.125,
            test_accuracy: 0.9,
        };
        Checkpoint::new(&spec, Role::Variant("one_shot".into()), meta, w, mask).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cp = sample();
        let bytes = encode(&cp).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, cp);
        let first_line = bytes.split(|&b| b == b'\n').next().unwrap();
        let header: serde_json::Value = serde_json::from_slice(first_line).unwrap();
        assert_eq!(header["role"], "variant:one_shot");
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 8];
        assert!(matches!(decode(cut), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn bit_flip_is_detected() {
        let mut bytes = encode(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0x10;
        assert!(matches!(decode(&bytes), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn version_is_checked() {
        let bytes = encode(&sample()).unwrap();
        let text = String::from_utf8_lossy(&bytes[..20]).to_string();
        assert!(text.starts_with("{\"format_version\":1"));
        let mut bumped = b"{\"format_version\":2".to_vec();
        bumped.extend_from_slice(&bytes[19..]);
        assert!(matches!(
            decode(&bumped),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn roles_parse() {
        for r in [Role::Init, Role::RewindPoint, Role::Minimum, Role::Variant("fine_tune".into())] {
            assert_eq!(r.to_string().parse::<Role>().unwrap(), r);
        }
        assert!("variant:".parse::<Role>().is_err());
    }
}
