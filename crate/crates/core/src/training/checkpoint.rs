//! Binary checkpoint, little-endian throughout:
//!
//! ```text
//! "DRUN" | u8 version
//! u32 len | config text (UTF-8)
//! u32 count | count × tensor            (parameters and BN buffers)
//! u64 step | u32 count | count × tensor (Adam moments, "m/<name>", "v/<name>")
//! u32 CRC32 of every preceding byte
//!
//! tensor = u32 len | name | u8 rank | rank × u32 dim | f32 × Π dims
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::atomic::write_atomic;
use crate::error::{Error, FormatError, Result};
use crate::kv::KvFile;
use crate::network::{Network, NetworkConfig};
use crate::params::Parameters;
use crate::tensor::{Shape, Tensor};

use super::adam::{AdamConfig, OptimizerState};

pub const MAGIC: [u8; 4] = *b"DRUN";
pub const VERSION: u8 = 1;

/// Raw checkpoint contents, before any check against the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: BTreeMap<String, Tensor<f32>>,
    pub step: u64,
    pub moments: BTreeMap<String, Tensor<f32>>,
}

/// A checkpoint validated against the network its config describes.
#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub config_text: String,
    pub network: Network,
    pub params: Parameters<f32>,
    pub optimizer: OptimizerState<f32>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(4);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(config_text: &str, params: &Parameters<f32>, opt: &OptimizerState<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    let all: Vec<_> = params.iter_all().collect();
    out.extend_from_slice(&(all.len() as u32).to_le_bytes());
    for (name, t) in all {
        put_tensor(&mut out, name, t);
    }
    out.extend_from_slice(&opt.step.to_le_bytes());
    out.extend_from_slice(&((opt.m.len() + opt.v.len()) as u32).to_le_bytes());
    for (name, t) in &opt.m {
        put_tensor(&mut out, &format!("m/{name}"), t);
    }
    for (name, t) in &opt.v {
        put_tensor(&mut out, &format!("v/{name}"), t);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(FormatError::Truncated { offset: self.pos, what }),
        }
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &'static str) -> Result<String, FormatError> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| FormatError::Malformed(format!("{what} at offset {at} is not UTF-8")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>), FormatError> {
        let name = self.string("tensor name")?;
        let rank = self.u8("tensor rank")?;
        if rank != 4 {
            return Err(FormatError::Malformed(format!(
                "tensor {name} has rank {rank}, expected 4"
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = self.u32("tensor dims")? as usize;
        }
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| FormatError::Malformed(format!("tensor {name} dims {dims:?} overflow")))?;
        let raw = self.take(bytes, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(Shape(dims), data).expect("length follows dims");
        Ok((name, t))
    }

    fn tensors(&mut self, out: &mut BTreeMap<String, Tensor<f32>>) -> Result<(), FormatError> {
        let count = self.u32("tensor count")?;
        for _ in 0..count {
            let (name, t) = self.tensor()?;
            if out.insert(name.clone(), t).is_some() {
                return Err(FormatError::Malformed(format!("tensor {name} appears twice")));
            }
        }
        Ok(())
    }
}

/// Parses a checkpoint image. Any read past the end is reported as
/// truncation; the checksum is verified last.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let config_text = r.string("config text")?;
    let mut tensors = BTreeMap::new();
    r.tensors(&mut tensors)?;
    let step = r.u64("optimizer step")?;
    let mut moments = BTreeMap::new();
    r.tensors(&mut moments)?;
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(FormatError::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(Checkpoint {
        config_text,
        tensors,
        step,
        moments,
    })
}

fn adam_from_kv(kv: &KvFile) -> Result<AdamConfig> {
    let mut c = AdamConfig::default();
    for e in kv.entries() {
        c.apply(e)?;
    }
    c.validate()?;
    Ok(c)
}

/// Moves each expected tensor out of `found`, checking shapes against
/// `template`.
fn adopt(
    template: &BTreeMap<String, Tensor<f32>>,
    found: &mut BTreeMap<String, Tensor<f32>>,
    prefix: &str,
) -> Result<BTreeMap<String, Tensor<f32>>, FormatError> {
    template
        .iter()
        .map(|(name, expected)| {
            let key = format!("{prefix}{name}");
            let t = found
                .remove(&key)
                .ok_or_else(|| FormatError::Malformed(format!("tensor {key} is missing")))?;
            if t.shape() != expected.shape() {
                return Err(FormatError::ShapeMismatch {
                    name: key,
                    expected: Some(expected.shape().dims()),
                    found: t.shape().dims(),
                });
            }
            Ok((name.clone(), t))
        })
        .collect()
}

fn reject_leftovers(found: &BTreeMap<String, Tensor<f32>>) -> Result<(), FormatError> {
    match found.iter().next() {
        Some((name, t)) => Err(FormatError::ShapeMismatch {
            name: name.clone(),
            expected: None,
            found: t.shape().dims(),
        }),
        None => Ok(()),
    }
}

impl Checkpoint {
    /// Rebuilds the network from the embedded config and checks that every
    /// stored tensor exists in it with the same shape.
    pub fn into_loaded(self) -> Result<LoadedCheckpoint> {
        let kv =
            KvFile::parse(&self.config_text).map_err(|e| FormatError::Malformed(format!("embedded config: {e}")))?;
        let cfg = NetworkConfig::from_kv(&kv).map_err(|e| FormatError::Malformed(format!("embedded config: {e}")))?;
        let adam = adam_from_kv(&kv).map_err(|e| FormatError::Malformed(format!("embedded config: {e}")))?;
        let network = Network::new(cfg)?;
        let template: Parameters<f32> = network.init_parameters(0)?;

        let mut tensors = self.tensors;
        let learnable = adopt(template.learnable(), &mut tensors, "")?;
        let buffers = adopt(template.buffers(), &mut tensors, "")?;
        reject_leftovers(&tensors)?;
        let mut params = Parameters::new();
        for (k, t) in learnable {
            params.insert_learnable(k, t)?;
        }
        for (k, t) in buffers {
            params.insert_buffer(k, t)?;
        }

        let mut moments = self.moments;
        let m = adopt(template.learnable(), &mut moments, "m/")?;
        let v = adopt(template.learnable(), &mut moments, "v/")?;
        reject_leftovers(&moments)?;
        Ok(LoadedCheckpoint {
            config_text: self.config_text,
            network,
            params,
            optimizer: OptimizerState {
                config: adam,
                step: self.step,
                m,
                v,
            },
        })
    }
}

pub fn save_checkpoint(
    path: &Path,
    config_text: &str,
    params: &Parameters<f32>,
    opt: &OptimizerState<f32>,
) -> Result<()> {
    write_atomic(path, &encode_checkpoint(config_text, params, opt))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)?.into_loaded()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockKind;

    const CFG: &str = "block = dru\nbase_channels = 4\nheight = 16\nwidth = 16\nnum_classes = 3\nlr = 0.002\n";

    fn fixture() -> (Parameters<f32>, OptimizerState<f32>) {
        let cfg = NetworkConfig::from_kv(&KvFile::parse(CFG).unwrap()).unwrap();
        assert_eq!(cfg.block, BlockKind::Dru);
        let net = Network::new(cfg).unwrap();
        let params = net.init_parameters(5).unwrap();
        let mut opt = OptimizerState::new(
            AdamConfig {
                lr: 0.002,
                ..AdamConfig::default()
            },
            &params,
        );
        opt.step = 7;
        for (i, t) in opt.m.values_mut().chain(opt.v.values_mut()).enumerate() {
            t.data_mut().iter_mut().for_each(|x| *x = i as f32 * 0.25);
        }
        (params, opt)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (params, opt) = fixture();
        let bytes = encode_checkpoint(CFG, &params, &opt);
        let loaded = decode_checkpoint(&bytes).unwrap().into_loaded().unwrap();
        assert!(loaded.params.bitwise_eq(&params));
        assert!(loaded.optimizer.bitwise_eq(&opt));
        assert_eq!(loaded.config_text, CFG);
        assert_eq!(encode_checkpoint(CFG, &loaded.params, &loaded.optimizer), bytes);
    }

    #[test]
    fn bad_magic_and_version() {
        let (params, opt) = fixture();
        let mut bytes = encode_checkpoint(CFG, &params, &opt);
        bytes[4] = 2;
        assert_eq!(
            decode_checkpoint(&bytes).unwrap_err(),
            FormatError::UnsupportedVersion(2)
        );
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(FormatError::BadMagic(_))));
    }

    #[test]
    fn every_truncation_is_detected() {
        let (params, opt) = fixture();
        let bytes = encode_checkpoint(CFG, &params, &opt);
        let step = (bytes.len() / 97).max(1);
        for cut in (0..bytes.len()).step_by(step).chain([bytes.len() - 1]) {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(FormatError::Truncated { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn corruption_fails_checksum() {
        let (params, opt) = fixture();
        let mut bytes = encode_checkpoint(CFG, &params, &opt);
        let n = bytes.len();
        bytes[n - 20] ^= 0x40;
        assert!(matches!(decode_checkpoint(&bytes), Err(FormatError::Checksum { .. })));
    }

    #[test]
    fn config_disagreeing_with_tensors_is_a_shape_error() {
        let (params, opt) = fixture();
        let other = CFG.replace("base_channels = 4", "base_channels = 8");
        let bytes = encode_checkpoint(&other, &params, &opt);
        let err = decode_checkpoint(&bytes).unwrap().into_loaded().unwrap_err();
        assert!(matches!(err, Error::Format(FormatError::ShapeMismatch { .. })), "{err}");
    }
}
