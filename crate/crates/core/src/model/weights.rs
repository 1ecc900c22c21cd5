//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  "VXRC"
//! u32    format version
//! [u8;32] SHA-256 of the architecture description
//! u32    record count
//! record*: u32 name length, name bytes (UTF-8), u32 rank, u32 dims[rank],
//!          f32 payload in row-major order
//! ```
//!
//! Trainable parameters come first in build order, followed by two records
//! per batch-norm layer holding its running mean and variance.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Model, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"VXRC";
pub const WEIGHTS_VERSION: u32 = 1;

/// Digest over every architecture-relevant config field (the seed is excluded).
pub fn config_digest(cfg: &NetworkConfig) -> [u8; 32] {
    let arch: String = cfg
        .to_kv()
        .lines()
        .filter(|l| !l.starts_with("seed="))
        .map(|l| format!("{l}\n"))
        .collect();
    Sha256::digest(arch.as_bytes()).into()
}

struct Record {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Model {
    /// Batch-norm layer names in state order, derived from the gamma parameters.
    fn bn_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter_map(|(_, p)| p.name.strip_suffix(".gamma").map(str::to_string))
            .collect()
    }

    fn records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .params
            .iter()
            .map(|(_, p)| Record {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        for (name, st) in self.bn_names().into_iter().zip(&self.bn_states) {
            let c = st.running_mean.len();
            out.push(Record {
                name: format!("{name}.running_mean"),
                shape: vec![c],
                data: st.running_mean.clone(),
            });
            out.push(Record {
                name: format!("{name}.running_var"),
                shape: vec![c],
                data: st.running_var.clone(),
            });
        }
        out
    }

    pub fn write_weights(&self, w: &mut impl Write) -> Result<()> {
        let records = self.records();
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&config_digest(&self.config))?;
        w.write_all(&(records.len() as u32).to_le_bytes())?;
        for r in &records {
            w.write_all(&(r.name.len() as u32).to_le_bytes())?;
            w.write_all(r.name.as_bytes())?;
            w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
            for &d in &r.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(r.data.len() * 4);
            for v in &r.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_weights(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Builds `config` and overwrites its parameters from a weight stream.
    ///
    /// Records must match the built network one for one; the first record
    /// whose name or shape disagrees is reported.
    pub fn read_weights(config: &NetworkConfig, r: &mut impl Read) -> Result<Model> {
        let mut model = Model::build(config)?;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::Format(format!("not a weight file (magic {magic:?})")));
        }
        let version = read_u32(r)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "unsupported weight format version {version} (expected {WEIGHTS_VERSION})"
            )));
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest).map_err(truncated)?;
        let expected = model.records();
        let count = read_u32(r)? as usize;
        for (i, want) in expected.iter().enumerate() {
            if i >= count {
                return Err(Error::Format(format!("weight file ends before layer {}", want.name)));
            }
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return Err(Error::Format(format!("record {i}: implausible name length {name_len}")));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format(format!("record {i}: name is not UTF-8")))?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("record {name}: implausible rank {rank}")));
            }
            let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != want.name || shape != want.shape {
                return Err(Error::Config(format!(
                    "layer mismatch at {}: file has {name} {shape:?}, config expects {} {:?}",
                    want.name, want.name, want.shape
                )));
            }
            let mut buf = vec![0u8; want.data.len() * 4];
            r.read_exact(&mut buf).map_err(truncated)?;
            let data: Vec<f32> = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            model.assign(i, &shape, data)?;
        }
        if count != expected.len() {
            return Err(Error::Config(format!(
                "weight file has {count} records, config expects {}",
                expected.len()
            )));
        }
        if digest != config_digest(config) {
            return Err(Error::Config(
                "weight file was written for a different network configuration".into(),
            ));
        }
        Ok(model)
    }

    pub fn load_weights(config: &NetworkConfig, path: impl AsRef<Path>) -> Result<Model> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_weights(config, &mut r)
    }

    fn assign(&mut self, record: usize, shape: &[usize], data: Vec<f32>) -> Result<()> {
        let n_params = self.params.len();
        if record < n_params {
            let id = self.params.iter().nth(record).map(|(id, _)| id).expect("in range");
            self.params.get_mut(id).value = Tensor::new(shape, data)?;
        } else {
            let k = record - n_params;
            let st = &mut self.bn_states[k / 2];
            if k % 2 == 0 {
                st.running_mean = data;
            } else {
                st.running_var = data;
            }
        }
        Ok(())
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("weight file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            encoder_channels: [4, 4, 8],
            loc_channels: 4,
            volume_channels: [4, 4, 4, 2],
            image_channels: [4, 4, 4, 2, 2],
            ..NetworkConfig::faces_32()
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut m = Model::build(&tiny().with_seed(3)).unwrap();
        m.bn_states_mut()[0].running_mean[1] = 0.375;
        let mut bytes = Vec::new();
        m.write_weights(&mut bytes).unwrap();
        let back = Model::read_weights(&tiny(), &mut bytes.as_slice()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.bn_states(), m.bn_states());
        let mut again = Vec::new();
        back.write_weights(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn wrong_config_names_first_mismatched_layer() {
        let m = Model::build(&tiny()).unwrap();
        let mut bytes = Vec::new();
        m.write_weights(&mut bytes).unwrap();
        let mut other = tiny();
        other.encoder_channels[1] = 6;
        let err = Model::read_weights(&other, &mut bytes.as_slice()).unwrap_err().to_string();
        assert!(err.contains("enc.conv2.weight"), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let m = Model::build(&tiny()).unwrap();
        let mut bytes = Vec::new();
        m.write_weights(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::read_weights(&tiny(), &mut bad.as_slice()).unwrap_err().to_string().contains("magic"));
        let cut = &bytes[..bytes.len() / 2];
        assert!(Model::read_weights(&tiny(), &mut &cut[..]).is_err());
    }

    #[test]
    fn digest_ignores_seed_only() {
        assert_eq!(config_digest(&tiny()), config_digest(&tiny().with_seed(9)));
        assert_ne!(config_digest(&tiny()), config_digest(&tiny().with_batchnorm(false)));
    }
}
