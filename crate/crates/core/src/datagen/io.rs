//! Dataset files.
//!
//! `dataset.vxds`, integers little-endian:
//!
//! ```text
//! magic "VXDS", u32 version, u32 count, u32 channels, u32 height, u32 width,
//! u32 depth, u32 rows, u32 cols (volume dims), u32 family (0 head, 1 chair)
//! per example: f32 image [C, H, W], then u8 volume [D, H, W] holding 0/1
//! ```
//!
//! `metadata.csv` has a header line and one
//! `index,shape_id,azimuth_index,lighting_index` row per example; videos
//! write an azimuth index of -1.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{Dataset, Example, Family};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::voxel::VoxelGrid;

pub const DATASET_MAGIC: &[u8; 4] = b"VXDS";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_FILE: &str = "dataset.vxds";
pub const METADATA_FILE: &str = "metadata.csv";
const METADATA_HEADER: &str = "index,shape_id,azimuth_index,lighting_index";

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("dataset file is truncated".into())
    } else {
        Error::Io(e)
    }
}

impl Dataset {
    pub fn write_payload(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        let r = self.volume_res as u32;
        for v in [
            DATASET_VERSION,
            self.examples.len() as u32,
            self.channels as u32,
            self.image_res as u32,
            self.image_res as u32,
            r,
            r,
            r,
            self.family.code(),
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::new();
        for ex in &self.examples {
            buf.clear();
            for v in ex.image.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend(ex.volume.data().iter().map(|&v| u8::from(v >= 0.5)));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn write_metadata(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{METADATA_HEADER}")?;
        for (i, ex) in self.examples.iter().enumerate() {
            let az = ex.azimuth_index.map_or(-1, |a| a as i64);
            writeln!(w, "{i},{},{az},{}", ex.shape_id, ex.lighting_index)?;
        }
        Ok(())
    }

    /// Writes `dataset.vxds` and `metadata.csv` into `dir`, creating it.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(DATASET_FILE))?);
        self.write_payload(&mut w)?;
        w.flush()?;
        let mut m = BufWriter::new(File::create(dir.join(METADATA_FILE))?);
        self.write_metadata(&mut m)?;
        m.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let mut payload = BufReader::new(File::open(dir.join(DATASET_FILE))?);
        let meta = BufReader::new(File::open(dir.join(METADATA_FILE))?);
        Self::read_from(&mut payload, meta)
    }

    pub fn read_from(payload: &mut impl Read, metadata: impl BufRead) -> Result<Dataset> {
        let mut magic = [0u8; 4];
        payload.read_exact(&mut magic).map_err(truncated)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format(format!("not a dataset file (magic {magic:?})")));
        }
        let version = read_u32(payload)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let mut h = [0usize; 8];
        for v in &mut h {
            *v = read_u32(payload)? as usize;
        }
        let [count, channels, ih, iw, vd, vh, vw, family] = h;
        let family = Family::from_code(family as u32)?;
        if ih != iw || vd != vh || vh != vw {
            return Err(Error::Format("only square images and cubic volumes are supported".into()));
        }
        if channels == 0 || ih == 0 || vd == 0 {
            return Err(Error::Format("dataset header has zero dimensions".into()));
        }
        let meta = parse_metadata(metadata)?;
        if meta.len() != count {
            return Err(Error::Format(format!(
                "metadata lists {} examples, dataset holds {count}",
                meta.len()
            )));
        }
        let img_len = channels * ih * iw;
        let vol_len = vd * vh * vw;
        let mut volumes: HashMap<usize, Arc<VoxelGrid>> = HashMap::new();
        let mut examples = Vec::with_capacity(count);
        let mut img_buf = vec![0u8; img_len * 4];
        let mut vol_buf = vec![0u8; vol_len];
        for (shape_id, azimuth_index, lighting_index) in meta {
            payload.read_exact(&mut img_buf).map_err(truncated)?;
            payload.read_exact(&mut vol_buf).map_err(truncated)?;
            let img: Vec<f32> = img_buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if vol_buf.iter().any(|&b| b > 1) {
                return Err(Error::Format("volume bytes must be 0 or 1".into()));
            }
            let vol = VoxelGrid::new([vd; 3], vol_buf.iter().map(|&b| b as f32).collect())?;
            // examples of one shape share a single volume allocation
            let volume = match volumes.get(&shape_id) {
                Some(v) if **v == vol => v.clone(),
                _ => {
                    let v = Arc::new(vol);
                    volumes.insert(shape_id, v.clone());
                    v
                }
            };
            examples.push(Example {
                image: Tensor::new(&[channels, ih, iw], img)?,
                volume,
                shape_id,
                azimuth_index,
                lighting_index,
            });
        }
        let mut extra = [0u8; 1];
        if payload.read(&mut extra)? != 0 {
            return Err(Error::Format("dataset file has trailing bytes".into()));
        }
        Ok(Dataset {
            family,
            channels,
            image_res: ih,
            volume_res: vd,
            examples,
        })
    }
}

type MetaRow = (usize, Option<usize>, usize);

fn parse_metadata(r: impl BufRead) -> Result<Vec<MetaRow>> {
    let mut rows = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != METADATA_HEADER {
                return Err(Error::Format(format!("unexpected metadata header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("metadata line {}: {line:?}", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let index: usize = f[0].parse().map_err(|_| bad())?;
        if index != rows.len() {
            return Err(bad());
        }
        let shape_id: usize = f[1].parse().map_err(|_| bad())?;
        let az: i64 = f[2].parse().map_err(|_| bad())?;
        let light: usize = f[3].parse().map_err(|_| bad())?;
        let az = match az {
            -1 => None,
            a if a >= 0 => Some(a as usize),
            _ => return Err(bad()),
        };
        rows.push((shape_id, az, light));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::super::{make_dataset, DataConfig};
    use super::*;

    #[test]
    fn roundtrip_is_bit_identical() {
        for video in [false, true] {
            let d = make_dataset(&DataConfig::new(Family::Chair, 2, 16, 4).with_video(video)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            d.save(dir.path()).unwrap();
            let back = Dataset::load(dir.path()).unwrap();
            assert_eq!(back, d);
            let dir2 = tempfile::tempdir().unwrap();
            back.save(dir2.path()).unwrap();
            for f in [DATASET_FILE, METADATA_FILE] {
                assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let d = make_dataset(&DataConfig::new(Family::Head, 1, 8, 4)).unwrap();
        let mut bytes = Vec::new();
        d.write_payload(&mut bytes).unwrap();
        let mut meta = Vec::new();
        d.write_metadata(&mut meta).unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(Dataset::read_from(&mut bad.as_slice(), meta.as_slice()).is_err());
        let cut = &bytes[..bytes.len() - 3];
        assert!(Dataset::read_from(&mut &cut[..], meta.as_slice()).is_err());
        let short_meta = b"index,shape_id,azimuth_index,lighting_index\n0,0,0,0\n";
        assert!(Dataset::read_from(&mut bytes.as_slice(), &short_meta[..]).is_err());
        assert!(Dataset::read_from(&mut bytes.as_slice(), meta.as_slice()).is_ok());
    }
}
