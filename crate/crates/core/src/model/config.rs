use std::fmt::Write as _;

use crate::datagen::Family;
use crate::error::{Error, Result};

/// Encoder input: a single RGB image or five RGB frames stacked on channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Image,
    Video,
}

impl InputKind {
    pub fn channels(self) -> usize {
        match self {
            InputKind::Image => 3,
            InputKind::Video => 15,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Image => "image",
            InputKind::Video => "video",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(InputKind::Image),
            "video" => Ok(InputKind::Video),
            other => Err(Error::Config(format!("unknown input kind {other:?}"))),
        }
    }
}

/// Architecture of the encoder and both decoders.
///
/// Spatial chains are validated by [`NetworkConfig::validate`]:
/// the encoder halves the image four times (two transformers, two pools),
/// the volume decoder doubles its seed three times (plus an optional final
/// up-sampling, and a valid final convolution that trims one voxel per side
/// when `volume_final_pad == 0`), and the image decoder doubles its seed four
/// times.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub family: Family,
    pub input: InputKind,
    pub image_res: usize,
    pub volume_res: usize,
    pub shape_len: usize,
    pub transform_len: usize,
    pub use_batchnorm: bool,
    pub use_fc3000: bool,
    pub fc_width: usize,
    /// Output channels of the three encoder convolutions.
    pub encoder_channels: [usize; 3],
    /// Channels of every localisation convolution.
    pub loc_channels: usize,
    /// Seed channels followed by the three up-sampling block widths.
    pub volume_channels: [usize; 4],
    pub volume_seed: usize,
    pub volume_final_pad: usize,
    pub volume_final_upsample: bool,
    /// Seed channels followed by the four up-sampling block widths.
    pub image_channels: [usize; 5],
    pub image_seed: usize,
    pub rrelu_lower: f64,
    pub rrelu_upper: f64,
    pub seed: u64,
}

impl NetworkConfig {
    /// Full-resolution face network: 80x80 images, 80^3 volumes, 185 + 15 code.
    pub fn faces_80() -> Self {
        Self {
            family: Family::Head,
            input: InputKind::Image,
            image_res: 80,
            volume_res: 80,
            shape_len: 185,
            transform_len: 15,
            use_batchnorm: true,
            use_fc3000: false,
            fc_width: 3000,
            encoder_channels: [32, 64, 128],
            loc_channels: 16,
            volume_channels: [128, 64, 32, 16],
            volume_seed: 5,
            volume_final_pad: 1,
            volume_final_upsample: true,
            image_channels: [128, 64, 32, 16, 8],
            image_seed: 5,
            rrelu_lower: 1.0 / 8.0,
            rrelu_upper: 1.0 / 3.0,
            seed: 0,
        }
    }

    /// Desk-scale face network: 32x32 images and 32^3 volumes.
    pub fn faces_32() -> Self {
        Self {
            image_res: 32,
            volume_res: 32,
            volume_channels: [64, 32, 16, 8],
            volume_seed: 4,
            volume_final_pad: 1,
            volume_final_upsample: false,
            image_channels: [64, 32, 16, 8, 8],
            image_seed: 2,
            ..Self::faces_80()
        }
    }

    /// Chair network: 80x80 images, 30^3 volumes, 599 + 1 code.
    pub fn chairs_80() -> Self {
        Self {
            family: Family::Chair,
            volume_res: 30,
            shape_len: 599,
            transform_len: 1,
            volume_channels: [64, 32, 16, 8],
            volume_seed: 4,
            volume_final_pad: 0,
            volume_final_upsample: false,
            ..Self::faces_80()
        }
    }

    /// Desk-scale chair network: 32x32 images, 30^3 volumes.
    pub fn chairs_32() -> Self {
        Self {
            image_res: 32,
            image_channels: [64, 32, 16, 8, 8],
            image_seed: 2,
            ..Self::chairs_80()
        }
    }

    /// Preset matching a family and resolutions, as used by the CLI.
    pub fn preset(family: Family, image_res: usize, volume_res: usize) -> Result<Self> {
        let cfg = match (family, image_res, volume_res) {
            (Family::Head, 80, 80) => Self::faces_80(),
            (Family::Head, 32, 32) => Self::faces_32(),
            (Family::Chair, 80, 30) => Self::chairs_80(),
            (Family::Chair, 32, 30) => Self::chairs_32(),
            _ => {
                return Err(Error::Config(format!(
                    "no network preset for {} with {image_res}px images and {volume_res}^3 volumes",
                    family.as_str()
                )))
            }
        };
        Ok(cfg)
    }

    pub fn with_input(mut self, input: InputKind) -> Self {
        self.input = input;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    pub fn with_fc3000(mut self, on: bool) -> Self {
        self.use_fc3000 = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn code_len(&self) -> usize {
        self.shape_len + self.transform_len
    }

    pub fn input_channels(&self) -> usize {
        self.input.channels()
    }

    /// Spatial size of the encoder's last feature map.
    pub fn encoder_out_size(&self) -> usize {
        self.image_res / 16
    }

    /// Cube side produced by the three volume up-sampling blocks.
    pub fn volume_block_res(&self) -> usize {
        self.volume_seed * 8
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.shape_len == 0 || self.transform_len == 0 {
            return bad("code split needs nonempty shape and transformation parts".into());
        }
        if self.image_res == 0 || self.image_res % 16 != 0 {
            return bad(format!(
                "image resolution {} must be a positive multiple of 16",
                self.image_res
            ));
        }
        if self.encoder_channels.contains(&0)
            || self.volume_channels.contains(&0)
            || self.image_channels.contains(&0)
            || self.loc_channels == 0
        {
            return bad("channel widths must be positive".into());
        }
        if self.image_seed * 16 != self.image_res {
            return bad(format!(
                "image decoder seed {} does not reach {} after four doublings",
                self.image_seed, self.image_res
            ));
        }
        if self.volume_final_pad > 1 {
            return bad("final volume convolution padding must be 0 or 1".into());
        }
        let mut v = self.volume_block_res();
        if self.volume_final_pad == 0 {
            if v < 3 {
                return bad("volume too small for a valid final convolution".into());
            }
            v -= 2;
        }
        if self.volume_final_upsample {
            v *= 2;
        }
        if v != self.volume_res {
            return bad(format!(
                "volume decoder chain yields {v}^3, expected {}^3",
                self.volume_res
            ));
        }
        if !(0.0 < self.rrelu_lower && self.rrelu_lower <= self.rrelu_upper && self.rrelu_upper < 1.0) {
            return bad("rrelu bounds must satisfy 0 < lower <= upper < 1".into());
        }
        // the second transformer's localisation net needs (res/2) % 4 == 0
        if (self.image_res / 2) % 4 != 0 {
            return bad("image resolution incompatible with the second localisation net".into());
        }
        Ok(())
    }

    /// Canonical `key=value` text; hashed into weight files.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "family={}", self.family.as_str());
        let _ = writeln!(s, "input={}", self.input.as_str());
        let _ = writeln!(s, "image_res={}", self.image_res);
        let _ = writeln!(s, "volume_res={}", self.volume_res);
        let _ = writeln!(s, "shape_len={}", self.shape_len);
        let _ = writeln!(s, "transform_len={}", self.transform_len);
        let _ = writeln!(s, "batchnorm={}", on_off(self.use_batchnorm));
        let _ = writeln!(s, "fc3000={}", on_off(self.use_fc3000));
        let _ = writeln!(s, "fc_width={}", self.fc_width);
        let _ = writeln!(s, "encoder_channels={}", join(&self.encoder_channels));
        let _ = writeln!(s, "loc_channels={}", self.loc_channels);
        let _ = writeln!(s, "volume_channels={}", join(&self.volume_channels));
        let _ = writeln!(s, "volume_seed={}", self.volume_seed);
        let _ = writeln!(s, "volume_final_pad={}", self.volume_final_pad);
        let _ = writeln!(s, "volume_final_upsample={}", on_off(self.volume_final_upsample));
        let _ = writeln!(s, "image_channels={}", join(&self.image_channels));
        let _ = writeln!(s, "image_seed={}", self.image_seed);
        let _ = writeln!(s, "rrelu_lower={}", self.rrelu_lower);
        let _ = writeln!(s, "rrelu_upper={}", self.rrelu_upper);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Parses the output of [`NetworkConfig::to_kv`]; unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::faces_32();
        for (key, value) in parse_kv(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
        };
        let real = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
        };
        let list = |v: &str| -> Result<Vec<usize>> { v.split(',').map(|x| num(x.trim())).collect() };
        let fixed = |v: Vec<usize>, n: usize| -> Result<Vec<usize>> {
            if v.len() != n {
                return Err(Error::Config(format!("{key}: expected {n} values, got {}", v.len())));
            }
            Ok(v)
        };
        match key {
            "family" => self.family = Family::parse(value)?,
            "input" => self.input = InputKind::parse(value)?,
            "image_res" => self.image_res = num(value)?,
            "volume_res" => self.volume_res = num(value)?,
            "shape_len" => self.shape_len = num(value)?,
            "transform_len" => self.transform_len = num(value)?,
            "batchnorm" => self.use_batchnorm = parse_on_off(key, value)?,
            "fc3000" => self.use_fc3000 = parse_on_off(key, value)?,
            "fc_width" => self.fc_width = num(value)?,
            "encoder_channels" => {
                let v = fixed(list(value)?, 3)?;
                self.encoder_channels = [v[0], v[1], v[2]];
            }
            "loc_channels" => self.loc_channels = num(value)?,
            "volume_channels" => {
                let v = fixed(list(value)?, 4)?;
                self.volume_channels = [v[0], v[1], v[2], v[3]];
            }
            "volume_seed" => self.volume_seed = num(value)?,
            "volume_final_pad" => self.volume_final_pad = num(value)?,
            "volume_final_upsample" => self.volume_final_upsample = parse_on_off(key, value)?,
            "image_channels" => {
                let v = fixed(list(value)?, 5)?;
                self.image_channels = [v[0], v[1], v[2], v[3], v[4]];
            }
            "image_seed" => self.image_seed = num(value)?,
            "rrelu_lower" => self.rrelu_lower = real(value)?,
            "rrelu_upper" => self.rrelu_upper = real(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: expected an integer, got {value:?}")))?
            }
            other => return Err(Error::Config(format!("unknown network key {other:?}"))),
        }
        Ok(())
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

pub(crate) fn parse_on_off(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected on/off, got {other:?}"))),
    }
}

/// Flat `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            NetworkConfig::faces_80(),
            NetworkConfig::faces_32(),
            NetworkConfig::chairs_80(),
            NetworkConfig::chairs_32(),
        ] {
            cfg.validate().unwrap();
        }
        assert_eq!(NetworkConfig::faces_80().code_len(), 200);
        assert_eq!(NetworkConfig::chairs_80().code_len(), 600);
    }

    #[test]
    fn broken_chain_is_reported() {
        let mut cfg = NetworkConfig::faces_32();
        cfg.volume_seed = 3;
        assert!(cfg.validate().unwrap_err().to_string().contains("volume decoder chain"));
        let mut cfg = NetworkConfig::faces_32();
        cfg.image_res = 40;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_roundtrip() {
        let cfg = NetworkConfig::chairs_32().with_fc3000(true).with_seed(42);
        assert_eq!(NetworkConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(NetworkConfig::from_kv("bogus=1").is_err());
        assert!(parse_kv("no equals sign").is_err());
    }
}
