//! Run configuration: dataset-derived network preset, then a `key=value`
//! file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use voxelrec::datagen::Dataset;
use voxelrec::model::{parse_kv, InputKind, NetworkConfig};
use voxelrec::train::TrainConfig;

pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const NETWORK_FILE: &str = "network.cfg";
pub const WEIGHTS_FILE: &str = "weights.vxrc";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Resolves every setting before training starts.
    pub fn resolve(data_path: &Path, data: &Dataset, file: Option<&str>, flags: &[(String, String)]) -> Result<Self> {
        let input = if data.is_video() { InputKind::Video } else { InputKind::Image };
        let network = NetworkConfig::preset(data.family, data.image_res, data.volume_res)
            .with_context(|| format!("no network preset fits {}", data_path.display()))?
            .with_input(input);
        let mut cfg = RunConfig {
            data: data_path.to_path_buf(),
            network,
            train: TrainConfig::default(),
        };
        if let Some(text) = file {
            for (k, v) in parse_kv(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        cfg.network.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            // the dataset is fixed by --data
            "data" => {}
            _ if self.train.set(key, value)? => {}
            _ => self.network.set(key, value)?,
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!("data={}\n{}{}", self.data.display(), self.network.to_kv(), self.train.to_kv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use voxelrec::datagen::{make_dataset, DataConfig, Family};

    #[test]
    fn flags_override_file_and_text_round_trips() {
        let d = make_dataset(&DataConfig::new(Family::Head, 1, 32, 0)).unwrap();
        let flags = vec![("lr".to_string(), "0.01".to_string())];
        let cfg = RunConfig::resolve(Path::new("d"), &d, Some("lr=0.5\nbatchnorm=off\n"), &flags).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert!(!cfg.network.use_batchnorm);
        let again = RunConfig::resolve(Path::new("d"), &d, Some(&cfg.to_text()), &[]).unwrap();
        assert_eq!(again.to_text(), cfg.to_text());
        assert!(RunConfig::resolve(Path::new("d"), &d, Some("nonsense=1"), &[]).is_err());
    }
}
