//! Flat `key=value` run configuration.
//!
//! Recognized keys: `image_size`, `patch`, `dim`, `depth`, `heads`,
//! `adapter_ratio`, `variant`, `epochs`, `batch`, `lr`, `seed`, `data_dir`,
//! `out_dir`. Unknown keys are rejected. Blank lines and `#` comments are
//! allowed. Every key has a default matching the reference training recipe
//! (ViT-B/16 AViT, 200 epochs, batch 16, lr 1e-4).

use crate::error::Result;
use crate::input_err;
use avit_core::model::{ModelCfg, Variant};
use avit_core::train::TrainConfig;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelCfg,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelCfg::vit_b16(Variant::Avit),
            epochs: 200,
            batch: 16,
            lr: 1e-4,
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// The training hyperparameters this configuration selects.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr0: self.lr,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

fn parse_num<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| input_err!("config: key `{key}` has invalid value `{value}`"))
}

/// Parses configuration text. Unknown keys and malformed values are input
/// errors; the assembled model configuration is validated before returning.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| input_err!("config line {}: expected key=value, got `{line}`", lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "image_size" => cfg.model.image_size = parse_num(key, value)?,
            "patch" => cfg.model.patch = parse_num(key, value)?,
            "dim" => cfg.model.dim = parse_num(key, value)?,
            "depth" => cfg.model.depth = parse_num(key, value)?,
            "heads" => cfg.model.heads = parse_num(key, value)?,
            "adapter_ratio" => cfg.model.adapter_ratio = parse_num(key, value)?,
            "variant" => cfg.model.variant = Variant::parse(value)?,
            "epochs" => cfg.epochs = parse_num(key, value)?,
            "batch" => cfg.batch = parse_num(key, value)?,
            "lr" => cfg.lr = parse_num(key, value)?,
            "seed" => cfg.seed = parse_num(key, value)?,
            "data_dir" => cfg.data_dir = PathBuf::from(value),
            "out_dir" => cfg.out_dir = PathBuf::from(value),
            _ => return Err(input_err!("config: unknown key `{key}`")),
        }
    }
    cfg.model.validate()?;
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(input_err!("config: epochs and batch must be positive"));
    }
    if !(cfg.lr > 0.0) {
        return Err(input_err!("config: lr must be positive"));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CliError;

    #[test]
    fn defaults_are_the_reference_recipe() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.model, ModelCfg::vit_b16(Variant::Avit));
        assert_eq!((cfg.epochs, cfg.batch), (200, 16));
        assert_eq!(cfg.lr, 1e-4);
        let tc = cfg.train_config();
        assert_eq!(tc.lr0, 1e-4);
        assert_eq!(tc.batch_size, 16);
    }

    #[test]
    fn parses_overrides_comments_and_whitespace() {
        let text = "# toy run\nimage_size = 32\npatch=4\ndim=32\ndepth=2\nheads=4\n\n\
                    variant = no_prompt\nepochs=3\nbatch=2\nlr=0.001\nseed=7\n\
                    data_dir=/tmp/ds\nout_dir=/tmp/out\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.model.image_size, 32);
        assert_eq!(cfg.model.variant, Variant::NoPrompt);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/ds"));
        assert_eq!(cfg.lr, 1e-3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            parse_config("momentum=0.9").unwrap_err(),
            CliError::Input(_)
        ));
        assert!(matches!(
            parse_config("epochs=two").unwrap_err(),
            CliError::Input(_)
        ));
        assert!(matches!(
            parse_config("no equals sign").unwrap_err(),
            CliError::Input(_)
        ));
        // Structurally valid but architecturally impossible configs are
        // caught by model validation.
        assert!(parse_config("image_size=30").is_err());
        assert!(parse_config("variant=lora").is_err());
    }
}
