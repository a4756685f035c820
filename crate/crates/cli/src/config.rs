//! Flat `key = value` run configuration shared by every subcommand.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use lesion_mil::inference::{DEFAULT_ALPHA, DEFAULT_THRESHOLD};
use lesion_mil::{Error, Fusion, GenConfig, LoadOptions, MaskMode, MilConfig, Provider, SegmenterConfig, TilerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenConfig,
    pub segmenter: SegmenterConfig,
    pub tile_size: usize,
    /// Window step; half the tile when unset.
    pub step: Option<usize>,
    pub inclusion_fraction: f64,
    pub mil: MilConfig,
    pub use_mask: bool,
    pub threshold: f64,
    pub alpha: f64,
    /// Sliding-window step for heatmaps; the training step when unset.
    pub stride: Option<usize>,
    pub fusion: Fusion,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gen: GenConfig::default(),
            segmenter: SegmenterConfig::default(),
            tile_size: 50,
            step: None,
            inclusion_fraction: 0.5,
            mil: MilConfig::default(),
            use_mask: true,
            threshold: DEFAULT_THRESHOLD,
            alpha: DEFAULT_ALPHA,
            stride: None,
            fusion: Fusion::Mean,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| invalid(format!("bad value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, Error> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(format!("bad value for {key}: {value:?} (expected true or false)"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, Error> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, Error> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| invalid(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), Error> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "n_pos" => self.gen.n_pos = parse(key, v)?,
            "n_neg" => self.gen.n_neg = parse(key, v)?,
            "image_size" => self.gen.image_size = parse(key, v)?,
            "blob_radius_min" => self.gen.blob_radius.0 = parse(key, v)?,
            "blob_radius_max" => self.gen.blob_radius.1 = parse(key, v)?,
            "spikes_min" => self.gen.spikes.0 = parse(key, v)?,
            "spikes_max" => self.gen.spikes.1 = parse(key, v)?,
            "motif_min" => self.gen.motif_size.0 = parse(key, v)?,
            "motif_max" => self.gen.motif_size.1 = parse(key, v)?,
            "folds_min" => self.gen.folds.0 = parse(key, v)?,
            "folds_max" => self.gen.folds.1 = parse(key, v)?,
            "noise_std" => self.gen.noise_std = parse(key, v)?,
            "box_size" => self.gen.box_size = parse(key, v)?,
            "debris_probability" => self.gen.debris_probability = parse(key, v)?,
            "render_spikes" => self.gen.render_spikes = parse_bool(key, v)?,
            "segmenter" => {
                self.segmenter.provider = match v {
                    "oracle" => Provider::Oracle,
                    "baseline" => Provider::Baseline,
                    _ => return Err(invalid(format!("bad value for segmenter: {v:?} (expected oracle or baseline)"))),
                }
            }
            "baseline_threshold" => self.segmenter.baseline_threshold = parse(key, v)?,
            "morphology_radius" => self.segmenter.morphology_radius = parse(key, v)?,
            "tile_size" => self.tile_size = parse(key, v)?,
            "step" => self.step = Some(parse(key, v)?),
            "inclusion_fraction" => self.inclusion_fraction = parse(key, v)?,
            "pos_per_bag" => self.mil.selection.pos_per_bag = parse(key, v)?,
            "neg_per_bag" => self.mil.selection.neg_per_bag = parse(key, v)?,
            "epochs" => self.mil.train.epochs = parse(key, v)?,
            "batch_size" => self.mil.train.batch_size = parse(key, v)?,
            "learning_rate" => self.mil.train.learning_rate = parse(key, v)?,
            "lr_decay" => self.mil.train.lr_decay = parse(key, v)?,
            "decay_epochs" => self.mil.train.decay_epochs = parse_list(key, v)?,
            "use_reinforced" => self.mil.use_reinforced = parse_bool(key, v)?,
            "accumulate" => self.mil.accumulate = parse_bool(key, v)?,
            "use_mask" => self.use_mask = parse_bool(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "stride" => self.stride = Some(parse(key, v)?),
            "fusion" => {
                self.fusion = match v {
                    "mean" => Fusion::Mean,
                    "max" => Fusion::Max,
                    _ => return Err(invalid(format!("bad value for fusion: {v:?} (expected mean or max)"))),
                }
            }
            _ => return Err(invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn tiler(&self) -> TilerConfig {
        TilerConfig {
            tile_size: self.tile_size,
            step: self.step.unwrap_or((self.tile_size / 2).max(1)),
            inclusion_fraction: self.inclusion_fraction,
        }
    }

    /// Window lattice for heatmaps.
    pub fn viz_windows(&self) -> TilerConfig {
        let base = self.tiler();
        TilerConfig {
            step: self.stride.unwrap_or(base.step),
            ..base
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            ..self.gen.clone()
        }
    }

    pub fn mil_config(&self) -> MilConfig {
        let mut mil = self.mil.clone();
        mil.train.seed = self.seed;
        mil
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            tiler: self.tiler(),
            segmenter: self.segmenter,
            mask_mode: if self.use_mask { MaskMode::Segmented } else { MaskMode::FullImage },
        }
    }

    /// Checks every value before any work starts.
    pub fn validate(&self) -> Result<(), Error> {
        self.gen_config().validate()?;
        self.tiler().validate()?;
        self.viz_windows().validate()?;
        let mil = self.mil_config();
        mil.train.validate()?;
        mil.selection.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = RunConfig::parse("# run\nseed = 7\ntile_size=16 # small\n\nneg_per_bag = 2\ndecay_epochs = 5, 9\nuse_mask = false\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.tiler().tile_size, 16);
        assert_eq!(cfg.tiler().step, 8);
        assert_eq!(cfg.mil.selection.neg_per_bag, 2);
        assert_eq!(cfg.mil.train.decay_epochs, vec![5, 9]);
        assert_eq!(cfg.load_options().mask_mode, MaskMode::FullImage);
        assert_eq!(cfg.mil_config().train.seed, 7);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = RunConfig::parse("seed = 1\nlearning_rat = 0.1\n").unwrap_err();
        assert_eq!(err.kind(), "InvalidConfig");
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("learning_rat"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::parse("epochs = many").is_err());
        assert!(RunConfig::parse("use_mask = maybe").is_err());
        assert!(RunConfig::parse("just a line").is_err());
        let mut cfg = RunConfig::default();
        cfg.set("step", "80").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("threshold", "1.5").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }
}
