//! Model and training hyperparameters.
//!
//! The text form is one `key=value` per line; `#` starts a comment. Keys
//! not mentioned keep the value of the preset the file is applied to
//! (the desk preset, unless `preset=large` appears first).

use std::fmt;
use std::str::FromStr;

use crate::error::{PfosError, Result};

/// Which parts of the grounding module are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Cross-attention (LGV + VGL) followed by the fusion transformer.
    Full,
    /// LGV stack only; grid rows stay as encoded, joined by concatenation.
    LgvOnly,
    /// VGL stack only; word rows stay as encoded, joined by concatenation.
    VglOnly,
    /// Sentence-mean feature tiled onto grid cells, no attention at all.
    ConcatBaseline,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::LgvOnly, Ablation::VglOnly, Ablation::ConcatBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::LgvOnly => "lgv-only",
            Ablation::VglOnly => "vgl-only",
            Ablation::ConcatBaseline => "concat-baseline",
        }
    }
}

impl FromStr for Ablation {
    type Err = PfosError;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| PfosError::Config(format!("unknown ablation `{s}`")))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cell at which the GIoU term reads the predicted box during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GiouCell {
    GroundTruth,
    Argmax,
}

impl GiouCell {
    fn as_str(self) -> &'static str {
        match self {
            GiouCell::GroundTruth => "ground-truth",
            GiouCell::Argmax => "argmax",
        }
    }
}

impl FromStr for GiouCell {
    type Err = PfosError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground-truth" => Ok(GiouCell::GroundTruth),
            "argmax" => Ok(GiouCell::Argmax),
            _ => Err(PfosError::Config(format!("unknown giou_cell `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Common feature width of word and grid features.
    pub d: usize,
    pub heads: usize,
    /// Layers in each of the LGV and VGL stacks.
    pub cross_layers: usize,
    pub fusion_layers: usize,
    /// Token sequence length including [CLS] and [SEP].
    pub max_tokens: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub image_w: usize,
    pub image_h: usize,
    /// Channel count of the image encoder output before projection.
    pub grid_channels: usize,
    pub ffn_dim: usize,
    pub lambda_off: f64,
    pub lambda_rgr: f64,
    pub lr: f64,
    pub lr_halving_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub ablation: Ablation,
    pub seed: u64,
    pub interleaved_cross: bool,
    pub fusion_positional: bool,
    pub giou_cell: GiouCell,
    pub bn_momentum: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl ModelConfig {
    /// CPU-trainable default.
    pub fn desk() -> Self {
        ModelConfig {
            d: 64,
            heads: 4,
            cross_layers: 2,
            fusion_layers: 4,
            max_tokens: 12,
            grid_w: 8,
            grid_h: 8,
            image_w: 64,
            image_h: 64,
            grid_channels: 64,
            ffn_dim: 128,
            lambda_off: 5.0,
            lambda_rgr: 5.0,
            lr: 1e-3,
            lr_halving_epochs: 10,
            batch_size: 8,
            epochs: 30,
            ablation: Ablation::Full,
            seed: 0,
            interleaved_cross: false,
            fusion_positional: false,
            giou_cell: GiouCell::GroundTruth,
            bn_momentum: 0.1,
            grad_clip: 0.0,
        }
    }

    /// Full-size dimensions and schedule.
    pub fn large() -> Self {
        ModelConfig {
            d: 768,
            heads: 8,
            max_tokens: 20,
            grid_w: 16,
            grid_h: 16,
            image_w: 256,
            image_h: 256,
            grid_channels: 512,
            ffn_dim: 1536,
            lr: 5e-5,
            epochs: 100,
            ..Self::desk()
        }
    }

    pub fn cells(&self) -> usize {
        self.grid_w * self.grid_h
    }

    /// Pixels per grid cell horizontally.
    pub fn stride_x(&self) -> f64 {
        self.image_w as f64 / self.grid_w as f64
    }

    pub fn stride_y(&self) -> f64 {
        self.image_h as f64 / self.grid_h as f64
    }

    /// Number of stride-2 convolutions in the image encoder.
    pub fn encoder_depth(&self) -> usize {
        (self.image_w / self.grid_w).trailing_zeros() as usize
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let halvings = epoch / self.lr_halving_epochs.max(1);
        self.lr * 0.5f64.powi(halvings as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PfosError::Config(m));
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return fail(format!("d={} is not divisible by heads={}", self.d, self.heads));
        }
        if !self.d.is_multiple_of(4) {
            return fail(format!("d={} must be divisible by 4 for the 2-D positional encoding", self.d));
        }
        if self.cross_layers == 0 || self.fusion_layers == 0 {
            return fail("cross_layers and fusion_layers must be at least 1".into());
        }
        if self.grid_w == 0 || self.grid_h == 0 {
            return fail("grid must be non-empty".into());
        }
        if self.max_tokens < 2 {
            return fail("max_tokens must leave room for [CLS] and [SEP]".into());
        }
        let sx = self.image_w / self.grid_w;
        let sy = self.image_h / self.grid_h;
        if !self.image_w.is_multiple_of(self.grid_w) || !self.image_h.is_multiple_of(self.grid_h) || sx != sy || !sx.is_power_of_two() || sx < 2 {
            return fail(format!(
                "image {}x{} must map to grid {}x{} by one power-of-two stride",
                self.image_w, self.image_h, self.grid_w, self.grid_h
            ));
        }
        if self.batch_size == 0 || self.ffn_dim == 0 || self.grid_channels == 0 {
            return fail("batch_size, ffn_dim and grid_channels must be positive".into());
        }
        if self.lr.is_nan() || self.lr <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) || self.grad_clip < 0.0 {
            return fail("lr must be positive, bn_momentum in [0,1], grad_clip non-negative".into());
        }
        Ok(())
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| PfosError::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "preset" => {
                *self = match value {
                    "desk" => Self::desk(),
                    "large" => Self::large(),
                    _ => return Err(PfosError::Config(format!("unknown preset `{value}`"))),
                }
            }
            "d" => self.d = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "cross_layers" => self.cross_layers = p(key, value)?,
            "fusion_layers" => self.fusion_layers = p(key, value)?,
            "max_tokens" => self.max_tokens = p(key, value)?,
            "grid_w" => self.grid_w = p(key, value)?,
            "grid_h" => self.grid_h = p(key, value)?,
            "image_w" => self.image_w = p(key, value)?,
            "image_h" => self.image_h = p(key, value)?,
            "grid_channels" => self.grid_channels = p(key, value)?,
            "ffn_dim" => self.ffn_dim = p(key, value)?,
            "lambda_off" => self.lambda_off = p(key, value)?,
            "lambda_rgr" => self.lambda_rgr = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "lr_halving_epochs" => self.lr_halving_epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "seed" => self.seed = p(key, value)?,
            "interleaved_cross" => self.interleaved_cross = p(key, value)?,
            "fusion_positional" => self.fusion_positional = p(key, value)?,
            "giou_cell" => self.giou_cell = value.parse()?,
            "bn_momentum" => self.bn_momentum = p(key, value)?,
            "grad_clip" => self.grad_clip = p(key, value)?,
            _ => return Err(PfosError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PfosError::Config(format!("line {}: expected key=value, got `{raw}`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Desk preset with `text` applied, validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("d", self.d.to_string()),
            ("heads", self.heads.to_string()),
            ("cross_layers", self.cross_layers.to_string()),
            ("fusion_layers", self.fusion_layers.to_string()),
            ("max_tokens", self.max_tokens.to_string()),
            ("grid_w", self.grid_w.to_string()),
            ("grid_h", self.grid_h.to_string()),
            ("image_w", self.image_w.to_string()),
            ("image_h", self.image_h.to_string()),
            ("grid_channels", self.grid_channels.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("lambda_off", self.lambda_off.to_string()),
            ("lambda_rgr", self.lambda_rgr.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_halving_epochs", self.lr_halving_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("ablation", self.ablation.to_string()),
            ("seed", self.seed.to_string()),
            ("interleaved_cross", self.interleaved_cross.to_string()),
            ("fusion_positional", self.fusion_positional.to_string()),
            ("giou_cell", self.giou_cell.as_str().to_string()),
            ("bn_momentum", self.bn_momentum.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// True when both configs produce the same parameter layout and forward pass.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        (self.d, self.heads, self.cross_layers, self.fusion_layers, self.max_tokens, self.ffn_dim, self.grid_channels)
            == (other.d, other.heads, other.cross_layers, other.fusion_layers, other.max_tokens, other.ffn_dim, other.grid_channels)
            && (self.grid_w, self.grid_h, self.image_w, self.image_h) == (other.grid_w, other.grid_h, other.image_w, other.image_h)
            && (self.ablation, self.interleaved_cross, self.fusion_positional)
                == (other.ablation, other.interleaved_cross, other.fusion_positional)
    }

    /// Single-line form used in checkpoint metadata.
    pub fn to_line(&self) -> String {
        self.to_text().lines().collect::<Vec<_>>().join(";")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        Self::from_text(&line.replace(';', "\n"))
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::large().validate().unwrap();
        assert_eq!(ModelConfig::desk().encoder_depth(), 3);
        assert_eq!(ModelConfig::large().encoder_depth(), 4);
    }

    #[test]
    fn text_round_trip_and_overrides() {
        let mut cfg = ModelConfig::desk();
        cfg.ablation = Ablation::VglOnly;
        cfg.lr = 3.5e-4;
        let back = ModelConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(ModelConfig::from_line(&cfg.to_line()).unwrap(), cfg);

        let cfg = ModelConfig::from_text("# comment\nepochs = 3\nablation=concat-baseline\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.ablation, Ablation::ConcatBaseline);
        assert!(ModelConfig::from_text("bogus=1").is_err());
        assert!(ModelConfig::from_text("epochs").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in ["heads=5", "d=66\nheads=2", "cross_layers=0", "fusion_layers=0", "grid_w=5", "image_w=48\nimage_h=48"] {
            assert!(ModelConfig::from_text(text).is_err(), "{text}");
        }
    }

    #[test]
    fn learning_rate_halves_every_period() {
        let cfg = ModelConfig::desk();
        for k in 0..3 {
            assert_eq!(cfg.learning_rate_at(10 * k), cfg.lr * 2f64.powi(-(k as i32)));
            assert_eq!(cfg.learning_rate_at(10 * k + 9), cfg.learning_rate_at(10 * k));
        }
    }
}
