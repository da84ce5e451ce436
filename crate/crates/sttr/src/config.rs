//! Run configuration: one JSON document covering model, training, and loss
//! settings. Parsing is strict: unknown keys are an error naming the key.
//!
//! Two named profiles exist. `desk` (the default) runs on a laptop CPU:
//! width factor 1/8, token width 64, 64x64 training images. `paper` restores
//! the full-scale constants: width factor 1 (stage channels 256/512/1024/2048),
//! token width 256, 512x512 images, learning rate 1e-5.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How feature maps become token sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    /// 1x1 convolution to width d, then row-major flatten. The default.
    Filter,
    /// Sliding-window unfold; kept for the blocky-artifact comparison.
    Unfold,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Scales every convolutional width. 1.0 reproduces the full-size
    /// architecture; the desk default is 0.125 (backbone stage 1 = 32).
    pub width_factor: f32,
    /// Token width after projection.
    pub d: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Backbone stage tapped for content features (1..=4, stride 4*2^(s-1)).
    pub content_tap_stage: usize,
    /// Backbone stage tapped for style features (1..=4).
    pub style_tap_stage: usize,
    pub tokenizer: Tokenizer,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width_factor: 0.125,
            d: 64,
            heads: 8,
            encoder_layers: 6,
            decoder_layers: 6,
            content_tap_stage: 2,
            style_tap_stage: 4,
            tokenizer: Tokenizer::Filter,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f32,
    pub steps: usize,
    /// Square training resolution; must be divisible by 32.
    pub image_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 1e-3,
            steps: 200,
            image_size: 64,
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// Style weight in total = content + lambda * style.
    pub lambda: f32,
    /// `"random"` for fixed-seed random weights; anything else is read as a
    /// checkpoint path to load them from.
    pub loss_net: String,
    /// Which of the four feature taps (1..=4) the style loss sums over.
    pub tap_layers: Vec<usize>,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            lambda: 10.0,
            loss_net: "random".to_string(),
            tap_layers: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
}

impl RunConfig {
    /// The named profiles: "desk" and "paper".
    pub fn preset(name: &str) -> Result<RunConfig> {
        match name {
            "desk" => Ok(RunConfig::default()),
            "paper" => {
                let mut cfg = RunConfig::default();
                cfg.model.width_factor = 1.0;
                cfg.model.d = 256;
                cfg.train.learning_rate = 1e-5;
                cfg.train.image_size = 512;
                Ok(cfg)
            }
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `desk` or `paper`)"
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.width_factor > 0.0) || !m.width_factor.is_finite() {
            return Err(Error::Config(format!(
                "model.width_factor must be positive and finite, got {}",
                m.width_factor
            )));
        }
        if m.heads == 0 {
            return Err(Error::Config("model.heads must be at least 1".into()));
        }
        if m.d == 0 || m.d % m.heads != 0 {
            return Err(Error::Config(format!(
                "model.d ({}) must be a positive multiple of model.heads ({})",
                m.d, m.heads
            )));
        }
        if m.d % 4 != 0 {
            return Err(Error::Config(format!(
                "model.d ({}) must be divisible by 4 for the 2-axis sin/cos positional encoding",
                m.d
            )));
        }
        if m.encoder_layers == 0 || m.decoder_layers == 0 {
            return Err(Error::Config("encoder_layers and decoder_layers must be at least 1".into()));
        }
        for (name, stage) in [
            ("model.content_tap_stage", m.content_tap_stage),
            ("model.style_tap_stage", m.style_tap_stage),
        ] {
            if !(1..=4).contains(&stage) {
                return Err(Error::Config(format!("{name} must be in 1..=4, got {stage}")));
            }
        }
        if self.base_width() == 0 {
            return Err(Error::Config(format!(
                "model.width_factor {} is too small: backbone width rounds to 0",
                m.width_factor
            )));
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "train.learning_rate must be positive, got {}",
                t.learning_rate
            )));
        }
        if t.image_size == 0 || t.image_size % 32 != 0 {
            return Err(Error::Config(format!(
                "train.image_size must be a positive multiple of 32, got {}",
                t.image_size
            )));
        }
        let l = &self.loss;
        if l.lambda < 0.0 || !l.lambda.is_finite() {
            return Err(Error::Config(format!("loss.lambda must be >= 0, got {}", l.lambda)));
        }
        if l.tap_layers.is_empty() {
            return Err(Error::Config("loss.tap_layers must name at least one tap".into()));
        }
        for pair in l.tap_layers.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "loss.tap_layers must be strictly increasing, got {:?}",
                    l.tap_layers
                )));
            }
        }
        if l.tap_layers.iter().any(|&t| !(1..=4).contains(&t)) {
            return Err(Error::Config(format!(
                "loss.tap_layers entries must be in 1..=4, got {:?}",
                l.tap_layers
            )));
        }
        Ok(())
    }

    /// Backbone stage-1 width: 256 * width_factor, floored, at least 1.
    pub fn base_width(&self) -> usize {
        scaled_width(256, self.model.width_factor)
    }

    /// The four backbone stage widths, ratios exactly 1:2:4:8.
    pub fn stage_channels(&self) -> [usize; 4] {
        let b = self.base_width();
        [b, 2 * b, 4 * b, 8 * b]
    }

    /// Channel count of the configured content tap.
    pub fn content_channels(&self) -> usize {
        self.stage_channels()[self.model.content_tap_stage - 1]
    }

    pub fn style_channels(&self) -> usize {
        self.stage_channels()[self.model.style_tap_stage - 1]
    }

    /// Spatial stride of backbone stage s (1..=4): 4, 8, 16, 32.
    pub fn stage_stride(stage: usize) -> usize {
        4 << (stage - 1)
    }

    pub fn content_stride(&self) -> usize {
        RunConfig::stage_stride(self.model.content_tap_stage)
    }

    pub fn style_stride(&self) -> usize {
        RunConfig::stage_stride(self.model.style_tap_stage)
    }

    /// Content token grid for an input of the given size.
    pub fn content_grid(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.content_stride(), w / self.content_stride())
    }

    pub fn style_grid(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.style_stride(), w / self.style_stride())
    }

    /// The CNN decoder's four output widths (three upsampling stages plus
    /// the final RGB stage), 256:128:64 scaled by the width factor.
    pub fn decoder_widths(&self) -> [usize; 4] {
        let wf = self.model.width_factor;
        [scaled_width(256, wf), scaled_width(128, wf), scaled_width(64, wf), 3]
    }

    /// Decoder widths paired with upsample flags: the first three stages
    /// double the spatial size, the RGB stage does not.
    pub fn decoder_stages(&self) -> Vec<(usize, bool)> {
        self.decoder_widths().iter().enumerate().map(|(i, &w)| (w, i < 3)).collect()
    }

    /// Loss-network tap widths (64,128,256,512) scaled by the width factor.
    pub fn loss_widths(&self) -> [usize; 4] {
        let wf = self.model.width_factor;
        [
            scaled_width(64, wf),
            scaled_width(128, wf),
            scaled_width(256, wf),
            scaled_width(512, wf),
        ]
    }
}

fn scaled_width(base: usize, factor: f32) -> usize {
    ((base as f64 * factor as f64).round() as usize).max(1)
}
