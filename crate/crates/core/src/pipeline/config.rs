use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tcn::TcnSpec;
use crate::vsc::VscConfig;

/// Which input branches feed the model. A disabled text or audio branch
/// contributes nothing to the guidance vector; a disabled video branch
/// yields an all-zero video feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modalities {
    pub text: bool,
    pub audio: bool,
    pub video: bool,
}

impl Default for Modalities {
    fn default() -> Self {
        Self {
            text: true,
            audio: true,
            video: true,
        }
    }
}

impl Modalities {
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (on, c) in [(self.text, 'T'), (self.audio, 'A'), (self.video, 'V')] {
            if on {
                if !s.is_empty() {
                    s.push('+');
                }
                s.push(c);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

fn default_vsc() -> VscConfig {
    VscConfig {
        gamma: 0.5,
        ..VscConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub text_dim: usize,
    pub audio_dim: usize,
    /// Width of a visual token; also the guidance vector width.
    pub visual_dim: usize,
    /// Width of the contrastive projection heads.
    pub projection_dim: usize,
    pub classes: usize,
    /// Frames sampled from each record before compression.
    pub frames: usize,
    #[serde(default = "default_vsc")]
    pub vsc: VscConfig,
    pub tcn: TcnSpec,
    pub modalities: Modalities,
    pub alpha_ce: f64,
    pub beta_cl: f64,
    pub tau_cl: f64,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text_dim: 16,
            audio_dim: 16,
            visual_dim: 16,
            projection_dim: 8,
            classes: 4,
            frames: 15,
            vsc: default_vsc(),
            tcn: TcnSpec::default(),
            modalities: Modalities::default(),
            alpha_ce: 1.0,
            beta_cl: 0.1,
            tau_cl: 0.07,
            optimizer: AdamConfig::default(),
            epochs: 50,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("text_dim", self.text_dim),
            ("audio_dim", self.audio_dim),
            ("visual_dim", self.visual_dim),
            ("projection_dim", self.projection_dim),
            ("classes", self.classes),
            ("frames", self.frames),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        if !(self.alpha_ce >= 0.0 && self.beta_cl >= 0.0) {
            return Err(Error::Config("model.alpha_ce and model.beta_cl must be >= 0".into()));
        }
        if !(self.alpha_ce + self.beta_cl > 0.0) {
            return Err(Error::Config("model.alpha_ce + model.beta_cl must be > 0".into()));
        }
        if !(self.tau_cl > 0.0) {
            return Err(Error::Config("model.tau_cl must be > 0".into()));
        }
        if self.beta_cl > 0.0 && self.batch_size < 2 {
            return Err(Error::Config(
                "model.batch_size must be >= 2 when model.beta_cl > 0 (contrastive loss needs two samples)".into(),
            ));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config("model.optimizer.learning_rate must be finite and >= 0".into()));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Config("model.optimizer.beta1/beta2 must be in [0, 1)".into()));
        }
        if !(o.epsilon > 0.0) {
            return Err(Error::Config("model.optimizer.epsilon must be > 0".into()));
        }
        if !(self.modalities.text || self.modalities.audio || self.modalities.video) {
            return Err(Error::Config("at least one modality must be enabled".into()));
        }
        self.vsc.validate()?;
        self.tcn.validate()
    }

    /// Width of the video feature produced by the TCN.
    pub fn video_dim(&self) -> usize {
        self.tcn.output_dim(self.visual_dim)
    }

    /// Classifier input width: guidance vector followed by video feature.
    pub fn fused_dim(&self) -> usize {
        self.visual_dim + self.video_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let empty: ModelConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(empty, cfg);
    }

    #[test]
    fn guards() {
        let bad = [
            ModelConfig { classes: 0, ..Default::default() },
            ModelConfig { alpha_ce: 0.0, beta_cl: 0.0, ..Default::default() },
            ModelConfig { beta_cl: 0.1, batch_size: 1, ..Default::default() },
            ModelConfig { tau_cl: 0.0, ..Default::default() },
            ModelConfig {
                modalities: Modalities { text: false, audio: false, video: false },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        ModelConfig { beta_cl: 0.0, batch_size: 1, ..Default::default() }.validate().unwrap();
        assert!(serde_json::from_str::<ModelConfig>(r#"{"clases": 3}"#).is_err());
    }

    #[test]
    fn modality_labels() {
        assert_eq!(Modalities::default().label(), "T+A+V");
        assert_eq!(Modalities { text: true, audio: false, video: true }.label(), "T+V");
    }
}
