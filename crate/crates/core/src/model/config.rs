use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::EMBEDDING_DIM;

/// Architecture hyper-parameters shared by the calibration and regression
/// backbones (which have separate weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Side of every resized input plane.
    pub input_side: usize,
    /// Channels of the first residual stage; doubled at each later stage.
    pub backbone_width: usize,
    /// Number of residual stages.
    pub backbone_depth: usize,
    pub blocks_per_stage: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// 3×3/2 max pool after the stem.
    pub stem_pool: bool,
    pub head_hidden: usize,
    pub dropout_rate: f64,
    pub embedding_dim: usize,
    /// When false the scene planes of the regression input are zeroed (the
    /// "without scene image" ablation). The calibration module still sees it.
    #[serde(default = "yes")]
    pub scene_in_regression: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// ResNet-18-shaped backbones at 224×224 with 4096-wide heads.
    pub fn reference() -> Self {
        Self {
            input_side: 224,
            backbone_width: 64,
            backbone_depth: 4,
            blocks_per_stage: 2,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            head_hidden: 4096,
            dropout_rate: 0.5,
            embedding_dim: EMBEDDING_DIM,
            scene_in_regression: true,
        }
    }

    /// Narrow, shallow preset sized for single-core CPU training on 64×64
    /// synthetic worlds.
    pub fn desk() -> Self {
        Self {
            input_side: 32,
            backbone_width: 8,
            backbone_depth: 3,
            blocks_per_stage: 1,
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: false,
            head_hidden: 64,
            dropout_rate: 0.5,
            embedding_dim: EMBEDDING_DIM,
            scene_in_regression: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_side", self.input_side),
            ("backbone_width", self.backbone_width),
            ("backbone_depth", self.backbone_depth),
            ("blocks_per_stage", self.blocks_per_stage),
            ("stem_kernel", self.stem_kernel),
            ("stem_stride", self.stem_stride),
            ("head_hidden", self.head_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("model.dropout_rate must lie in [0, 1)".into()));
        }
        if self.embedding_dim != EMBEDDING_DIM {
            return Err(Error::Config(format!(
                "model.embedding_dim must be {EMBEDDING_DIM} (the input stack has eight calibration planes)"
            )));
        }
        if self.stem_kernel % 2 == 0 {
            return Err(Error::Config("model.stem_kernel must be odd".into()));
        }
        let (side, _) = self.feature_geometry();
        if side == 0 {
            return Err(Error::Config(format!(
                "model.input_side {} is too small for {} downsampling stages",
                self.input_side, self.backbone_depth
            )));
        }
        Ok(())
    }

    /// Spatial side and channel count of the backbone output.
    pub fn feature_geometry(&self) -> (usize, usize) {
        let conv = |s: usize, k: usize, st: usize, p: usize| -> usize {
            if s + 2 * p < k {
                0
            } else {
                (s + 2 * p - k) / st + 1
            }
        };
        let mut s = conv(self.input_side, self.stem_kernel, self.stem_stride, self.stem_kernel / 2);
        if self.stem_pool && s > 0 {
            s = conv(s, 3, 2, 1);
        }
        for _ in 1..self.backbone_depth {
            if s == 0 {
                break;
            }
            s = conv(s, 3, 2, 1);
        }
        (s, self.backbone_width << (self.backbone_depth - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ModelConfig::reference().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        assert_eq!(ModelConfig::reference().feature_geometry(), (7, 512));
        assert_eq!(ModelConfig::desk().feature_geometry(), (4, 32));
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig::desk();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.embedding_dim = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.stem_kernel = 4;
        assert!(c.validate().is_err());
    }
}
