//! The full model, its training step and the online tracker.

mod infer;
mod train;

pub use infer::{evaluate_dataset, infer_video, InferConfig, InferenceHooks, MemoryEntry, NoHooks, TrackMemory, Tracker, VideoPrediction};
pub use train::{
    compute_losses, feature_instances, sample_training_pair, train_step, FeatureInstance, LossBreakdown, LossVars, LossWeights,
    Trainer, TrainingPair, MAX_GAP,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detect::DetectHead;
use crate::nn::{Backbone, Mlp};
use crate::params::ParamStore;
use crate::seg::SegBranch;
use crate::{Error, Result};

/// Backbone output stride.
pub const STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Feature channels D.
    pub dim: usize,
    pub backbone_width: usize,
    pub classes: usize,
    /// Message-passing iterations L.
    pub iterations: usize,
    /// Graph window w, in feature cells.
    pub window: usize,
    /// ROIAlign output side for k-node features.
    pub roi_out: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            backbone_width: 16,
            classes: 3,
            iterations: 3,
            window: 11,
            roi_out: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.into()));
        if self.dim == 0 || self.backbone_width == 0 {
            return bad("dim and backbone width must be positive");
        }
        if self.classes == 0 {
            return bad("at least one class is required");
        }
        if self.iterations == 0 {
            return bad("message passing needs at least one iteration");
        }
        if self.window == 0 || self.roi_out == 0 {
            return bad("window and roi size must be positive");
        }
        Ok(())
    }
}

/// Every learned component, with all parameters in one store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub edge_mlp: Mlp,
    pub node_mlp: Mlp,
    pub detect: DetectHead,
    pub seg: SegBranch,
    pub classifier: Mlp,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let backbone = Backbone::new(&mut store, config.backbone_width, d, &mut rng);
        let edge_mlp = Mlp::new(&mut store, "gnn.edge", &[3 * d, d, d], &mut rng);
        let node_mlp = Mlp::new(&mut store, "gnn.node", &[2 * d, d, d], &mut rng);
        // node updates start as the identity
        node_mlp.zero_output(&mut store);
        let detect = DetectHead::new(&mut store, d, config.classes, &mut rng);
        let seg = SegBranch::new(&mut store, d, &mut rng);
        let classifier = Mlp::new(&mut store, "track.classifier", &[d, d, 1], &mut rng);
        Ok(Self {
            config,
            store,
            backbone,
            edge_mlp,
            node_mlp,
            detect,
            seg,
            classifier,
        })
    }
}
