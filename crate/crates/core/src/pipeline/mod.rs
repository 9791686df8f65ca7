//! Orchestration: splitting, the two training loops, the search protocol,
//! inference, view emission and evaluation reports.

mod data;
mod eval;
mod infer;
mod search;
mod split;
mod train;

use serde::{Deserialize, Serialize};

use crate::augment::AugConfig;
use crate::enet3d::NetConfig;
use crate::error::{Error, Result};
use crate::prep::PrepConfig;
use crate::tensornet::PoolKind;
use crate::views::{SaxParams, DEFAULT_RESOLUTION};

pub use data::{box_from_cube, box_to_cube, bbox_sample, landmark_sample, Dataset, LandmarkSample, Patient};
pub use eval::{evaluate, write_report, BBoxAggregate, ErrorRecord, EvalReport, SplitCell, TableRow, TABLE_ROWS};
pub use infer::{emit_views, infer_study, StudyPrediction, ViewOutcome};
pub use search::{hyperparam_search, sample_config, Choice, FinalistRow, SearchRanges, SearchReport, SearchSpec, Span, TrialRow};
pub use split::{split_patients, SplitSpec};
pub use train::{
    load_checkpoint, train_bbox, train_landmarks, CheckpointMeta, EpochRecord, NetKind, TrainOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub prep: PrepConfig,
    pub bbox_net: NetConfig,
    pub landmark_net: NetConfig,
    pub bbox_epochs: usize,
    pub landmark_epochs: usize,
    /// Heatmap Gaussian width in cube voxels.
    pub heatmap_sigma_vox: f64,
    /// The landmark net regresses `heatmap_gain × H`. Peak decoding ignores
    /// the factor; without it the net settles on an all-zero output.
    pub heatmap_gain: f64,
    /// Cube margin around ground-truth boxes for training crops.
    pub crop_margin: f64,
    /// Cube margin around predicted boxes at inference.
    pub infer_crop_margin: f64,
    pub bbox_lo: f64,
    pub bbox_hi: f64,
    /// Frames whose predicted boxes are united at inference.
    pub reference_frames: Vec<usize>,
    pub fractions: [f64; 3],
    pub sax: SaxParams,
    pub view_resolution: usize,
    pub search: SearchSpec,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            prep: PrepConfig::default(),
            bbox_net: NetConfig { out_channels: 2, ..NetConfig::default() },
            // Max-unpooling decoders let some heatmap channels go silent.
            landmark_net: NetConfig { pool_kind: PoolKind::Avg, ..NetConfig::default() },
            bbox_epochs: 10,
            landmark_epochs: 40,
            heatmap_sigma_vox: 2.0,
            heatmap_gain: 100.0,
            crop_margin: 0.0,
            infer_crop_margin: 0.1,
            bbox_lo: 0.05,
            bbox_hi: 0.95,
            reference_frames: vec![0],
            fractions: [0.8, 0.1, 0.1],
            sax: SaxParams::default(),
            view_resolution: DEFAULT_RESOLUTION,
            search: SearchSpec::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.prep.validate()?;
        self.bbox_net.validate()?;
        self.landmark_net.validate()?;
        if self.bbox_net.out_channels != 2 {
            return Err(Error::config("out_channels", "the box net predicts 2 classes"));
        }
        if self.landmark_net.out_channels != 6 {
            return Err(Error::config("out_channels", "the landmark net predicts 6 heatmaps"));
        }
        if !(self.heatmap_sigma_vox > 0.0) {
            return Err(Error::config("heatmap_sigma_vox", "must be positive"));
        }
        if !(self.heatmap_gain > 0.0 && self.heatmap_gain.is_finite()) {
            return Err(Error::config("heatmap_gain", "must be positive"));
        }
        if !(self.crop_margin >= 0.0 && self.infer_crop_margin >= 0.0) {
            return Err(Error::config("crop_margin", "margins must be >= 0"));
        }
        if !(0.0 <= self.bbox_lo && self.bbox_lo < self.bbox_hi && self.bbox_hi <= 1.0) {
            return Err(Error::config("bbox_lo", "need 0 <= bbox_lo < bbox_hi <= 1"));
        }
        if self.reference_frames.is_empty() {
            return Err(Error::config("reference_frames", "needs at least one frame"));
        }
        if self.view_resolution == 0 {
            return Err(Error::config("view_resolution", "must be >= 1"));
        }
        self.search.validate()
    }

    /// Small-scale preset for a quick run on one machine.
    pub fn desk() -> Self {
        PipelineConfig { search: SearchSpec::desk(), ..PipelineConfig::default() }
    }

    /// Sets `seed` and derives every other seed in the config from it.
    pub fn reseed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.bbox_net.seed = seed;
        self.bbox_net.aug.seed = seed.wrapping_add(1);
        self.landmark_net.seed = seed.wrapping_add(2);
        self.landmark_net.aug.seed = seed.wrapping_add(3);
        self.search.seed = seed.wrapping_add(4);
        self
    }

    /// Turns every augmentation off for both nets.
    pub fn without_augmentation(mut self) -> Self {
        self.bbox_net.aug = AugConfig::identity();
        self.landmark_net.aug = AugConfig::identity();
        self
    }
}
