use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::split::SplitSpec;
use super::train::{train_landmarks, TrainOutcome};
use super::PipelineConfig;
use crate::augment::AugConfig;
use crate::enet3d::{Enet, NetConfig};
use crate::error::{Error, Result};
use crate::tensornet::{checkpoint, PoolKind};

/// Uniform interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Span { lo, hi }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi { self.lo } else { rng.random_range(self.lo..=self.hi) }
    }
}

/// Uniform pick from a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Choice<T>(pub Vec<T>);

impl<T: Clone> Choice<T> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> T {
        self.0[rng.random_range(0..self.0.len())].clone()
    }
}

/// Ranges over every searched architecture, optimizer and distortion knob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchRanges {
    pub initial_filters: Choice<usize>,
    pub asym_kernel: Choice<usize>,
    pub n_stage1_bottlenecks: Choice<usize>,
    pub n_stage2_repeats: Choice<usize>,
    pub pool_kind: Choice<PoolKind>,
    pub projection_scale: Choice<usize>,
    pub dropout: Span,
    /// Learning rate drawn uniformly in log10 space.
    pub log10_lr: Span,
    pub flip: Choice<bool>,
    pub noise_sigma: Span,
    pub elastic_alpha: Span,
    pub elastic_sigma: Span,
    pub affine_max_rot: Span,
    pub affine_max_scale: Span,
    pub affine_max_shift: Span,
    pub brightness_delta: Span,
    pub contrast_range: Span,
    pub blur_sigma: Span,
}

impl Default for SearchRanges {
    fn default() -> Self {
        SearchRanges {
            initial_filters: Choice(vec![4, 8, 16]),
            asym_kernel: Choice(vec![3, 5, 7]),
            n_stage1_bottlenecks: Choice(vec![1, 2, 3, 4]),
            n_stage2_repeats: Choice(vec![1, 2]),
            pool_kind: Choice(vec![PoolKind::Max, PoolKind::Avg]),
            projection_scale: Choice(vec![2, 4]),
            dropout: Span::new(0.0, 0.3),
            log10_lr: Span::new(-4.0, -2.5),
            flip: Choice(vec![false, true]),
            noise_sigma: Span::new(0.0, 0.05),
            elastic_alpha: Span::new(0.0, 2.0),
            elastic_sigma: Span::new(2.0, 6.0),
            affine_max_rot: Span::new(0.0, 0.2),
            affine_max_scale: Span::new(0.0, 0.1),
            affine_max_shift: Span::new(0.0, 4.0),
            brightness_delta: Span::new(0.0, 0.1),
            contrast_range: Span::new(0.0, 0.2),
            blur_sigma: Span::new(0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpec {
    pub n_trials: usize,
    pub trial_epochs: usize,
    pub finalists: usize,
    pub finalist_epochs: usize,
    pub seed: u64,
    pub ranges: SearchRanges,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec { n_trials: 50, trial_epochs: 40, finalists: 3, finalist_epochs: 100, seed: 0, ranges: SearchRanges::default() }
    }
}

impl SearchSpec {
    /// Same protocol shape at a size one CPU finishes in minutes.
    pub fn desk() -> Self {
        let ranges = SearchRanges {
            initial_filters: Choice(vec![4, 8]),
            n_stage1_bottlenecks: Choice(vec![1, 2]),
            n_stage2_repeats: Choice(vec![1]),
            ..SearchRanges::default()
        };
        SearchSpec { n_trials: 3, trial_epochs: 2, finalists: 1, finalist_epochs: 4, seed: 0, ranges }
    }

    pub fn validate(&self) -> Result<()> {
        if self.finalists < 1 || self.n_trials < self.finalists {
            return Err(Error::config("finalists", "need n_trials >= finalists >= 1"));
        }
        if self.trial_epochs < 1 || self.finalist_epochs < 1 {
            return Err(Error::config("trial_epochs", "epoch counts must be >= 1"));
        }
        let r = &self.ranges;
        let lists = [
            ("initial_filters", r.initial_filters.0.len()),
            ("asym_kernel", r.asym_kernel.0.len()),
            ("n_stage1_bottlenecks", r.n_stage1_bottlenecks.0.len()),
            ("n_stage2_repeats", r.n_stage2_repeats.0.len()),
            ("pool_kind", r.pool_kind.0.len()),
            ("projection_scale", r.projection_scale.0.len()),
            ("flip", r.flip.0.len()),
        ];
        for (f, n) in lists {
            if n == 0 {
                return Err(Error::config(f, "choice list is empty"));
            }
        }
        let spans = [
            ("dropout", r.dropout),
            ("log10_lr", r.log10_lr),
            ("noise_sigma", r.noise_sigma),
            ("elastic_alpha", r.elastic_alpha),
            ("elastic_sigma", r.elastic_sigma),
            ("affine_max_rot", r.affine_max_rot),
            ("affine_max_scale", r.affine_max_scale),
            ("affine_max_shift", r.affine_max_shift),
            ("brightness_delta", r.brightness_delta),
            ("contrast_range", r.contrast_range),
            ("blur_sigma", r.blur_sigma),
        ];
        for (f, s) in spans {
            if !(s.lo <= s.hi && s.lo.is_finite() && s.hi.is_finite()) {
                return Err(Error::config(f, format!("need lo <= hi, got [{}, {}]", s.lo, s.hi)));
            }
        }
        Ok(())
    }
}

/// Draws one configuration; output width, stage multipliers and seed come
/// from `base`.
pub fn sample_config(base: &NetConfig, r: &SearchRanges, rng: &mut ChaCha8Rng) -> NetConfig {
    let initial_filters = r.initial_filters.draw(rng);
    let asym_kernel = r.asym_kernel.draw(rng);
    let n_stage1_bottlenecks = r.n_stage1_bottlenecks.draw(rng);
    let n_stage2_repeats = r.n_stage2_repeats.draw(rng);
    let pool_kind = r.pool_kind.draw(rng);
    let projection_scale = r.projection_scale.draw(rng);
    let dropout = r.dropout.draw(rng);
    let lr = 10f64.powf(r.log10_lr.draw(rng));
    let flip = r.flip.draw(rng);
    let aug = AugConfig {
        flip_enabled: [flip; 3],
        noise_sigma: r.noise_sigma.draw(rng),
        elastic_alpha: r.elastic_alpha.draw(rng),
        elastic_sigma: r.elastic_sigma.draw(rng),
        affine_max_rot: r.affine_max_rot.draw(rng),
        affine_max_scale: r.affine_max_scale.draw(rng),
        affine_max_shift: r.affine_max_shift.draw(rng),
        brightness_delta: r.brightness_delta.draw(rng),
        contrast_range: r.contrast_range.draw(rng),
        blur_sigma: r.blur_sigma.draw(rng),
        seed: base.aug.seed,
    };
    NetConfig {
        initial_filters,
        asym_kernel,
        n_stage1_bottlenecks,
        n_stage2_repeats,
        pool_kind,
        projection_scale,
        dropout,
        lr,
        aug,
        ..base.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub rank: usize,
    pub trial: usize,
    pub config: NetConfig,
    /// Lowest validation l2 over the trial's epochs.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalistRow {
    pub trial: usize,
    pub val_loss: f64,
    pub val_median_error_mm: Option<f64>,
    pub outcome: TrainOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub spec: SearchSpec,
    /// Ranked by validation loss.
    pub trials: Vec<TrialRow>,
    pub finalists: Vec<FinalistRow>,
    pub selected_trial: usize,
    pub selected: NetConfig,
}

fn min_val_loss(o: &TrainOutcome) -> f64 {
    o.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min)
}

/// Trains `n_trials` sampled landmark nets, ranks them by validation l2,
/// retrains the best `finalists` for longer from scratch, and selects the
/// one with the lowest validation median landmark error. With `out` set the
/// selected net is checkpointed there.
pub fn hyperparam_search(
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &PipelineConfig,
    spec: &SearchSpec,
    out: Option<&Path>,
) -> Result<(SearchReport, Enet<f32>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.n_trials);
    for trial in 0..spec.n_trials {
        let config = sample_config(&cfg.landmark_net, &spec.ranges, &mut rng);
        let trial_cfg = PipelineConfig { landmark_net: config.clone(), ..cfg.clone() };
        let (_, outcome) = train_landmarks(ds, &trial_cfg, split, spec.trial_epochs, None)?;
        let val_loss = min_val_loss(&outcome);
        info!("trial {trial}: val loss {val_loss:.6}");
        rows.push(TrialRow { rank: 0, trial, config, val_loss });
    }
    rows.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.trial.cmp(&b.trial)));
    rows.iter_mut().enumerate().for_each(|(i, r)| r.rank = i + 1);

    let mut finalists = Vec::with_capacity(spec.finalists);
    let mut best: Option<(f64, f64, usize, Enet<f32>, PipelineConfig)> = None;
    for row in &rows[..spec.finalists] {
        let trial_cfg = PipelineConfig { landmark_net: row.config.clone(), ..cfg.clone() };
        let (net, outcome) = train_landmarks(ds, &trial_cfg, split, spec.finalist_epochs, None)?;
        let err = outcome.best_val_median_error_mm;
        let key = (err.unwrap_or(f64::INFINITY), outcome.best_val_loss);
        info!("finalist {}: median error {err:?}", row.trial);
        if best.as_ref().is_none_or(|b| key < (b.0, b.1)) {
            best = Some((key.0, key.1, row.trial, net, trial_cfg));
        }
        finalists.push(FinalistRow { trial: row.trial, val_loss: min_val_loss(&outcome), val_median_error_mm: err, outcome });
    }
    let (_, _, selected_trial, net, selected_cfg) = best.expect("finalists >= 1");
    if let Some(dir) = out {
        let f = finalists.iter().find(|f| f.trial == selected_trial).expect("selected finalist");
        let meta = super::train::CheckpointMeta {
            kind: super::train::NetKind::Landmarks,
            net: selected_cfg.landmark_net.clone(),
            prep: selected_cfg.prep.clone(),
            heatmap_sigma_vox: selected_cfg.heatmap_sigma_vox,
            outcome: f.outcome.clone(),
        };
        checkpoint::save(dir, &net, serde_json::to_value(meta).expect("plain data"))?;
    }
    let report = SearchReport { spec: spec.clone(), trials: rows, finalists, selected_trial, selected: selected_cfg.landmark_net };
    Ok((report, net))
}
