use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{bbox_sample, landmark_sample, Dataset, Patient};
use super::split::SplitSpec;
use super::PipelineConfig;
use crate::augment::{augment_intensity, augment_sample, GeometricDraw};
use crate::enet3d::{build_net, Enet, NetConfig};
use crate::error::{Error, Result};
use crate::localize::{decode_peaks, encode_heatmaps, landmark_errors, median, volume_to_tensor, BBox, HeatmapStack};
use crate::prep::PrepConfig;
use crate::tensornet::{checkpoint, masked_l2_loss, softmax_xent_loss, Layer, Tensor};
use crate::volcore::Volume3;

const TRAIN_STREAM: u64 = 0x7472_6169_6e;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Bbox,
    Landmarks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_median_error_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_median_error_mm: Option<f64>,
}

/// Stored in the checkpoint manifest next to the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: NetKind,
    pub net: NetConfig,
    pub prep: PrepConfig,
    pub heatmap_sigma_vox: f64,
    pub outcome: TrainOutcome,
}

pub fn load_checkpoint(dir: &Path) -> Result<(Enet<f32>, CheckpointMeta)> {
    let manifest = checkpoint::read_manifest(dir)?;
    let meta: CheckpointMeta = serde_json::from_value(manifest.meta).map_err(|e| Error::json(dir.display().to_string(), e))?;
    let mut net = build_net::<f32>(&meta.net)?;
    checkpoint::load(dir, &mut net)?;
    Ok((net, meta))
}

fn snapshot(net: &Enet<f32>) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    net.visit(&mut |p| out.push(p.value.data().to_vec()));
    out
}

fn restore(net: &mut Enet<f32>, snap: &[Vec<f32>]) {
    let mut i = 0;
    net.visit_mut(&mut |p| {
        p.value.data_mut().copy_from_slice(&snap[i]);
        i += 1;
    });
}

fn require_box(p: &Patient) -> Result<&BBox> {
    p.bbox.as_ref().ok_or_else(|| Error::config("bbox", format!("patient {} has no ground-truth box", p.id)))
}

fn nonempty<'a>(ds: &'a Dataset, ids: &[String], which: &'static str) -> Result<Vec<&'a Patient>> {
    if ids.is_empty() {
        return Err(Error::Empty(which));
    }
    ds.select(ids)
}

fn labels_of(mask: &Volume3) -> Vec<u8> {
    volume_to_tensor(mask).data().iter().map(|&v| (v > 0.5) as u8).collect()
}

fn bbox_step_loss(net: &mut Enet<f32>, x: &Tensor<f32>, labels: &[u8], train: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
    let logits = net.run(x, train, rng)?;
    let (loss, grad) = softmax_xent_loss(&logits, labels)?;
    if train {
        net.zero_grad();
        net.backward(&grad)?;
        net.step(&net.config().adam());
    }
    Ok(loss)
}

/// Epoch loop shared by both nets. `epoch_fn` runs one training epoch and
/// returns its mean loss; `val_fn` returns validation loss and median error.
/// The kept epoch minimizes the median error when one is reported, else the
/// loss.
fn run_epochs(
    net: &mut Enet<f32>,
    epochs: usize,
    out: Option<&Path>,
    meta: impl Fn(&TrainOutcome) -> serde_json::Value,
    mut epoch_fn: impl FnMut(&mut Enet<f32>, usize) -> Result<f64>,
    mut val_fn: impl FnMut(&mut Enet<f32>) -> Result<(f64, Option<f64>)>,
) -> Result<TrainOutcome> {
    if epochs == 0 {
        return Err(Error::config("epochs", "must be >= 1"));
    }
    let mut outcome = TrainOutcome { history: Vec::new(), best_epoch: 0, best_val_loss: f64::INFINITY, best_val_median_error_mm: None };
    let mut best = snapshot(net);
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    for epoch in 1..=epochs {
        let train_loss = epoch_fn(net, epoch)?;
        let (val_loss, val_err) = val_fn(net)?;
        info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} median error {val_err:?}");
        outcome.history.push(EpochRecord { epoch, train_loss, val_loss, val_median_error_mm: val_err });
        let key = (val_err.unwrap_or(f64::INFINITY), val_loss);
        if key < best_key {
            best_key = key;
            outcome.best_epoch = epoch;
            outcome.best_val_loss = val_loss;
            outcome.best_val_median_error_mm = val_err;
            best = snapshot(net);
        }
    }
    restore(net, &best);
    if let Some(dir) = out {
        checkpoint::save(dir, net, meta(&outcome))?;
    }
    Ok(outcome)
}

/// Trains the 2-class box net on preprocessed full volumes and box masks.
/// Returns the parameters of the epoch with the lowest validation loss; with
/// `out` set they are checkpointed there along with the last epoch's Adam
/// moments.
pub fn train_bbox(ds: &Dataset, cfg: &PipelineConfig, split: &SplitSpec, epochs: usize, out: Option<&Path>) -> Result<(Enet<f32>, TrainOutcome)> {
    cfg.validate()?;
    let train = nonempty(ds, &split.train, "train split")?;
    let val = nonempty(ds, &split.val, "validation split")?;
    let net_cfg = &cfg.bbox_net;
    let mut net = build_net::<f32>(net_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(net_cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let val_set: Vec<(Tensor<f32>, Vec<u8>)> = val
        .iter()
        .map(|p| {
            let (cube, mask, _) = bbox_sample(p.series.frame(cfg.reference_frames[0].min(p.series.frame_count() - 1)), require_box(p)?, &cfg.prep)?;
            Ok((volume_to_tensor(&cube), labels_of(&mask)))
        })
        .collect::<Result<_>>()?;
    let meta = |o: &TrainOutcome| {
        serde_json::to_value(CheckpointMeta {
            kind: NetKind::Bbox,
            net: net_cfg.clone(),
            prep: cfg.prep.clone(),
            heatmap_sigma_vox: cfg.heatmap_sigma_vox,
            outcome: o.clone(),
        })
        .expect("plain data")
    };
    let mut val_rng = ChaCha8Rng::seed_from_u64(0);
    let outcome = run_epochs(
        &mut net,
        epochs,
        out,
        meta,
        |net, _| {
            let mut order = train.clone();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for p in &order {
                let t = rng.random_range(0..p.series.frame_count());
                let (cube, mask, _) = bbox_sample(p.series.frame(t), require_box(p)?, &cfg.prep)?;
                let g = GeometricDraw::draw(cube.dims(), &net_cfg.aug, &mut rng);
                let input = augment_intensity(g.apply_volume(&cube), &net_cfg.aug, &mut rng);
                let labels = labels_of(&g.apply_volume(&mask));
                total += bbox_step_loss(net, &volume_to_tensor(&input), &labels, true, &mut rng)?;
            }
            Ok(total / order.len() as f64)
        },
        |net| {
            let mut total = 0.0;
            for (x, labels) in &val_set {
                total += bbox_step_loss(net, x, labels, false, &mut val_rng)?;
            }
            Ok((total / val_set.len() as f64, None))
        },
    )?;
    Ok((net, outcome))
}

fn scaled_target(heat: &HeatmapStack, gain: f64) -> Tensor<f32> {
    let g = gain as f32;
    heat.to_tensor().map(|v| v * g)
}

fn landmark_val(
    net: &mut Enet<f32>,
    set: &[(Tensor<f32>, HeatmapStack, super::data::LandmarkSample)],
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Option<f64>)> {
    let mut total = 0.0;
    let mut errors = Vec::new();
    for (x, heat, sample) in set {
        let pred = net.run(x, false, rng)?;
        total += masked_l2_loss(&pred, &scaled_target(heat, gain), &heat.mask)?.0;
        let decoded = decode_peaks(&HeatmapStack::from_tensor(&pred)?, &sample.transform);
        errors.extend(landmark_errors(&decoded, &sample.landmarks).into_iter().flatten());
    }
    Ok((total / set.len() as f64, median(&mut errors)))
}

/// Trains the 6-heatmap net on ground-truth-box crops with the per-channel
/// annotation mask. One annotated frame per patient per epoch. Keeps the
/// epoch with the lowest validation median landmark error.
pub fn train_landmarks(ds: &Dataset, cfg: &PipelineConfig, split: &SplitSpec, epochs: usize, out: Option<&Path>) -> Result<(Enet<f32>, TrainOutcome)> {
    cfg.validate()?;
    let train = nonempty(ds, &split.train, "train split")?;
    let val = nonempty(ds, &split.val, "validation split")?;
    let net_cfg = &cfg.landmark_net;
    let edge = cfg.prep.target_edge;
    let sigma = cfg.heatmap_sigma_vox;
    let mut net = build_net::<f32>(net_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(net_cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut val_set = Vec::new();
    for p in &val {
        if let Some(&t) = p.annotated_frames().first() {
            let s = landmark_sample(p.series.frame(t), require_box(p)?, &p.annotations[t], &cfg.prep, cfg.crop_margin)?;
            let heat = encode_heatmaps(&s.landmarks, &s.transform, sigma, edge);
            val_set.push((volume_to_tensor(&s.input), heat, s));
        }
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation split has no annotated frame"));
    }
    let meta = |o: &TrainOutcome| {
        serde_json::to_value(CheckpointMeta {
            kind: NetKind::Landmarks,
            net: net_cfg.clone(),
            prep: cfg.prep.clone(),
            heatmap_sigma_vox: sigma,
            outcome: o.clone(),
        })
        .expect("plain data")
    };
    let mut val_rng = ChaCha8Rng::seed_from_u64(0);
    let outcome = run_epochs(
        &mut net,
        epochs,
        out,
        meta,
        |net, _| {
            let mut order = train.clone();
            order.shuffle(&mut rng);
            let (mut total, mut steps) = (0.0, 0usize);
            for p in &order {
                let frames = p.annotated_frames();
                if frames.is_empty() {
                    continue;
                }
                let t = frames[rng.random_range(0..frames.len())];
                let s = landmark_sample(p.series.frame(t), require_box(p)?, &p.annotations[t], &cfg.prep, cfg.crop_margin)?;
                let (input, lms) = augment_sample(&s.input, &s.landmarks, &net_cfg.aug, &mut rng);
                let heat = encode_heatmaps(&lms, &s.transform, sigma, edge);
                let pred = net.run(&volume_to_tensor(&input), true, &mut rng)?;
                let (loss, grad) = masked_l2_loss(&pred, &scaled_target(&heat, cfg.heatmap_gain), &heat.mask)?;
                net.zero_grad();
                net.backward(&grad)?;
                net.step(&net.config().adam());
                total += loss;
                steps += 1;
            }
            if steps == 0 {
                return Err(Error::Empty("train split has no annotated frame"));
            }
            Ok(total / steps as f64)
        },
        |net| landmark_val(net, &val_set, cfg.heatmap_gain, &mut val_rng),
    )?;
    Ok((net, outcome))
}
