use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{box_from_cube, landmark_sample};
use super::PipelineConfig;
use crate::enet3d::Enet;
use crate::error::{Error, Result};
use crate::localize::{decode_peaks, foreground_probability, mask_to_bbox, temporal_median, volume_to_tensor, BBox, HeatmapStack};
use crate::prep::preprocess;
use crate::views::{plane_2ch, plane_3ch, plane_4ch, render_cine, sax_stack, write_cine, PlaneSpec};
use crate::volcore::{AffineTransform, LandmarkSet, Series4D, Volume3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyPrediction {
    pub per_frame: Vec<LandmarkSet>,
    pub median: LandmarkSet,
    /// Box in the source grid used for cropping.
    pub bbox: BBox,
    /// True when the box map was empty and the full volume was used.
    pub bbox_fallback: bool,
    /// Foreground probability on the first reference frame's cube.
    #[serde(skip)]
    pub bbox_map: Option<Volume3>,
    /// Cube voxel → world transform of `bbox_map`.
    #[serde(skip)]
    pub cube_transform: Option<AffineTransform>,
}

fn union(a: BBox, b: BBox) -> BBox {
    BBox {
        min_idx: std::array::from_fn(|i| a.min_idx[i].min(b.min_idx[i])),
        max_idx: std::array::from_fn(|i| a.max_idx[i].max(b.max_idx[i])),
    }
}

/// Box net on the reference frames, crop, landmark net on every frame,
/// temporal median. Reads no ground truth.
pub fn infer_study(s: &Series4D, bbox_net: &mut Enet<f32>, lm_net: &mut Enet<f32>, cfg: &PipelineConfig) -> Result<StudyPrediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dims = s.frame(0).dims();
    let mut bbox: Option<BBox> = None;
    let mut bbox_map = None;
    let mut fallback = false;
    let mut cube_transform = None;
    for &t in &cfg.reference_frames {
        if t >= s.frame_count() {
            return Err(Error::IndexOutOfRange { index: t, len: s.frame_count() });
        }
        let src = s.frame(t);
        let (cube, transform) = preprocess(src, &cfg.prep)?;
        let logits = bbox_net.run(&volume_to_tensor(&cube), false, &mut rng)?;
        let prob = foreground_probability(&logits, &cube)?;
        let found = match mask_to_bbox(&prob, cfg.bbox_lo, cfg.bbox_hi) {
            Ok(cube_box) => box_from_cube(&cube_box, src, &transform),
            Err(Error::EmptyMap) => {
                warn!("empty box map on frame {t}; using the full volume");
                fallback = true;
                BBox::full(dims)
            }
            Err(e) => return Err(e),
        };
        bbox = Some(match bbox {
            Some(b) => union(b, found),
            None => found,
        });
        bbox_map.get_or_insert(prob);
        cube_transform.get_or_insert(transform);
    }
    let bbox = bbox.expect("at least one reference frame");
    let mut per_frame = Vec::with_capacity(s.frame_count());
    for frame in s.frames() {
        let sample = landmark_sample(frame, &bbox, &LandmarkSet::new(), &cfg.prep, cfg.infer_crop_margin)?;
        let pred = lm_net.run(&volume_to_tensor(&sample.input), false, &mut rng)?;
        per_frame.push(decode_peaks(&HeatmapStack::from_tensor(&pred)?, &sample.transform));
    }
    let median = temporal_median(&per_frame)?;
    Ok(StudyPrediction { per_frame, median, bbox, bbox_fallback: fallback, bbox_map, cube_transform })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewOutcome {
    pub view: String,
    pub error: Option<String>,
}

/// Writes the 4ch, 3ch, 2ch and SAX cines under `out_dir`. A view whose
/// landmarks are missing is skipped with its error recorded; the others are
/// still written.
pub fn emit_views(s: &Series4D, lms: &LandmarkSet, out_dir: &Path, cfg: &PipelineConfig) -> Result<Vec<ViewOutcome>> {
    let res = cfg.view_resolution;
    let sized = |mut p: PlaneSpec| {
        p.resolution = res;
        p
    };
    let p4 = plane_4ch(lms).map(sized);
    let p3 = plane_3ch(lms).map(sized);
    let p2 = match (&p3, &p4) {
        (Ok(a), Ok(b)) => plane_2ch(a, b, lms).map(sized),
        (Err(e), _) | (_, Err(e)) => Err(Error::Degenerate(format!("2ch view needs the 3ch and 4ch planes: {e}"))),
    };
    let mut planes: Vec<(String, Result<PlaneSpec>)> = vec![("4ch".into(), p4), ("3ch".into(), p3), ("2ch".into(), p2)];
    match sax_stack(lms, &cfg.sax) {
        Ok(stack) => planes.extend(stack.into_iter().enumerate().map(|(i, p)| (format!("sax_{i:02}"), Ok(sized(p))))),
        Err(e) => planes.push(("sax".into(), Err(e))),
    }
    let mut outcomes = Vec::new();
    for (view, plane) in planes {
        let error = match plane {
            Ok(plane) => {
                let dir = out_dir.join(&view);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_cine(&dir, &render_cine(s, &plane), &plane)?;
                None
            }
            Err(e) => {
                warn!("view {view} skipped: {e}");
                Some(e.to_string())
            }
        };
        outcomes.push(ViewOutcome { view, error });
    }
    Ok(outcomes)
}
