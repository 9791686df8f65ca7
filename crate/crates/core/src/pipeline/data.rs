use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;
use crate::localize::{crop_resize, BBox};
use crate::phantom::{DatasetIndex, PhantomCase};
use crate::prep::{preprocess, preprocess_intensity, PrepConfig};
use crate::volcore::{read_annotations, read_mvol, AffineTransform, LandmarkSet, Series4D, Vec3, Volume3};

#[derive(Clone, Debug)]
pub struct Patient {
    pub id: String,
    pub series: Series4D,
    /// One set per frame; unannotated frames are empty.
    pub annotations: Vec<LandmarkSet>,
    /// Unabridged landmarks when the data is synthetic.
    pub truth: Option<Vec<LandmarkSet>>,
    pub bbox: Option<BBox>,
}

impl Patient {
    /// Frames carrying at least one landmark annotation.
    pub fn annotated_frames(&self) -> Vec<usize> {
        (0..self.annotations.len()).filter(|&t| !self.annotations[t].is_empty()).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub patients: Vec<Patient>,
}

fn per_frame(frames: usize, path: &Path) -> Result<Vec<LandmarkSet>> {
    let mut sets = vec![LandmarkSet::new(); frames];
    for a in read_annotations(path)? {
        if a.frame >= frames {
            return Err(Error::IndexOutOfRange { index: a.frame, len: frames });
        }
        sets[a.frame] = a.points;
    }
    Ok(sets)
}

impl Dataset {
    pub fn from_cases(cases: Vec<PhantomCase>) -> Self {
        let patients = cases
            .into_iter()
            .map(|c| Patient {
                id: c.id,
                annotations: c.annotations,
                truth: Some(c.phantom.landmarks),
                bbox: Some(c.phantom.bbox),
                series: c.phantom.series,
            })
            .collect();
        Dataset { patients }
    }

    /// Reads a `dataset.json` index and every file it names.
    pub fn load(index: &Path) -> Result<Self> {
        let idx: DatasetIndex = fsio::read_json(index)?;
        let dir = index.parent().unwrap_or(Path::new("."));
        let mut patients = Vec::with_capacity(idx.patients.len());
        for e in idx.patients {
            let series = read_mvol(&dir.join(&e.volume))?;
            let frames = series.frame_count();
            let annotations = per_frame(frames, &dir.join(&e.annotations))?;
            let truth = e.truth.as_ref().map(|t| per_frame(frames, &dir.join(t))).transpose()?;
            patients.push(Patient { id: e.id, series, annotations, truth, bbox: e.bbox });
        }
        Ok(Dataset { patients })
    }

    pub fn ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Patient> {
        self.patients.iter().find(|p| p.id == id)
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<&Patient>> {
        ids.iter()
            .map(|id| self.get(id).ok_or_else(|| Error::config("split", format!("unknown patient id {id}"))))
            .collect()
    }
}

/// Index range of the voxel centers lying in `[lo, hi]`, clamped to `n`.
fn index_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let a = lo.ceil().max(0.0);
    let b = hi.floor().min((n - 1) as f64);
    (a <= b).then_some((a as usize, b as usize))
}

fn map_box(b: &BBox, from: impl Fn(Vec3) -> Vec3) -> [(f64, f64); 3] {
    let lo = from(Vec3::new(b.min_idx[0] as f64 - 0.5, b.min_idx[1] as f64 - 0.5, b.min_idx[2] as f64 - 0.5));
    let hi = from(Vec3::new(b.max_idx[0] as f64 + 0.5, b.max_idx[1] as f64 + 0.5, b.max_idx[2] as f64 + 0.5));
    std::array::from_fn(|a| (lo[a].min(hi[a]), lo[a].max(hi[a])))
}

/// The cube voxels whose centers fall inside a source-grid box. Both grids
/// are axis-aligned, so the image of a box is a box. `None` when the box
/// misses the cube.
pub fn box_to_cube(b: &BBox, src: &Volume3, transform: &AffineTransform, edge: usize) -> Option<BBox> {
    let r = map_box(b, |c| transform.apply_inverse(src.voxel_to_world(c)));
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        let (l, h) = index_range(r[a].0, r[a].1, edge)?;
        lo[a] = l;
        hi[a] = h;
    }
    BBox::new(lo, hi, [edge; 3]).ok()
}

/// Source-grid box covering a cube box; an axis thinner than one source
/// voxel keeps the nearest index.
pub fn box_from_cube(b: &BBox, src: &Volume3, transform: &AffineTransform) -> BBox {
    let dims = src.dims();
    let r = map_box(b, |c| src.world_to_voxel(transform.apply(c)));
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        let (l, h) = index_range(r[a].0, r[a].1, dims[a]).unwrap_or_else(|| {
            let mid = ((r[a].0 + r[a].1) / 2.0).round().clamp(0.0, (dims[a] - 1) as f64) as usize;
            (mid, mid)
        });
        lo[a] = l;
        hi[a] = h;
    }
    BBox::new(lo, hi, dims).expect("clamped to the grid")
}

/// Preprocessed full-volume cube with its box label mask.
pub fn bbox_sample(frame: &Volume3, bbox: &BBox, prep: &PrepConfig) -> Result<(Volume3, Volume3, AffineTransform)> {
    let (cube, t) = preprocess(frame, prep)?;
    let labels = match box_to_cube(bbox, frame, &t, prep.target_edge) {
        Some(b) => b.mask(&cube)?,
        None => cube.map(|_| 0.0),
    };
    Ok((cube, labels, t))
}

/// A preprocessed crop with its cube-voxel → world transform.
#[derive(Clone, Debug)]
pub struct LandmarkSample {
    pub input: Volume3,
    pub transform: AffineTransform,
    pub landmarks: LandmarkSet,
}

pub fn landmark_sample(frame: &Volume3, bbox: &BBox, lms: &LandmarkSet, prep: &PrepConfig, margin: f64) -> Result<LandmarkSample> {
    let (cube, transform) = crop_resize(frame, bbox, prep.target_edge, margin)?;
    Ok(LandmarkSample { input: preprocess_intensity(&cube, prep)?, transform, landmarks: lms.clone() })
}
