//! Glue between the two networks: boxes from probability maps, cube crops,
//! heatmap targets and their decoding, temporal aggregation and metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::Tensor;
use crate::volcore::{AffineTransform, LandmarkId, LandmarkSet, Vec3, Volume3};

/// Inclusive voxel-index box in some volume's grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min_idx: [usize; 3],
    pub max_idx: [usize; 3],
}

impl BBox {
    pub fn new(min_idx: [usize; 3], max_idx: [usize; 3], dims: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if min_idx[a] > max_idx[a] || max_idx[a] >= dims[a] {
                return Err(Error::InvalidVolume(format!(
                    "box {min_idx:?}..={max_idx:?} is not valid in a {dims:?} grid"
                )));
            }
        }
        Ok(BBox { min_idx, max_idx })
    }

    pub fn full(dims: [usize; 3]) -> Self {
        BBox { min_idx: [0; 3], max_idx: dims.map(|n| n - 1) }
    }

    pub fn voxel_count(&self) -> usize {
        (0..3).map(|a| self.max_idx[a] - self.min_idx[a] + 1).product()
    }

    pub fn contains_index(&self, idx: [usize; 3]) -> bool {
        (0..3).all(|a| (self.min_idx[a]..=self.max_idx[a]).contains(&idx[a]))
    }

    /// Containment of a continuous voxel coordinate, counting the full
    /// extent of the boundary voxels.
    pub fn contains_voxel_coord(&self, c: Vec3) -> bool {
        (0..3).all(|a| c[a] >= self.min_idx[a] as f64 - 0.5 && c[a] <= self.max_idx[a] as f64 + 0.5)
    }

    /// Binary mask of the box on a grid (x-fastest, like [`Volume3`]).
    pub fn mask(&self, like: &Volume3) -> Result<Volume3> {
        Volume3::from_fn(like.dims(), like.spacing(), like.origin(), |i, j, k| {
            if self.contains_index([i, j, k]) { 1.0 } else { 0.0 }
        })
    }

    /// Grows by `margin` voxels per side, clipped to the grid.
    pub fn grow(&self, margin: usize, dims: [usize; 3]) -> BBox {
        BBox {
            min_idx: self.min_idx.map(|v| v.saturating_sub(margin)),
            max_idx: [0, 1, 2].map(|a| (self.max_idx[a] + margin).min(dims[a] - 1)),
        }
    }
}

/// Per axis, the first indices where the normalized cumulative projection
/// profile reaches `lo` and `hi`.
pub fn mask_to_bbox(prob: &Volume3, lo: f64, hi: f64) -> Result<BBox> {
    let [nx, ny, nz] = prob.dims();
    let mut profiles = [vec![0.0f64; nx], vec![0.0f64; ny], vec![0.0f64; nz]];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = prob.get(i, j, k) as f64;
                profiles[0][i] += v;
                profiles[1][j] += v;
                profiles[2][k] += v;
            }
        }
    }
    let total: f64 = profiles[2].iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyMap);
    }
    let crossing = |p: &[f64], q: f64| -> usize {
        let mut acc = 0.0;
        for (i, &v) in p.iter().enumerate() {
            acc += v;
            if acc / total >= q {
                return i;
            }
        }
        p.len() - 1
    };
    let mut min_idx = [0; 3];
    let mut max_idx = [0; 3];
    for a in 0..3 {
        min_idx[a] = crossing(&profiles[a], lo);
        max_idx[a] = crossing(&profiles[a], hi);
    }
    BBox::new(min_idx, max_idx, prob.dims())
}

/// Cube crop around `bbox`, resampled to `target_edge³`. The cube side is
/// the longest physical box extent (voxel center to voxel center) scaled by
/// `1 + margin`; the cube is centered on the box. Returns the cube volume and
/// the cube-voxel → source-world transform.
pub fn crop_resize(v: &Volume3, bbox: &BBox, target_edge: usize, margin: f64) -> Result<(Volume3, AffineTransform)> {
    if target_edge < 2 {
        return Err(Error::config("target_edge", format!("must be >= 2, got {target_edge}")));
    }
    let lo = Vec3::new(bbox.min_idx[0] as f64, bbox.min_idx[1] as f64, bbox.min_idx[2] as f64);
    let hi = Vec3::new(bbox.max_idx[0] as f64, bbox.max_idx[1] as f64, bbox.max_idx[2] as f64);
    let extent = (hi - lo).component_mul(&v.spacing());
    // A box one voxel thin in every axis still gets a one-voxel cube.
    let side = extent.max().max(v.spacing().max()) * (1.0 + margin);
    let center = v.voxel_to_world((lo + hi) / 2.0);
    crate::volcore::cube_geometry(v, center, side, target_edge)
}

/// Six landmark heatmaps on a cube, stored `(channel, x, y, z)` with z
/// fastest so it can feed the network directly.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub edge: usize,
    pub data: Vec<f32>,
    /// Channels that carry a target.
    pub mask: [bool; 6],
    /// Channels whose landmark fell outside the cube and were masked.
    pub outside: [bool; 6],
}

impl HeatmapStack {
    pub fn zeros(edge: usize) -> Self {
        HeatmapStack { edge, data: vec![0.0; 6 * edge.pow(3)], mask: [false; 6], outside: [false; 6] }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.edge.pow(3);
        &self.data[c * n..(c + 1) * n]
    }

    pub fn value(&self, c: usize, idx: [usize; 3]) -> f32 {
        let e = self.edge;
        self.channel(c)[(idx[0] * e + idx[1]) * e + idx[2]]
    }

    /// Network-shaped `(1, 6, e, e, e)` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let e = self.edge;
        Tensor::from_vec(&[1, 6, e, e, e], self.data.clone()).expect("heatmap shape")
    }

    /// Takes a network output `(1, 6, e, e, e)` as a fully-valid stack.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let [b, c, nx, ny, nz] = t.dims5()?;
        if b != 1 || c != 6 || nx != ny || ny != nz {
            return Err(Error::shape("heatmap", format!("expected (1, 6, e, e, e), got {:?}", t.shape())));
        }
        Ok(HeatmapStack { edge: nx, data: t.data().to_vec(), mask: [true; 6], outside: [false; 6] })
    }
}

/// Isotropic Gaussian targets `exp(−‖p − p_lm‖² / 2σ²)` in cube-voxel units,
/// scaled so the voxel nearest each landmark reads exactly 1.
pub fn encode_heatmaps(lms: &LandmarkSet, transform: &AffineTransform, sigma_vox: f64, edge: usize) -> HeatmapStack {
    let mut h = HeatmapStack::zeros(edge);
    let n = edge.pow(3);
    let inv = 1.0 / (2.0 * sigma_vox * sigma_vox);
    for (id, p) in lms.iter() {
        let c = id.index();
        let u = transform.apply_inverse(p);
        if !u.iter().all(|&v| v >= 0.0 && v <= (edge - 1) as f64) {
            h.outside[c] = true;
            continue;
        }
        let factors: Vec<Vec<f64>> = (0..3)
            .map(|a| {
                let near = u[a].round();
                let base = (near - u[a]).powi(2);
                (0..edge).map(|i| (-((i as f64 - u[a]).powi(2) - base) * inv).exp()).collect()
            })
            .collect();
        let dst = &mut h.data[c * n..(c + 1) * n];
        for i in 0..edge {
            for j in 0..edge {
                let fij = factors[0][i] * factors[1][j];
                let row = &mut dst[(i * edge + j) * edge..][..edge];
                for (v, &fk) in row.iter_mut().zip(&factors[2]) {
                    *v = (fij * fk) as f32;
                }
            }
        }
        h.mask[c] = true;
    }
    h
}

/// Argmax voxel of one channel; ties go to the lowest linear index.
pub fn argmax_voxel(channel: &[f32], edge: usize) -> [usize; 3] {
    let mut best = 0;
    for (i, &v) in channel.iter().enumerate() {
        if v > channel[best] {
            best = i;
        }
    }
    [best / (edge * edge), (best / edge) % edge, best % edge]
}

/// Peak of every masked-in channel, mapped to world millimetres.
pub fn decode_peaks(h: &HeatmapStack, transform: &AffineTransform) -> LandmarkSet {
    let mut out = LandmarkSet::new();
    for id in LandmarkId::ALL {
        if !h.mask[id.index()] {
            continue;
        }
        let [i, j, k] = argmax_voxel(h.channel(id.index()), h.edge);
        out.insert(id, transform.apply(Vec3::new(i as f64, j as f64, k as f64)));
    }
    out
}

/// Median with the mean of the middle pair for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Componentwise median over the frames where each landmark is present.
pub fn temporal_median(per_frame: &[LandmarkSet]) -> Result<LandmarkSet> {
    if per_frame.is_empty() {
        return Err(Error::Empty("temporal_median needs at least one frame"));
    }
    let mut out = LandmarkSet::new();
    for id in LandmarkId::ALL {
        let pts: Vec<Vec3> = per_frame.iter().filter_map(|s| s.get(id)).collect();
        if pts.is_empty() {
            continue;
        }
        let comp = |a: usize| median(&mut pts.iter().map(|p| p[a]).collect::<Vec<_>>()).expect("non-empty");
        out.insert(id, Vec3::new(comp(0), comp(1), comp(2)));
    }
    Ok(out)
}

/// Euclidean error per landmark present in both sets.
pub fn landmark_errors(pred: &LandmarkSet, truth: &LandmarkSet) -> [Option<f64>; 6] {
    LandmarkId::ALL.map(|id| match (pred.get(id), truth.get(id)) {
        (Some(p), Some(t)) => Some((p - t).norm()),
        _ => None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBoxMetrics {
    /// Ground-truth landmarks inside the extracted box.
    pub containment_fraction: f64,
    /// Extracted box voxels over volume voxels.
    pub volume_fraction: f64,
    /// Of the map thresholded at ½ against the ground-truth box mask.
    pub dice: f64,
    pub pixel_accuracy: f64,
}

/// Box-stage quality for one volume. `landmarks` are world points.
pub fn bbox_metrics(pred_map: &Volume3, truth_box: &BBox, landmarks: &[Vec3], lo: f64, hi: f64) -> BBoxMetrics {
    let dims = pred_map.dims();
    let extracted = mask_to_bbox(pred_map, lo, hi).unwrap_or_else(|_| BBox::full(dims));
    let inside = landmarks.iter().filter(|&&p| extracted.contains_voxel_coord(pred_map.world_to_voxel(p))).count();
    let containment_fraction = if landmarks.is_empty() { 1.0 } else { inside as f64 / landmarks.len() as f64 };
    let (mut tp, mut pred_pos, mut truth_pos, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = pred_map.get(i, j, k) >= 0.5;
                let t = truth_box.contains_index([i, j, k]);
                tp += (p && t) as usize;
                pred_pos += p as usize;
                truth_pos += t as usize;
                correct += (p == t) as usize;
            }
        }
    }
    let n = pred_map.len() as f64;
    let dice = if pred_pos + truth_pos == 0 { 1.0 } else { 2.0 * tp as f64 / (pred_pos + truth_pos) as f64 };
    BBoxMetrics {
        containment_fraction,
        volume_fraction: extracted.voxel_count() as f64 / n,
        dice,
        pixel_accuracy: correct as f64 / n,
    }
}

/// `(1, 1, X, Y, Z)` network input from an x-fastest volume.
pub fn volume_to_tensor(v: &Volume3) -> Tensor<f32> {
    let [nx, ny, nz] = v.dims();
    let mut data = Vec::with_capacity(v.len());
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                data.push(v.get(i, j, k));
            }
        }
    }
    Tensor::from_vec(&[1, 1, nx, ny, nz], data).expect("volume shape")
}

/// One channel of a `(1, C, X, Y, Z)` tensor as a volume on `like`'s grid.
pub fn tensor_channel_to_volume(t: &Tensor<f32>, channel: usize, like: &Volume3) -> Result<Volume3> {
    let [_, c, nx, ny, nz] = t.dims5()?;
    if [nx, ny, nz] != like.dims() || channel >= c {
        return Err(Error::shape("volume", format!("tensor {:?} vs grid {:?}", t.shape(), like.dims())));
    }
    let plane = t.channel(0, channel);
    Volume3::from_fn(like.dims(), like.spacing(), like.origin(), |i, j, k| plane[(i * ny + j) * nz + k])
}

/// Per-voxel foreground probability of 2-class logits `(1, 2, X, Y, Z)`,
/// as a volume on `like`'s grid.
pub fn foreground_probability(logits: &Tensor<f32>, like: &Volume3) -> Result<Volume3> {
    let [_, c, ..] = logits.dims5()?;
    if c != 2 {
        return Err(Error::shape("channel", format!("expected 2-class logits, got {c} channels")));
    }
    let (bg, fg) = (logits.channel(0, 0), logits.channel(0, 1));
    let probs: Vec<f32> = bg.iter().zip(fg).map(|(&b, &f)| (1.0 / (1.0 + ((b - f) as f64).exp())) as f32).collect();
    let t = Tensor::from_vec(&[1, 1, like.dims()[0], like.dims()[1], like.dims()[2]], probs)?;
    tensor_channel_to_volume(&t, 0, like)
}
