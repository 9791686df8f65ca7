//! The preprocessing chain applied before both network stages: isotropic
//! resize, percentile clipping, min–max normalization, 3D CLAHE, and
//! per-volume standardization, in that order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volcore::{resample_isotropic, AffineTransform, Volume3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub target_edge: usize,
    pub clip_lo_pct: f64,
    pub clip_hi_pct: f64,
    pub clahe_tiles: usize,
    /// Clip limit as a multiple of the mean bin count.
    pub clahe_clip: f64,
    pub clahe_bins: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig { target_edge: 64, clip_lo_pct: 1.0, clip_hi_pct: 99.0, clahe_tiles: 8, clahe_clip: 2.0, clahe_bins: 256 }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_edge < 2 {
            return Err(Error::config("target_edge", "must be >= 2"));
        }
        if !(0.0 <= self.clip_lo_pct && self.clip_lo_pct < self.clip_hi_pct && self.clip_hi_pct <= 100.0) {
            return Err(Error::config("clip_lo_pct", "need 0 <= clip_lo_pct < clip_hi_pct <= 100"));
        }
        if self.clahe_tiles == 0 || !self.target_edge.is_multiple_of(self.clahe_tiles) {
            return Err(Error::config("clahe_tiles", "must be >= 1 and divide target_edge"));
        }
        if !(self.clahe_clip >= 1.0) {
            return Err(Error::config("clahe_clip", "must be >= 1"));
        }
        if self.clahe_bins < 2 {
            return Err(Error::config("clahe_bins", "must be >= 2"));
        }
        Ok(())
    }
}

/// Nearest-rank percentile of an already sorted slice.
pub fn nearest_rank(sorted: &[f32], pct: f64) -> f32 {
    let n = sorted.len();
    let rank = ((pct * n as f64) / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn percentile_clip(v: &Volume3, lo_pct: f64, hi_pct: f64) -> Volume3 {
    let mut sorted = v.data().to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let lo = nearest_rank(&sorted, lo_pct);
    let hi = nearest_rank(&sorted, hi_pct);
    v.map(|x| x.clamp(lo, hi))
}

/// Maps values onto `[0, 1]`; a constant volume becomes all zeros.
pub fn minmax_normalize(v: &Volume3) -> Volume3 {
    let (lo, hi) = v.min_max();
    if hi <= lo {
        return v.map(|_| 0.0);
    }
    let (lo, range) = (lo as f64, hi as f64 - lo as f64);
    v.map(|x| ((x as f64 - lo) / range) as f32)
}

/// Standardizes to zero mean and unit population standard deviation.
pub fn center_scale(v: &Volume3) -> Volume3 {
    let n = v.len() as f64;
    let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return v.map(|_| 0.0);
    }
    v.map(|x| ((x as f64 - mean) / std) as f32)
}

/// Per-axis interpolation support: the two tiles bracketing a voxel and the
/// weight of the upper one.
fn tile_weights(n: usize, tiles: usize) -> Vec<(usize, usize, f64)> {
    let size = (n / tiles) as f64;
    (0..n)
        .map(|x| {
            let g = (x as f64 + 0.5) / size - 0.5;
            if g <= 0.0 {
                (0, 0, 0.0)
            } else if g >= (tiles - 1) as f64 {
                (tiles - 1, tiles - 1, 0.0)
            } else {
                let k0 = g.floor() as usize;
                (k0, k0 + 1, g - k0 as f64)
            }
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization in 3D.
///
/// Each of `clahe_tiles³` tiles gets a clipped histogram (excess mass spread
/// uniformly over all bins) and its equalizing map. The lowest occupied bin of
/// a tile maps to 0, so a tile holding a single value maps to 0. Voxels blend
/// the maps of the up to eight nearest tile centers trilinearly.
pub fn clahe3d(v: &Volume3, cfg: &PrepConfig) -> Result<Volume3> {
    let tiles = cfg.clahe_tiles;
    let bins = cfg.clahe_bins;
    let dims = v.dims();
    if tiles == 0 || dims.iter().any(|&d| d % tiles != 0) {
        return Err(Error::config(
            "clahe_tiles",
            format!("volume dims {dims:?} not divisible by {tiles} tiles per axis"),
        ));
    }
    if bins < 2 {
        return Err(Error::config("clahe_bins", "must be >= 2"));
    }
    let tsize = dims.map(|d| d / tiles);
    let bin_of = |x: f32| ((x.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1);
    let binned: Vec<u32> = v.data().iter().map(|&x| bin_of(x) as u32).collect();

    let tile_voxels = (tsize[0] * tsize[1] * tsize[2]) as f64;
    let clip = cfg.clahe_clip * tile_voxels / bins as f64;
    let mut maps = vec![0f32; tiles * tiles * tiles * bins];
    let mut hist = vec![0f64; bins];
    for tz in 0..tiles {
        for ty in 0..tiles {
            for tx in 0..tiles {
                hist.iter_mut().for_each(|h| *h = 0.0);
                for k in tz * tsize[2]..(tz + 1) * tsize[2] {
                    for j in ty * tsize[1]..(ty + 1) * tsize[1] {
                        let row = v.linear_index(tx * tsize[0], j, k);
                        for &b in &binned[row..row + tsize[0]] {
                            hist[b as usize] += 1.0;
                        }
                    }
                }
                let lowest = hist.iter().position(|&h| h > 0.0).unwrap_or(0);
                let excess: f64 = hist.iter().map(|&h| (h - clip).max(0.0)).sum();
                let share = excess / bins as f64;
                let mut cdf = 0.0;
                let mut cdf_lowest = 0.0;
                let map = &mut maps[((tz * tiles + ty) * tiles + tx) * bins..][..bins];
                let mut cdfs = vec![0f64; bins];
                for b in 0..bins {
                    cdf += hist[b].min(clip) + share;
                    cdfs[b] = cdf;
                    if b == lowest {
                        cdf_lowest = cdf;
                    }
                }
                let denom = cdf - cdf_lowest;
                for b in 0..bins {
                    map[b] = if denom > 0.0 { ((cdfs[b] - cdf_lowest) / denom).clamp(0.0, 1.0) as f32 } else { 0.0 };
                }
            }
        }
    }

    let wx = tile_weights(dims[0], tiles);
    let wy = tile_weights(dims[1], tiles);
    let wz = tile_weights(dims[2], tiles);
    let map_at = |tx: usize, ty: usize, tz: usize, b: usize| maps[((tz * tiles + ty) * tiles + tx) * bins + b] as f64;
    let mut out = Vec::with_capacity(v.len());
    for (k, &(z0, z1, fz)) in wz.iter().enumerate() {
        for (j, &(y0, y1, fy)) in wy.iter().enumerate() {
            for (i, &(x0, x1, fx)) in wx.iter().enumerate() {
                let b = binned[v.linear_index(i, j, k)] as usize;
                let lerp_x = |ty, tz| map_at(x0, ty, tz, b) * (1.0 - fx) + map_at(x1, ty, tz, b) * fx;
                let lerp_y = |tz| lerp_x(y0, tz) * (1.0 - fy) + lerp_x(y1, tz) * fy;
                let val = lerp_y(z0) * (1.0 - fz) + lerp_y(z1) * fz;
                out.push(val.clamp(0.0, 1.0) as f32);
            }
        }
    }
    v.with_data(out)
}

/// Steps ii–v on a volume that is already on the network grid.
pub fn preprocess_intensity(v: &Volume3, cfg: &PrepConfig) -> Result<Volume3> {
    let clipped = percentile_clip(v, cfg.clip_lo_pct, cfg.clip_hi_pct);
    let normalized = minmax_normalize(&clipped);
    let equalized = clahe3d(&normalized, cfg)?;
    Ok(center_scale(&equalized))
}

/// Full chain. The returned transform maps cube voxel coordinates to source
/// world millimetres.
pub fn preprocess(v: &Volume3, cfg: &PrepConfig) -> Result<(Volume3, AffineTransform)> {
    cfg.validate()?;
    let (cube, transform) = resample_isotropic(v, cfg.target_edge)?;
    Ok((preprocess_intensity(&cube, cfg)?, transform))
}
