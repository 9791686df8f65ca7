//! Training-time distortions applied jointly to a volume and its annotations.

//!
//! Geometry is applied first (affine, then elastic, then flip) with a single
//! resample of the volume, and intensities second (brightness, contrast,
//! noise, blur). Landmarks follow the same continuous map as the volume.

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volcore::{LandmarkSet, Vec3, Volume3};

/// Distortion magnitudes. Geometric magnitudes are in voxels of the volume
/// being augmented; every zero magnitude is an exact identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    /// Random mirror per axis (probability ½ each when enabled).
    pub flip_enabled: [bool; 3],
    pub noise_sigma: f64,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub affine_max_rot: f64,
    pub affine_max_scale: f64,
    pub affine_max_shift: f64,
    pub brightness_delta: f64,
    /// Contrast factor drawn from `1 ± contrast_range`.
    pub contrast_range: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            flip_enabled: [false; 3],
            noise_sigma: 0.02,
            elastic_alpha: 1.0,
            elastic_sigma: 4.0,
            affine_max_rot: 0.1,
            affine_max_scale: 0.05,
            affine_max_shift: 2.0,
            brightness_delta: 0.05,
            contrast_range: 0.1,
            blur_sigma: 0.0,
            seed: 0,
        }
    }
}

impl AugConfig {
    /// No distortion at all.
    pub fn identity() -> Self {
        AugConfig {
            flip_enabled: [false; 3],
            noise_sigma: 0.0,
            elastic_alpha: 0.0,
            elastic_sigma: 0.0,
            affine_max_rot: 0.0,
            affine_max_scale: 0.0,
            affine_max_shift: 0.0,
            brightness_delta: 0.0,
            contrast_range: 0.0,
            blur_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("noise_sigma", self.noise_sigma),
            ("elastic_alpha", self.elastic_alpha),
            ("elastic_sigma", self.elastic_sigma),
            ("affine_max_rot", self.affine_max_rot),
            ("affine_max_scale", self.affine_max_scale),
            ("affine_max_shift", self.affine_max_shift),
            ("brightness_delta", self.brightness_delta),
            ("contrast_range", self.contrast_range),
            ("blur_sigma", self.blur_sigma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, format!("must be finite and ≥ 0, got {v}")));
            }
        }
        if self.affine_max_scale >= 1.0 {
            return Err(Error::config("affine_max_scale", "must be < 1"));
        }
        Ok(())
    }
}

/// Per-voxel displacement in voxel units, stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dims: [usize; 3],
    data: Vec<Vec3>,
}

impl DisplacementField {
    pub fn zeros(dims: [usize; 3]) -> Self {
        DisplacementField { dims, data: vec![Vec3::zeros(); dims.iter().product()] }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }

    /// Mean finite-difference gradient magnitude over interior voxels.
    pub fn mean_gradient(&self) -> f64 {
        let [nx, ny, nz] = self.dims;
        let (mut sum, mut n) = (0.0, 0usize);
        for k in 0..nz.saturating_sub(1) {
            for j in 0..ny.saturating_sub(1) {
                for i in 0..nx.saturating_sub(1) {
                    let d = self.at(i, j, k);
                    let g = (self.at(i + 1, j, k) - d).norm_squared()
                        + (self.at(i, j + 1, k) - d).norm_squared()
                        + (self.at(i, j, k + 1) - d).norm_squared();
                    sum += g.sqrt();
                    n += 1;
                }
            }
        }
        if n == 0 { 0.0 } else { sum / n as f64 }
    }

    /// Trilinear interpolation, clamping coordinates to the grid.
    pub fn sample(&self, c: Vec3) -> Vec3 {
        let mut lo = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let top = (self.dims[a] - 1) as f64;
            let x = c[a].clamp(0.0, top);
            let f = x.floor().min((top - 1.0).max(0.0));
            lo[a] = f as usize;
            t[a] = x - f;
        }
        let mut out = Vec3::zeros();
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let up = (corner >> a) & 1 == 1;
                idx[a] = (lo[a] + up as usize).min(self.dims[a] - 1);
                w *= if up { t[a] } else { 1.0 - t[a] };
            }
            if w != 0.0 {
                out += self.at(idx[0], idx[1], idx[2]) * w;
            }
        }
        out
    }
}

/// Smoothed white-noise displacement scaled so its largest magnitude is
/// `alpha` voxels.
pub fn elastic_field<R: Rng + ?Sized>(dims: [usize; 3], alpha: f64, sigma: f64, rng: &mut R) -> DisplacementField {
    let n: usize = dims.iter().product();
    if alpha == 0.0 || n == 0 {
        return DisplacementField::zeros(dims);
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut comps: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| normal.sample(rng)).collect()).collect();
    for c in comps.iter_mut() {
        gaussian_blur(c, dims, sigma);
    }
    let mut field = DisplacementField { dims, data: (0..n).map(|i| Vec3::new(comps[0][i], comps[1][i], comps[2][i])).collect() };
    let max = field.max_magnitude();
    if max > 0.0 {
        let s = alpha / max;
        field.data.iter_mut().for_each(|d| *d *= s);
    }
    field
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Separable Gaussian smoothing with replicated borders.
fn gaussian_blur(data: &mut [f64], dims: [usize; 3], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut line = Vec::new();
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..dims[o2] {
            for a in 0..dims[o1] {
                let base = a * strides[o1] + b * strides[o2];
                line.clear();
                line.extend((0..len).map(|i| data[base + i * stride]));
                for i in 0..len {
                    let mut acc = 0.0;
                    for (t, w) in kernel.iter().enumerate() {
                        let src = (i as i64 + t as i64 - r).clamp(0, len as i64 - 1) as usize;
                        acc += w * line[src];
                    }
                    data[base + i * stride] = acc;
                }
            }
        }
    }
}

/// One concrete geometric distortion in voxel coordinates. The forward map
/// takes an original position to its augmented position:
/// `flip(elastic(affine(c)))` with `affine(c) = scale · R (c − m) + m + shift`
/// about the grid center `m`. The elastic step is defined through its
/// pullback `q ↦ q + D(q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricDraw {
    pub dims: [usize; 3],
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub shift: Vec3,
    pub elastic: Option<DisplacementField>,
    pub flips: [bool; 3],
}

impl GeometricDraw {
    pub fn identity(dims: [usize; 3]) -> Self {
        GeometricDraw { dims, rotation: Matrix3::identity(), scale: 1.0, shift: Vec3::zeros(), elastic: None, flips: [false; 3] }
    }

    pub fn draw<R: Rng + ?Sized>(dims: [usize; 3], cfg: &AugConfig, rng: &mut R) -> Self {
        let mut g = GeometricDraw::identity(dims);
        if cfg.affine_max_rot > 0.0 {
            let axis: [f64; 3] = UnitSphere.sample(rng);
            let angle = rng.random_range(-cfg.affine_max_rot..=cfg.affine_max_rot);
            g.rotation = *Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::from(axis)), angle).matrix();
        }
        if cfg.affine_max_scale > 0.0 {
            g.scale = 1.0 + rng.random_range(-cfg.affine_max_scale..=cfg.affine_max_scale);
        }
        if cfg.affine_max_shift > 0.0 {
            let s = cfg.affine_max_shift;
            g.shift = Vec3::new(rng.random_range(-s..=s), rng.random_range(-s..=s), rng.random_range(-s..=s));
        }
        if cfg.elastic_alpha > 0.0 {
            g.elastic = Some(elastic_field(dims, cfg.elastic_alpha, cfg.elastic_sigma, rng));
        }
        for a in 0..3 {
            if cfg.flip_enabled[a] {
                g.flips[a] = rng.random_bool(0.5);
            }
        }
        g
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity()
            && self.scale == 1.0
            && self.shift == Vec3::zeros()
            && self.elastic.is_none()
            && self.flips == [false; 3]
    }

    fn center(&self) -> Vec3 {
        Vec3::new(self.dims[0] as f64 - 1.0, self.dims[1] as f64 - 1.0, self.dims[2] as f64 - 1.0) / 2.0
    }

    fn flip(&self, mut c: Vec3) -> Vec3 {
        for a in 0..3 {
            if self.flips[a] {
                c[a] = (self.dims[a] - 1) as f64 - c[a];
            }
        }
        c
    }

    /// Original voxel position of augmented voxel `q`.
    pub fn pullback(&self, q: Vec3) -> Vec3 {
        let mut y = self.flip(q);
        if let Some(field) = &self.elastic {
            y += field.sample(y);
        }
        let m = self.center();
        self.rotation.transpose() * (y - m - self.shift) / self.scale + m
    }

    /// Augmented position of original voxel position `c`.
    pub fn forward(&self, c: Vec3) -> Vec3 {
        let m = self.center();
        let y = self.rotation * (c - m) * self.scale + m + self.shift;
        let mut q = y;
        if let Some(field) = &self.elastic {
            // Solve q + D(q) = y. D is smooth with small gradient, so the
            // fixed-point iteration contracts.
            for _ in 0..100 {
                let next = y - field.sample(q);
                let done = (next - q).amax() < 1e-12;
                q = next;
                if done {
                    break;
                }
            }
        }
        self.flip(q)
    }

    pub fn apply_volume(&self, v: &Volume3) -> Volume3 {
        if self.is_identity() {
            return v.clone();
        }
        let [nx, ny, nz] = v.dims();
        let mut out = Vec::with_capacity(v.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    out.push(v.sample_voxel(self.pullback(Vec3::new(i as f64, j as f64, k as f64))));
                }
            }
        }
        v.with_data(out).expect("same voxel count")
    }

    /// Maps world-space landmarks of `like` through [`Self::forward`].
    pub fn apply_landmarks(&self, lms: &LandmarkSet, like: &Volume3) -> LandmarkSet {
        if self.is_identity() {
            return lms.clone();
        }
        lms.map_points(|p| like.voxel_to_world(self.forward(like.world_to_voxel(p))))
    }
}

/// Brightness, contrast, noise and blur in that order.
pub fn augment_intensity<R: Rng + ?Sized>(v: Volume3, cfg: &AugConfig, rng: &mut R) -> Volume3 {
    let mut data: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let mut touched = false;
    if cfg.brightness_delta > 0.0 {
        let b = rng.random_range(-cfg.brightness_delta..=cfg.brightness_delta);
        data.iter_mut().for_each(|x| *x += b);
        touched = true;
    }
    if cfg.contrast_range > 0.0 && !data.is_empty() {
        let c = 1.0 + rng.random_range(-cfg.contrast_range..=cfg.contrast_range);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        data.iter_mut().for_each(|x| *x = (*x - mean) * c + mean);
        touched = true;
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        data.iter_mut().for_each(|x| *x += normal.sample(rng));
        touched = true;
    }
    if cfg.blur_sigma > 0.0 {
        gaussian_blur(&mut data, v.dims(), cfg.blur_sigma);
        touched = true;
    }
    if !touched {
        return v;
    }
    v.with_data(data.into_iter().map(|x| x as f32).collect()).expect("same voxel count")
}

/// Draws one distortion from `cfg` and applies it to the volume and its
/// landmarks. `cfg` must be valid.
pub fn augment_sample<R: Rng + ?Sized>(v: &Volume3, lms: &LandmarkSet, cfg: &AugConfig, rng: &mut R) -> (Volume3, LandmarkSet) {
    let g = GeometricDraw::draw(v.dims(), cfg, rng);
    let warped = g.apply_volume(v);
    let moved = g.apply_landmarks(lms, v);
    (augment_intensity(warped, cfg, rng), moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volcore::LandmarkId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(n: usize, spacing: f64) -> Volume3 {
        Volume3::from_fn([n, n, n], Vec3::repeat(spacing), Vec3::new(-3.0, 1.0, 2.0), |i, j, k| {
            ((i * 7 + j * 13 + k * 29) % 17) as f32 / 17.0
        })
        .unwrap()
    }

    fn lms_in(v: &Volume3) -> LandmarkSet {
        let mut s = LandmarkSet::new();
        for (n, id) in LandmarkId::ALL.iter().enumerate() {
            s.insert(*id, v.voxel_to_world(Vec3::new(4.3 + n as f64, 9.1 - n as f64, 6.7 + 0.5 * n as f64)));
        }
        s
    }

    fn geometry_only() -> AugConfig {
        AugConfig { noise_sigma: 0.0, brightness_delta: 0.0, contrast_range: 0.0, ..AugConfig::default() }
    }

    #[test]
    fn identity_is_exact() {
        let v = textured(12, 1.5);
        let l = lms_in(&v);
        let (w, m) = augment_sample(&v, &l, &AugConfig::identity(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(w, v);
        assert_eq!(m, l);
        AugConfig::identity().validate().unwrap();
        AugConfig::default().validate().unwrap();
        let bad = AugConfig { noise_sigma: -1.0, ..AugConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "noise_sigma", .. })));
    }

    #[test]
    fn x_flip_mirrors_about_the_mid_plane() {
        let v = textured(10, 2.0);
        let l = lms_in(&v);
        let cfg = AugConfig { flip_enabled: [true, false, false], ..AugConfig::identity() };
        let mut flipped = 0;
        for seed in 0..8 {
            let (w, m) = augment_sample(&v, &l, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            if w == v {
                assert_eq!(m, l);
                continue;
            }
            flipped += 1;
            let mid = v.center().x;
            for ((_, a), (_, b)) in l.iter().zip(m.iter()) {
                assert!((b.x - (2.0 * mid - a.x)).abs() < 1e-9);
                assert_eq!((a.y, a.z), (b.y, b.z));
            }
            for k in 0..10 {
                for j in 0..10 {
                    for i in 0..10 {
                        assert_eq!(w.get(i, j, k), v.get(9 - i, j, k));
                    }
                }
            }
        }
        assert!(flipped > 0 && flipped < 8);
    }

    #[test]
    fn quarter_turn_about_z() {
        let n = 11;
        let v = textured(n, 1.0);
        let l = lms_in(&v);
        let mut g = GeometricDraw::identity(v.dims());
        g.rotation = *Rotation3::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2).matrix();
        let m = g.apply_landmarks(&l, &v);
        let c = v.center();
        for ((_, a), (_, b)) in l.iter().zip(m.iter()) {
            let d = a - c;
            let expect = c + Vec3::new(-d.y, d.x, d.z);
            assert!((b - expect).amax() < 1e-9);
        }
        let w = g.apply_volume(&v);
        // forward maps (i, j) to (n−1−j, i), so out(i', j') = in(j', n−1−i')
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    assert!((w.get(i, j, k) - v.get(j, n - 1 - i, k)).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn forward_inverts_pullback() {
        let v = textured(16, 1.0);
        let cfg = AugConfig { elastic_alpha: 2.0, ..geometry_only() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let g = GeometricDraw::draw(v.dims(), &cfg, &mut rng);
            for p in [Vec3::new(3.2, 7.7, 8.1), Vec3::new(10.0, 4.5, 12.25)] {
                assert!((g.pullback(g.forward(p)) - p).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn elastic_normalization_and_smoothness() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(elastic_field([6; 3], 0.0, 2.0, &mut rng), DisplacementField::zeros([6; 3]));
        for alpha in [0.5, 1.0, 3.0] {
            let f = elastic_field([12, 10, 8], alpha, 2.0, &mut rng);
            assert!((f.max_magnitude() - alpha).abs() < 1e-6);
        }
        for seed in [1u64, 2] {
            let a = elastic_field([24; 3], 1.0, 2.0, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = elastic_field([24; 3], 1.0, 4.0, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(b.mean_gradient() < a.mean_gradient());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let v = textured(12, 1.0);
        let l = lms_in(&v);
        let cfg = AugConfig { flip_enabled: [true; 3], blur_sigma: 0.7, ..AugConfig::default() };
        let a = augment_sample(&v, &l, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = augment_sample(&v, &l, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let c = augment_sample(&v, &l, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn intensity_only_keeps_landmarks() {
        let v = textured(10, 1.0);
        let l = lms_in(&v);
        let cfg = AugConfig {
            noise_sigma: 0.1,
            brightness_delta: 0.2,
            contrast_range: 0.3,
            blur_sigma: 1.0,
            ..AugConfig::identity()
        };
        let (w, m) = augment_sample(&v, &l, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(m, l);
        assert_ne!(w, v);
        assert!(w.same_geometry(&v));
    }

    #[test]
    fn heatmap_peaks_follow_landmarks() {
        let n = 24;
        let v = Volume3::filled([n; 3], Vec3::repeat(1.0), Vec3::zeros(), 0.0).unwrap();
        let cfg = AugConfig { elastic_alpha: 1.0, flip_enabled: [true; 3], affine_max_rot: 0.3, ..geometry_only() };
        for seed in 0..20 {
            let p = Vec3::new(9.0 + seed as f64 * 0.17, 12.4, 11.0 - seed as f64 * 0.11);
            let heat = Volume3::from_fn([n; 3], Vec3::repeat(1.0), Vec3::zeros(), |i, j, k| {
                let d = Vec3::new(i as f64, j as f64, k as f64) - p;
                (-d.norm_squared() / (2.0 * 2.0 * 2.0)).exp() as f32
            })
            .unwrap();
            let lms = LandmarkSet::new().with(LandmarkId::MV, p);
            let g = GeometricDraw::draw(v.dims(), &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let q = g.apply_landmarks(&lms, &v).get(LandmarkId::MV).unwrap();
            let warped = g.apply_volume(&heat);
            let best = (0..warped.len()).max_by(|&a, &b| warped.data()[a].total_cmp(&warped.data()[b])).unwrap();
            let peak = warped.unravel(best);
            let nearest = [q.x.round() as usize, q.y.round() as usize, q.z.round() as usize];
            if peak != nearest {
                // landmark on a half-voxel boundary: the neighbour must tie
                for a in 0..3 {
                    assert!((peak[a] as f64 - q[a]).abs() <= 1.0, "seed {seed}: {peak:?} vs {q}");
                }
                let at = warped.get(nearest[0], nearest[1], nearest[2]);
                assert!(at >= 0.99 * warped.data()[best], "seed {seed}: {at} vs peak {}", warped.data()[best]);
            }
        }
    }
}
