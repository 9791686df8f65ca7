//! Synthetic beating-heart phantoms with analytic landmarks.
//!
//! Each phantom has two half-ellipsoid myocardial cups (LV, RV) opening onto
//! a shared basal plane, four valve rings on that plane, and a textured
//! background. In the heart's local frame the long axis is `+z` (apex at
//! negative `z`), the basal plane is `z = 0`, the RV sits toward `+x` and the
//! outflow valves toward `+y`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::localize::BBox;
use crate::volcore::{write_annotations, write_mvol, FrameAnnotation, LandmarkId, LandmarkSet, Series4D, Vec3, Volume3};

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi { self.lo } else { rng.random_range(self.lo..=self.hi) }
    }

    fn check(&self, field: &'static str, allow_zero: bool) -> Result<()> {
        let ok_lo = if allow_zero { self.lo >= 0.0 } else { self.lo > 0.0 };
        if !(ok_lo && self.lo <= self.hi && self.hi.is_finite()) {
            return Err(Error::config(field, format!("need 0 < lo <= hi, got [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// LV long semi-axis, apex to basal plane.
    pub lv_long_mm: Range,
    pub lv_short_mm: Range,
    pub rv_long_mm: Range,
    pub rv_short_mm: Range,
    pub mv_radius_mm: Range,
    pub tv_radius_mm: Range,
    pub av_radius_mm: Range,
    pub pv_radius_mm: Range,
    /// Myocardial wall thickness of each cup; the LV wall is the thicker.
    pub lv_wall_mm: f64,
    pub rv_wall_mm: f64,
    /// Largest rotation of the heart away from the reference pose.
    pub max_rotation: f64,
    pub max_translation_mm: f64,
    /// Fractional shrink at end systole.
    pub contraction: f64,
    pub frames: usize,
    pub texture: f64,
    pub bbox_margin_vox: usize,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            dims: [64, 64, 48],
            spacing_mm: [1.5, 1.5, 2.0],
            lv_long_mm: Range::new(28.0, 36.0),
            lv_short_mm: Range::new(14.0, 18.0),
            rv_long_mm: Range::new(22.0, 28.0),
            rv_short_mm: Range::new(12.0, 16.0),
            mv_radius_mm: Range::new(9.0, 11.0),
            tv_radius_mm: Range::new(9.0, 12.0),
            av_radius_mm: Range::new(7.0, 9.0),
            pv_radius_mm: Range::new(7.0, 9.0),
            lv_wall_mm: 5.0,
            rv_wall_mm: 2.0,
            max_rotation: 0.35,
            max_translation_mm: 6.0,
            contraction: 0.12,
            frames: 4,
            texture: 0.08,
            bbox_margin_vox: 5,
            seed: 0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::config("dims", "every extent must be >= 2"));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("spacing_mm", "must be positive"));
        }
        for (f, r) in [
            ("lv_long_mm", self.lv_long_mm),
            ("lv_short_mm", self.lv_short_mm),
            ("rv_long_mm", self.rv_long_mm),
            ("rv_short_mm", self.rv_short_mm),
            ("mv_radius_mm", self.mv_radius_mm),
            ("tv_radius_mm", self.tv_radius_mm),
            ("av_radius_mm", self.av_radius_mm),
            ("pv_radius_mm", self.pv_radius_mm),
        ] {
            r.check(f, false)?;
        }
        for (f, w) in [("lv_wall_mm", self.lv_wall_mm), ("rv_wall_mm", self.rv_wall_mm)] {
            if !(w > 0.0) {
                return Err(Error::config(f, "must be positive"));
            }
        }
        if !(self.max_rotation >= 0.0 && self.max_translation_mm >= 0.0 && self.texture >= 0.0) {
            return Err(Error::config("max_rotation", "pose ranges and texture must be >= 0"));
        }
        if !(0.0..0.5).contains(&self.contraction) {
            return Err(Error::config("contraction", "must lie in [0, 0.5)"));
        }
        if self.frames < 1 {
            return Err(Error::config("frames", "must be >= 1"));
        }
        Ok(())
    }
}

/// The sampled anatomy of one phantom, in the heart's local frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anatomy {
    pub lv_long: f64,
    pub lv_short: f64,
    pub rv_long: f64,
    pub rv_short: f64,
    pub mv_radius: f64,
    pub tv_radius: f64,
    pub av_radius: f64,
    pub pv_radius: f64,
    /// Local → world rotation.
    pub rotation: Matrix3<f64>,
    /// World position of the local origin (the basal plane center).
    pub translation: Vec3,
}

struct Cup {
    center: Vec3,
    short: f64,
    long: f64,
}

struct Ring {
    center: Vec3,
    radius: f64,
}

struct Frame {
    lv: Cup,
    rv: Cup,
    rings: [Ring; 4],
    lms: [Vec3; 6],
}

impl Anatomy {
    fn sample<R: Rng + ?Sized>(p: &PhantomParams, rng: &mut R) -> Self {
        let lv_long = p.lv_long_mm.draw(rng);
        let lv_short = p.lv_short_mm.draw(rng);
        let rv_long = p.rv_long_mm.draw(rng);
        let rv_short = p.rv_short_mm.draw(rng);
        let mv_radius = p.mv_radius_mm.draw(rng);
        let tv_radius = p.tv_radius_mm.draw(rng);
        let av_radius = p.av_radius_mm.draw(rng);
        let pv_radius = p.pv_radius_mm.draw(rng);
        // Reference pose: apex pointing toward −x, −y, −z in the scanner frame.
        let reference = Rotation3::rotation_between(&Vec3::z(), &Vec3::new(0.5, 0.4, 1.0).normalize()).expect("not antiparallel");
        let axis: [f64; 3] = UnitSphere.sample(rng);
        let angle = if p.max_rotation > 0.0 { rng.random_range(-p.max_rotation..=p.max_rotation) } else { 0.0 };
        let jitter = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::from(axis)), angle);
        let t = p.max_translation_mm;
        let shift = if t > 0.0 {
            Vec3::new(rng.random_range(-t..=t), rng.random_range(-t..=t), rng.random_range(-t..=t))
        } else {
            Vec3::zeros()
        };
        let rotation = *(jitter * reference).matrix();
        let extent = Vec3::new(
            (p.dims[0] - 1) as f64 * p.spacing_mm[0],
            (p.dims[1] - 1) as f64 * p.spacing_mm[1],
            (p.dims[2] - 1) as f64 * p.spacing_mm[2],
        );
        // Put the middle of the LV long axis at the grid center.
        let translation = extent / 2.0 + shift + rotation * Vec3::new(0.0, 0.0, lv_long / 2.0);
        Anatomy { lv_long, lv_short, rv_long, rv_short, mv_radius, tv_radius, av_radius, pv_radius, rotation, translation }
    }

    fn lv_center(&self) -> Vec3 {
        Vec3::new(-0.5 * self.lv_short, 0.0, 0.0)
    }

    fn rv_center(&self) -> Vec3 {
        Vec3::new(0.6 * self.rv_short, 0.0, 0.0)
    }

    /// Local geometry at contraction scale `s`; everything shrinks about the
    /// basal plane center.
    fn frame(&self, s: f64) -> Frame {
        let lv_c = self.lv_center() * s;
        let rv_c = self.rv_center() * s;
        let mv = lv_c;
        let tv = rv_c;
        let av = mv + Vec3::new(0.0, 0.8 * (self.mv_radius + self.av_radius) * s, 0.0);
        let pv = tv + Vec3::new(0.0, 0.8 * (self.tv_radius + self.pv_radius) * s, 0.0);
        let lva = lv_c - Vec3::new(0.0, 0.0, self.lv_long * s);
        let rva = rv_c - Vec3::new(0.0, 0.0, self.rv_long * s);
        let mut lms = [Vec3::zeros(); 6];
        for (id, p) in [
            (LandmarkId::LVA, lva),
            (LandmarkId::RVA, rva),
            (LandmarkId::AV, av),
            (LandmarkId::MV, mv),
            (LandmarkId::PV, pv),
            (LandmarkId::TV, tv),
        ] {
            lms[id.index()] = p;
        }
        Frame {
            lv: Cup { center: lv_c, short: self.lv_short * s, long: self.lv_long * s },
            rv: Cup { center: rv_c, short: self.rv_short * s, long: self.rv_long * s },
            rings: [
                Ring { center: mv, radius: self.mv_radius * s },
                Ring { center: tv, radius: self.tv_radius * s },
                Ring { center: av, radius: self.av_radius * s },
                Ring { center: pv, radius: self.pv_radius * s },
            ],
            lms,
        }
    }

    pub fn to_world(&self, local: Vec3) -> Vec3 {
        self.rotation * local + self.translation
    }

    pub fn to_local(&self, world: Vec3) -> Vec3 {
        self.rotation.transpose() * (world - self.translation)
    }
}

/// Contraction factor at frame `t` of a cycle of `frames`, 1 at `t = 0`.
pub fn contraction_scale(t: usize, frames: usize, amplitude: f64) -> f64 {
    1.0 - amplitude * (1.0 - (2.0 * PI * t as f64 / frames as f64).cos()) / 2.0
}

const BLOOD: f64 = 0.3;
const MUSCLE: f64 = 1.0;
const RING: f64 = 0.8;
const BACKGROUND: f64 = 0.12;
const RING_TUBE_MM: f64 = 2.0;

/// Approximate signed depth inside a cup wall: 0 outside, blood inside.
fn cup_value(c: &Cup, q: Vec3, wall: f64) -> Option<f64> {
    let d = q - c.center;
    if d.z > 0.0 {
        return None;
    }
    let rho = ((d.x / c.short).powi(2) + (d.y / c.short).powi(2) + (d.z / c.long).powi(2)).sqrt();
    if rho > 1.0 {
        return None;
    }
    let inner = 1.0 - wall / c.short.min(c.long);
    Some(if rho > inner { MUSCLE } else { BLOOD })
}

fn ring_hit(r: &Ring, q: Vec3) -> bool {
    let d = q - r.center;
    let radial = (d.x * d.x + d.y * d.y).sqrt() - r.radius;
    radial * radial + d.z * d.z <= RING_TUBE_MM * RING_TUBE_MM
}

fn render(anatomy: &Anatomy, f: &Frame, p: &PhantomParams, phases: &[f64; 6], heart: &mut [bool]) -> Result<Volume3> {
    let sp = Vec3::from(p.spacing_mm);
    let mut idx = 0;
    Volume3::from_fn(p.dims, sp, Vec3::zeros(), |i, j, k| {
        let w = Vec3::new(i as f64, j as f64, k as f64).component_mul(&sp);
        let q = anatomy.to_local(w);
        let tex = p.texture
            * ((w.x * 0.21 + phases[0]).sin() * (w.y * 0.17 + phases[1]).sin()
                + (w.z * 0.23 + phases[2]).sin() * (w.x * 0.07 + phases[3]).cos()
                + (w.y * 0.11 + phases[4]).cos() * (w.z * 0.13 + phases[5]).sin())
            / 3.0;
        let mut value = None;
        for (cup, wall) in [(&f.lv, p.lv_wall_mm), (&f.rv, p.rv_wall_mm)] {
            if let Some(v) = cup_value(cup, q, wall) {
                value = Some(value.map_or(v, |o: f64| o.max(v)));
            }
        }
        if f.rings.iter().any(|r| ring_hit(r, q)) {
            value = Some(value.map_or(RING, |o: f64| o.max(RING)));
        }
        heart[idx] |= value.is_some();
        idx += 1;
        (value.unwrap_or(BACKGROUND) + tex) as f32
    })
}

fn check_plausible(lms: &[Vec3; 6], a: &Anatomy, s: f64) -> Result<()> {
    let g = |id: LandmarkId| lms[id.index()];
    if (g(LandmarkId::MV) - g(LandmarkId::LVA)).norm() <= a.mv_radius * s {
        return Err(Error::Degenerate("phantom: MV to LVA shorter than the mitral ring radius".into()));
    }
    if (g(LandmarkId::AV) - g(LandmarkId::MV)).norm() > 2.0 * a.av_radius.max(a.mv_radius) * s {
        return Err(Error::Degenerate("phantom: AV farther than two ring radii from MV".into()));
    }
    for x in 0..6 {
        for y in x + 1..6 {
            if (lms[x] - lms[y]).norm() < 4.0 {
                return Err(Error::Degenerate(format!("phantom: landmarks {x} and {y} closer than 4 mm")));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub series: Series4D,
    /// Full ground truth per frame.
    pub landmarks: Vec<LandmarkSet>,
    pub bbox: BBox,
    pub anatomy: Anatomy,
}

pub fn generate_phantom<R: Rng + ?Sized>(p: &PhantomParams, rng: &mut R) -> Result<Phantom> {
    p.validate()?;
    let anatomy = Anatomy::sample(p, rng);
    let phases: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let n: usize = p.dims.iter().product();
    let mut heart = vec![false; n];
    let mut frames = Vec::with_capacity(p.frames);
    let mut landmarks = Vec::with_capacity(p.frames);
    for t in 0..p.frames {
        let s = contraction_scale(t, p.frames, p.contraction);
        let f = anatomy.frame(s);
        check_plausible(&f.lms, &anatomy, s)?;
        frames.push(render(&anatomy, &f, p, &phases, &mut heart)?);
        let mut set = LandmarkSet::new();
        for id in LandmarkId::ALL {
            set.insert(id, anatomy.to_world(f.lms[id.index()]));
        }
        landmarks.push(set);
    }
    let series = Series4D::new(frames)?;
    let bbox = truth_box(&heart, &landmarks, series.frame(0), p)?;
    Ok(Phantom { series, landmarks, bbox, anatomy })
}

/// Voxel bounding box of every heart voxel and landmark over the cycle, grown
/// by the configured margin.
fn truth_box(heart: &[bool], landmarks: &[LandmarkSet], like: &Volume3, p: &PhantomParams) -> Result<BBox> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut include = |c: [usize; 3]| {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    };
    for (i, _) in heart.iter().enumerate().filter(|(_, &h)| h) {
        include(like.unravel(i));
    }
    for set in landmarks {
        for (_, w) in set.iter() {
            let v = like.world_to_voxel(w);
            for corner in 0..8 {
                let c: [usize; 3] = std::array::from_fn(|a| {
                    let x = if (corner >> a) & 1 == 1 { v[a].ceil() } else { v[a].floor() };
                    x.clamp(0.0, (p.dims[a] - 1) as f64) as usize
                });
                include(c);
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(Error::Degenerate("phantom: heart lies outside the grid".into()));
    }
    Ok(BBox::new(lo, hi, p.dims)?.grow(p.bbox_margin_vox, p.dims))
}

/// One phantom patient with possibly incomplete annotations.
#[derive(Clone, Debug)]
pub struct PhantomCase {
    pub id: String,
    pub phantom: Phantom,
    /// Per-frame annotations after random dropping.
    pub annotations: Vec<LandmarkSet>,
}

pub fn patient_id(i: usize) -> String {
    format!("P{i:04}")
}

fn case_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng
}

/// Phantom `i` of the dataset seeded by `seed`; independent of `n`.
pub fn phantom_case(i: usize, params: &PhantomParams, seed: u64, drop_fraction: f64) -> Result<PhantomCase> {
    if !(0.0..=1.0).contains(&drop_fraction) {
        return Err(Error::config("drop_fraction", "must lie in [0, 1]"));
    }
    let mut rng = case_rng(seed, i);
    let phantom = generate_phantom(params, &mut rng)?;
    let annotations = phantom
        .landmarks
        .iter()
        .map(|full| {
            let mut set = full.clone();
            for id in LandmarkId::ALL {
                if drop_fraction > 0.0 && rng.random_bool(drop_fraction) {
                    set.remove(id);
                }
            }
            set
        })
        .collect();
    Ok(PhantomCase { id: patient_id(i), phantom, annotations })
}

pub fn phantom_dataset(n: usize, params: &PhantomParams, seed: u64, drop_fraction: f64) -> Result<Vec<PhantomCase>> {
    if n < 1 {
        return Err(Error::config("n", "must be >= 1"));
    }
    (0..n).map(|i| phantom_case(i, params, seed, drop_fraction)).collect()
}

/// On-disk record of one patient in a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub id: String,
    /// MVOL stem relative to the dataset directory.
    pub volume: String,
    pub annotations: String,
    /// Ground-truth box `[min_idx, max_idx]` when known.
    pub bbox: Option<BBox>,
    /// Unabridged landmarks, kept for evaluation.
    pub truth: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub patients: Vec<PatientEntry>,
}

pub const DATASET_INDEX: &str = "dataset.json";

fn frame_annotations(sets: &[LandmarkSet]) -> Vec<FrameAnnotation> {
    sets.iter().enumerate().map(|(frame, points)| FrameAnnotation { frame, points: points.clone() }).collect()
}

/// Writes `<id>.json`/`<id>.raw`, `<id>.landmarks.json`, `<id>.truth.json`.
pub fn write_case(dir: &Path, case: &PhantomCase) -> Result<PatientEntry> {
    let stem = dir.join(&case.id);
    write_mvol(&case.phantom.series, &stem)?;
    let ann = format!("{}.landmarks.json", case.id);
    let truth = format!("{}.truth.json", case.id);
    write_annotations(&dir.join(&ann), &frame_annotations(&case.annotations))?;
    write_annotations(&dir.join(&truth), &frame_annotations(&case.phantom.landmarks))?;
    Ok(PatientEntry {
        id: case.id.clone(),
        volume: case.id.clone(),
        annotations: ann,
        bbox: Some(case.phantom.bbox),
        truth: Some(truth),
    })
}

/// Generates and writes `n` phantoms one at a time plus the dataset index.
pub fn write_dataset(dir: &Path, n: usize, params: &PhantomParams, seed: u64, drop_fraction: f64) -> Result<PathBuf> {
    if n < 1 {
        return Err(Error::config("n", "must be >= 1"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut patients = Vec::with_capacity(n);
    for i in 0..n {
        patients.push(write_case(dir, &phantom_case(i, params, seed, drop_fraction)?)?);
    }
    let index = dir.join(DATASET_INDEX);
    fsio::write_json(&index, &DatasetIndex { patients })?;
    Ok(index)
}
