//! Long-axis and short-axis view planes from landmarks, and multiplanar
//! reformation of volumes onto them.
//!
//! A plane's image has `right` pointing along increasing column and `up`
//! toward row 0. `right = normal × up`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::volcore::{LandmarkId, LandmarkSet, Series4D, Vec3, Volume3};

pub const DEFAULT_RESOLUTION: usize = 256;
/// View width relative to the diameter of the landmarks' bounding sphere.
pub const DEFAULT_EXTENT_SCALE: f64 = 1.5;
const MIN_TRIANGLE_AREA_MM2: f64 = 1.0;
const ORTHO_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub origin: Vec3,
    pub normal: Vec3,
    pub up: Vec3,
    pub right: Vec3,
    pub extent_mm: f64,
    pub resolution: usize,
}

impl PlaneSpec {
    /// Builds from a normal and an in-plane up direction; `right` follows.
    fn from_normal_up(origin: Vec3, normal: Vec3, up: Vec3, lms: &LandmarkSet) -> PlaneSpec {
        PlaneSpec {
            origin,
            normal,
            up,
            right: normal.cross(&up),
            extent_mm: default_extent(lms),
            resolution: DEFAULT_RESOLUTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: &Vec3| (v.norm() - 1.0).abs() <= ORTHO_TOL;
        if !(unit(&self.normal) && unit(&self.up) && unit(&self.right)) {
            return Err(Error::Degenerate("plane axes are not unit vectors".into()));
        }
        if self.normal.dot(&self.up).abs() > ORTHO_TOL
            || self.normal.dot(&self.right).abs() > ORTHO_TOL
            || self.up.dot(&self.right).abs() > ORTHO_TOL
        {
            return Err(Error::Degenerate("plane axes are not orthogonal".into()));
        }
        if (self.normal.cross(&self.up) - self.right).amax() > ORTHO_TOL {
            return Err(Error::Degenerate("right must equal normal × up".into()));
        }
        if !(self.extent_mm > 0.0) || self.resolution == 0 {
            return Err(Error::Degenerate("plane needs a positive extent and resolution".into()));
        }
        Ok(())
    }

    /// In-plane `(right, up)` coordinates of `p` relative to the origin.
    pub fn in_plane(&self, p: Vec3) -> (f64, f64) {
        let d = p - self.origin;
        (d.dot(&self.right), d.dot(&self.up))
    }

    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p - self.origin).dot(&self.normal)
    }

    /// World position of pixel `(row, col)`.
    pub fn pixel_world(&self, row: usize, col: usize) -> Vec3 {
        let (u, w) = if self.resolution == 1 {
            (0.0, 0.0)
        } else {
            let step = self.extent_mm / (self.resolution - 1) as f64;
            (-self.extent_mm / 2.0 + col as f64 * step, self.extent_mm / 2.0 - row as f64 * step)
        };
        self.origin + self.right * u + self.up * w
    }
}

/// Diameter of the centroid-centered sphere enclosing the present landmarks,
/// times [`DEFAULT_EXTENT_SCALE`].
pub fn default_extent(lms: &LandmarkSet) -> f64 {
    let pts: Vec<Vec3> = lms.iter().map(|(_, p)| p).collect();
    if pts.is_empty() {
        return 1.0;
    }
    let c = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / pts.len() as f64;
    let r = pts.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    (2.0 * r * DEFAULT_EXTENT_SCALE).max(1.0)
}

fn triangle_normal(a: Vec3, b: Vec3, c: Vec3, view: &str) -> Result<Vec3> {
    let n = (b - a).cross(&(c - a));
    if n.norm() / 2.0 < MIN_TRIANGLE_AREA_MM2 {
        return Err(Error::Degenerate(format!("{view}: landmarks are collinear")));
    }
    Ok(n.normalize())
}

/// Through TV, MV and LVA with LVA toward the top.
pub fn plane_4ch(lms: &LandmarkSet) -> Result<PlaneSpec> {
    let tv = lms.require(LandmarkId::TV, "4ch view")?;
    let mv = lms.require(LandmarkId::MV, "4ch view")?;
    let lva = lms.require(LandmarkId::LVA, "4ch view")?;
    let n = triangle_normal(tv, mv, lva, "4ch view")?;
    let d = lva - (tv + mv) / 2.0;
    let up = (d - n * d.dot(&n)).normalize();
    Ok(PlaneSpec::from_normal_up((tv + mv + lva) / 3.0, n, up, lms))
}

/// Through AV, MV and LVA with LVA toward the left.
pub fn plane_3ch(lms: &LandmarkSet) -> Result<PlaneSpec> {
    let av = lms.require(LandmarkId::AV, "3ch view")?;
    let mv = lms.require(LandmarkId::MV, "3ch view")?;
    let lva = lms.require(LandmarkId::LVA, "3ch view")?;
    let n = triangle_normal(av, mv, lva, "3ch view")?;
    let d = lva - (av + mv) / 2.0;
    let right = -(d - n * d.dot(&n)).normalize();
    let up = right.cross(&n);
    Ok(PlaneSpec::from_normal_up((av + mv + lva) / 3.0, n, up, lms))
}

/// Bisects the obtuse dihedral angle between the 3ch and 4ch planes, through
/// the MV–LVA line, with LVA toward the left.
pub fn plane_2ch(p3: &PlaneSpec, p4: &PlaneSpec, lms: &LandmarkSet) -> Result<PlaneSpec> {
    let mv = lms.require(LandmarkId::MV, "2ch view")?;
    let lva = lms.require(LandmarkId::LVA, "2ch view")?;
    let n3 = p3.normal;
    let mut n4 = p4.normal;
    if n3.cross(&n4).norm() < 1e-6 {
        return Err(Error::Degenerate("2ch view: 3ch and 4ch planes are parallel".into()));
    }
    if n3.dot(&n4) < 0.0 {
        n4 = -n4;
    }
    let n = (n3 - n4).normalize();
    let axis = lva - mv;
    if axis.norm() < 1e-9 {
        return Err(Error::Degenerate("2ch view: MV and LVA coincide".into()));
    }
    // Both parent planes contain MV and LVA, so the axis is already in-plane
    // up to rounding; project to keep the frame exactly orthonormal.
    let right = -(axis - n * axis.dot(&n)).normalize();
    let up = right.cross(&n);
    Ok(PlaneSpec::from_normal_up((mv + lva) / 2.0, n, up, lms))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaxParams {
    pub n_slices: usize,
    /// Fractions along LVA → MV.
    pub span_lo: f64,
    pub span_hi: f64,
}

impl Default for SaxParams {
    fn default() -> Self {
        SaxParams { n_slices: 6, span_lo: 0.0, span_hi: 1.0 }
    }
}

/// Evenly spaced planes orthogonal to LVA → MV, apex first, with the right
/// ventricle toward the left.
pub fn sax_stack(lms: &LandmarkSet, params: &SaxParams) -> Result<Vec<PlaneSpec>> {
    if params.n_slices < 1 {
        return Err(Error::config("n_slices", "must be ≥ 1"));
    }
    if !(params.span_lo < params.span_hi) {
        return Err(Error::config("span_lo", "must be below span_hi"));
    }
    let lva = lms.require(LandmarkId::LVA, "SAX stack")?;
    let mv = lms.require(LandmarkId::MV, "SAX stack")?;
    let rva = lms.require(LandmarkId::RVA, "SAX stack in-plane orientation")?;
    let axis = mv - lva;
    if axis.norm() < 1e-9 {
        return Err(Error::Degenerate("SAX stack: LVA and MV coincide".into()));
    }
    let n = axis.normalize();
    let fractions: Vec<f64> = if params.n_slices == 1 {
        vec![(params.span_lo + params.span_hi) / 2.0]
    } else {
        let step = (params.span_hi - params.span_lo) / (params.n_slices - 1) as f64;
        (0..params.n_slices).map(|i| params.span_lo + i as f64 * step).collect()
    };
    fractions
        .into_iter()
        .map(|f| {
            let origin = lva + axis * f;
            let d = rva - origin;
            let left = d - n * d.dot(&n);
            if left.norm() < 1e-9 {
                return Err(Error::Degenerate("SAX stack: RVA lies on the long axis".into()));
            }
            let right = -left.normalize();
            let up = right.cross(&n);
            Ok(PlaneSpec::from_normal_up(origin, n, up, lms))
        })
        .collect()
}

/// Row-major 2D image, row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Trilinear multiplanar reformation; pixels outside the volume read 0.
pub fn render_plane(v: &Volume3, plane: &PlaneSpec) -> Image {
    let r = plane.resolution;
    let mut data = Vec::with_capacity(r * r);
    for row in 0..r {
        for col in 0..r {
            data.push(v.sample(plane.pixel_world(row, col)));
        }
    }
    Image { width: r, height: r, data }
}

pub fn render_cine(s: &Series4D, plane: &PlaneSpec) -> Vec<Image> {
    s.frames().iter().map(|f| render_plane(f, plane)).collect()
}

/// 8-bit binary PGM bytes with `[lo, hi]` mapped to `[0, 255]`.
pub fn pgm_bytes(img: &Image, lo: f32, hi: f32) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    let range = hi as f64 - lo as f64;
    out.extend(img.data.iter().map(|&v| {
        if range <= 0.0 {
            0
        } else {
            ((v as f64 - lo as f64) / range * 255.0).round().clamp(0.0, 255.0) as u8
        }
    }));
    out
}

/// Writes `frame_NNN.pgm` per image, scaled by one intensity window shared
/// across the cine, plus `plane.json`.
pub fn write_cine(dir: &Path, frames: &[Image], plane: &PlaneSpec) -> Result<()> {
    let (lo, hi) = frames
        .iter()
        .flat_map(|f| f.data.iter().copied())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    for (t, f) in frames.iter().enumerate() {
        fsio::write_atomic(&dir.join(format!("frame_{t:03}.pgm")), &pgm_bytes(f, lo, hi))?;
    }
    fsio::write_json(&dir.join("plane.json"), plane)
}

pub fn read_plane(path: &Path) -> Result<PlaneSpec> {
    let p: PlaneSpec = fsio::read_json(path)?;
    p.validate()?;
    Ok(p)
}
