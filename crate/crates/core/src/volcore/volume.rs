use super::Vec3;
use crate::error::{Error, Result};

/// A 3D scalar grid with physical spacing and origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3 {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, data: Vec<f32>) -> Result<Self> {
        validate_geometry(dims, spacing, origin)?;
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::SizeMismatch { expected, actual: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Volume3 { dims, spacing, origin, data })
    }

    pub fn filled(dims: [usize; 3], spacing: Vec3, origin: Vec3, value: f32) -> Result<Self> {
        Volume3::new(dims, spacing, origin, vec![value; dims.iter().product()])
    }

    /// Builds a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: Vec3,
        origin: Vec3,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume3::new(dims, spacing, origin, data)
    }

    /// Same geometry, new data. Only checks the length.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Volume3::new(self.dims, self.spacing, self.origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.linear_index(i, j, k)]
    }

    /// Inverse of [`Volume3::linear_index`].
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn same_geometry(&self, other: &Volume3) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    pub fn voxel_to_world(&self, index: Vec3) -> Vec3 {
        self.origin + index.component_mul(&self.spacing)
    }

    pub fn world_to_voxel(&self, p: Vec3) -> Vec3 {
        (p - self.origin).component_div(&self.spacing)
    }

    /// World position of the center of the volume's grid.
    pub fn center(&self) -> Vec3 {
        let last = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        );
        self.voxel_to_world(last * 0.5)
    }

    /// Trilinear interpolation at a world point. Neighbours outside the grid
    /// contribute zero.
    pub fn sample(&self, p: Vec3) -> f32 {
        self.sample_voxel(self.world_to_voxel(p))
    }

    /// Trilinear interpolation at a continuous voxel coordinate.
    pub fn sample_voxel(&self, c: Vec3) -> f32 {
        let fx = c.x.floor();
        let fy = c.y.floor();
        let fz = c.z.floor();
        let (tx, ty, tz) = (c.x - fx, c.y - fy, c.z - fz);
        let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
        let [nx, ny, nz] = self.dims.map(|d| d as i64);
        if x0 < -1 || y0 < -1 || z0 < -1 || x0 >= nx || y0 >= ny || z0 >= nz || !c.iter().all(|v| v.is_finite()) {
            return 0.0;
        }
        let mut acc = 0.0f64;
        for (dz, wz) in [(0, 1.0 - tz), (1, tz)] {
            let z = z0 + dz;
            if z < 0 || z >= nz || wz == 0.0 {
                continue;
            }
            for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
                let y = y0 + dy;
                if y < 0 || y >= ny || wy == 0.0 {
                    continue;
                }
                for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                    let x = x0 + dx;
                    if x < 0 || x >= nx || wx == 0.0 {
                        continue;
                    }
                    let v = self.get(x as usize, y as usize, z as usize) as f64;
                    acc += wx * wy * wz * v;
                }
            }
        }
        acc as f32
    }

    /// Elementwise map preserving geometry.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume3 {
        Volume3 {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

pub(crate) fn validate_geometry(dims: [usize; 3], spacing: Vec3, origin: Vec3) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidVolume(format!("dims must be >= 1, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidVolume(format!(
            "spacing must be finite and > 0, got [{}, {}, {}]",
            spacing.x, spacing.y, spacing.z
        )));
    }
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(Error::InvalidVolume("origin must be finite".into()));
    }
    Ok(())
}

/// An ordered sequence of geometrically identical frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Series4D {
    frames: Vec<Volume3>,
}

impl Series4D {
    pub fn new(frames: Vec<Volume3>) -> Result<Self> {
        let first = frames.first().ok_or(Error::Empty("series needs at least one frame"))?;
        if let Some(t) = frames.iter().position(|f| !f.same_geometry(first)) {
            return Err(Error::InvalidVolume(format!("frame {t} geometry differs from frame 0")));
        }
        Ok(Series4D { frames })
    }

    pub fn frames(&self) -> &[Volume3] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Volume3 {
        &self.frames[t]
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn into_frames(self) -> Vec<Volume3> {
        self.frames
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(dims: [usize; 3]) -> Volume3 {
        Volume3::filled(dims, Vec3::repeat(1.0), Vec3::zeros(), 0.0).unwrap()
    }

    #[test]
    fn voxel_to_world_examples() {
        let v = unit([8, 8, 8]);
        assert_eq!(v.voxel_to_world(Vec3::new(3.0, 4.0, 5.0)), Vec3::new(3.0, 4.0, 5.0));
        let v = Volume3::filled([8, 8, 8], Vec3::new(2.0, 1.0, 1.0), Vec3::new(10.0, 0.0, 0.0), 0.0).unwrap();
        assert_eq!(v.voxel_to_world(Vec3::new(3.0, 0.0, 0.0)), Vec3::new(16.0, 0.0, 0.0));
    }

    #[test]
    fn invariants_rejected() {
        assert!(Volume3::new([0, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), vec![]).is_err());
        assert!(Volume3::new([2, 2, 2], Vec3::new(1.0, 0.0, 1.0), Vec3::zeros(), vec![0.0; 8]).is_err());
        assert!(matches!(
            Volume3::new([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), vec![0.0; 7]),
            Err(Error::SizeMismatch { expected: 8, actual: 7 })
        ));
        let mut d = vec![0.0; 8];
        d[3] = f32::NAN;
        assert!(matches!(Volume3::new([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), d), Err(Error::NonFinite(3))));
    }

    #[test]
    fn trilinear_constant_and_nodes() {
        let c = Volume3::filled([5, 6, 7], Vec3::new(1.5, 1.0, 2.0), Vec3::new(-3.0, 1.0, 2.0), 4.25).unwrap();
        for p in [Vec3::new(-2.0, 2.5, 3.0), Vec3::new(1.1, 4.9, 13.9)] {
            assert!((c.sample(p) - 4.25).abs() < 1e-6);
        }
        let mut seed = 7u64;
        let r = Volume3::from_fn([4, 5, 6], Vec3::new(0.5, 2.0, 1.0), Vec3::new(1.0, 2.0, 3.0), |_, _, _| {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 40) as f32 / 1000.0
        })
        .unwrap();
        for k in 0..6 {
            for j in 0..5 {
                for i in 0..4 {
                    let w = r.voxel_to_world(Vec3::new(i as f64, j as f64, k as f64));
                    assert_eq!(r.sample(w), r.get(i, j, k));
                }
            }
        }
    }

    #[test]
    fn trilinear_zero_outside() {
        let c = Volume3::filled([4, 4, 4], Vec3::repeat(1.0), Vec3::zeros(), 3.0).unwrap();
        assert_eq!(c.sample(Vec3::new(-1.5, 1.0, 1.0)), 0.0);
        assert_eq!(c.sample(Vec3::new(1.0, 9.0, 1.0)), 0.0);
        // midway between the last voxel and the zero extension
        assert!((c.sample(Vec3::new(3.5, 1.0, 1.0)) - 1.5).abs() < 1e-6);
    }

    #[test]
    fn series_requires_identical_geometry() {
        let a = unit([2, 2, 2]);
        let b = Volume3::filled([2, 2, 2], Vec3::repeat(2.0), Vec3::zeros(), 0.0).unwrap();
        assert!(Series4D::new(vec![a.clone(), a.clone()]).is_ok());
        assert!(Series4D::new(vec![a, b]).is_err());
        assert!(Series4D::new(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn voxel_world_round_trip(
            o in prop::array::uniform3(-500.0f64..500.0),
            s in prop::array::uniform3(0.1f64..5.0),
            idx in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let v = Volume3::filled([2, 2, 2], Vec3::from(s), Vec3::from(o), 0.0).unwrap();
            let idx = Vec3::from(idx);
            let w = v.voxel_to_world(idx);
            let oracle = Vec3::new(o[0] + idx.x * s[0], o[1] + idx.y * s[1], o[2] + idx.z * s[2]);
            prop_assert!((w - oracle).amax() <= 1e-12 * (1.0 + oracle.amax()));
            prop_assert!((v.world_to_voxel(w) - idx).amax() <= 1e-12 * (1.0 + idx.amax()));
        }

        #[test]
        fn trilinear_exact_on_linear_fields(
            a in prop::array::uniform3(-0.5f64..0.5),
            b in -0.5f64..0.5,
            p in prop::array::uniform3(1.0f64..6.0),
        ) {
            let sp = Vec3::new(1.0, 1.5, 0.5);
            let v = Volume3::from_fn([8, 8, 8], sp, Vec3::zeros(), |i, j, k| {
                (a[0] * i as f64 + a[1] * j as f64 + a[2] * k as f64 + b) as f32
            }).unwrap();
            let idx = Vec3::from(p);
            let expect = a[0] * idx.x + a[1] * idx.y + a[2] * idx.z + b;
            let got = v.sample(v.voxel_to_world(idx)) as f64;
            prop_assert!((got - expect).abs() <= 1e-6);
        }
    }
}
