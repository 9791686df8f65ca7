use super::{AffineTransform, Vec3, Volume3};
use crate::error::{Error, Result};

/// Samples `src` on a new axis-aligned grid. Output voxels falling outside the
/// source grid read zero.
pub fn resample_with(src: &Volume3, dims: [usize; 3], spacing: Vec3, origin: Vec3) -> Result<Volume3> {
    // Source voxel coordinate is affine in the output index; step it per axis.
    let step = spacing.component_div(&src.spacing());
    let start = src.world_to_voxel(origin);
    Volume3::from_fn(dims, spacing, origin, |i, j, k| {
        let c = start + Vec3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z);
        src.sample_voxel(c)
    })
}

/// Resamples `src` into a `target_edge³` cube with isotropic spacing.
///
/// One global scale is chosen so the longest physical extent (corner voxel
/// center to corner voxel center) spans the cube exactly; the content is
/// centered and the rest is zero padding. The returned volume carries the
/// cube geometry in source world coordinates, and the transform maps cube
/// voxel coordinates to source world millimetres.
pub fn resample_isotropic(src: &Volume3, target_edge: usize) -> Result<(Volume3, AffineTransform)> {
    if target_edge < 2 {
        return Err(Error::config("target_edge", format!("must be >= 2, got {target_edge}")));
    }
    let dims = src.dims();
    let extent = Vec3::new(
        (dims[0] - 1) as f64 * src.spacing().x,
        (dims[1] - 1) as f64 * src.spacing().y,
        (dims[2] - 1) as f64 * src.spacing().z,
    );
    let longest = extent.max();
    // A single-voxel source has no extent; fall back to its own spacing.
    let side = if longest > 0.0 { longest } else { src.spacing().min() * (target_edge - 1) as f64 };
    cube_geometry(src, src.center(), side, target_edge)
}

/// Cube of `target_edge³` voxels spanning `side` millimetres centered on
/// `center`, sampled from `src`.
pub(crate) fn cube_geometry(
    src: &Volume3,
    center: Vec3,
    side: f64,
    target_edge: usize,
) -> Result<(Volume3, AffineTransform)> {
    let s = side / (target_edge - 1) as f64;
    let half = (target_edge - 1) as f64 / 2.0;
    let origin = center - Vec3::repeat(half * s);
    let transform = AffineTransform::scale_shift(Vec3::repeat(s), origin)?;
    let out = resample_with(src, [target_edge; 3], Vec3::repeat(s), origin)?;
    Ok((out, transform))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resample_keeps_nodes() {
        let mut n = 0.0f32;
        let v = Volume3::from_fn([16, 16, 16], Vec3::repeat(1.0), Vec3::new(2.0, -1.0, 0.5), |_, _, _| {
            n += 0.37;
            n.sin()
        })
        .unwrap();
        let (out, t) = resample_isotropic(&v, 16).unwrap();
        assert!((t.apply(Vec3::zeros()) - v.origin()).amax() < 1e-12);
        for (a, b) in v.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn anisotropic_input_policy() {
        // 32×64×64 at (2,1,1) mm: extents 62, 63, 63 mm → 63/63 = 1 mm spacing.
        let v = Volume3::filled([32, 64, 64], Vec3::new(2.0, 1.0, 1.0), Vec3::zeros(), 1.0).unwrap();
        let (out, t) = resample_isotropic(&v, 64).unwrap();
        assert_eq!(out.dims(), [64, 64, 64]);
        assert!((out.spacing() - Vec3::repeat(1.0)).amax() < 1e-12);
        // x content (62 mm) is centered in the 63 mm cube: half a millimetre each side.
        assert!((t.apply(Vec3::zeros()) - Vec3::new(-0.5, 0.0, 0.0)).amax() < 1e-12);
        // the extreme x planes are half padding
        assert!((out.get(0, 10, 10) - 0.75).abs() < 1e-6);
        assert!((out.get(32, 10, 10) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn probe_point_and_corners() {
        let v = Volume3::filled([20, 30, 12], Vec3::new(1.5, 0.8, 2.5), Vec3::new(5.0, -10.0, 3.0), 0.0).unwrap();
        let (out, t) = resample_isotropic(&v, 64).unwrap();
        let p = Vec3::new(17.3, 2.2, 20.0);
        let u = t.apply_inverse(p);
        assert!((out.voxel_to_world(u) - p).amax() < 1e-9);
        assert!((t.apply(u) - p).amax() < 1e-9);
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for corner in 0..8 {
            let idx = Vec3::new(
                if corner & 1 == 0 { 0.0 } else { 19.0 },
                if corner & 2 == 0 { 0.0 } else { 29.0 },
                if corner & 4 == 0 { 0.0 } else { 11.0 },
            );
            let u = t.apply_inverse(v.voxel_to_world(idx));
            assert!(u.iter().all(|&c| (-1e-9..=63.0 + 1e-9).contains(&c)), "{u:?}");
            lo = lo.inf(&u);
            hi = hi.sup(&u);
        }
        // x is the longest axis (19 × 1.5 = 28.5 mm) and spans the cube exactly
        assert!(lo.x.abs() < 1e-9 && (hi.x - 63.0).abs() < 1e-9);
    }
}
