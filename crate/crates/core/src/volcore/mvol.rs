//! MVOL container: a JSON header plus a raw little-endian f32 payload,
//! frame-major, each frame x-fastest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Series4D, Vec3, Volume3};
use crate::error::{Error, Result};
use crate::fsio;

pub const DTYPE: &str = "f32-le";
pub const LAYOUT: &str = "x-fastest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvolHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub frames: usize,
    pub dtype: String,
    pub layout: String,
}

/// Header and payload paths for an MVOL stem. Accepts either file's path:
/// `x.json` and `x.raw` both resolve to the pair (`x.json`, `x.raw`).
pub fn mvol_paths(path: &Path) -> (PathBuf, PathBuf) {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") => (path.with_extension("json"), path.to_path_buf()),
        Some("json") => (path.to_path_buf(), path.with_extension("raw")),
        _ => {
            let mut h = path.as_os_str().to_owned();
            h.push(".json");
            let mut r = path.as_os_str().to_owned();
            r.push(".raw");
            (h.into(), r.into())
        }
    }
}

pub fn write_mvol(series: &Series4D, path: &Path) -> Result<()> {
    let (header_path, payload_path) = mvol_paths(path);
    let f0 = series.frame(0);
    let header = MvolHeader {
        dims: f0.dims(),
        spacing_mm: f0.spacing().into(),
        origin_mm: f0.origin().into(),
        frames: series.frame_count(),
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
    };
    let mut payload = Vec::with_capacity(4 * f0.len() * series.frame_count());
    for frame in series.frames() {
        for v in frame.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fsio::write_atomic(&payload_path, &payload)?;
    fsio::write_json(&header_path, &header)
}

pub fn read_mvol(path: &Path) -> Result<Series4D> {
    let (header_path, payload_path) = mvol_paths(path);
    let text = std::fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: MvolHeader = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedHeader(format!("{}: {e}", header_path.display())))?;
    if header.dtype != DTYPE {
        return Err(Error::MalformedHeader(format!("unsupported dtype `{}`", header.dtype)));
    }
    if header.layout != LAYOUT {
        return Err(Error::MalformedHeader(format!("unsupported layout `{}`", header.layout)));
    }
    if header.frames == 0 {
        return Err(Error::MalformedHeader("frames must be >= 1".into()));
    }
    let spacing = Vec3::from(header.spacing_mm);
    let origin = Vec3::from(header.origin_mm);
    super::volume::validate_geometry(header.dims, spacing, origin)?;

    let bytes = std::fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let per_frame = header.dims.iter().product::<usize>();
    let expected = per_frame * header.frames;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::SizeMismatch { expected, actual: bytes.len() / 4 });
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    let frames = values
        .chunks_exact(per_frame)
        .map(|chunk| Volume3::new(header.dims, spacing, origin, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Series4D::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(seed: u64) -> Series4D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..2)
            .map(|_| {
                Volume3::from_fn([8, 8, 8], Vec3::new(1.25, 0.7, 2.0), Vec3::new(-3.0, 5.5, 0.125), |_, _, _| {
                    rng.random_range(-1e3f32..1e3)
                })
                .unwrap()
            })
            .collect();
        Series4D::new(frames).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = random_series(3);
        let p = dir.path().join("s.json");
        write_mvol(&s, &p).unwrap();
        let back = read_mvol(&dir.path().join("s.raw")).unwrap();
        assert_eq!(back.frame_count(), 2);
        for (a, b) in s.frames().iter().zip(back.frames()) {
            assert!(a.same_geometry(b));
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_mvol(&random_series(1), &p).unwrap();
        let raw = p.with_extension("raw");
        let mut bytes = std::fs::read(&raw).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&raw, bytes).unwrap();
        assert!(matches!(read_mvol(&p), Err(Error::SizeMismatch { expected: 1024, actual: 1023 })));
    }

    #[test]
    fn zero_spacing_and_garbage_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_mvol(&random_series(1), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("1.25", "0.0");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(read_mvol(&p), Err(Error::InvalidVolume(_))));
        std::fs::write(&p, "{\"dims\": [1,2]}").unwrap();
        assert!(matches!(read_mvol(&p), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_mvol(&random_series(1), &p).unwrap();
        let raw = p.with_extension("raw");
        let mut bytes = std::fs::read(&raw).unwrap();
        bytes[40..44].copy_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&raw, bytes).unwrap();
        assert!(matches!(read_mvol(&p), Err(Error::NonFinite(10))));
    }
}
