use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Vec3;
use crate::error::{Error, Result};

/// The six cardiac landmarks. Declaration order fixes heatmap channel order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LandmarkId {
    /// Left ventricular apex.
    LVA,
    /// Right ventricular apex.
    RVA,
    /// Aortic valve.
    AV,
    /// Mitral valve.
    MV,
    /// Pulmonary valve.
    PV,
    /// Tricuspid valve.
    TV,
}

impl LandmarkId {
    pub const ALL: [LandmarkId; 6] =
        [LandmarkId::LVA, LandmarkId::RVA, LandmarkId::AV, LandmarkId::MV, LandmarkId::PV, LandmarkId::TV];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<LandmarkId> {
        LandmarkId::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LandmarkId::LVA => "LVA",
            LandmarkId::RVA => "RVA",
            LandmarkId::AV => "AV",
            LandmarkId::MV => "MV",
            LandmarkId::PV => "PV",
            LandmarkId::TV => "TV",
        }
    }
}

impl fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LandmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LandmarkId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::MalformedHeader(format!("unknown landmark `{s}`")))
    }
}

/// Partial map from landmark identity to a world point in millimetres.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    points: [Option<Vec3>; 6],
}

impl LandmarkSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: LandmarkId) -> Option<Vec3> {
        self.points[id.index()]
    }

    /// Like [`LandmarkSet::get`] but reports which consumer needed the point.
    pub fn require(&self, id: LandmarkId, needed_by: &'static str) -> Result<Vec3> {
        self.get(id).ok_or(Error::MissingLandmark(id, needed_by))
    }

    pub fn insert(&mut self, id: LandmarkId, p: Vec3) {
        assert!(p.iter().all(|c| c.is_finite()), "landmark {id} is not finite");
        self.points[id.index()] = Some(p);
    }

    pub fn with(mut self, id: LandmarkId, p: Vec3) -> Self {
        self.insert(id, p);
        self
    }

    pub fn remove(&mut self, id: LandmarkId) -> Option<Vec3> {
        self.points[id.index()].take()
    }

    pub fn contains(&self, id: LandmarkId) -> bool {
        self.points[id.index()].is_some()
    }

    pub fn len(&self) -> usize {
        self.points.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Present landmarks in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (LandmarkId, Vec3)> + '_ {
        LandmarkId::ALL.into_iter().filter_map(|id| self.get(id).map(|p| (id, p)))
    }

    /// Annotated-channel mask in declaration order.
    pub fn mask(&self) -> [bool; 6] {
        self.points.map(|p| p.is_some())
    }

    pub fn map_points(&self, mut f: impl FnMut(Vec3) -> Vec3) -> LandmarkSet {
        LandmarkSet { points: self.points.map(|p| p.map(&mut f)) }
    }
}

impl FromIterator<(LandmarkId, Vec3)> for LandmarkSet {
    fn from_iter<I: IntoIterator<Item = (LandmarkId, Vec3)>>(iter: I) -> Self {
        let mut s = LandmarkSet::new();
        for (id, p) in iter {
            s.insert(id, p);
        }
        s
    }
}

impl Serialize for LandmarkSet {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<LandmarkId, [f64; 3]> = self.iter().map(|(id, p)| (id, [p.x, p.y, p.z])).collect();
        map.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for LandmarkSet {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<LandmarkId, [f64; 3]>::deserialize(de)?;
        let mut s = LandmarkSet::new();
        for (id, p) in map {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(serde::de::Error::custom(format!("landmark {id} is not finite")));
            }
            s.insert(id, Vec3::from(p));
        }
        Ok(s)
    }
}

/// One annotated time point: `{"frame": t, "points": {"LVA": [x, y, z], ...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame: usize,
    pub points: LandmarkSet,
}

pub fn read_annotations(path: &Path) -> Result<Vec<FrameAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_annotations(path: &Path, annotations: &[FrameAnnotation]) -> Result<()> {
    crate::fsio::write_json(path, &annotations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_uses_names_and_omits_absent() {
        let s = LandmarkSet::new().with(LandmarkId::LVA, Vec3::new(1.0, 2.0, 3.0)).with(LandmarkId::TV, Vec3::zeros());
        let a = FrameAnnotation { frame: 2, points: s.clone() };
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(text, r#"{"frame":2,"points":{"LVA":[1.0,2.0,3.0],"TV":[0.0,0.0,0.0]}}"#);
        let back: FrameAnnotation = serde_json::from_str(&text).unwrap();
        assert_eq!(back.points, s);
        assert_eq!(back.points.mask(), [true, false, false, false, false, true]);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(serde_json::from_str::<LandmarkSet>(r#"{"XX":[0,0,0]}"#).is_err());
    }
}
