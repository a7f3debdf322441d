//! Named anatomical landmarks and their JSON file format.
//!
//! ```json
//! { "binding": "point", "fundus": [12.0, -3.5, 40.1], "pyloric_sphincter": [...] }
//! { "binding": "vertex", "fundus": 812, "pyloric_sphincter": 2291 }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Point3;
use serde_json::{Map, Value};

use super::{MeshError, MeshResult};

/// The fixed landmark vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Landmark {
    GastroesophagealJunction,
    Fundus,
    GreaterCurvature,
    AngularIncisure,
    PyloricSphincter,
}

impl Landmark {
    pub const ALL: [Landmark; 5] = [
        Landmark::GastroesophagealJunction,
        Landmark::Fundus,
        Landmark::GreaterCurvature,
        Landmark::AngularIncisure,
        Landmark::PyloricSphincter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Landmark::GastroesophagealJunction => "gastroesophageal_junction",
            Landmark::Fundus => "fundus",
            Landmark::GreaterCurvature => "greater_curvature",
            Landmark::AngularIncisure => "angular_incisure",
            Landmark::PyloricSphincter => "pyloric_sphincter",
        }
    }
}

impl fmt::Display for Landmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Landmark {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Landmark::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| MeshError::Landmark(format!("unknown landmark name {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LandmarkBinding {
    /// Index into the owning mesh's vertex array.
    Vertex(usize),
    /// Free 3-D position (scan side).
    Point(Point3<f64>),
}

/// Landmark name → binding. All entries share one binding kind.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    entries: BTreeMap<Landmark, LandmarkBinding>,
}

impl LandmarkSet {
    pub fn vertex_bound(entries: impl IntoIterator<Item = (Landmark, usize)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(l, i)| (l, LandmarkBinding::Vertex(i)))
                .collect(),
        }
    }

    pub fn point_bound(entries: impl IntoIterator<Item = (Landmark, Point3<f64>)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(l, p)| (l, LandmarkBinding::Point(p)))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, l: Landmark) -> Option<&LandmarkBinding> {
        self.entries.get(&l)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Landmark, &LandmarkBinding)> {
        self.entries.iter().map(|(l, b)| (*l, b))
    }

    pub fn is_vertex_bound(&self) -> bool {
        self.entries
            .values()
            .all(|b| matches!(b, LandmarkBinding::Vertex(_)))
    }

    pub fn is_point_bound(&self) -> bool {
        self.entries
            .values()
            .all(|b| matches!(b, LandmarkBinding::Point(_)))
    }

    pub fn vertex_index(&self, l: Landmark) -> Option<usize> {
        match self.entries.get(&l) {
            Some(LandmarkBinding::Vertex(i)) => Some(*i),
            _ => None,
        }
    }

    /// Resolve to positions, looking vertex-bound entries up in `vertices`.
    pub fn positions(&self, vertices: &[Point3<f64>]) -> BTreeMap<Landmark, Point3<f64>> {
        self.entries
            .iter()
            .filter_map(|(l, b)| match b {
                LandmarkBinding::Vertex(i) => vertices.get(*i).map(|p| (*l, *p)),
                LandmarkBinding::Point(p) => Some((*l, *p)),
            })
            .collect()
    }

    pub(crate) fn validate_for(&self, vertex_count: usize) -> MeshResult<()> {
        for (l, b) in &self.entries {
            if let LandmarkBinding::Vertex(i) = b {
                if *i >= vertex_count {
                    return Err(MeshError::Landmark(format!(
                        "{l} bound to vertex {i} but mesh has {vertex_count} vertices"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        let binding = if self.is_point_bound() && !self.is_empty() {
            "point"
        } else {
            "vertex"
        };
        map.insert("binding".into(), Value::from(binding));
        for (l, b) in &self.entries {
            let v = match b {
                LandmarkBinding::Vertex(i) => Value::from(*i),
                LandmarkBinding::Point(p) => Value::from(vec![p.x, p.y, p.z]),
            };
            map.insert(l.name().into(), v);
        }
        Value::Object(map)
    }

    pub fn from_json(value: &Value) -> MeshResult<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| MeshError::Landmark("landmark file must be a JSON object".into()))?;
        let binding = obj
            .get("binding")
            .and_then(Value::as_str)
            .ok_or_else(|| MeshError::Landmark("missing \"binding\" field".into()))?;
        let mut entries = BTreeMap::new();
        for (k, v) in obj {
            if k == "binding" {
                continue;
            }
            let l: Landmark = k.parse()?;
            let b =
                match binding {
                    "vertex" => LandmarkBinding::Vertex(v.as_u64().ok_or_else(|| {
                        MeshError::Landmark(format!("{k}: expected a vertex index"))
                    })? as usize),
                    "point" => {
                        let arr = v.as_array().filter(|a| a.len() == 3).ok_or_else(|| {
                            MeshError::Landmark(format!("{k}: expected [x, y, z]"))
                        })?;
                        let mut c = [0.0; 3];
                        for (dst, src) in c.iter_mut().zip(arr) {
                            *dst = src.as_f64().ok_or_else(|| {
                                MeshError::Landmark(format!("{k}: non-numeric coordinate"))
                            })?;
                        }
                        LandmarkBinding::Point(Point3::new(c[0], c[1], c[2]))
                    }
                    other => {
                        return Err(MeshError::Landmark(format!(
                            "binding must be \"vertex\" or \"point\", got {other:?}"
                        )))
                    }
                };
            entries.insert(l, b);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> MeshResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| MeshError::Parse {
            path: path.display().to_string(),
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Self::from_json(&value)
    }

    pub fn save(&self, path: &Path) -> MeshResult<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("landmark JSON serializes");
        std::fs::write(path, text).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn json_round_trip_both_bindings() {
        let v = LandmarkSet::vertex_bound([(Landmark::Fundus, 3), (Landmark::PyloricSphincter, 9)]);
        assert_eq!(LandmarkSet::from_json(&v.to_json()).unwrap(), v);
        let p =
            LandmarkSet::point_bound([(Landmark::AngularIncisure, Point3::new(1.5, -2.0, 0.25))]);
        assert_eq!(LandmarkSet::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn rejects_unknown_names_and_bad_binding() {
        assert!(LandmarkSet::from_json(&json!({"binding": "vertex", "spleen": 1})).is_err());
        assert!(LandmarkSet::from_json(&json!({"binding": "bone", "fundus": 1})).is_err());
        assert!(LandmarkSet::from_json(&json!({"binding": "point", "fundus": [1, 2]})).is_err());
        assert!(LandmarkSet::from_json(&json!({"fundus": 1})).is_err());
    }

    #[test]
    fn vertex_bindings_checked_against_mesh() {
        let v = LandmarkSet::vertex_bound([(Landmark::Fundus, 10)]);
        assert!(v.validate_for(10).is_err());
        assert!(v.validate_for(11).is_ok());
    }
}
