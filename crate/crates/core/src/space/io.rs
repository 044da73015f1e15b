//! JSON description of a space plus an optional little-endian `f64`
//! coordinate block.
//!
//! ```json
//! {
//!   "schema": "greenlab.space/1",
//!   "kind": "grid" | "cloud" | "graph",
//!   "points": 9261,
//!   "lattice": {"dim": 3, "side": 21, "spacing": 0.1},   // grids only
//!   "measure_scale": 1.0,                                // grids only
//!   "dim": 3,                                            // clouds only
//!   "weights": [...], "interior": [...],                 // explicit backends
//!   "edges": [[i, j, length], ...],                      // explicit backends
//!   "coordinates": "coords.f64",                         // clouds only
//!   "tail_model": {"coefficient": 4.18879, "exponent": 3.0} | null,
//!   "euclidean_factor": {"k": 1, "base_doubling": 8.0} | null,
//!   "core_fraction": 0.25
//! }
//! ```
//!
//! The coordinate file holds `points * dim` values, row-major, 8 bytes each.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_cloud_space, build_graph_space, build_grid_space, Backend, EuclideanFactor, Lattice,
    MeasureLaw, MmSpace, TailModel,
};
use crate::{Error, Result};

pub const SCHEMA: &str = "greenlab.space/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceDoc {
    pub schema: String,
    pub kind: String,
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Lattice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interior: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<String>,
    pub tail_model: Option<TailModel>,
    #[serde(default)]
    pub euclidean_factor: Option<EuclideanFactor>,
    pub core_fraction: f64,
}

impl MmSpace {
    /// Describe the space. `coordinate_file` names the sidecar block of a
    /// point cloud.
    pub fn to_doc(&self, coordinate_file: Option<&str>) -> SpaceDoc {
        let mut doc = SpaceDoc {
            schema: SCHEMA.into(),
            kind: self.kind().into(),
            points: self.len(),
            lattice: None,
            measure_scale: None,
            dim: None,
            weights: None,
            interior: None,
            edges: None,
            coordinates: None,
            tail_model: self.tail,
            euclidean_factor: self.factor,
            core_fraction: self.core_fraction,
        };
        match &self.backend {
            Backend::Grid { lattice, .. } => {
                doc.lattice = Some(*lattice);
                doc.measure_scale = Some(self.cell_mass / lattice.spacing.powi(lattice.dim as i32));
            }
            Backend::Cloud { dim, .. } => {
                doc.dim = Some(*dim);
                doc.coordinates = coordinate_file.map(str::to_owned);
            }
            Backend::Graph { .. } => {}
        }
        if self.lattice().is_none() {
            doc.weights = Some(self.weights.clone());
            doc.interior = Some(self.interior.clone());
            doc.edges = Some(self.edges());
        }
        doc
    }

    /// Rebuild a space from its description; clouds need their coordinates.
    pub fn from_doc(doc: &SpaceDoc, coordinates: Option<Vec<f64>>) -> Result<MmSpace> {
        if doc.schema != SCHEMA {
            return Err(Error::Corrupt(format!(
                "unknown space schema {:?}",
                doc.schema
            )));
        }
        let missing = |what: &str| Error::Corrupt(format!("{} space lacks {what}", doc.kind));
        let space = match doc.kind.as_str() {
            "grid" => {
                let l = doc.lattice.ok_or_else(|| missing("lattice"))?;
                let law = match doc.measure_scale {
                    Some(s) if s != 1.0 => MeasureLaw::Scaled(s),
                    _ => MeasureLaw::Lebesgue,
                };
                build_grid_space(l.dim, l.side, l.spacing, law)?
            }
            "graph" => build_graph_space(
                doc.points,
                doc.edges.as_deref().ok_or_else(|| missing("edges"))?,
                doc.weights.as_deref().ok_or_else(|| missing("weights"))?,
            )?,
            "cloud" => {
                let dim = doc.dim.ok_or_else(|| missing("dim"))?;
                let coords = coordinates.ok_or_else(|| missing("coordinates"))?;
                if coords.len() != doc.points * dim {
                    return Err(Error::Corrupt(format!(
                        "coordinate block has {} values, expected {}",
                        coords.len(),
                        doc.points * dim
                    )));
                }
                let edges: Vec<(usize, usize)> = doc
                    .edges
                    .as_ref()
                    .ok_or_else(|| missing("edges"))?
                    .iter()
                    .map(|&(i, j, _)| (i, j))
                    .collect();
                build_cloud_space(
                    dim,
                    coords,
                    doc.weights.as_deref().ok_or_else(|| missing("weights"))?,
                    &edges,
                    doc.interior.clone().ok_or_else(|| missing("interior"))?,
                )?
            }
            other => return Err(Error::Corrupt(format!("unknown space kind {other:?}"))),
        };
        let mut space = space
            .with_tail(doc.tail_model)
            .with_core_fraction(doc.core_fraction);
        if let Some(f) = doc.euclidean_factor {
            space = space.with_factor(f);
        }
        Ok(space)
    }

    /// Flat row-major coordinate block of a point cloud.
    pub fn coordinate_block(&self) -> Option<&[f64]> {
        match &self.backend {
            Backend::Cloud { coords, .. } => Some(coords),
            _ => None,
        }
    }
}

pub fn write_coordinates(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coordinates(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Corrupt(format!(
            "coordinate file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip() {
        let s = build_grid_space(2, 9, 0.25, MeasureLaw::Scaled(2.0)).unwrap();
        let doc = s.to_doc(None);
        let json = serde_json::to_string(&doc).unwrap();
        let back = MmSpace::from_doc(&serde_json::from_str(&json).unwrap(), None).unwrap();
        assert_eq!(back.len(), 81);
        assert_eq!(back.weight(3), s.weight(3));
        assert_eq!(back.tail(), s.tail());
    }

    #[test]
    fn cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let coords = vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let s = build_cloud_space(
            2,
            coords.clone(),
            &[1.0, 2.0, 3.0],
            &[(0, 1), (1, 2)],
            vec![true, true, false],
        )
        .unwrap();
        let path = dir.path().join("coords.f64");
        write_coordinates(&path, s.coordinate_block().unwrap()).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 48);
        let doc = s.to_doc(Some("coords.f64"));
        let back = MmSpace::from_doc(&doc, Some(read_coordinates(&path).unwrap())).unwrap();
        assert_eq!(back.dist(0, 2), 2f64.sqrt());
        assert_eq!(back.weights(), vec![1.0, 2.0, 3.0]);
        assert!(!back.is_interior(2));
    }

    #[test]
    fn rejects_unknown_schema() {
        let s = build_graph_space(2, &[(0, 1, 1.0)], &[1.0, 1.0]).unwrap();
        let mut doc = s.to_doc(None);
        doc.schema = "other/9".into();
        assert!(matches!(
            MmSpace::from_doc(&doc, None),
            Err(Error::Corrupt(_))
        ));
    }
}
