//! Field snapshots: flat little-endian `f64` values in row-major order, plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fields::{BoundaryMode, BoxDomain, ScalarField};
use crate::num::Real;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub extent: Vec<f64>,
    pub boundary_mode: BoundaryMode,
    pub time: f64,
    pub name: String,
}

impl SnapshotMeta {
    pub fn domain<T: Real>(&self) -> Result<BoxDomain<T>> {
        if self.cells.len() != self.dim || self.extent.len() != self.dim {
            return Err(Error::Snapshot(format!("sidecar for {} is inconsistent", self.name)));
        }
        BoxDomain::new(self.extent.iter().map(|&l| T::lit(l)).collect(), self.cells.clone(), self.boundary_mode)
    }
}

/// Writes `<dir>/<name>.bin` and `<dir>/<name>.json`; returns both paths.
pub fn write_snapshot<T: Real>(dir: &Path, name: &str, field: &ScalarField<T>, time: T) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let dom = field.domain();
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    let bin = dir.join(format!("{name}.bin"));
    fs::write(&bin, bytes)?;
    let meta = SnapshotMeta {
        dim: dom.dim(),
        cells: dom.cells().to_vec(),
        extent: dom.extent().iter().map(|v| v.as_f64()).collect(),
        boundary_mode: dom.boundary(),
        time: time.as_f64(),
        name: name.to_string(),
    };
    let json = dir.join(format!("{name}.json"));
    fs::write(&json, serde_json::to_string_pretty(&meta)?)?;
    Ok((bin, json))
}

/// Reads a snapshot given the path of either file of the pair.
pub fn read_snapshot<T: Real>(path: &Path) -> Result<(ScalarField<T>, SnapshotMeta)> {
    let meta: SnapshotMeta = serde_json::from_slice(&fs::read(path.with_extension("json"))?)?;
    let dom = meta.domain::<T>()?;
    let bytes = fs::read(path.with_extension("bin"))?;
    if bytes.len() != dom.len() * 8 {
        return Err(Error::Snapshot(format!(
            "{}: expected {} bytes, found {}",
            meta.name,
            dom.len() * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))))
        .collect();
    Ok((ScalarField::new(dom, values)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = std::env::temp_dir().join(format!("nlad-io-{}", std::process::id()));
        let dom = BoxDomain::new(vec![1.0, 2.0, 0.5], vec![3, 4, 5], BoundaryMode::Periodic).unwrap();
        let f = ScalarField::from_fn(&dom, |x| x[0] - 2.0 * x[1] + x[2] * x[2]).unwrap();
        let (bin, _) = write_snapshot(&dir, "c_000004", &f, 0.125).unwrap();
        let (g, meta) = read_snapshot::<f64>(&bin).unwrap();
        assert_eq!(g, f);
        assert_eq!(meta.time, 0.125);
        assert_eq!(meta.boundary_mode, BoundaryMode::Periodic);
        assert_eq!(fs::metadata(&bin).unwrap().len(), 60 * 8);
        fs::write(&bin, [0u8; 8]).unwrap();
        assert!(matches!(read_snapshot::<f64>(&bin), Err(Error::Snapshot(_))));
        fs::remove_dir_all(dir).unwrap();
    }
}
