//! Output directories: run files, manifests with checksums, and reloading a stored run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nlad_core::io::{read_snapshot, write_snapshot};
use nlad_core::solver::{DiagnosticRow, Snapshot, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Admissibility, Prepared, RunConfig};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const REACTION: &str = "reaction.csv";
pub const SNAPSHOTS: &str = "snapshots";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub nlad_core: String,
    pub nlad_cli: String,
    pub format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            nlad_core: nlad_core::VERSION.to_string(),
            nlad_cli: env!("CARGO_PKG_VERSION").to_string(),
            format: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub admissibility: Admissibility,
    pub versions: Versions,
    /// Command-specific outcome.
    pub summary: serde_json::Value,
    /// SHA-256 of every other file in the directory, keyed by relative path.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if e.file_type()?.is_dir() {
            collect_files(root, &p, out)?;
        } else if p != root.join(MANIFEST) {
            out.push(p);
        }
    }
    Ok(())
}

/// Checksums of all files below `dir` except the manifest itself.
pub fn checksums(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut map = BTreeMap::new();
    for p in files {
        let rel = p.strip_prefix(dir).expect("below root").to_string_lossy().replace('\\', "/");
        map.insert(rel, sha256_hex(&fs::read(&p)?));
    }
    Ok(map)
}

/// Writes `manifest.json` last so that it covers every other file.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    prepared: &Prepared,
    summary: serde_json::Value,
) -> Result<Manifest, CliError> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        command: command.to_string(),
        config: prepared.config.clone(),
        admissibility: prepared.admissibility.clone(),
        versions: Versions::current(),
        summary,
        files: checksums(dir)?,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", dir.join(MANIFEST).display())))
}

/// Recomputes the checksums and lists the files whose content differs from the manifest.
pub fn verify_checksums(dir: &Path) -> Result<Vec<String>, CliError> {
    let manifest = read_manifest(dir)?;
    let now = checksums(dir)?;
    let mut bad: Vec<String> = manifest
        .files
        .iter()
        .filter(|(k, v)| now.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    bad.extend(now.keys().filter(|k| !manifest.files.contains_key(*k)).cloned());
    Ok(bad)
}

pub fn reaction_csv(traj: &Trajectory<f64>) -> String {
    let mut s = String::from("step,t,reaction\n");
    for r in &traj.rows {
        let _ = writeln!(s, "{},{},{}", r.step, r.t, r.reaction);
    }
    s
}

fn snapshot_name(step: usize) -> String {
    format!("c_{step:06}")
}

/// Writes diagnostics, the reaction sidecar and all snapshots of a run.
pub fn write_trajectory(dir: &Path, traj: &Trajectory<f64>) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(DIAGNOSTICS), traj.diagnostics_csv())?;
    fs::write(dir.join(REACTION), reaction_csv(traj))?;
    let snaps = dir.join(SNAPSHOTS);
    for s in &traj.snapshots {
        write_snapshot(&snaps, &snapshot_name(s.step), &s.c, s.t)?;
    }
    Ok(())
}

fn parse_csv(text: &str, columns: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let bad = |line: usize| CliError::Config(format!("malformed csv at line {line}"));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l.split(',').map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(i + 1))?;
            if v.len() == columns {
                Ok(v)
            } else {
                Err(bad(i + 1))
            }
        })
        .collect()
}

/// Reloads a run directory written by `run`; values round-trip exactly.
pub fn read_trajectory(dir: &Path) -> Result<(Prepared, Trajectory<f64>), CliError> {
    let manifest = read_manifest(dir)?;
    let prepared = manifest.config.prepare()?;
    let diag = parse_csv(&fs::read_to_string(dir.join(DIAGNOSTICS))?, 9)?;
    let reac = parse_csv(&fs::read_to_string(dir.join(REACTION))?, 3)?;
    if diag.len() != reac.len() {
        return Err(CliError::Config("diagnostics and reaction tables differ in length".into()));
    }
    let rows = diag
        .iter()
        .zip(&reac)
        .map(|(d, r)| DiagnosticRow {
            step: d[0] as usize,
            t: d[1],
            mass: d[2],
            l1: d[3],
            lr: d[4],
            minc: d[5],
            h1_b: d[6],
            lrp1_b: d[7],
            mass_residual: d[8],
            reaction: r[2],
        })
        .collect();
    let mut names: Vec<PathBuf> = fs::read_dir(dir.join(SNAPSHOTS))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    names.sort();
    let mut snapshots = Vec::with_capacity(names.len());
    for p in names {
        let (c, meta) = read_snapshot::<f64>(&p)?;
        if !c.domain().same_grid(&prepared.domain) {
            return Err(CliError::Config(format!("{}: grid differs from the config", p.display())));
        }
        let step = meta
            .name
            .strip_prefix("c_")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Config(format!("unexpected snapshot name {}", meta.name)))?;
        snapshots.push(Snapshot { step, t: meta.time, c });
    }
    if snapshots.is_empty() {
        return Err(CliError::Config(format!("{}: no snapshots", dir.display())));
    }
    let traj = Trajectory {
        domain: prepared.domain.clone(),
        config: prepared.solver.clone(),
        snapshots,
        rows,
        warnings: prepared.admissibility.warnings.clone(),
    };
    Ok((prepared, traj))
}
