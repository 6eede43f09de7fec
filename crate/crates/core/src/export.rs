//! CSV tables and versioned JSON documents.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! inputs always give byte-identical files. Non-finite values become `null`
//! in JSON and `inf`/`NaN` in CSV.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::linalg::norm;
use crate::montecarlo::EnsembleStats;
use crate::signal::SwitchingPath;
use crate::{Result, SCHEMA_VERSION};

/// `index,time,mode` with one row per switching instant, starting at `τ₀ = 0`.
pub fn path_csv(path: &SwitchingPath) -> String {
    let mut out = String::from("index,time,mode\n");
    for (k, (t, m)) in path.times().iter().zip(path.modes()).enumerate() {
        writeln!(out, "{k},{t},{m}").unwrap();
    }
    out
}

/// `time,mode,x_1..x_n,norm` with one row per grid point.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("time,mode");
    for k in 1..=traj.dim() {
        write!(out, ",x_{k}").unwrap();
    }
    out.push_str(",norm\n");
    for ((t, m), x) in traj.grid().iter().zip(traj.modes()).zip(traj.states()) {
        write!(out, "{t},{m}").unwrap();
        for c in x {
            write!(out, ",{c}").unwrap();
        }
        writeln!(out, ",{}", norm(x)).unwrap();
    }
    out
}

/// Per-trajectory table `index,seed,sup_norm,terminal_norm,tail_sup,jumps,divergent`.
pub fn records_csv(stats: &EnsembleStats) -> String {
    let mut out = String::from("index,seed,sup_norm,terminal_norm,tail_sup,jumps,divergent\n");
    for r in &stats.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index, r.seed, r.sup_norm, r.terminal_norm, r.tail_sup, r.jumps, r.divergent
        )
        .unwrap();
    }
    out
}

/// `value` serialized as a JSON object with `schema_version` first.
///
/// `value` must serialize to an object.
pub fn json_document<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    let mut body = match serde_json::to_value(value)? {
        serde_json::Value::Object(map) => map,
        other => {
            let mut map = serde_json::Map::new();
            map.insert("value".into(), other);
            map
        }
    };
    let mut doc = serde_json::Map::new();
    doc.insert("schema_version".into(), SCHEMA_VERSION.into());
    body.remove("schema_version");
    doc.extend(body);
    Ok(serde_json::Value::Object(doc))
}

/// Pretty JSON text with a trailing newline.
pub fn json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&json_document(value)?)?;
    s.push('\n');
    Ok(s)
}

/// Writes `contents` to a sibling temporary file and renames it over `path`,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Mode;

    #[test]
    fn path_rows_are_one_based() {
        let p = SwitchingPath::new(vec![0.0, 0.5], vec![Mode(0), Mode(1)], 1.0).unwrap();
        assert_eq!(path_csv(&p), "index,time,mode\n0,0,1\n1,0.5,2\n");
    }

    #[test]
    fn schema_version_first_and_nonfinite_null() {
        #[derive(Serialize)]
        struct Doc {
            a: f64,
            b: f64,
        }
        let s = json_string(&Doc { a: f64::INFINITY, b: 1.5 }).unwrap();
        assert!(s.starts_with("{\n  \"schema_version\": 1,"));
        assert!(s.contains("\"a\": null"));
        assert!(s.contains("\"b\": 1.5"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("switchstab-export-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("x.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
