use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use extinction::Distribution;
use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub fn read_dist(path: &Path) -> Result<Distribution, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report values serialize");
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}").map_err(|e| CliError::io(p, e))?;
            finish(w, p)
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// `<path>.meta.json`, next to the data file it describes.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the resolved config plus `extra` fields next to `data`.
pub fn write_sidecar(data: &Path, config: &ExperimentConfig, extra: Value) -> Result<(), CliError> {
    let mut obj = serde_json::Map::new();
    obj.insert(
        "config".into(),
        serde_json::to_value(config).expect("config serializes"),
    );
    if let Value::Object(m) = extra {
        obj.extend(m);
    }
    write_json(Some(&sidecar_path(data)), &Value::Object(obj))
}

/// Reads the sidecar of `data` if one exists.
pub fn read_sidecar(data: &Path) -> Result<Option<Value>, CliError> {
    let p = sidecar_path(data);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))
}

/// Shortest round-trip representation; `NaN` for missing values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}
