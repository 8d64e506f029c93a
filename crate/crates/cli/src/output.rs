//! Deterministic output files. CSV files carry the resolved run configuration
//! as leading `#` comment lines so every artifact is reproducible on its own;
//! JSON summaries embed the same pairs as a `config` object.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::errors::{CliError, CliResult};

/// Ordered `key = value` pairs of the fully resolved configuration.
#[derive(Debug, Clone, Default)]
pub struct ResolvedConfig(pub Vec<(String, String)>);

impl ResolvedConfig {
    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn comment_lines(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            s.push_str(&format!("# {k} = {v}\n"));
        }
        s
    }

    pub fn json_map(&self) -> serde_json::Map<String, serde_json::Value> {
        self.0
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect()
    }
}

/// Shortest-round-trip float formatting; parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_csv(
    path: &Path,
    config: &ResolvedConfig,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut buf = String::new();
    buf.push_str(&config.comment_lines());
    buf.push_str(&header.join(","));
    buf.push('\n');
    for row in rows {
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    let mut f = fs::File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("json encode: {e}")))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
