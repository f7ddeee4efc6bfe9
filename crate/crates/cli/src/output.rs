use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

pub const MANIFEST: &str = "manifest.json";
/// Marker for undefined or unavailable numbers in CSV output.
pub const NA: &str = "NA";

pub fn num(v: f64) -> String {
    if v.is_nan() {
        NA.to_string()
    } else {
        format!("{v}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), num)
}

/// Files written by one command. The directory is created on the first
/// write, so a command that fails validation leaves nothing behind.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    pub notes: Vec<String>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new(), notes: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Path for `name` inside the output directory, recorded as an output.
    pub fn path(&mut self, name: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(self.dir.join(name))
    }

    pub fn csv<R, I, S>(&mut self, name: &str, header: &[&str], rows: R) -> anyhow::Result<()>
    where
        R: IntoIterator<Item = I>,
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut w = csv::Writer::from_path(self.path(name)?)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        std::fs::write(self.path(name)?, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    /// Echoes the resolved configuration. `timestamp` is the only field
    /// that changes between identical runs.
    pub fn manifest(&mut self, command: &str, config: &impl Serialize, inputs: Value, error: Option<String>) -> anyhow::Result<()> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut files = self.files.clone();
        files.push(MANIFEST.to_string());
        let doc = json!({
            "tool": "hetgplvm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "timestamp": timestamp,
            "status": if error.is_some() { "error" } else { "ok" },
            "error": error,
            "inputs": inputs,
            "config": config,
            "outputs": files,
            "notes": self.notes,
        });
        self.json(MANIFEST, &doc)
    }
}

pub fn display(p: &Option<PathBuf>) -> Value {
    p.as_deref().map(Path::display).map_or(Value::Null, |d| Value::String(d.to_string()))
}
