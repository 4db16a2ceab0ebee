//! CSV and JSON writers with a provenance header.
//!
//! CSV files start with `#`-prefixed lines carrying the tool version, the
//! config hash, the seed and the command, followed by one header row.
//! Numbers are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Meta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn json(&self) -> Value {
        json!({
            "version": VERSION,
            "command": self.command,
            "config_sha256": self.config_hash,
            "seed": self.seed,
        })
    }
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Writer {
    dir: PathBuf,
    meta: Meta,
    written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path, meta: Meta) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            written: Vec::new(),
        })
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `name` with a header row and pre-formatted cells.
    pub fn csv(&mut self, name: &str, columns: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# vm {}", VERSION);
        let _ = writeln!(s, "# command {}", self.meta.command);
        let _ = writeln!(s, "# config_sha256 {}", self.meta.config_hash);
        let _ = writeln!(s, "# seed {}", self.meta.seed);
        s.push_str(&columns.join(","));
        s.push('\n');
        for r in rows {
            debug_assert_eq!(r.len(), columns.len());
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.put(name, s)
    }

    /// Writes `body` under a `meta` key next to its own keys.
    pub fn json(&mut self, name: &str, body: Value) -> Result<()> {
        let doc = json!({ "meta": self.meta.json(), "report": body });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        self.put(name, text)
    }

    fn put(&mut self, name: &str, text: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }
}

/// JSON number, with non-finite values mapped to strings.
pub fn jnum(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format!("{x}"))
    }
}
