//! CSV and JSON writers that stamp every output with the tool version and a
//! hash of the resolved configuration.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "qkd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
}

impl Metadata {
    pub fn new<C: Serialize>(command: &'static str, config: &C) -> Result<Self> {
        let canonical = serde_json::to_string(config)?;
        let hash = Sha256::digest(canonical.as_bytes());
        Ok(Self {
            tool: TOOL,
            version: VERSION,
            command,
            config_sha256: hex::encode(hash),
        })
    }
}

/// A CSV document: `#` header comments, one header row, rows, `#` footers.
pub struct Csv {
    text: String,
    footer: Vec<String>,
}

impl Csv {
    pub fn new<C: Serialize>(meta: &Metadata, config: &C, columns: &[&str]) -> Result<Self> {
        let mut text = String::new();
        writeln!(text, "# {} {}", meta.tool, meta.version)?;
        writeln!(text, "# command={}", meta.command)?;
        writeln!(text, "# config_sha256={}", meta.config_sha256)?;
        writeln!(text, "# config={}", serde_json::to_string(config)?)?;
        writeln!(text, "{}", columns.join(","))?;
        Ok(Self {
            text,
            footer: Vec::new(),
        })
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn footer(&mut self, key: &str, value: impl std::fmt::Display) {
        self.footer.push(format!("# {key}={value}"));
    }

    pub fn finish(mut self) -> String {
        for line in self.footer {
            self.text.push_str(&line);
            self.text.push('\n');
        }
        self.text
    }
}

/// Shortest round-trip representation, so output is bit-exact and stable.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Empty cell for a missing value.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn opt_footer(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "none".into())
}

#[derive(Serialize)]
struct Stamped<'a, C: Serialize, R: Serialize> {
    metadata: &'a Metadata,
    config: &'a C,
    #[serde(flatten)]
    result: &'a R,
}

pub fn json<C: Serialize, R: Serialize>(meta: &Metadata, config: &C, result: &R) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Stamped {
        metadata: meta,
        config,
        result,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}
