//! Resolving sources, channels and other JSON inputs against the fixture root.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;

use qkd_core::channel_model::ChannelParams;
use qkd_core::photon_source::PhotonDistribution;
use qkd_core::presets;

pub const FIXTURES_ENV: &str = "QKD_FIXTURES_DIR";

pub fn fixtures_root() -> PathBuf {
    match std::env::var_os(FIXTURES_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"),
    }
}

/// `path` as given if it exists, else relative to the fixture root. A
/// leading `fixtures/` is also resolved against the root, so paths written
/// relative to the repository work from any directory.
fn locate(path: &Path) -> Option<PathBuf> {
    if path.exists() {
        return Some(path.to_path_buf());
    }
    let root = fixtures_root();
    let stripped = path.strip_prefix("fixtures").ok().map(|p| root.join(p));
    std::iter::once(root.join(path))
        .chain(stripped)
        .find(|p| p.exists())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let found = locate(path).ok_or_else(|| {
        anyhow!(
            "{}: no such file (fixture root {})",
            path.display(),
            fixtures_root().display()
        )
    })?;
    let text =
        std::fs::read_to_string(&found).with_context(|| format!("reading {}", found.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("{}: does not match the expected schema", found.display()))
}

/// A source given as a JSON file, or by name from the fixture root's
/// `sources.json` (falling back to the built-in table).
pub fn source(name_or_path: &str) -> Result<PhotonDistribution> {
    let d = if name_or_path.ends_with(".json") || Path::new(name_or_path).exists() {
        read_json::<PhotonDistribution>(Path::new(name_or_path))?
    } else {
        let table = fixtures_root().join("sources.json");
        let from_table = if table.exists() {
            let named: std::collections::BTreeMap<String, PhotonDistribution> = read_json(&table)?;
            named.get(name_or_path).copied()
        } else {
            None
        };
        match from_table.or_else(|| presets::source_by_name(name_or_path)) {
            Some(d) => d,
            None => bail!("unknown source '{name_or_path}': pass a JSON file or one of the names in sources.json"),
        }
    };
    d.validate()
        .with_context(|| format!("source '{name_or_path}'"))?;
    Ok(d)
}

/// The given channel file, else `channel.json` under the fixture root, else
/// the built-in default link.
pub fn channel(path: Option<&Path>) -> Result<ChannelParams> {
    let ch = match path {
        Some(p) => read_json::<ChannelParams>(p)?,
        None => {
            let default = fixtures_root().join("channel.json");
            if default.exists() {
                read_json(&default)?
            } else {
                ChannelParams::default()
            }
        }
    };
    ch.validate().context("channel")?;
    Ok(ch)
}
