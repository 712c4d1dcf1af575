use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub config: Option<RunConfig>,
    /// file name → sha256 of its bytes
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub versions: BTreeMap<String, String>,
    pub rng_algorithm: String,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Output directory of one command; records every file it writes.
pub struct Artifacts {
    pub dir: PathBuf,
    stage: String,
    record: StageRecord,
}

impl Artifacts {
    pub fn open(cfg: &RunConfig, stage: &str) -> Result<Self> {
        fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        Ok(Self {
            dir: cfg.out.clone(),
            stage: stage.into(),
            record: StageRecord { config_hash: cfg.hash(), config: Some(cfg.canonical()), outputs: BTreeMap::new() },
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.record.outputs.insert(name.into(), hex(&Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// CSV from a header and rows of already formatted cells.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write_bytes(name, s.as_bytes())
    }

    /// Merge this stage into manifest.json.
    pub fn finish(self) -> Result<()> {
        let mp = self.dir.join(MANIFEST);
        let mut m: Manifest = match fs::read(&mp) {
            Ok(b) => serde_json::from_slice(&b).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        m.tool = "beurling-lab".into();
        m.versions.insert("beurling-lab".into(), env!("CARGO_PKG_VERSION").into());
        m.versions.insert("beurling-core".into(), beurling_core::VERSION.into());
        m.rng_algorithm = beurling_core::rng::RNG_ALGORITHM.into();
        m.stages.insert(self.stage, self.record);
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        fs::write(&mp, bytes).with_context(|| format!("writing {}", mp.display()))?;
        Ok(())
    }
}

/// Artifact written by an earlier stage.
pub fn read_stage<T: DeserializeOwned>(dir: &Path, name: &str, producer: &str) -> Result<T> {
    let p = dir.join(name);
    if !p.exists() {
        bail!("stage dependency missing: {} not found; run `{producer}` first", p.display());
    }
    let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
}

pub fn num(v: f64) -> String {
    // shortest round-trip form, same as the JSON encoder
    if v.is_finite() {
        serde_json::to_string(&v).expect("finite float")
    } else {
        format!("{v}")
    }
}
