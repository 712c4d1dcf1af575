use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use beurling_core::construction::{Mode, ParamSet};
use beurling_core::contour::PerronConfig;
use beurling_core::discretize::DiscretizeConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrackChoice {
    Continuous,
    Discrete,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerronSettings {
    /// Probe x for the closed-loop test (the contour itself runs at x_K).
    pub x: f64,
    pub kappa: f64,
    pub t_max: f64,
    pub sigma_left: f64,
    pub closed_loop: bool,
    pub quadrature: PerronConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSettings {
    /// Table the primes are sampled from; needs K_max ≥ block + 1.
    pub params: ParamSet,
    pub block: usize,
    pub settings: DiscretizeConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountSettings {
    pub x_max: f64,
    pub budget: usize,
    /// exp* is cross-checked against enumeration up to this x.
    pub oracle_x_max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stages {
    pub construction: bool,
    pub zeta: bool,
    pub saddle: bool,
    pub perron: bool,
    pub discretize: bool,
    pub count: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub continuous: ParamSet,
    /// Block analysed by zeta, saddle and perron.
    #[serde(rename = "K")]
    pub k: usize,
    pub track: TrackChoice,
    /// Saddles with |m| ≤ min(M, m_cap) are certified.
    pub m_cap: i64,
    /// Exponent variant in the envelope report.
    pub envelope_b: f64,
    /// Tolerance of measure convolutions and the exp* oracle.
    pub tol: f64,
    pub perron: PerronSettings,
    pub discrete: DiscreteSettings,
    pub count: CountSettings,
    /// Suites run by `verify`.
    pub stages: Stages,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            seed: 0,
            continuous: ParamSet::toy(1.0, 1.0, 20.0, 1),
            k: 0,
            track: TrackChoice::Continuous,
            m_cap: 5,
            envelope_b: 0.6,
            tol: 1e-12,
            perron: PerronSettings {
                x: 1000.0,
                kappa: 1.5,
                t_max: 1e5,
                sigma_left: 0.6,
                closed_loop: true,
                quadrature: PerronConfig::default(),
            },
            discrete: DiscreteSettings { params: ParamSet::toy(0.5, 1.0, 6.0, 1), block: 0, settings: DiscretizeConfig::default() },
            count: CountSettings { x_max: 1e5, budget: beurling_core::counting::DEFAULT_BUDGET, oracle_x_max: 300.0 },
            stages: Stages { construction: true, zeta: true, saddle: true, perron: true, discretize: true, count: true },
        }
    }
}

#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// JSON run configuration; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true, value_parser = ["toy", "strict"])]
    pub mode: Option<String>,
    #[arg(long = "K", global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub track: Option<TrackChoice>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

impl RunConfig {
    pub fn load(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(v) = &o.out {
            cfg.out = v.clone();
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.alpha {
            cfg.continuous.alpha = v;
        }
        if let Some(v) = o.c {
            cfg.continuous.c = v;
        }
        if let Some(v) = &o.mode {
            cfg.continuous.mode = if v == "strict" { Mode::Strict } else { Mode::Toy };
        }
        if let Some(v) = o.k {
            cfg.k = v;
        }
        if let Some(v) = o.track {
            cfg.track = v;
        }
        if let Some(v) = o.tol {
            cfg.tol = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("schema violation in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.continuous.validate().context("continuous parameters")?;
        self.discrete.params.validate().context("discrete parameters")?;
        if self.k > self.continuous.k_max {
            bail!("K = {} exceeds K_max = {}", self.k, self.continuous.k_max);
        }
        if self.discrete.block + 1 > self.discrete.params.k_max {
            bail!("discrete block {} needs discrete K_max ≥ {}", self.discrete.block, self.discrete.block + 1);
        }
        let p = &self.perron;
        if !(p.x > 1.0 && p.kappa > 1.0 && p.t_max > 0.0 && p.sigma_left > 0.0 && p.sigma_left < 1.0) {
            bail!("perron settings need x > 1, kappa > 1, t_max > 0 and 0 < sigma_left < 1");
        }
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            bail!("tol must lie in (0, 1e-3], got {}", self.tol);
        }
        if self.m_cap < 0 {
            bail!("m_cap must be non-negative");
        }
        if !(self.count.x_max >= 1.0 && self.count.oracle_x_max >= 1.0) {
            bail!("count ranges must be at least 1");
        }
        Ok(())
    }

    /// The configuration without its output directory, which does not
    /// affect any result.
    pub fn canonical(&self) -> Self {
        Self { out: PathBuf::new(), ..self.clone() }
    }

    /// sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
