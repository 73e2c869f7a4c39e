//! Run configuration: a base profile, a TOML file layered on top, then
//! `key=value` overrides; unknown keys are rejected with their path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldKind};
use crate::inverse::{FitConfig, SampleCounts, Schedule, TrainConfig};
use crate::lattice::Quadrature;
use crate::phantom::hex_digest;

use super::metrics::MetricOptions;

/// Phantom length units per human-scale millimetre, from matching the narrowest
/// tissue gap of the corpus to the coarsest human-scale spacing.
pub const LADDER_SCALE: f64 = 3.3;
/// Human-scale resolution ladder (mm), coarse to fine.
pub const HUMAN_LADDER: [f64; 5] = [6.8, 4.5, 3.0, 2.0, 1.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Full,
    #[default]
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Corpus directory written by `gen-corpus`; synthesised in memory when absent.
    pub path: Option<String>,
    pub identities: usize,
    pub expressions: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { path: None, identities: 4, expressions: 6, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// x > 0
    Left,
    Right,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Lattice spacing for `extract`/`simulate` (mm).
    pub h: f64,
    /// Resolution-study spacings, coarse to fine (mm).
    pub ladder: Vec<f64>,
    pub quadrature: Quadrature,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub gravity: bool,
    /// Downward acceleration (m/s²).
    pub gravity_accel: f64,
    /// Paralysis blend; 0 disables.
    pub paralysis: f64,
    pub paralysis_side: Side,
    /// Uniform jaw scale about the hinge pivot; 1 disables.
    pub jaw_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            h: (2.0 * LADDER_SCALE * 1e6).round() / 1e6,
            ladder: HUMAN_LADDER.iter().map(|h| (h * LADDER_SCALE * 1e6).round() / 1e6).collect(),
            quadrature: Quadrature::Gauss8,
            tolerance: 1e-6,
            max_iterations: 500,
            gravity: false,
            gravity_accel: 9.81,
            paralysis: 0.0,
            paralysis_side: Side::Both,
            jaw_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Non-neutral expressions per identity entering the study.
    pub expressions_per_identity: usize,
    /// Identities entering the study; 0 means all.
    pub identities: usize,
    /// Finest-level V2V bound as a fraction of the head diameter.
    pub max_relative_v2v: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { expressions_per_identity: 2, identities: 0, max_relative_v2v: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoBone,
    NoRigid,
    NoSoft,
    NoLip,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoBone => "no-bone",
            Variant::NoRigid => "no-rigid",
            Variant::NoSoft => "no-soft",
            Variant::NoLip => "no-lip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { variants: vec![Variant::Full, Variant::NoBone, Variant::NoRigid, Variant::NoSoft, Variant::NoLip] }
    }
}

/// Command inputs that live outside the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub checkpoint: Option<String>,
    /// Latents written by `fit`; otherwise the checkpoint table is used.
    pub latents: Option<String>,
    /// Directory written by `extract`.
    pub extract: Option<String>,
    pub identity: usize,
    pub expression: usize,
    /// Scan OBJ in canonical correspondence, for `fit`.
    pub scan: Option<String>,
    /// Fit to projected landmarks instead of the full scan.
    pub landmarks: bool,
    /// Mesh pair for `evaluate`.
    pub result: Option<String>,
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub fit: FitConfig,
    pub sim: SimConfig,
    pub eval: MetricOptions,
    pub study: StudyConfig,
    pub ablate: AblateConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Published hyper-parameters at full scale.
    pub fn full() -> Self {
        Self {
            profile: Profile::Full,
            seed: 0,
            corpus: CorpusConfig::default(),
            field: FieldConfig {
                kind: FieldKind::Sinusoidal,
                id_dim: 128,
                expr_dim: 128,
                layers: 5,
                width: 128,
                omega: 30.0,
                ..FieldConfig::default()
            },
            train: TrainConfig::default(),
            fit: FitConfig::default(),
            sim: SimConfig::default(),
            eval: MetricOptions::default(),
            study: StudyConfig::default(),
            ablate: AblateConfig::default(),
            io: IoConfig::default(),
        }
    }

    /// Sample counts at 1/100, 8-dim latents, grid fields and rates sized
    /// for a few hundred steps on one core.
    pub fn desk() -> Self {
        let full = Self::full();
        let s = full.train.samples;
        let train = TrainConfig {
            samples: SampleCounts { skin: s.skin / 100, bone: s.bone / 100, fix: s.fix / 100, soft: s.soft / 100 },
            schedule: Schedule { lr: 0.05, latent_lr: 1e-3, ..Schedule::default() },
            ..full.train
        };
        Self {
            profile: Profile::Desk,
            field: FieldConfig::default(),
            train,
            eval: MetricOptions { fscore_samples: 8_000, ..MetricOptions::default() },
            ..full
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Full => Self::full(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Layer `text` over its declared profile, then apply `overrides`.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config { key: "<file>".into(), msg: e.message().to_string() })?;
        Self::layered(user, overrides)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config { key: "--config".into(), msg: format!("{}: {e}", p.display()) })?;
                Self::from_toml(&text, overrides)
            }
            None => Self::layered(toml::Table::new(), overrides),
        }
    }

    fn layered(mut user: toml::Table, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config { key: o.clone(), msg: "override must look like key=value".into() })?;
            set_path(&mut user, key.trim(), parse_value(raw.trim()))?;
        }
        let profile = match user.get("profile") {
            None => Profile::default(),
            Some(v) => v
                .clone()
                .try_into::<Profile>()
                .map_err(|_| Error::Config { key: "profile".into(), msg: format!("unknown profile {v}") })?,
        };
        let base = toml::Value::try_from(Self::for_profile(profile))
            .map_err(|e| Error::Config { key: "<profile>".into(), msg: e.to_string() })?;
        let mut merged = match base {
            toml::Value::Table(t) => t,
            _ => unreachable!("config serialises to a table"),
        };
        merge(&mut merged, user);
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| Error::Config {
            key: e.path().to_string(),
            msg: e.inner().message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config { key: key.into(), msg: msg.into() });
        if self.corpus.identities == 0 || self.corpus.expressions == 0 {
            return bad("corpus", "needs at least one identity and one expression");
        }
        if self.train.schedule.batch == 0 {
            return bad("train.schedule.batch", "must be positive");
        }
        if !(self.sim.h > 0.0) {
            return bad("sim.h", "must be positive");
        }
        if self.sim.ladder.is_empty() || self.sim.ladder.iter().any(|h| !(*h > 0.0)) {
            return bad("sim.ladder", "needs positive spacings");
        }
        if !(0.0..=1.0).contains(&self.sim.paralysis) {
            return bad("sim.paralysis", "must lie in [0, 1]");
        }
        if !(self.sim.jaw_scale > 0.0) {
            return bad("sim.jaw_scale", "must be positive");
        }
        if self.train.weights.validate().is_err() {
            return bad("train.weights", "weights must be finite and non-negative");
        }
        if self.train.material.validate().is_err() {
            return bad("train.material", "needs E > 0 and 0 < poisson_ratio < 0.5");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Digest of the fully resolved configuration.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config { key: key.into(), msg: "empty key segment".into() });
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config { key: key.into(), msg: format!("`{p}` is not a table") })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
