use std::path::Path;

use anyhow::{bail, Context, Result};
use mgseg::bench::BenchConfig;
use mgseg::network::NetworkConfig;
use mgseg::synth::SynthConfig;
use mgseg::train::{AblationSetup, EvalOptions, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a config file may set. Missing keys keep the desk defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub synth: SynthConfig,
    pub train_clips: usize,
    pub test_clips: usize,
    pub seeds: Vec<u64>,
    pub bench: BenchConfig,
}

impl Default for Config {
    fn default() -> Self {
        let setup = AblationSetup::default();
        Self {
            network: setup.network,
            train: setup.train,
            eval: setup.eval,
            synth: setup.synth,
            train_clips: setup.train_clips,
            test_clips: setup.test_clips,
            seeds: setup.seeds,
            bench: BenchConfig::default(),
        }
    }
}

impl Config {
    /// Reads `path` (if any), then applies `key.path=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>().with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Config = toml::Value::Table(root).try_into().context("invalid configuration")?;
        cfg.network.validate()?;
        cfg.train.validate()?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    /// Primary run seed.
    pub fn seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn setup(&self) -> AblationSetup {
        AblationSetup {
            network: self.network.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
            synth: self.synth.clone(),
            train_clips: self.train_clips,
            test_clips: self.test_clips,
            seeds: self.seeds.clone(),
        }
    }
}

/// Sets `a.b.c = value` in `root`; the value is read as a TOML literal, or as
/// a bare string if it is not one.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not of the form key=value");
    };
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?} has an empty key segment");
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for part in path {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {spec:?}: {part} is not a table"),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
