//! Run configuration.
//!
//! A TOML file with top-level experiment keys and two sections:
//!
//! ```toml
//! dataset = "idx:data/fashion-mnist"     # or "synth:classes=10,dim=32,..."
//! strategies = ["centralized_random", "decentralized_priority+counter"]
//! seed = 1            # master seed
//! replicates = 3      # replicate seeds are derived from `seed`...
//! seeds = []          # ...unless listed here explicitly
//! users = 10
//! k_per_round = 2
//! rounds = 300
//! hidden = [200]
//! eta = 0.01
//! batch_size = 32
//! epochs = 1
//! threshold = 0.16
//! eval_every = 1
//!
//! [partition]
//! scheme = "shards"   # or "iid"
//! shard_size = 300
//! shards_per_user = 2
//!
//! [mac]
//! cw_base = 2048
//! slot_us = 20.0
//! upload_slots = 50
//! retry_cap = 16
//! ```
//!
//! Every key is optional and defaults to the values above. Overrides use
//! dotted paths (`mac.cw_base=512`) and may only name existing keys. The
//! resolved snapshot written next to run outputs lists the replicate seeds
//! explicitly, so loading it reproduces the run.

use std::path::Path;

use fedaccess_core::data::PartitionScheme;
use fedaccess_core::rng::replicate_seed;
use fedaccess_core::sim::{ExperimentConfig, MacSettings, Policy, Strategy};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::dataset::{DatasetSpec, DEFAULT_BLOBS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub scheme: String,
    pub shard_size: usize,
    pub shards_per_user: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: String,
    pub strategies: Vec<String>,
    pub seed: u64,
    pub replicates: u32,
    pub seeds: Vec<u64>,
    pub users: usize,
    pub k_per_round: usize,
    pub rounds: u64,
    pub hidden: Vec<usize>,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold: f64,
    pub eval_every: u64,
    pub partition: PartitionSection,
    pub mac: MacSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        let (shard_size, shards_per_user) = match exp.partition {
            PartitionScheme::Shards { shard_size, shards_per_user } => (shard_size, shards_per_user),
            PartitionScheme::Iid => (300, 2),
        };
        RunConfig {
            dataset: DatasetSpec::Synth(DEFAULT_BLOBS).to_string(),
            strategies: Policy::ALL.iter().map(|&p| Strategy::new(p).id()).collect(),
            seed: exp.seed,
            replicates: 1,
            seeds: Vec::new(),
            users: exp.users,
            k_per_round: exp.k_per_round,
            rounds: exp.rounds,
            hidden: exp.hidden,
            eta: exp.eta,
            batch_size: exp.batch_size,
            epochs: exp.epochs,
            threshold: exp.threshold,
            eval_every: exp.eval_every,
            partition: PartitionSection { scheme: "shards".into(), shard_size, shards_per_user },
            mac: exp.mac,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Coerces `new` towards the type of the value it replaces.
fn coerce(existing: &Value, new: Value, raw: Option<&str>) -> Value {
    match (existing, new) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (Value::String(_), v @ Value::String(_)) => v,
        (Value::String(_), _) if raw.is_some() => Value::String(raw.unwrap_or_default().to_string()),
        (Value::Array(old), v) if !v.is_array() && raw.is_some() => {
            let item = old.first();
            Value::Array(
                raw.unwrap_or_default()
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| match item {
                        Some(proto) => coerce(proto, parse_scalar(s), Some(s)),
                        None => parse_scalar(s),
                    })
                    .collect(),
            )
        }
        (Value::Array(old), Value::Array(items)) => Value::Array(match old.first() {
            Some(proto) => items.into_iter().map(|v| coerce(proto, v, None)).collect(),
            None => items,
        }),
        (_, v) => v,
    }
}

/// Parses a TOML literal, falling back to a bare string.
fn parse_scalar(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn merge_checked(base: &mut Table, incoming: Table, prefix: &str) -> Result<()> {
    for (key, value) in incoming {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        let slot = base.get_mut(&key).ok_or_else(|| config_err(format!("unknown config key `{path}`")))?;
        match (slot, value) {
            (Value::Table(inner), Value::Table(v)) => merge_checked(inner, v, &path)?,
            (Value::Table(_), _) => return Err(config_err(format!("`{path}` must be a section"))),
            (slot, v) => *slot = coerce(slot, v, None),
        }
    }
    Ok(())
}

fn set_checked(base: &mut Table, assignment: &str) -> Result<String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {assignment:?} is not key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().unwrap_or_default();
    let mut table = base;
    for part in parts {
        table = match table.get_mut(part) {
            Some(Value::Table(t)) => t,
            _ => return Err(config_err(format!("unknown config key `{path}`"))),
        };
    }
    let slot = table.get_mut(leaf).ok_or_else(|| config_err(format!("unknown config key `{path}`")))?;
    if slot.is_table() {
        return Err(config_err(format!("`{path}` is a section, not a value")));
    }
    *slot = coerce(slot, parse_scalar(raw), Some(raw));
    Ok(path.to_string())
}

impl RunConfig {
    /// Defaults, then the file (if any), then `--set` overrides, then the
    /// `--seed` flag.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
        let mut table = Table::try_from(RunConfig::default()).map_err(|e| config_err(e.to_string()))?;
        let mut explicit_seeds = false;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            let file: Table =
                toml::from_str(&text).map_err(|e| config_err(format!("{}: {}", path.display(), e.message())))?;
            explicit_seeds = file.contains_key("seeds");
            merge_checked(&mut table, file, "")?;
        }
        let mut reseed = false;
        for o in overrides {
            match set_checked(&mut table, o)?.as_str() {
                "seeds" => explicit_seeds = true,
                "seed" | "replicates" => reseed = true,
                _ => {}
            }
        }
        if let Some(s) = seed {
            let s = i64::try_from(s).map_err(|_| config_err(format!("seed {s} exceeds {}", i64::MAX)))?;
            table.insert("seed".into(), Value::Integer(s));
            reseed = true;
        }
        if reseed && !explicit_seeds {
            table.insert("seeds".into(), Value::Array(Vec::new()));
        }
        let mut config: RunConfig =
            table.try_into().map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        config.resolve()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let file: Table = toml::from_str(text).map_err(|e| config_err(e.message().to_string()))?;
        let mut table = Table::try_from(RunConfig::default()).map_err(|e| config_err(e.to_string()))?;
        merge_checked(&mut table, file, "")?;
        let mut config: RunConfig =
            table.try_into().map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        config.resolve()?;
        Ok(config)
    }

    /// Fills in derived replicate seeds and validates everything.
    pub fn resolve(&mut self) -> Result<()> {
        if self.seeds.is_empty() {
            if self.replicates == 0 {
                return Err(config_err("replicates must be at least 1"));
            }
            // 63 bits so the snapshot stays a valid TOML integer
            self.seeds = (0..u64::from(self.replicates)).map(|i| replicate_seed(self.seed, i) >> 1).collect();
        }
        self.replicates = self.seeds.len() as u32;
        self.strategies()?;
        self.dataset_spec()?;
        self.experiment(self.seeds[0])?.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        if self.strategies.is_empty() {
            return Err(config_err("no strategies configured"));
        }
        self.strategies.iter().map(|s| s.parse().map_err(|e: fedaccess_core::Error| config_err(e.to_string()))).collect()
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        self.dataset.parse()
    }

    pub fn partition_scheme(&self) -> Result<PartitionScheme> {
        match self.partition.scheme.as_str() {
            "iid" => Ok(PartitionScheme::Iid),
            "shards" => Ok(PartitionScheme::Shards {
                shard_size: self.partition.shard_size,
                shards_per_user: self.partition.shards_per_user,
            }),
            other => Err(config_err(format!("unknown partition scheme {other:?} (expected iid or shards)"))),
        }
    }

    pub fn experiment(&self, seed: u64) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            users: self.users,
            k_per_round: self.k_per_round,
            rounds: self.rounds,
            hidden: self.hidden.clone(),
            eta: self.eta,
            batch_size: self.batch_size,
            epochs: self.epochs,
            threshold: self.threshold,
            seed,
            eval_every: self.eval_every,
            partition: self.partition_scheme()?,
            mac: self.mac,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::load(None, &[], None).unwrap();
        assert_eq!(c.seeds.len(), 1);
        assert_eq!(c.strategies().unwrap().len(), 4);
        assert_eq!(c.mac.cw_base, 2048);
        assert_eq!(c.threshold, 0.16);
    }

    #[test]
    fn overrides_apply_with_coercion() {
        let sets = [
            "rounds=5",
            "mac.cw_base=512",
            "eta=1",
            "partition.scheme=iid",
            "strategies=centralized_random,decentralized_random",
            "dataset=synth:classes=3,dim=4",
            "hidden=[8, 4]",
        ]
        .map(String::from);
        let c = RunConfig::load(None, &sets, None).unwrap();
        assert_eq!(c.rounds, 5);
        assert_eq!(c.mac.cw_base, 512);
        assert_eq!(c.eta, 1.0);
        assert_eq!(c.partition_scheme().unwrap(), PartitionScheme::Iid);
        assert_eq!(c.strategies, vec!["centralized_random", "decentralized_random"]);
        assert_eq!(c.dataset, "synth:classes=3,dim=4");
        assert_eq!(c.hidden, vec![8, 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["round=5", "mac.cw=1", "mac=3", "nothing"] {
            let err = RunConfig::load(None, &[bad.to_string()], None).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}");
        }
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[mac]\nbogus = 1").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in ["k_per_round=11", "strategies=fastest", "partition.scheme=random", "threshold=0", "replicates=0", "rounds=-1"] {
            assert!(RunConfig::load(None, &[bad.to_string()], None).is_err(), "{bad}");
        }
    }

    #[test]
    fn seeds_are_derived_and_snapshotted() {
        let c = RunConfig::load(None, &["replicates=3".into()], Some(7)).unwrap();
        assert_eq!(c.seeds, (0..3).map(|i| replicate_seed(7, i) >> 1).collect::<Vec<_>>());
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn snapshots_parse_for_any_master_seed() {
        for master in [0, 1, 7, 12345, i64::MAX as u64] {
            let c = RunConfig::load(None, &["replicates=8".into()], Some(master)).unwrap();
            assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        }
        assert!(RunConfig::load(None, &[], Some(u64::MAX)).is_err());
    }

    #[test]
    fn explicit_seeds_win() {
        let c = RunConfig::from_toml_str("seeds = [4, 5]\nreplicates = 9").unwrap();
        assert_eq!(c.seeds, vec![4, 5]);
        assert_eq!(c.replicates, 2);
    }
}
