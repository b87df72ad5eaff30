//! Random instance generation and JSON persistence.
//!
//! Harvest per slot is `max(0, Normal(delta_n, variance))`; gains are
//! `|h|^2` for `h ~ CN(0, 1)`, i.e. unit-mean exponential. Each repeat of a
//! configuration draws from its own ChaCha stream keyed by `(seed, repeat)`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::tensor::Grid;

pub const SCHEMA_VERSION: u32 = 1;

/// A per-node quantity given either once for all nodes or node by node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    Same(f64),
    Each(Vec<f64>),
}

impl PerNode {
    pub fn resolve(&self, n: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            PerNode::Same(v) => Ok(vec![*v; n]),
            PerNode::Each(v) if v.len() == n => Ok(v.clone()),
            PerNode::Each(v) => Err(Error::InvalidParams(format!(
                "{name} has {} entries for {n} nodes",
                v.len()
            ))),
        }
    }
}

impl From<f64> for PerNode {
    fn from(v: f64) -> Self {
        PerNode::Same(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainModel {
    /// i.i.d. unit-mean exponential per (node, slot).
    ExponentialUnit,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_slots: usize,
    /// Mean harvest per slot.
    pub delta: PerNode,
    /// Variance of the Gaussian before truncation at zero.
    pub harvest_variance: f64,
    pub gain_model: GainModel,
    pub battery_cap: PerNode,
    pub power_cap: PerNode,
    pub weight: PerNode,
    pub grid_cost: f64,
    pub coop_cost: f64,
    #[serde(default = "one")]
    pub transfer_efficiency: f64,
    pub seed: u64,
    pub repeats: usize,
}

fn one() -> f64 {
    1.0
}

impl Default for GenConfig {
    /// Five users over five slots, 20 J caps, unit weights, `mu = 0.2`,
    /// twelve repeats.
    fn default() -> Self {
        GenConfig {
            n_users: 5,
            n_slots: 5,
            delta: PerNode::Same(10.0),
            harvest_variance: 4.0,
            gain_model: GainModel::ExponentialUnit,
            battery_cap: PerNode::Same(20.0),
            power_cap: PerNode::Same(20.0),
            weight: PerNode::Same(1.0),
            grid_cost: 0.0,
            coop_cost: 0.2,
            transfer_efficiency: 1.0,
            seed: 1,
            repeats: 12,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_slots == 0 {
            return Err(Error::InvalidParams("n_users and n_slots must be positive".into()));
        }
        let n = self.n_users;
        for (name, field) in [
            ("delta", &self.delta),
            ("battery_cap", &self.battery_cap),
            ("power_cap", &self.power_cap),
            ("weight", &self.weight),
        ] {
            if field.resolve(n, name)?.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParams(format!("{name} must be finite and nonnegative")));
            }
        }
        let scalars = [
            ("harvest_variance", self.harvest_variance),
            ("grid_cost", self.grid_cost),
            ("coop_cost", self.coop_cost),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        if let GainModel::Constant(c) = self.gain_model {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidParams(format!("constant gain {c} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Where a generated scenario came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: GenConfig,
    pub repeat: u64,
}

/// The first repeat of `cfg`.
pub fn generate(cfg: &GenConfig) -> Result<Scenario> {
    generate_repeat(cfg, 0)
}

/// Every repeat of `cfg`, in order.
pub fn generate_all(cfg: &GenConfig) -> Result<Vec<Scenario>> {
    (0..cfg.repeats as u64).map(|r| generate_repeat(cfg, r)).collect()
}

pub fn generate_repeat(cfg: &GenConfig, repeat: u64) -> Result<Scenario> {
    cfg.validate()?;
    let (n, k) = (cfg.n_users, cfg.n_slots);
    let delta = cfg.delta.resolve(n, "delta")?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(repeat);

    let sigma = cfg.harvest_variance.sqrt();
    let mut harvest = Grid::zeros(n, k);
    for (i, &mean) in delta.iter().enumerate() {
        let normal = Normal::new(mean, sigma)
            .map_err(|e| Error::InvalidParams(format!("harvest distribution: {e}")))?;
        for t in 0..k {
            harvest[(i, t)] = normal.sample(&mut rng).max(0.0);
        }
    }
    let gain = match cfg.gain_model {
        GainModel::Constant(c) => Grid::filled(n, k, c),
        GainModel::ExponentialUnit => Grid::from_fn(n, k, |_, _| Exp1.sample(&mut rng)),
    };

    let sc = Scenario {
        n_users: n,
        n_slots: k,
        gain,
        harvest,
        battery_cap: cfg.battery_cap.resolve(n, "battery_cap")?,
        power_cap: cfg.power_cap.resolve(n, "power_cap")?,
        weight: cfg.weight.resolve(n, "weight")?,
        grid_cost: cfg.grid_cost,
        coop_cost: cfg.coop_cost,
        transfer_efficiency: cfg.transfer_efficiency,
        seed: Some(cfg.seed),
        generator: Some(Provenance {
            config: cfg.clone(),
            repeat,
        }),
    };
    sc.validate()?;
    Ok(sc)
}

pub fn to_json(sc: &Scenario) -> Result<String> {
    let mut value = serde_json::to_value(sc)?;
    if let serde_json::Value::Object(map) = &mut value {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    Ok(serde_json::to_string_pretty(&value)?)
}

pub fn from_json(text: &str) -> Result<Scenario> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    if let serde_json::Value::Object(map) = &mut value {
        if let Some(v) = map.remove("schema_version") {
            let found = v.as_u64().ok_or_else(|| Error::Schema {
                path: "schema_version".into(),
                message: format!("expected an unsigned integer, found {v}"),
            })?;
            if found != SCHEMA_VERSION as u64 {
                return Err(Error::SchemaVersion {
                    found: found as u32,
                    expected: SCHEMA_VERSION,
                });
            }
        }
    }
    let sc: Scenario = serde_path_to_error::deserialize(value).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    sc.validate()?;
    Ok(sc)
}

pub fn save(sc: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(sc)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
