//! Run configuration: a TOML file with one section per component, plus
//! dotted `--set key=value` overrides.

use std::path::Path;

use rlfollow::ddpg::DdpgConfig;
use rlfollow::harness::{EmergencyWindow, SteadyFollowing};
use rlfollow::idm::CalibrationOptions;
use rlfollow::rewards::AgentParams;
use rlfollow::sim::SimConfig;
use rlfollow::Error;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Settings of the validation scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub platoon_followers: usize,
    pub platoon_episodes: usize,
    pub platoon_steps: usize,
    /// Allowed growth of the acceleration variance from one vehicle to the next.
    pub variance_slack: f64,
    pub ttc_episodes: usize,
    pub ttc_steps: usize,
    pub emergency: EmergencyWindow,
    pub steady: SteadyFollowing,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            platoon_followers: 5,
            platoon_episodes: 20,
            platoon_steps: 1000,
            variance_slack: 0.1,
            ttc_episodes: 15,
            ttc_steps: 1000,
            emergency: EmergencyWindow::default(),
            steady: SteadyFollowing::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed of every command.
    pub seed: u64,
    pub agent: AgentParams,
    pub sim: SimConfig,
    pub ddpg: DdpgConfig,
    pub calibration: CalibrationOptions,
    pub harness: HarnessConfig,
}

/// Keys that exist in the structs but are driven by other settings.
const DERIVED_KEYS: [&str; 2] = ["ddpg.seed", "calibration.seed"];

impl RunConfig {
    /// Default settings as a TOML table, without the derived keys.
    pub fn default_table() -> Table {
        let Ok(Value::Table(mut t)) = Value::try_from(RunConfig::default()) else {
            unreachable!("defaults serialize to a table")
        };
        for key in DERIVED_KEYS {
            let (section, field) = key.split_once('.').unwrap();
            if let Some(Value::Table(s)) = t.get_mut(section) {
                s.remove(field);
            }
        }
        t
    }

    /// Reads an optional config file, applies overrides, and validates.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, Error> {
        let mut table = Self::default_table();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let user: Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge_file(&mut table, &user, "")?;
        }
        for raw in overrides {
            apply_override(&mut table, raw)?;
        }
        if let Some(seed) = seed {
            table.insert("seed".into(), Value::Integer(seed as i64));
        }
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.ddpg.seed = cfg.seed;
        cfg.calibration.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.agent.validate()?;
        self.sim.validate()?;
        self.ddpg.validate()?;
        self.calibration.bounds.to_bounds()?;
        let h = &self.harness;
        if h.platoon_followers == 0 || h.platoon_steps == 0 || h.ttc_steps == 0 {
            return Err(Error::Config(
                "harness.platoon_followers, platoon_steps and ttc_steps must be > 0".into(),
            ));
        }
        if !(h.variance_slack >= 0.0) {
            return Err(Error::Config("harness.variance_slack must be >= 0".into()));
        }
        Ok(())
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Copies `user` over `base`, rejecting keys and types the schema lacks.
fn merge_file(base: &mut Table, user: &Table, prefix: &str) -> Result<(), Error> {
    for (key, value) in user {
        let path = join(prefix, key);
        if DERIVED_KEYS.contains(&path.as_str()) {
            return Err(Error::Config(format!("`{path}` cannot be set; use the top-level `seed`")));
        }
        match (base.get_mut(key), value) {
            (Some(Value::Table(b)), Value::Table(u)) => merge_file(b, u, &path)?,
            (Some(slot), v) => *slot = coerce(&path, slot, v.clone())?,
            (None, _) => return Err(Error::Config(format!("unknown config key `{path}`"))),
        }
    }
    Ok(())
}

/// Applies one `key=value`; a bare key is looked up in every section.
pub fn apply_override(table: &mut Table, raw: &str) -> Result<(), Error> {
    let (key, text) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not of the form key=value")))?;
    let key = key.trim();
    let path = resolve_key(table, key)?;
    if DERIVED_KEYS.contains(&path.as_str()) {
        return Err(Error::Config(format!("`{path}` cannot be set; use the top-level `seed`")));
    }
    let value = parse_value(text.trim());
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().unwrap();
    let mut cur = &mut *table;
    for p in &parts {
        cur = match cur.get_mut(*p) {
            Some(Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown config key `{path}`"))),
        };
    }
    let slot = cur
        .get_mut(last)
        .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
    *slot = coerce(&path, slot, value)?;
    Ok(())
}

fn resolve_key(table: &Table, key: &str) -> Result<String, Error> {
    if key.is_empty() {
        return Err(Error::Config("empty override key".into()));
    }
    if key.contains('.') || table.contains_key(key) {
        return Ok(key.to_string());
    }
    let hits: Vec<String> = table
        .iter()
        .filter_map(|(section, v)| match v {
            Value::Table(t) if t.contains_key(key) => Some(format!("{section}.{key}")),
            _ => None,
        })
        .collect();
    match hits.len() {
        1 => Ok(hits.into_iter().next().unwrap()),
        0 => Err(Error::Config(format!("unknown config key `{key}`"))),
        _ => Err(Error::Config(format!(
            "config key `{key}` is ambiguous: {}",
            hits.join(", ")
        ))),
    }
}

/// Parses a TOML literal, falling back to a bare string.
fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn coerce(path: &str, current: &Value, new: Value) -> Result<Value, Error> {
    let mismatch = |new: &Value| {
        Error::Config(format!(
            "config key `{path}` expects {}, got {} `{new}`",
            current.type_str(),
            new.type_str()
        ))
    };
    match (current, new) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Table(_), v) if !v.is_table() => Err(mismatch(&v)),
        (c, v) if std::mem::discriminant(c) == std::mem::discriminant(&v) => Ok(v),
        (_, v) => Err(mismatch(&v)),
    }
}
