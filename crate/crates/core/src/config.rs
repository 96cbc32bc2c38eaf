//! Experiment configuration.
//!
//! Files are either JSON or flat `key = value` lines with dotted keys:
//!
//! ```text
//! # on-off, ten users per class
//! n_rt = 10
//! n_nrt = 10
//! lambda_rt = 1
//! q = [0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3]
//! channel.kind = on_off
//! scheduler = onoff
//! ```
//!
//! Values are parsed as JSON literals when possible and as bare strings
//! otherwise. Environment variables `DLSCHED_<KEY>` override file values,
//! with `__` standing for the dot (`DLSCHED_CHANNEL__KIND=rayleigh`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::sched::{SchedulerKind, EXHAUSTIVE_LIMIT};
use crate::traffic::{ChannelModel, PacketModel};

pub const ENV_PREFIX: &str = "DLSCHED_";

/// A scalar applied to every user, or one value per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    Scalar(f64),
    List(Vec<f64>),
}

impl Default for PerUser {
    fn default() -> Self {
        PerUser::Scalar(0.0)
    }
}

impl From<f64> for PerUser {
    fn from(v: f64) -> Self {
        PerUser::Scalar(v)
    }
}

impl PerUser {
    pub fn expand(&self, n: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            PerUser::Scalar(v) => Ok(vec![*v; n]),
            PerUser::List(v) if v.len() == n => Ok(v.clone()),
            PerUser::List(v) => Err(Error::config(
                field,
                format!("expected {n} values, got {}", v.len()),
            )),
        }
    }
}

fn d_slot_len() -> f64 {
    1.0
}
fn d_p_max() -> f64 {
    20.0
}
fn d_b_max() -> f64 {
    1e4
}
fn d_horizon() -> u64 {
    200_000
}
fn d_sample_every() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_rt: usize,
    pub n_nrt: usize,
    /// RT arrival probability per slot.
    #[serde(default)]
    pub lambda_rt: PerUser,
    /// NRT arrival probability per slot.
    #[serde(default)]
    pub lambda_nrt: PerUser,
    /// RT delivery-ratio targets.
    #[serde(default)]
    pub q: PerUser,
    #[serde(default)]
    pub packet: PacketModel,
    /// Slot length `Ts` in seconds.
    #[serde(default = "d_slot_len")]
    pub slot_len: f64,
    pub p_avg: f64,
    #[serde(default = "d_p_max")]
    pub p_max: f64,
    #[serde(default = "d_b_max")]
    pub b_max: f64,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default = "default_scheduler")]
    pub scheduler: SchedulerKind,
    /// Number of slots `K`.
    #[serde(default = "d_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default)]
    pub heavy_traffic: bool,
    #[serde(default)]
    pub admit_all: bool,
    /// Metrics sample interval in slots.
    #[serde(default = "d_sample_every")]
    pub sample_every: u64,
    /// RT-branch probability for FixedP; the mean of `q` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixedp_bias: Option<f64>,
}

fn default_scheduler() -> SchedulerKind {
    SchedulerKind::Onoff
}

impl SystemConfig {
    /// Minimal valid config: `n_rt` + `n_nrt` users on always-on channels.
    pub fn new(n_rt: usize, n_nrt: usize, p_avg: f64) -> Self {
        Self {
            n_rt,
            n_nrt,
            lambda_rt: PerUser::Scalar(0.0),
            lambda_nrt: PerUser::Scalar(0.0),
            q: PerUser::Scalar(0.0),
            packet: PacketModel::default(),
            slot_len: d_slot_len(),
            p_avg,
            p_max: d_p_max(),
            b_max: d_b_max(),
            channel: ChannelModel::default(),
            scheduler: default_scheduler(),
            horizon: d_horizon(),
            seed: 0,
            burn_in: 0,
            heavy_traffic: false,
            admit_all: false,
            sample_every: d_sample_every(),
            fixedp_bias: None,
        }
    }

    pub fn rt_lambda(&self) -> Result<Vec<f64>> {
        self.lambda_rt.expand(self.n_rt, "lambda_rt")
    }

    pub fn nrt_lambda(&self) -> Result<Vec<f64>> {
        self.lambda_nrt.expand(self.n_nrt, "lambda_nrt")
    }

    pub fn q_targets(&self) -> Result<Vec<f64>> {
        self.q.expand(self.n_rt, "q")
    }

    pub fn coin_bias(&self) -> Result<f64> {
        if let Some(b) = self.fixedp_bias {
            return Ok(b);
        }
        let q = self.q_targets()?;
        Ok(if q.is_empty() {
            0.0
        } else {
            q.iter().sum::<f64>() / q.len() as f64
        })
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: &[f64], field: &str| -> Result<()> {
            match v.iter().position(|x| !(0.0..=1.0).contains(x)) {
                Some(i) => Err(Error::config(
                    field,
                    format!("value {} at index {i} is outside [0, 1]", v[i]),
                )),
                None => Ok(()),
            }
        };
        in_unit(&self.rt_lambda()?, "lambda_rt")?;
        in_unit(&self.nrt_lambda()?, "lambda_nrt")?;
        in_unit(&self.q_targets()?, "q")?;
        if let Some(b) = self.fixedp_bias {
            in_unit(&[b], "fixedp_bias")?;
        }
        let positive = |v: f64, field: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        positive(self.slot_len, "slot_len")?;
        positive(self.p_max, "p_max")?;
        positive(self.b_max, "b_max")?;
        if !(self.p_avg >= 0.0 && self.p_avg.is_finite()) {
            return Err(Error::config("p_avg", "must be non-negative"));
        }
        if self.p_avg > self.p_max {
            log::warn!(
                "p_avg {} exceeds p_max {}: the average-power constraint never binds",
                self.p_avg,
                self.p_max
            );
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if self.sample_every < 1 {
            return Err(Error::config("sample_every", "must be at least 1"));
        }
        self.channel.validate()?;
        self.packet.validate()?;
        match self.scheduler {
            SchedulerKind::Onoff if !self.channel.is_on_off() => {
                return Err(Error::config(
                    "scheduler",
                    "onoff requires channel.kind = on_off",
                ));
            }
            SchedulerKind::Onoff if self.packet.is_heterogeneous() => {
                return Err(Error::config(
                    "scheduler",
                    "onoff assumes a common packet length; use hetero_heuristic",
                ));
            }
            SchedulerKind::Exhaustive if self.n_rt > EXHAUSTIVE_LIMIT => {
                return Err(Error::TooManyUsers {
                    n: self.n_rt,
                    limit: EXHAUSTIVE_LIMIT,
                });
            }
            _ => {}
        }
        Ok(())
    }

    /// Reads a config file (JSON or key-value) and applies `DLSCHED_*`
    /// overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_with_env(&text, std::env::vars())
    }

    pub fn from_str_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc = parse_document(text)?;
        apply_env(&mut doc.value, env)?;
        let cfg: SystemConfig = doc.deserialize()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat `key = value` rendering that [`parse_document`] reads back.
    pub fn to_key_value(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        let mut out = String::new();
        flatten("", &v, &mut out);
        Ok(out)
    }
}

impl std::str::FromStr for SystemConfig {
    type Err = Error;

    /// Parses without environment overrides.
    fn from_str(s: &str) -> Result<Self> {
        Self::from_str_with_env(s, std::iter::empty())
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => {
            out.push_str(prefix);
            out.push_str(" = ");
            out.push_str(&other.to_string());
            out.push('\n');
        }
    }
}

/// A parsed config tree plus the line each dotted key came from.
#[derive(Debug, Clone)]
pub struct Document {
    pub value: Value,
    lines: BTreeMap<String, usize>,
}

impl Document {
    /// Deserializes into `T`, reporting the failing key and its line.
    pub fn deserialize<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_path_to_error::deserialize(self.value.clone()).map_err(|e| {
            let path = e.path().to_string();
            let reason = e.into_inner().to_string();
            match self.line_of(&path) {
                Some(line) => Error::Parse {
                    line,
                    reason: format!("{path}: {reason}"),
                },
                None => Error::config(path, reason),
            }
        })
    }

    fn line_of(&self, path: &str) -> Option<usize> {
        // longest recorded key that prefixes the error path
        let mut p = path.to_string();
        loop {
            if let Some(&l) = self.lines.get(&p) {
                return Some(l);
            }
            let i = p.rfind(['.', '['])?;
            p.truncate(i);
        }
    }
}

/// Parses JSON (first non-blank char `{`) or flat dotted key-value text.
pub fn parse_document(text: &str) -> Result<Document> {
    if text.trim_start().starts_with('{') {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: e.to_string(),
        })?;
        return Ok(Document {
            value,
            lines: BTreeMap::new(),
        });
    }
    let mut root = Value::Object(Map::new());
    let mut lines = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, val) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            reason: format!("expected `key = value`, got {body:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(|s| s.trim().is_empty()) {
            return Err(Error::Parse {
                line,
                reason: format!("malformed key {key:?}"),
            });
        }
        if lines.insert(key.to_string(), line).is_some() {
            return Err(Error::Parse {
                line,
                reason: format!("duplicate key {key:?}"),
            });
        }
        insert_dotted(&mut root, key, literal(val.trim())).map_err(|reason| Error::Parse {
            line,
            reason,
        })?;
    }
    Ok(Document { value: root, lines })
}

fn literal(s: &str) -> Value {
    if let Ok(v) = serde_json::from_str(s) {
        return v;
    }
    // bare-word lists such as `[onoff, fixedp]`
    if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        if inner.trim().is_empty() {
            return Value::Array(Vec::new());
        }
        return Value::Array(inner.split(',').map(|p| literal(p.trim())).collect());
    }
    Value::String(s.trim_matches('"').to_string())
}

fn insert_dotted(root: &mut Value, key: &str, v: Value) -> std::result::Result<(), String> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let map = cur
            .as_object_mut()
            .ok_or_else(|| format!("key {key:?} nests under a scalar"))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), v);
            return Ok(());
        }
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Applies `DLSCHED_*` overrides to a parsed tree.
pub fn apply_env<I>(root: &mut Value, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (k, v) in env {
        let Some(rest) = k.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let key = rest.to_ascii_lowercase().replace("__", ".");
        log::debug!("override {key} = {v} from {k}");
        insert_dotted(root, &key, literal(&v)).map_err(|reason| Error::config(k.clone(), reason))?;
    }
    Ok(())
}
