//! Application configuration: a TOML file, then `YARDCAST_*` environment
//! overrides, then command-line flags.
//!
//! ```toml
//! timezone = "America/Toronto"
//!
//! [calendar]
//! weekend_days = ["Sat", "Sun"]
//! holidays = { christmas = ["2023-12-25", "2024-12-25"] }
//!
//! [[classification]]
//! type_prefix = "G"
//! category = "standard"
//!
//! [models.decomposable]
//! preset = "tuned"
//! n_changepoints = 10
//!
//! [models.lstm]
//! preset = "reduced"
//!
//! [paths]
//! data = "series.csv"
//! artifacts = "artifacts"
//! reports = "reports"
//!
//! [service]
//! bind = "127.0.0.1"
//! port = 8080
//! default_model = "lstm"
//! ```
//!
//! Every key can be overridden from the environment: `YARDCAST_SERVICE__PORT=9000`
//! sets `service.port`, with `__` separating nesting levels. Values are read as
//! TOML when they parse, as plain strings otherwise.
//!
//! Each model family takes one `preset` (`default` or `tuned`, plus `reduced`
//! for `lstm`); any other keys in the family table override preset fields.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use yardcast::arima::ArimaConfig;
use yardcast::decomposable::DecomposableConfig;
use yardcast::ingest::{ClassificationRule, ClassificationTable};
use yardcast::lstm::NetworkConfig;
use yardcast::{CalendarSpec, ModelFamily, ModelSpec};

pub const ENV_PREFIX: &str = "YARDCAST_";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDefaults {
    pub arima: ArimaConfig,
    pub decomposable: DecomposableConfig,
    pub lstm: NetworkConfig,
}

impl ModelDefaults {
    pub fn spec(&self, family: ModelFamily, seed: u64) -> ModelSpec {
        let spec = match family {
            ModelFamily::Naive => ModelSpec::naive(),
            ModelFamily::Arima => ModelSpec::arima(self.arima),
            ModelFamily::Decomposable => ModelSpec::decomposable(self.decomposable.clone()),
            ModelFamily::Lstm => ModelSpec::lstm(NetworkConfig { seed, ..self.lstm.clone() }),
        };
        ModelSpec { seed, ..spec }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub artifacts: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data: None, artifacts: "artifacts".into(), reports: "reports".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub default_model: ModelFamily,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1".into(), port: 8080, default_model: ModelFamily::Lstm }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub timezone: Tz,
    pub calendar: CalendarSpec,
    pub classification: ClassificationTable,
    pub models: ModelDefaults,
    pub paths: Paths,
    pub service: ServiceConfig,
    pub seed: Option<u64>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self::from_table(Table::new()).expect("built-in defaults are valid")
    }
}

fn preset<T: Serialize + for<'de> Deserialize<'de>>(
    family: &str,
    table: Option<&Value>,
    default_preset: &str,
    base: impl Fn(&str) -> Option<T>,
) -> Result<T> {
    let mut overrides = match table {
        None => Table::new(),
        Some(Value::Table(t)) => t.clone(),
        Some(other) => bail!("models.{family} must be a table, found {}", other.type_str()),
    };
    let name = match overrides.remove("preset") {
        None => default_preset.to_string(),
        Some(Value::String(s)) => s,
        Some(other) => bail!("models.{family}.preset must be a string, found {}", other.type_str()),
    };
    let base = base(&name).ok_or_else(|| anyhow!("unknown preset {name:?} for models.{family}"))?;
    let mut merged = match Value::try_from(base)? {
        Value::Table(t) => t,
        _ => unreachable!("model configs serialise to tables"),
    };
    merge(&mut merged, overrides);
    Value::Table(merged).try_into().with_context(|| format!("invalid models.{family} settings"))
}

/// Recursive table merge; `over` wins.
fn merge(into: &mut Table, over: Table) {
    for (k, v) in over {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

// Dates stay strings; the config types parse them themselves.
fn dates_to_strings(v: Value) -> Value {
    match v {
        Value::Datetime(d) => Value::String(d.to_string()),
        Value::Array(a) => Value::Array(a.into_iter().map(dates_to_strings).collect()),
        Value::Table(t) => Value::Table(t.into_iter().map(|(k, v)| (k, dates_to_strings(v))).collect()),
        v => v,
    }
}

fn env_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")).ok().and_then(|mut t| t.remove("v")) {
        Some(v) => dates_to_strings(v),
        None => Value::String(raw.to_string()),
    }
}

/// Applies `YARDCAST_A__B=value` pairs onto `table`.
pub fn apply_env<I: IntoIterator<Item = (String, String)>>(table: &mut Table, vars: I) -> Result<()> {
    for (key, raw) in vars {
        let Some(path) = key.strip_prefix(ENV_PREFIX) else { continue };
        let parts: Vec<String> = path.split("__").map(|p| p.to_ascii_lowercase()).collect();
        if parts.iter().any(|p| p.is_empty()) {
            bail!("malformed override variable {key}");
        }
        let (last, parents) = parts.split_last().unwrap();
        let mut cur = &mut *table;
        for p in parents {
            let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
            cur = match entry {
                Value::Table(t) => t,
                _ => bail!("{key} descends into non-table key {p}"),
            };
        }
        cur.insert(last.clone(), env_value(&raw));
    }
    Ok(())
}

impl AppConfig {
    /// Reads `path` when given, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        apply_env(&mut table, std::env::vars())?;
        Self::from_table(table)
    }

    pub fn from_table(t: Table) -> Result<Self> {
        let Value::Table(mut t) = dates_to_strings(Value::Table(t)) else { unreachable!() };
        let timezone = match t.remove("timezone") {
            None => Tz::UTC,
            Some(Value::String(s)) => Tz::from_str(&s).map_err(|e| anyhow!("timezone: {e}"))?,
            Some(v) => bail!("timezone must be a string, found {}", v.type_str()),
        };
        let calendar: CalendarSpec = match t.remove("calendar") {
            None => CalendarSpec::default(),
            Some(v) => v.try_into().context("invalid [calendar]")?,
        };
        let classification = match t.remove("classification") {
            None => ClassificationTable::default(),
            Some(v) => {
                let rules: Vec<ClassificationRule> = v.try_into().context("invalid [[classification]] rules")?;
                ClassificationTable::new(rules)
            }
        };
        let models = match t.remove("models") {
            None => Table::new(),
            Some(Value::Table(m)) => m,
            Some(v) => bail!("[models] must be a table, found {}", v.type_str()),
        };
        if let Some(k) = models.keys().find(|k| !["arima", "decomposable", "lstm"].contains(&k.as_str())) {
            bail!("unknown model family models.{k}");
        }
        let models = ModelDefaults {
            arima: preset("arima", models.get("arima"), "tuned", |p| {
                matches!(p, "default" | "tuned").then(ArimaConfig::default)
            })?,
            decomposable: preset("decomposable", models.get("decomposable"), "tuned", |p| match p {
                "default" => Some(DecomposableConfig::default()),
                "tuned" => Some(DecomposableConfig::tuned()),
                _ => None,
            })?,
            lstm: preset("lstm", models.get("lstm"), "reduced", |p| match p {
                "default" | "tuned" => Some(NetworkConfig::default()),
                "reduced" => Some(NetworkConfig::reduced()),
                _ => None,
            })?,
        };
        ModelSpec::arima(models.arima).validate()?;
        models.decomposable.validate()?;
        models.lstm.validate()?;
        let paths: Paths = t.remove("paths").map(|v| v.try_into()).transpose().context("invalid [paths]")?.unwrap_or_default();
        let service: ServiceConfig =
            t.remove("service").map(|v| v.try_into()).transpose().context("invalid [service]")?.unwrap_or_default();
        let seed = match t.remove("seed") {
            None => None,
            Some(Value::Integer(i)) if i >= 0 => Some(i as u64),
            Some(v) => bail!("seed must be a non-negative integer, found {v}"),
        };
        if let Some(k) = t.keys().next() {
            bail!("unknown configuration key {k:?}");
        }
        Ok(Self { timezone, calendar, classification, models, paths, service, seed })
    }

    /// Checks that referenced input files exist.
    pub fn check_paths(&self) -> Result<()> {
        if let Some(d) = &self.paths.data {
            if !d.exists() {
                bail!("data file {} does not exist", d.display());
            }
        }
        Ok(())
    }
}
