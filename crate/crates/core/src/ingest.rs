//! Gate-event log parsing, ISO 6346 classification and hourly stock
//! aggregation.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::series::{floor_hour, format_ts, StockSeries, TimeIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerCategory {
    Standard,
    Special,
    Reefer,
    Unknown,
}

impl ContainerCategory {
    pub const ALL: [ContainerCategory; 4] = [Self::Standard, Self::Special, Self::Reefer, Self::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Special => "special",
            Self::Reefer => "reefer",
            Self::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ContainerCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContainerCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(Self::Standard),
            "special" => Ok(Self::Special),
            "reefer" => Ok(Self::Reefer),
            "unknown" => Ok(Self::Unknown),
            other => Err(Error::Config(format!("unknown container category {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CargoStatus {
    Empty,
    Full,
}

impl FromStr for CargoStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EMPTY" | "E" => Ok(Self::Empty),
            "FULL" | "F" => Ok(Self::Full),
            other => Err(Error::Domain(format!("unknown cargo status {other:?}"))),
        }
    }
}

impl fmt::Display for CargoStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Empty => "EMPTY",
            Self::Full => "FULL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateEvent {
    pub container_id: String,
    pub shipping_line: String,
    pub iso_code: String,
    pub cargo_status: CargoStatus,
    pub gate_in: DateTime<Utc>,
    /// `None` while the container is still in the yard at the end of the log.
    pub gate_out: Option<DateTime<Utc>>,
}

impl GateEvent {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.iso_code.chars().count() != 4 {
            return Err(format!("ISO code {:?} is not 4 characters", self.iso_code));
        }
        if let Some(out) = self.gate_out {
            if out < self.gate_in {
                return Err(format!(
                    "gate_out {} precedes gate_in {}",
                    format_ts(out),
                    format_ts(self.gate_in)
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<GateEvent>,
    pub observation_end: DateTime<Utc>,
}

impl EventLog {
    pub fn new(events: Vec<GateEvent>, observation_end: DateTime<Utc>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            e.validate().map_err(|message| Error::Validation { line: i + 1, message })?;
            if e.gate_in > observation_end {
                return Err(Error::Validation {
                    line: i + 1,
                    message: "gate_in after observation end".into(),
                });
            }
        }
        Ok(Self { events, observation_end })
    }

    /// Hourly index from the first gate-in hour through the hour containing
    /// `observation_end`.
    pub fn default_index(&self) -> Result<TimeIndex> {
        let first = self
            .events
            .iter()
            .map(|e| e.gate_in)
            .min()
            .ok_or_else(|| Error::InvalidSeries("event log is empty".into()))?;
        crate::series::make_hourly_index(first, floor_hour(self.observation_end) + Duration::hours(1))
    }

    /// Writes the ingestion CSV format with `Z`-suffixed UTC timestamps.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(REQUIRED_COLUMNS)?;
        for e in &self.events {
            w.write_record([
                e.container_id.clone(),
                e.shipping_line.clone(),
                e.iso_code.clone(),
                e.cargo_status.to_string(),
                format_ts(e.gate_in),
                e.gate_out.map(format_ts).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

const REQUIRED_COLUMNS: [&str; 6] =
    ["container_id", "shipping_line", "iso_code", "cargo_status", "gate_in", "gate_out"];

/// Parses a timestamp with or without zone designator; zoneless values are
/// local time in `tz`.
pub fn parse_timestamp(raw: &str, tz: Tz) -> std::result::Result<DateTime<Utc>, String> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.with_timezone(&Utc));
    }
    if let Ok(dt) = DateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M%:z") {
        return Ok(dt.with_timezone(&Utc));
    }
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];
    if let Some(utc) = raw.strip_suffix(['Z', 'z']) {
        return FORMATS
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(utc, f).ok())
            .map(|n| n.and_utc())
            .ok_or_else(|| format!("malformed timestamp {raw:?}"));
    }
    let naive = FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .ok_or_else(|| format!("malformed timestamp {raw:?}"))?;
    tz.from_local_datetime(&naive)
        .earliest()
        .map(|dt| dt.with_timezone(&Utc))
        .ok_or_else(|| format!("local time {raw:?} does not exist in {tz}"))
}

/// Reads the gate-event CSV. Rows keep their file order; `observation_end`
/// is the latest timestamp seen (the Unix epoch for an empty file).
pub fn parse_event_log<R: Read>(source: R, tz: Tz) -> Result<EventLog> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing required column {name:?}")))?;
    }
    let mut events = Vec::new();
    let mut observation_end = DateTime::<Utc>::UNIX_EPOCH;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |c: usize| rec.get(cols[c]).unwrap_or("");
        let gate_in = parse_timestamp(field(4), tz).map_err(|message| Error::Parse { line, message })?;
        let gate_out = match field(5) {
            "" => None,
            raw => Some(parse_timestamp(raw, tz).map_err(|message| Error::Parse { line, message })?),
        };
        let cargo_status = field(3)
            .parse()
            .map_err(|e: Error| Error::Parse { line, message: e.to_string() })?;
        let event = GateEvent {
            container_id: field(0).to_string(),
            shipping_line: field(1).to_string(),
            iso_code: field(2).to_ascii_uppercase(),
            cargo_status,
            gate_in,
            gate_out,
        };
        event.validate().map_err(|message| Error::Validation { line, message })?;
        observation_end = observation_end.max(gate_out.unwrap_or(gate_in)).max(gate_in);
        events.push(event);
    }
    Ok(EventLog { events, observation_end })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRule {
    /// Prefix matched against the type code, i.e. the last two characters of
    /// the ISO code (`"G"` matches `22G1`). An empty prefix matches anything.
    pub type_prefix: String,
    pub category: ContainerCategory,
}

/// Ordered first-match-wins rules; the last rule is always a catch-all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationTable {
    rules: Vec<ClassificationRule>,
}

impl ClassificationTable {
    /// Appends a catch-all `UNKNOWN` rule when the supplied list lacks one.
    pub fn new(mut rules: Vec<ClassificationRule>) -> Self {
        if rules.last().is_none_or(|r| !r.type_prefix.is_empty()) {
            rules.push(ClassificationRule { type_prefix: String::new(), category: ContainerCategory::Unknown });
        }
        Self { rules }
    }

    pub fn rules(&self) -> &[ClassificationRule] {
        &self.rules
    }
}

impl Default for ClassificationTable {
    fn default() -> Self {
        use ContainerCategory::*;
        let rules = [
            ("G", Standard),
            ("V", Standard),
            ("B", Standard),
            ("R", Reefer),
            ("H", Reefer),
            ("T", Special),
            ("P", Special),
            ("U", Special),
            ("S", Special),
        ]
        .into_iter()
        .map(|(p, category)| ClassificationRule { type_prefix: p.to_string(), category })
        .collect();
        Self::new(rules)
    }
}

pub fn classify_container(iso_code: &str, table: &ClassificationTable) -> ContainerCategory {
    let code = iso_code.trim().to_ascii_uppercase();
    let type_code = code.get(2..).unwrap_or("");
    table
        .rules
        .iter()
        .find(|r| type_code.starts_with(r.type_prefix.as_str()))
        .map_or(ContainerCategory::Unknown, |r| r.category)
}

fn ceil_hour(ts: DateTime<Utc>) -> DateTime<Utc> {
    let f = floor_hour(ts);
    if f == ts {
        f
    } else {
        f + Duration::hours(1)
    }
}

/// Index positions `[first, last)` at which the event is in the yard.
/// A container counts at hour `h` iff `gate_in <= h < gate_out`.
fn presence_span(event: &GateEvent, index: &TimeIndex) -> (usize, usize) {
    let start = index.start();
    let to_pos = |t: DateTime<Utc>| -> usize {
        if t <= start {
            0
        } else {
            ((ceil_hour(t) - start).num_hours() as usize).min(index.len())
        }
    };
    let first = to_pos(event.gate_in);
    let last = event.gate_out.map_or(index.len(), to_pos);
    (first, last.max(first))
}

/// Hourly count of empty containers of `category` present in the yard.
pub fn build_stock_series(
    log: &EventLog,
    category: ContainerCategory,
    index: &TimeIndex,
    table: &ClassificationTable,
) -> Result<StockSeries> {
    build_stock_series_with(log, category, index, table, Execution::default())
}

pub fn build_stock_series_with(
    log: &EventLog,
    category: ContainerCategory,
    index: &TimeIndex,
    table: &ClassificationTable,
    exec: Execution,
) -> Result<StockSeries> {
    const CHUNK: usize = 4096;
    let n = index.len();
    let chunks: Vec<&[GateEvent]> = log.events.chunks(CHUNK).collect();
    // Per-chunk difference arrays merge by addition.
    let partials = exec.map(&chunks, |chunk| {
        let mut diff = vec![0i64; n + 1];
        for e in chunk.iter() {
            if e.cargo_status != CargoStatus::Empty || classify_container(&e.iso_code, table) != category {
                continue;
            }
            let (a, b) = presence_span(e, index);
            if a < b {
                diff[a] += 1;
                diff[b] -= 1;
            }
        }
        diff
    });
    let mut diff = vec![0i64; n + 1];
    for p in partials {
        for (d, x) in diff.iter_mut().zip(p) {
            *d += x;
        }
    }
    let mut running = 0i64;
    let values = diff[..n]
        .iter()
        .map(|d| {
            running += d;
            running as u32
        })
        .collect();
    StockSeries::new(index.clone(), values, category)
}
