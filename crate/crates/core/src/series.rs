//! Hourly time index, business-day calendar and the stock series container.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, Duration, NaiveDate, SecondsFormat, Timelike, Utc, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ContainerCategory;

/// Formats a timestamp as ISO-8601 with a `Z` suffix, second precision.
pub fn format_ts(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Truncates a timestamp down to its hour boundary.
pub fn floor_hour(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("hour truncation is always representable")
}

fn is_hour_aligned(ts: DateTime<Utc>) -> bool {
    ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0
}

/// A contiguous run of whole hours, `start, start+1h, ..., start+(len-1)h`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeIndex {
    start: DateTime<Utc>,
    len: usize,
}

impl TimeIndex {
    pub fn new(start: DateTime<Utc>, len: usize) -> Result<Self> {
        if !is_hour_aligned(start) {
            return Err(Error::InvalidSeries(format!(
                "index start {} is not on an hour boundary",
                format_ts(start)
            )));
        }
        if len == 0 {
            return Err(Error::InvalidSeries("index must contain at least one hour".into()));
        }
        Ok(Self { start, len })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Timestamp of the final hour.
    pub fn last(&self) -> DateTime<Utc> {
        self.at(self.len - 1)
    }

    /// One past the final hour.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.len as i64)
    }

    pub fn at(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::hours(i as i64)
    }

    /// Position of `ts` in the index, if it is one of its hours.
    pub fn position(&self, ts: DateTime<Utc>) -> Option<usize> {
        if !is_hour_aligned(ts) || ts < self.start {
            return None;
        }
        let i = (ts - self.start).num_hours() as usize;
        (i < self.len).then_some(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = DateTime<Utc>> + '_ {
        (0..self.len).map(move |i| self.at(i))
    }

    /// Sub-index `[from, to)` by position.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.len {
            return Err(Error::InvalidSeries(format!(
                "slice {from}..{to} outside index of length {}",
                self.len
            )));
        }
        Ok(Self { start: self.at(from), len: to - from })
    }
}

/// Builds the hourly index covering `[start, end)` after truncating both
/// bounds to whole hours.
pub fn make_hourly_index(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<TimeIndex> {
    let (s, e) = (floor_hour(start), floor_hour(end));
    if s >= e {
        return Err(Error::InvalidRange { start: format_ts(start), end: format_ts(end) });
    }
    TimeIndex::new(s, (e - s).num_hours() as usize)
}

fn default_weekend() -> Vec<Weekday> {
    vec![Weekday::Sat, Weekday::Sun]
}

/// Weekend days plus named holiday date sets.
///
/// Every named holiday doubles as a holiday regressor for the decomposable
/// model; the union of all of them is excluded from business days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarSpec {
    #[serde(default = "default_weekend")]
    pub weekend_days: Vec<Weekday>,
    #[serde(default)]
    pub holidays: BTreeMap<String, BTreeSet<NaiveDate>>,
}

impl Default for CalendarSpec {
    fn default() -> Self {
        Self { weekend_days: default_weekend(), holidays: BTreeMap::new() }
    }
}

impl CalendarSpec {
    pub fn with_holiday(mut self, name: &str, dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        self.holidays.entry(name.to_string()).or_default().extend(dates);
        self
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holidays.values().any(|d| d.contains(&date))
    }

    pub fn is_business_day(&self, date: NaiveDate) -> bool {
        !self.weekend_days.contains(&date.weekday()) && !self.is_holiday(date)
    }
}

/// `true` for every hour whose calendar date is a business day.
pub fn business_day_mask(index: &TimeIndex, cal: &CalendarSpec) -> Vec<bool> {
    index.iter().map(|ts| cal.is_business_day(ts.date_naive())).collect()
}

/// Hourly empty-container counts for one container category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StockSeries {
    index: TimeIndex,
    values: Vec<u32>,
    category: ContainerCategory,
}

impl StockSeries {
    pub fn new(index: TimeIndex, values: Vec<u32>, category: ContainerCategory) -> Result<Self> {
        if values.len() != index.len() {
            return Err(Error::InvalidSeries(format!(
                "{} values for an index of {} hours",
                values.len(),
                index.len()
            )));
        }
        Ok(Self { index, values, category })
    }

    pub fn index(&self) -> &TimeIndex {
        &self.index
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn category(&self) -> ContainerCategory {
        self.category
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn last_value(&self) -> u32 {
        *self.values.last().expect("series is never empty")
    }

    /// Sub-series `[from, to)` by position.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        let index = self.index.slice(from, to)?;
        Ok(Self { index, values: self.values[from..to].to_vec(), category: self.category })
    }

    /// Sub-series covering `[start, end]`, both inclusive.
    pub fn window(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        let (from, to) = match (self.index.position(start), self.index.position(end)) {
            (Some(a), Some(b)) if a <= b => (a, b + 1),
            _ => {
                return Err(Error::InvalidSeries(format!(
                    "window {}..={} not inside series",
                    format_ts(start),
                    format_ts(end)
                )))
            }
        };
        self.slice(from, to)
    }

    /// Concatenates `other` directly after `self`.
    pub fn concat(&self, other: &StockSeries) -> Result<Self> {
        if other.index.start() != self.index.end() || other.category != self.category {
            return Err(Error::InvalidSeries("series are not adjacent".into()));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let index = TimeIndex::new(self.index.start(), values.len())?;
        Ok(Self { index, values, category: self.category })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "category", "count"])?;
        for (ts, v) in self.index.iter().zip(&self.values) {
            w.write_record([format_ts(ts), self.category.as_str().to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `timestamp,category,count` format. Rows must form one
    /// contiguous hourly run of a single category.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["timestamp", "category", "count"] {
            return Err(Error::Format(format!(
                "expected header timestamp,category,count, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut start = None;
        let mut category = None;
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let ts = DateTime::parse_from_rfc3339(&rec[0])
                .map_err(|e| Error::Parse { line, message: format!("timestamp {:?}: {e}", &rec[0]) })?
                .with_timezone(&Utc);
            let cat: ContainerCategory = rec[1]
                .parse()
                .map_err(|e: Error| Error::Parse { line, message: e.to_string() })?;
            let count: u32 = rec[2]
                .trim()
                .parse()
                .map_err(|e| Error::Parse { line, message: format!("count {:?}: {e}", &rec[2]) })?;
            let s = *start.get_or_insert(ts);
            if ts != s + Duration::hours(values.len() as i64) {
                return Err(Error::Parse { line, message: "timestamps are not contiguous hours".into() });
            }
            if *category.get_or_insert(cat) != cat {
                return Err(Error::Parse { line, message: "mixed categories in one series".into() });
            }
            values.push(count);
        }
        let start = start.ok_or_else(|| Error::Format("series file has no rows".into()))?;
        Self::new(TimeIndex::new(start, values.len())?, values, category.unwrap())
    }
}

/// Splits into `[start, cut]` and `(cut, end]`.
pub fn split_at(series: &StockSeries, cut: DateTime<Utc>) -> Result<(StockSeries, StockSeries)> {
    let pos = series.index().position(cut).ok_or_else(|| Error::InvalidCut {
        cut: format_ts(cut),
        reason: "not an hour of the series index".into(),
    })?;
    if pos + 1 >= series.len() {
        return Err(Error::InvalidCut { cut: format_ts(cut), reason: "test part would be empty".into() });
    }
    Ok((series.slice(0, pos + 1)?, series.slice(pos + 1, series.len())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn ts(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap()
    }

    #[test]
    fn hourly_index_lengths() {
        assert_eq!(make_hourly_index(ts(2022, 1, 1, 0), ts(2022, 1, 1, 3)).unwrap().len(), 3);
        assert_eq!(make_hourly_index(ts(2022, 1, 1, 5), ts(2022, 1, 1, 6)).unwrap().len(), 1);
        // Frozen from python: (datetime(2024,4,13,23) - datetime(2022,1,1)) // timedelta(hours=1)
        assert_eq!(make_hourly_index(ts(2022, 1, 1, 0), ts(2024, 4, 13, 23)).unwrap().len(), 20_015);
    }

    #[test]
    fn hourly_index_rejects_empty_range() {
        let t = ts(2022, 1, 1, 0);
        assert!(matches!(make_hourly_index(t, t), Err(Error::InvalidRange { .. })));
        assert!(make_hourly_index(ts(2022, 1, 2, 0), t).is_err());
    }

    #[test]
    fn business_mask_basics() {
        let cal = CalendarSpec::default();
        // 2022-01-01 is a Saturday.
        let sat = make_hourly_index(ts(2022, 1, 1, 0), ts(2022, 1, 2, 0)).unwrap();
        assert!(business_day_mask(&sat, &cal).iter().all(|b| !b));
        let wed = make_hourly_index(ts(2022, 1, 5, 0), ts(2022, 1, 6, 0)).unwrap();
        assert!(business_day_mask(&wed, &cal).iter().all(|b| *b));
        let holiday = cal.clone().with_holiday("x", [NaiveDate::from_ymd_opt(2022, 1, 5).unwrap()]);
        assert!(business_day_mask(&wed, &holiday).iter().all(|b| !b));
    }

    #[test]
    fn week_from_monday_has_120_business_hours() {
        // 2022-01-03 is a Monday; count by enumerating the dates directly.
        let idx = make_hourly_index(ts(2022, 1, 3, 0), ts(2022, 1, 10, 0)).unwrap();
        let mask = business_day_mask(&idx, &CalendarSpec::default());
        let expected: usize = (3..10)
            .filter(|d| !matches!(NaiveDate::from_ymd_opt(2022, 1, *d).unwrap().weekday(), Weekday::Sat | Weekday::Sun))
            .count()
            * 24;
        assert_eq!(expected, 120);
        assert_eq!(mask.iter().filter(|b| **b).count(), expected);
    }

    #[test]
    fn split_examples() {
        let idx = TimeIndex::new(ts(2022, 1, 1, 0), 10).unwrap();
        let s = StockSeries::new(idx.clone(), (0..10).collect(), ContainerCategory::Standard).unwrap();
        let (train, test) = split_at(&s, idx.at(6)).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert_eq!(train.concat(&test).unwrap(), s);
        assert!(matches!(split_at(&s, idx.last()), Err(Error::InvalidCut { .. })));
        assert!(split_at(&s, ts(2021, 12, 31, 0)).is_err());
    }

    #[test]
    fn values_must_match_index() {
        let idx = TimeIndex::new(ts(2022, 1, 1, 0), 3).unwrap();
        assert!(StockSeries::new(idx, vec![1, 2], ContainerCategory::Standard).is_err());
        assert!(TimeIndex::new(ts(2022, 1, 1, 0) + Duration::minutes(5), 3).is_err());
    }

    #[test]
    fn csv_format() {
        let idx = TimeIndex::new(ts(2022, 1, 1, 0), 2).unwrap();
        let s = StockSeries::new(idx, vec![5, 7], ContainerCategory::Standard).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "timestamp,category,count\n2022-01-01T00:00:00Z,standard,5\n2022-01-01T01:00:00Z,standard,7\n"
        );
        assert_eq!(StockSeries::read_csv(&buf[..]).unwrap(), s);
        let gap = "timestamp,category,count\n2022-01-01T00:00:00Z,standard,5\n2022-01-01T02:00:00Z,standard,7\n";
        assert!(StockSeries::read_csv(gap.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(len in 2usize..200, cut_frac in 0.0f64..1.0, seed in 0u32..1000) {
            let idx = TimeIndex::new(ts(2023, 3, 1, 0), len).unwrap();
            let values: Vec<u32> = (0..len as u32).map(|i| i.wrapping_mul(seed) % 97).collect();
            let s = StockSeries::new(idx.clone(), values, ContainerCategory::Reefer).unwrap();
            let pos = ((len - 1) as f64 * cut_frac) as usize;
            prop_assume!(pos + 1 < len);
            let (a, b) = split_at(&s, idx.at(pos)).unwrap();
            prop_assert!(a.index().last() < b.index().start());
            prop_assert_eq!(a.concat(&b).unwrap(), s);
        }

        #[test]
        fn any_week_without_holidays_has_120_business_hours(week in 0i64..2000) {
            // 1990-01-01 is a Monday.
            let monday = ts(1990, 1, 1, 0) + Duration::weeks(week);
            let idx = TimeIndex::new(monday, 168).unwrap();
            let n = business_day_mask(&idx, &CalendarSpec::default()).into_iter().filter(|b| *b).count();
            prop_assert_eq!(n, 120);
        }
    }
}
