use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};

/// `M` business statistics sampled every `interval_minutes` for `N` steps.
///
/// Column `t` is the sample taken at
/// `end_timestamp − (N − 1 − t) · interval_minutes · 60`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccasionSignalSeries {
    names: Vec<String>,
    values: Vec<f64>,
    steps: usize,
    interval_minutes: u32,
    end_timestamp: i64,
}

impl OccasionSignalSeries {
    /// Builds a series from one value row per signal.
    pub fn new(
        names: Vec<String>,
        rows: Vec<Vec<f64>>,
        interval_minutes: u32,
        end_timestamp: i64,
    ) -> Result<Self> {
        if names.is_empty() || names.len() != rows.len() {
            return Err(MoefError::Data(format!(
                "{} signal names for {} value rows",
                names.len(),
                rows.len()
            )));
        }
        if interval_minutes == 0 {
            return Err(MoefError::Data("sampling interval must be positive".into()));
        }
        let steps = rows[0].len();
        if steps == 0 {
            return Err(MoefError::Data("signal series has no time steps".into()));
        }
        for (name, row) in names.iter().zip(&rows) {
            if row.len() != steps {
                return Err(MoefError::Data(format!(
                    "signal {name} has {} steps, expected {steps}",
                    row.len()
                )));
            }
            if let Some(t) = row.iter().position(|v| !v.is_finite()) {
                return Err(MoefError::Data(format!(
                    "signal {name} has a non-finite value at step {t}"
                )));
            }
        }
        Ok(Self {
            names,
            values: rows.concat(),
            steps,
            interval_minutes,
            end_timestamp,
        })
    }

    pub fn num_signals(&self) -> usize {
        self.names.len()
    }

    pub fn num_steps(&self) -> usize {
        self.steps
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn end_timestamp(&self) -> i64 {
        self.end_timestamp
    }

    pub fn signal(&self, m: usize) -> &[f64] {
        &self.values[m * self.steps..(m + 1) * self.steps]
    }

    pub fn value(&self, m: usize, t: usize) -> f64 {
        self.values[m * self.steps + t]
    }

    pub fn step_seconds(&self) -> i64 {
        i64::from(self.interval_minutes) * 60
    }

    pub fn timestamp_of(&self, t: usize) -> i64 {
        self.end_timestamp - (self.steps - 1 - t) as i64 * self.step_seconds()
    }

    /// Column index sampled exactly at `ts`, if any.
    pub fn column_at(&self, ts: i64) -> Option<usize> {
        let back = self.end_timestamp - ts;
        if back < 0 || back % self.step_seconds() != 0 {
            return None;
        }
        let back = (back / self.step_seconds()) as usize;
        (back < self.steps).then(|| self.steps - 1 - back)
    }

    /// The `len` most recent steps ending at column `end` (inclusive).
    pub fn history(&self, end: usize, len: usize) -> Result<Self> {
        if end >= self.steps {
            return Err(MoefError::Data(format!(
                "snapshot column {end} beyond series of {} steps",
                self.steps
            )));
        }
        if len == 0 || len > end + 1 {
            return Err(MoefError::InsufficientHistory {
                needed: len,
                available: end + 1,
            });
        }
        let start = end + 1 - len;
        let rows = (0..self.num_signals())
            .map(|m| self.signal(m)[start..=end].to_vec())
            .collect();
        Self::new(
            self.names.clone(),
            rows,
            self.interval_minutes,
            self.timestamp_of(end),
        )
    }

    pub(crate) fn map_values(&self, f: impl Fn(usize, usize, f64) -> Result<f64>) -> Result<Self> {
        let mut out = self.clone();
        for m in 0..self.num_signals() {
            for t in 0..self.steps {
                out.values[m * self.steps + t] = f(m, t, self.value(m, t))?;
            }
        }
        Ok(out)
    }

    /// Renders the text format: a `M N T end_timestamp` header, then one
    /// `name,v_1,...,v_N` line per signal.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.num_signals(),
            self.steps,
            self.interval_minutes,
            self.end_timestamp
        );
        for (m, name) in self.names.iter().enumerate() {
            s.push_str(name);
            for v in self.signal(m) {
                write!(s, ",{v}").expect("writing to a String");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| MoefError::Data("empty signal file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(MoefError::Data(format!(
                "signal header needs `M N T end_timestamp`, got {header:?}"
            )));
        }
        let bad = |what: &str| MoefError::Data(format!("bad {what} in signal header {header:?}"));
        let m: usize = fields[0].parse().map_err(|_| bad("M"))?;
        let n: usize = fields[1].parse().map_err(|_| bad("N"))?;
        let t: u32 = fields[2].parse().map_err(|_| bad("T"))?;
        let end: i64 = fields[3].parse().map_err(|_| bad("end_timestamp"))?;
        let mut names = Vec::with_capacity(m);
        let mut rows = Vec::with_capacity(m);
        for (i, line) in lines.enumerate() {
            let mut parts = line.trim_end().split(',');
            let name = parts.next().unwrap_or_default().to_string();
            let row = parts
                .enumerate()
                .map(|(j, v)| {
                    v.trim().parse::<f64>().map_err(|_| {
                        MoefError::Data(format!("signal line {}: bad value {v:?} at step {j}", i + 2))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != n {
                return Err(MoefError::Data(format!(
                    "signal {name} has {} values, header says {n}",
                    row.len()
                )));
            }
            names.push(name);
            rows.push(row);
        }
        if names.len() != m {
            return Err(MoefError::Data(format!(
                "header declares {m} signals, file has {}",
                names.len()
            )));
        }
        Self::new(names, rows, t, end)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MoefError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| MoefError::io(path, e))
    }
}
