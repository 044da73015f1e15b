//! Report bundle: checked quantities, failure record and plot series.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

pub const REPORT_FILE: &str = "report.json";
pub const ROWS_FILE: &str = "rows.csv";

/// How a value is checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    AtMost { limit: f64 },
    AtLeast { limit: f64 },
    Within { lo: f64, hi: f64 },
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost { limit } => v <= limit,
            Bound::AtLeast { limit } => v >= limit,
            Bound::Within { lo, hi } => v >= lo && v <= hi,
        }
    }

    fn describe(&self) -> String {
        match *self {
            Bound::AtMost { limit } => format!("<= {limit:e}"),
            Bound::AtLeast { limit } => format!(">= {limit:e}"),
            Bound::Within { lo, hi } => format!("in [{lo:e}, {hi:e}]"),
        }
    }
}

/// One reported quantity. `statement` names the estimate under test;
/// rows without a bound are informational.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub statement: String,
    pub quantity: String,
    #[serde(deserialize_with = "nullable")]
    pub value: f64,
    pub bound: Option<Bound>,
    pub pass: bool,
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub statement: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    #[serde(deserialize_with = "nullable")]
    pub x: f64,
    #[serde(deserialize_with = "nullable")]
    pub y: f64,
    pub series: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Bundle {
    pub version: u32,
    pub seed: u64,
    pub stages: Vec<String>,
    pub rows: Vec<Row>,
    pub failure: Option<FailureRecord>,
    pub series: BTreeMap<String, Vec<SeriesPoint>>,
}

impl Bundle {
    pub fn new(seed: u64) -> Self {
        Self {
            version: crate::config::SCHEMA_VERSION,
            seed,
            ..Self::default()
        }
    }

    pub fn info(&mut self, statement: &str, quantity: &str, value: f64) {
        self.rows.push(Row {
            statement: statement.into(),
            quantity: quantity.into(),
            value,
            bound: None,
            pass: true,
        });
    }

    pub fn check(&mut self, statement: &str, quantity: &str, value: f64, bound: Bound) -> bool {
        let pass = bound.holds(value);
        self.rows.push(Row {
            statement: statement.into(),
            quantity: quantity.into(),
            value,
            bound: Some(bound),
            pass,
        });
        pass
    }

    /// Look up a value by quantity name.
    pub fn value(&self, quantity: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.quantity == quantity)
            .map(|r| r.value)
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.rows.iter().all(|r| r.pass)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(REPORT_FILE), text)?;
        let mut csv = String::from("statement,quantity,value,bound,pass\n");
        for r in &self.rows {
            let bound = r.bound.map(|b| b.describe()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{:e},{},{}\n",
                quote(&r.statement),
                quote(&r.quantity),
                r.value,
                quote(&bound),
                r.pass
            ));
        }
        fs::write(dir.join(ROWS_FILE), csv)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(REPORT_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// JSON has no NaN; serde writes it as `null`, read back here.
fn nullable<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
