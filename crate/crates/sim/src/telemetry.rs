//! Per-tick telemetry with a fixed column schema, written as CSV or JSON
//! lines. Numbers are written with 17 significant digits (CSV) or the
//! shortest round-trip form (JSON), so reading a file back gives the exact
//! values that were recorded.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// From a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown telemetry format '{other}' (csv or jsonl)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        })
    }
}

/// Names of the numeric columns that follow `tick`, `time` and `status`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub columns: Vec<String>,
}

/// Column offsets of one robot's block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobotColumns {
    pub q: usize,
    pub qdot: usize,
    pub dof: usize,
    pub tip: usize,
    pub target: usize,
    pub t_err: usize,
    pub r_err: usize,
    pub force: usize,
    pub clutch: usize,
}

impl Schema {
    pub fn for_scenario(scenario: &Scenario) -> Schema {
        let mut c = Vec::new();
        for r in &scenario.scene.robots {
            let id = &r.id;
            let n = r.model.dof();
            c.extend((0..n).map(|j| format!("q.{id}.{j}")));
            c.extend((0..n).map(|j| format!("qdot.{id}.{j}")));
            for (name, axes) in [("tip", "xyz"), ("target", "xyz"), ("t_err", "xyz")] {
                c.extend(axes.chars().map(|a| format!("{name}.{id}.{a}")));
            }
            c.push(format!("r_err.{id}"));
            c.extend("xyz".chars().map(|a| format!("force.{id}.{a}")));
            c.push(format!("clutch.{id}"));
        }
        for name in scenario.scene.row_names() {
            c.push(format!("d.{name}"));
            c.push(format!("d_safe.{name}"));
            c.push(format!("slack.{name}"));
            c.push(format!("rate.{name}"));
        }
        c.extend(["iterations", "kkt_residual", "infeasible", "joint_limit", "alpha", "beta"].map(String::from));
        Schema { columns: c }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["tick".to_string(), "time".to_string(), "status".to_string()];
        h.extend(self.columns.iter().cloned());
        h
    }

    /// Robot ids in column order.
    pub fn robots(&self) -> Vec<String> {
        self.columns.iter().filter_map(|c| c.strip_prefix("r_err.").map(String::from)).collect()
    }

    /// Constraint row names in column order.
    pub fn rows(&self) -> Vec<String> {
        self.columns.iter().filter_map(|c| c.strip_prefix("d_safe.").map(String::from)).collect()
    }

    pub fn robot_columns(&self, id: &str) -> Option<RobotColumns> {
        let q = self.index(&format!("q.{id}.0"))?;
        let qdot = self.index(&format!("qdot.{id}.0"))?;
        Some(RobotColumns {
            q,
            qdot,
            dof: qdot - q,
            tip: self.index(&format!("tip.{id}.x"))?,
            target: self.index(&format!("target.{id}.x"))?,
            t_err: self.index(&format!("t_err.{id}.x"))?,
            r_err: self.index(&format!("r_err.{id}"))?,
            force: self.index(&format!("force.{id}.x"))?,
            clutch: self.index(&format!("clutch.{id}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub tick: u64,
    pub time: f64,
    pub status: String,
    pub values: Vec<f64>,
}

impl Record {
    pub fn get(&self, schema: &Schema, name: &str) -> Option<f64> {
        schema.index(name).map(|i| self.values[i])
    }

    pub fn vec3(&self, at: usize) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.values[at], self.values[at + 1], self.values[at + 2])
    }
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("record has {got} values, schema has {expected}")]
    Width { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub struct Writer<W: Write> {
    format: Format,
    schema: Schema,
    csv: Option<csv::Writer<W>>,
    raw: Option<W>,
    ticks: u64,
}

impl<W: Write> Writer<W> {
    pub fn new(out: W, format: Format, schema: Schema) -> Result<Self, TelemetryError> {
        let mut w = Writer { format, schema, csv: None, raw: None, ticks: 0 };
        match format {
            Format::Csv => {
                let mut c = csv::WriterBuilder::new().has_headers(false).from_writer(out);
                c.write_record(w.schema.header())?;
                w.csv = Some(c);
            }
            Format::Jsonl => w.raw = Some(out),
        }
        Ok(w)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn write(&mut self, rec: &Record) -> Result<(), TelemetryError> {
        if rec.values.len() != self.schema.columns.len() {
            return Err(TelemetryError::Width { expected: self.schema.columns.len(), got: rec.values.len() });
        }
        match self.format {
            Format::Csv => {
                let mut fields = Vec::with_capacity(rec.values.len() + 3);
                fields.push(rec.tick.to_string());
                fields.push(format!("{:.16e}", rec.time));
                fields.push(rec.status.clone());
                fields.extend(rec.values.iter().map(|v| format!("{v:.16e}")));
                self.csv.as_mut().expect("csv writer").write_record(&fields)?;
            }
            Format::Jsonl => {
                let mut obj = Map::new();
                obj.insert("tick".into(), Value::from(rec.tick));
                obj.insert("time".into(), number(rec.time));
                obj.insert("status".into(), Value::from(rec.status.clone()));
                for (name, v) in self.schema.columns.iter().zip(&rec.values) {
                    obj.insert(name.clone(), number(*v));
                }
                let out = self.raw.as_mut().expect("jsonl writer");
                serde_json::to_writer(&mut *out, &Value::Object(obj)).map_err(io::Error::other)?;
                out.write_all(b"\n")?;
            }
        }
        self.ticks += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64, TelemetryError> {
        if let Some(c) = self.csv.as_mut() {
            c.flush()?;
        }
        if let Some(r) = self.raw.as_mut() {
            r.flush()?;
        }
        Ok(self.ticks)
    }
}

fn number(v: f64) -> Value {
    // non-finite values have no JSON form; they are written as strings
    Number::from_f64(v).map(Value::Number).unwrap_or_else(|| Value::String(v.to_string()))
}

fn json_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

/// A telemetry file read back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub schema: Schema,
    pub records: Vec<Record>,
}

impl Telemetry {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.schema.index(name)?;
        Some(self.records.iter().map(|r| r.values[i]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }
}

pub fn read_telemetry(path: impl AsRef<Path>) -> Result<Telemetry, TelemetryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let looks_json = text.trim_start().starts_with('{');
    if looks_json {
        parse_jsonl(&text)
    } else {
        parse_csv(&text)
    }
}

pub fn parse_csv(text: &str) -> Result<Telemetry, TelemetryError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let fixed: Vec<&str> = header.iter().take(3).collect();
    if fixed != ["tick", "time", "status"] {
        return Err(TelemetryError::Parse { line: 1, message: "header must start with tick,time,status".into() });
    }
    let schema = Schema { columns: header.iter().skip(3).map(String::from).collect() };
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |message: String| TelemetryError::Parse { line, message };
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
        let tick = row.get(0).unwrap_or("").parse::<u64>().map_err(|e| bad(e.to_string()))?;
        let time = num(row.get(1).unwrap_or(""))?;
        let status = row.get(2).unwrap_or("").to_string();
        let values = row.iter().skip(3).map(num).collect::<Result<Vec<_>, _>>()?;
        if values.len() != schema.columns.len() {
            return Err(TelemetryError::Width { expected: schema.columns.len(), got: values.len() });
        }
        records.push(Record { tick, time, status, values });
    }
    Ok(Telemetry { schema, records })
}

pub fn parse_jsonl(text: &str) -> Result<Telemetry, TelemetryError> {
    let mut schema: Option<Schema> = None;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| TelemetryError::Parse { line: i + 1, message };
        let obj: Map<String, Value> = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let cols: Vec<String> = obj.keys().skip(3).cloned().collect();
        let schema = schema.get_or_insert_with(|| Schema { columns: cols.clone() });
        if schema.columns != cols {
            return Err(bad("columns differ from the first record".into()));
        }
        let tick = obj.get("tick").and_then(Value::as_u64).ok_or_else(|| bad("missing tick".into()))?;
        let time = obj.get("time").and_then(json_f64).ok_or_else(|| bad("missing time".into()))?;
        let status = obj.get("status").and_then(Value::as_str).ok_or_else(|| bad("missing status".into()))?.to_string();
        let values = obj
            .iter()
            .skip(3)
            .map(|(k, v)| json_f64(v).ok_or_else(|| bad(format!("{k} is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(Record { tick, time, status, values });
    }
    Ok(Telemetry { schema: schema.unwrap_or(Schema { columns: Vec::new() }), records })
}
