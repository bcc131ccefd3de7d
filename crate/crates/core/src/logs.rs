//! Versioned CSV log files.
//!
//! Every file starts with one preamble line naming the schema and version,
//! plus the powertrain placement for logs whose meaning depends on it:
//!
//! ```text
//! # kneesim sensor_log v1 placement=AboveKnee
//! t,theta_imu,q,q_dot,f_vertical,m_sagittal,fresh_mask
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a log back yields bit-identical values.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use crate::analysis::{SummaryRow, SymmetryIndices};
use crate::fsm::{EventSet, GaitPhase};
use crate::geometry::{FreshMask, RawSensorFrame};
use crate::model::{ActivityMode, Placement, Side};
use crate::plant::{Footfall, WalkwayRecord};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "kneesim";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing schema preamble (expected '# {MAGIC} {expected} v{SCHEMA_VERSION} ...')")]
    MissingPreamble { expected: LogKind },
    #[error("file is a {found} log, expected {expected}")]
    WrongKind { found: String, expected: LogKind },
    #[error("unsupported {kind} schema version {found}, expected {SCHEMA_VERSION}")]
    Version { kind: LogKind, found: String },
    #[error("{kind} preamble has no placement")]
    MissingPlacement { kind: LogKind },
    #[error("unknown placement '{0}' in preamble")]
    BadPlacement(String),
    #[error("{kind} header: expected column '{expected}' at position {position}, found '{found}'")]
    Column {
        kind: LogKind,
        position: usize,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: column '{column}': cannot parse '{value}'")]
    Value {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: u64, expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Sensor,
    State,
    Walkway,
    Summary,
}

impl LogKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::Sensor => "sensor_log",
            LogKind::State => "state_log",
            LogKind::Walkway => "walkway",
            LogKind::Summary => "summary",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            LogKind::Sensor => &["t", "theta_imu", "q", "q_dot", "f_vertical", "m_sagittal", "fresh_mask"],
            LogKind::State => &["t", "mode", "phase", "event", "tau_cmd", "saturated"],
            LogKind::Walkway => &["t_contact", "t_liftoff", "x", "y", "side"],
            LogKind::Summary => &[
                "participant",
                "placement",
                "condition",
                "trials",
                "speed_mean",
                "speed_sd",
                "cadence_mean",
                "cadence_sd",
                "si_step_time",
                "si_step_length",
                "si_swing_pct",
                "si_stance_pct",
                "si_step_width",
            ],
        }
    }
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parsed preamble line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preamble {
    pub kind: LogKind,
    pub placement: Option<Placement>,
}

impl fmt::Display for Preamble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "# {MAGIC} {} v{SCHEMA_VERSION}", self.kind)?;
        if let Some(p) = self.placement {
            write!(f, " placement={p}")?;
        }
        Ok(())
    }
}

fn parse_preamble(line: &str, expected: LogKind) -> Result<Preamble, LogError> {
    let mut words = line
        .trim_end()
        .strip_prefix('#')
        .ok_or(LogError::MissingPreamble { expected })?
        .split_whitespace();
    if words.next() != Some(MAGIC) {
        return Err(LogError::MissingPreamble { expected });
    }
    let kind = words.next().ok_or(LogError::MissingPreamble { expected })?;
    if kind != expected.as_str() {
        return Err(LogError::WrongKind {
            found: kind.to_string(),
            expected,
        });
    }
    let version = words.next().unwrap_or("");
    if version != format!("v{SCHEMA_VERSION}") {
        return Err(LogError::Version {
            kind: expected,
            found: version.to_string(),
        });
    }
    let mut placement = None;
    for word in words {
        if let Some(p) = word.strip_prefix("placement=") {
            placement = Some(p.parse().map_err(|_| LogError::BadPlacement(p.to_string()))?);
        }
    }
    Ok(Preamble { kind: expected, placement })
}

/// Reads the preamble and returns a CSV reader positioned at the header row,
/// after checking the header against the schema.
fn open<R: Read>(reader: R, kind: LogKind) -> Result<(Preamble, csv::Reader<BufReader<R>>), LogError> {
    let mut buf = BufReader::new(reader);
    let mut first = String::new();
    buf.read_line(&mut first)?;
    let preamble = parse_preamble(&first, kind)?;
    let mut csv = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(buf);
    let headers = csv.headers()?.clone();
    for (position, expected) in kind.columns().iter().enumerate() {
        let found = headers.get(position).unwrap_or("");
        if found != *expected {
            return Err(LogError::Column {
                kind,
                position,
                expected,
                found: found.to_string(),
            });
        }
    }
    if headers.len() > kind.columns().len() {
        return Err(LogError::Column {
            kind,
            position: kind.columns().len(),
            expected: "<end of row>",
            found: headers[kind.columns().len()].to_string(),
        });
    }
    Ok((preamble, csv))
}

fn require_placement(p: Preamble) -> Result<Placement, LogError> {
    p.placement.ok_or(LogError::MissingPlacement { kind: p.kind })
}

/// Typed field access for one CSV record.
struct Row<'a> {
    record: &'a csv::StringRecord,
    kind: LogKind,
    line: u64,
}

impl<'a> Row<'a> {
    fn new(record: &'a csv::StringRecord, kind: LogKind) -> Result<Self, LogError> {
        let line = record.position().map_or(0, |p| p.line() + 1);
        if record.len() != kind.columns().len() {
            return Err(LogError::FieldCount {
                line,
                expected: kind.columns().len(),
                found: record.len(),
            });
        }
        Ok(Self { record, kind, line })
    }

    fn get<T: FromStr>(&self, i: usize) -> Result<T, LogError> {
        let value = &self.record[i];
        value.parse().map_err(|_| LogError::Value {
            line: self.line,
            column: self.kind.columns()[i],
            value: value.to_string(),
        })
    }
}

fn writer<W: Write>(mut out: W, preamble: Preamble) -> Result<csv::Writer<W>, LogError> {
    writeln!(out, "{preamble}")?;
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(preamble.kind.columns())?;
    Ok(csv)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorLog {
    pub frames: Vec<RawSensorFrame>,
}

/// One controller tick as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRecord {
    pub t: f64,
    pub mode: ActivityMode,
    pub phase: GaitPhase,
    pub events: EventSet,
    pub tau_cmd: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateLog {
    pub records: Vec<StateRecord>,
}

pub fn write_sensor_log<W: Write>(out: W, placement: Placement, log: &SensorLog) -> Result<(), LogError> {
    let mut csv = writer(
        out,
        Preamble {
            kind: LogKind::Sensor,
            placement: Some(placement),
        },
    )?;
    for f in &log.frames {
        csv.write_record([
            f.t.to_string(),
            f.theta_imu.to_string(),
            f.q.to_string(),
            f.q_dot.to_string(),
            f.f_vertical.to_string(),
            f.m_sagittal.to_string(),
            f.fresh.bits().to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_sensor_log<R: Read>(input: R) -> Result<(Placement, SensorLog), LogError> {
    let (preamble, mut csv) = open(input, LogKind::Sensor)?;
    let placement = require_placement(preamble)?;
    let mut frames = Vec::new();
    for record in csv.records() {
        let record = record?;
        let row = Row::new(&record, LogKind::Sensor)?;
        let bits: u8 = row.get(6)?;
        let fresh = FreshMask::from_bits(bits).ok_or_else(|| LogError::Value {
            line: row.line,
            column: "fresh_mask",
            value: bits.to_string(),
        })?;
        frames.push(RawSensorFrame {
            t: row.get(0)?,
            theta_imu: row.get(1)?,
            q: row.get(2)?,
            q_dot: row.get(3)?,
            f_vertical: row.get(4)?,
            m_sagittal: row.get(5)?,
            fresh,
        });
    }
    Ok((placement, SensorLog { frames }))
}

pub fn write_state_log<W: Write>(out: W, placement: Placement, log: &StateLog) -> Result<(), LogError> {
    let mut csv = writer(
        out,
        Preamble {
            kind: LogKind::State,
            placement: Some(placement),
        },
    )?;
    for r in &log.records {
        csv.write_record([
            r.t.to_string(),
            r.mode.to_string(),
            r.phase.to_string(),
            r.events.to_string(),
            r.tau_cmd.to_string(),
            u8::from(r.saturated).to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_state_log<R: Read>(input: R) -> Result<(Placement, StateLog), LogError> {
    let (preamble, mut csv) = open(input, LogKind::State)?;
    let placement = require_placement(preamble)?;
    let mut records = Vec::new();
    for record in csv.records() {
        let record = record?;
        let row = Row::new(&record, LogKind::State)?;
        let saturated = match &record[5] {
            "0" | "false" => false,
            "1" | "true" => true,
            other => {
                return Err(LogError::Value {
                    line: row.line,
                    column: "saturated",
                    value: other.to_string(),
                })
            }
        };
        records.push(StateRecord {
            t: row.get(0)?,
            mode: row.get(1)?,
            phase: row.get(2)?,
            events: row.get(3)?,
            tau_cmd: row.get(4)?,
            saturated,
        });
    }
    Ok((placement, StateLog { records }))
}

pub fn write_walkway<W: Write>(out: W, placement: Option<Placement>, record: &WalkwayRecord) -> Result<(), LogError> {
    let mut csv = writer(
        out,
        Preamble {
            kind: LogKind::Walkway,
            placement,
        },
    )?;
    for f in &record.footfalls {
        csv.write_record([
            f.t_contact.to_string(),
            f.t_liftoff.to_string(),
            f.x.to_string(),
            f.y.to_string(),
            f.side.as_str().to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// The placement is optional for walkway files; footfalls do not depend on it.
pub fn read_walkway<R: Read>(input: R) -> Result<(Option<Placement>, WalkwayRecord), LogError> {
    let (preamble, mut csv) = open(input, LogKind::Walkway)?;
    let mut footfalls = Vec::new();
    for record in csv.records() {
        let record = record?;
        let row = Row::new(&record, LogKind::Walkway)?;
        let side: Side = row.get(4)?;
        footfalls.push(Footfall {
            t_contact: row.get(0)?,
            t_liftoff: row.get(1)?,
            x: row.get(2)?,
            y: row.get(3)?,
            side,
        });
    }
    Ok((preamble.placement, WalkwayRecord { footfalls }))
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), LogError> {
    let mut csv = writer(
        out,
        Preamble {
            kind: LogKind::Summary,
            placement: None,
        },
    )?;
    for r in rows {
        let si = &r.symmetry;
        csv.write_record([
            r.participant.clone(),
            r.placement.to_string(),
            r.condition.clone(),
            r.trials.to_string(),
            r.speed.mean.to_string(),
            r.speed.sd.to_string(),
            r.cadence.mean.to_string(),
            r.cadence.sd.to_string(),
            si.step_time.to_string(),
            si.step_length.to_string(),
            si.swing_pct.to_string(),
            si.stance_pct.to_string(),
            si.step_width.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>, LogError> {
    let (_, mut csv) = open(input, LogKind::Summary)?;
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record?;
        let row = Row::new(&record, LogKind::Summary)?;
        rows.push(SummaryRow {
            participant: row.get(0)?,
            placement: row.get(1)?,
            condition: row.get(2)?,
            trials: row.get(3)?,
            speed: crate::analysis::MeanSd {
                mean: row.get(4)?,
                sd: row.get(5)?,
            },
            cadence: crate::analysis::MeanSd {
                mean: row.get(6)?,
                sd: row.get(7)?,
            },
            symmetry: SymmetryIndices {
                step_time: row.get(8)?,
                step_length: row.get(9)?,
                swing_pct: row.get(10)?,
                stance_pct: row.get(11)?,
                step_width: row.get(12)?,
            },
        });
    }
    Ok(rows)
}
