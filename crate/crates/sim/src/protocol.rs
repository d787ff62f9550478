//! Wire messages and framing.
//!
//! Every message is a JSON object with a `type` tag, sent as a 4-byte
//! big-endian length followed by that many bytes of UTF-8 JSON. The same
//! inbound messages, with a `time` stamp, make up a master script (one per
//! line).

use std::io::{self, BufRead, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use teleop_core::{ControllerConfig, MasterDelta, Quaternion};
use thiserror::Error;

/// Largest accepted frame payload.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterCmd {
    pub master_id: usize,
    pub clutch: bool,
    /// Master translation increment.
    pub dt: [f64; 3],
    /// Master rotation increment `[w, x, y, z]`.
    pub dr: [f64; 4],
}

impl MasterCmd {
    pub fn translate(master_id: usize, clutch: bool, dt: [f64; 3]) -> Self {
        Self { master_id, clutch, dt, dr: [1.0, 0.0, 0.0, 0.0] }
    }

    pub fn delta(&self) -> Result<MasterDelta, ProtocolError> {
        let [w, x, y, z] = self.dr;
        let r = Quaternion::new(w, x, y, z);
        if !self.dt.iter().chain(&self.dr).all(|v| v.is_finite()) {
            return Err(ProtocolError::invalid("master_cmd values must be finite"));
        }
        if (r.norm() - 1.0).abs() > 1e-6 {
            return Err(ProtocolError::invalid(format!("dr must be a unit quaternion, norm is {}", r.norm())));
        }
        Ok(MasterDelta { clutch: self.clutch, translation: Vector3::from(self.dt), rotation: r.normalize() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetParam {
    pub name: String,
    pub value: f64,
}

/// Controller parameters that may change during a run.
pub const PARAMS: [&str; 5] = ["alpha", "beta", "eta", "lambda_robot", "lambda_forceps"];

impl SetParam {
    pub fn apply(&self, config: &mut ControllerConfig) -> Result<(), ProtocolError> {
        let mut next = *config;
        let slot = match self.name.as_str() {
            "alpha" => &mut next.alpha,
            "beta" => &mut next.beta,
            "eta" => &mut next.eta,
            "lambda_robot" => &mut next.lambda_robot,
            "lambda_forceps" => &mut next.lambda_forceps,
            other => {
                return Err(ProtocolError::UnknownParam(format!(
                    "unknown parameter '{other}', expected one of {}",
                    PARAMS.join(", ")
                )))
            }
        };
        *slot = self.value;
        next.validate().map_err(|e| ProtocolError::invalid(e.to_string()))?;
        *config = next;
        Ok(())
    }
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    MasterCmd(MasterCmd),
    SetParam(SetParam),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub time: f64,
    /// Effector pose per robot as `vec8`.
    pub poses: Vec<[f64; 8]>,
    pub constraints: Vec<String>,
    pub distances: Vec<f64>,
    pub d_safe: Vec<f64>,
    pub slacks: Vec<f64>,
    /// Reflected force per master.
    pub forces: Vec<[f64; 3]>,
    pub clutch: Vec<bool>,
    pub alpha: f64,
    pub beta: f64,
    pub status: String,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    StateFrame(StateFrame),
    Error { code: String, detail: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown master {0}")]
    UnknownMaster(usize),
    #[error("{0}")]
    UnknownParam(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

impl ProtocolError {
    fn invalid(msg: impl Into<String>) -> Self {
        ProtocolError::InvalidValue(msg.into())
    }

    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::UnknownMaster(_) => "unknown_master",
            ProtocolError::UnknownParam(_) => "unknown_param",
            ProtocolError::InvalidValue(_) => "invalid_value",
        }
    }

    pub fn to_message(&self) -> Outbound {
        Outbound::Error { code: self.code().into(), detail: self.to_string() }
    }
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    let len = u32::try_from(body.len()).map_err(io::Error::other)?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Next frame payload, or `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds {MAX_FRAME}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn decode_inbound(body: &[u8]) -> Result<Inbound, ProtocolError> {
    serde_json::from_slice(body).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// One line of a master script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Time at which the message is applied; it takes effect at the first
    /// tick whose time is not earlier.
    pub time: f64,
    #[serde(flatten)]
    pub message: Inbound,
}

impl ScriptEntry {
    pub fn tick(&self, ts: f64) -> u64 {
        (self.time / ts - 1e-6).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("{file}: {source}")]
    Io { file: String, source: io::Error },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
}

pub fn read_script(path: impl AsRef<Path>) -> Result<Vec<ScriptEntry>, ScriptError> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|source| ScriptError::Io { file: file.clone(), source })?;
    parse_script(io::BufReader::new(f), &file)
}

pub fn parse_script<R: BufRead>(reader: R, file: &str) -> Result<Vec<ScriptEntry>, ScriptError> {
    let mut out: Vec<ScriptEntry> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ScriptError::Io { file: file.into(), source })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("//") {
            continue;
        }
        let parse_err = |message: String| ScriptError::Parse { file: file.into(), line: i + 1, message };
        let entry: ScriptEntry = serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
        if !(entry.time >= 0.0) || !entry.time.is_finite() {
            return Err(parse_err(format!("time must be finite and non-negative, got {}", entry.time)));
        }
        if let Some(prev) = out.last() {
            if entry.time < prev.time {
                return Err(parse_err(format!("time {} goes backwards (previous {})", entry.time, prev.time)));
            }
        }
        if let Inbound::MasterCmd(cmd) = &entry.message {
            cmd.delta().map_err(|e| parse_err(e.to_string()))?;
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_script<W: Write>(w: &mut W, entries: &[ScriptEntry]) -> io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut *w, e).map_err(io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
