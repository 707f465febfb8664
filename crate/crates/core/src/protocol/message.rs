//! JSON text channel: one object per message, discriminated by `type`.
//!
//! Timestamps and probe ids are JSON integers so that 64-bit values survive
//! the round trip. Decoding never enforces flight limits; commands are
//! clamped when the server ingests them.

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::pilot::VelocityCommand;

pub const PROTOCOL_VERSION: u32 = 1;

/// Entry of the chunk list sent in `hello`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRef {
    pub coords: [i32; 3],
    pub revision: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    /// Server greeting. A client opens with the same type, where only
    /// `protocol_version` is required.
    Hello {
        protocol_version: u32,
        world_name: String,
        chunk_list: Vec<ChunkRef>,
        viewer_offset_m: [f64; 3],
    },
    Pose {
        t_ns: u64,
        p: [f64; 3],
        /// Unit quaternion, scalar first.
        q: [f64; 4],
        /// Latest one-way latency estimate for this session, if any.
        latency_ms: Option<f64>,
    },
    CmdVel(VelocityCommand),
    Takeoff,
    Land,
    Ping {
        id: u64,
        t_tx_ns: u64,
    },
    Pong {
        id: u64,
        t_tx_ns: u64,
    },
    ChunkNotice {
        coords: [i32; 3],
        revision: u32,
    },
}

impl Envelope {
    pub fn type_name(&self) -> &'static str {
        match self {
            Envelope::Hello { .. } => "hello",
            Envelope::Pose { .. } => "pose",
            Envelope::CmdVel(_) => "cmd_vel",
            Envelope::Takeoff => "takeoff",
            Envelope::Land => "land",
            Envelope::Ping { .. } => "ping",
            Envelope::Pong { .. } => "pong",
            Envelope::ChunkNotice { .. } => "chunk_notice",
        }
    }

    /// Minimal client greeting.
    pub fn client_hello(protocol_version: u32) -> Self {
        Envelope::Hello {
            protocol_version,
            world_name: String::new(),
            chunk_list: Vec::new(),
            viewer_offset_m: [0.0; 3],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("bad value for {field:?}: {reason}")]
    BadValue { field: &'static str, reason: String },
}

fn bad(field: &'static str, reason: impl Into<String>) -> MessageError {
    MessageError::BadValue {
        field,
        reason: reason.into(),
    }
}

pub fn encode_message(env: &Envelope) -> String {
    let ty = env.type_name();
    let v = match env {
        Envelope::Hello {
            protocol_version,
            world_name,
            chunk_list,
            viewer_offset_m,
        } => {
            let chunks: Vec<Value> = chunk_list
                .iter()
                .map(|c| json!({"coords": c.coords, "revision": c.revision}))
                .collect();
            json!({
                "type": ty,
                "protocol_version": protocol_version,
                "world_name": world_name,
                "chunk_list": chunks,
                "viewer_offset_m": viewer_offset_m,
            })
        }
        Envelope::Pose {
            t_ns,
            p,
            q,
            latency_ms,
        } => {
            let mut v = json!({"type": ty, "t_ns": t_ns, "p": p, "q": q});
            if let Some(l) = latency_ms {
                v["latency_ms"] = json!(l);
            }
            v
        }
        Envelope::CmdVel(c) => json!({
            "type": ty,
            "vx": c.vx,
            "vy": c.vy,
            "vz": c.vz,
            "yaw_rate": c.yaw_rate,
        }),
        Envelope::Takeoff | Envelope::Land => json!({"type": ty}),
        Envelope::Ping { id, t_tx_ns } | Envelope::Pong { id, t_tx_ns } => {
            json!({"type": ty, "id": id, "t_tx_ns": t_tx_ns})
        }
        Envelope::ChunkNotice { coords, revision } => {
            json!({"type": ty, "coords": coords, "revision": revision})
        }
    };
    v.to_string()
}

fn field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a Value, MessageError> {
    obj.get(name).ok_or(MessageError::MissingField(name))
}

fn as_u64(v: &Value, name: &'static str) -> Result<u64, MessageError> {
    v.as_u64()
        .ok_or_else(|| bad(name, "expected an unsigned integer"))
}

fn as_u32(v: &Value, name: &'static str) -> Result<u32, MessageError> {
    u32::try_from(as_u64(v, name)?).map_err(|_| bad(name, "out of u32 range"))
}

fn as_f64(v: &Value, name: &'static str) -> Result<f64, MessageError> {
    let x = v.as_f64().ok_or_else(|| bad(name, "expected a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad(name, "not finite"))
    }
}

fn as_f64_array<const N: usize>(v: &Value, name: &'static str) -> Result<[f64; N], MessageError> {
    let arr = v.as_array().ok_or_else(|| bad(name, "expected an array"))?;
    if arr.len() != N {
        return Err(bad(name, format!("expected {N} elements, got {}", arr.len())));
    }
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = as_f64(x, name)?;
    }
    Ok(out)
}

fn as_coords(v: &Value, name: &'static str) -> Result<[i32; 3], MessageError> {
    let arr = v.as_array().ok_or_else(|| bad(name, "expected an array"))?;
    if arr.len() != 3 {
        return Err(bad(name, format!("expected 3 elements, got {}", arr.len())));
    }
    let mut out = [0i32; 3];
    for (o, x) in out.iter_mut().zip(arr) {
        let i = x.as_i64().ok_or_else(|| bad(name, "expected integers"))?;
        *o = i32::try_from(i).map_err(|_| bad(name, "out of i32 range"))?;
    }
    Ok(out)
}

/// Decodes one message. Total: any input yields an envelope or an error.
pub fn decode_message(text: &str) -> Result<Envelope, MessageError> {
    let value: Value = serde_json::from_str(text).map_err(|e| bad("message", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| bad("message", "expected a JSON object"))?;
    let ty = field(obj, "type")?
        .as_str()
        .ok_or_else(|| bad("type", "expected a string"))?;

    let env = match ty {
        "hello" => {
            let protocol_version = as_u32(field(obj, "protocol_version")?, "protocol_version")?;
            let world_name = match obj.get("world_name") {
                Some(v) => v
                    .as_str()
                    .ok_or_else(|| bad("world_name", "expected a string"))?
                    .to_owned(),
                None => String::new(),
            };
            let chunk_list = match obj.get("chunk_list") {
                Some(v) => v
                    .as_array()
                    .ok_or_else(|| bad("chunk_list", "expected an array"))?
                    .iter()
                    .map(|c| {
                        let c = c
                            .as_object()
                            .ok_or_else(|| bad("chunk_list", "expected objects"))?;
                        Ok(ChunkRef {
                            coords: as_coords(field(c, "coords")?, "coords")?,
                            revision: as_u32(field(c, "revision")?, "revision")?,
                        })
                    })
                    .collect::<Result<_, MessageError>>()?,
                None => Vec::new(),
            };
            let viewer_offset_m = match obj.get("viewer_offset_m") {
                Some(v) => as_f64_array(v, "viewer_offset_m")?,
                None => [0.0; 3],
            };
            Envelope::Hello {
                protocol_version,
                world_name,
                chunk_list,
                viewer_offset_m,
            }
        }
        "pose" => Envelope::Pose {
            t_ns: as_u64(field(obj, "t_ns")?, "t_ns")?,
            p: as_f64_array(field(obj, "p")?, "p")?,
            q: as_f64_array(field(obj, "q")?, "q")?,
            latency_ms: obj
                .get("latency_ms")
                .map(|v| as_f64(v, "latency_ms"))
                .transpose()?,
        },
        "cmd_vel" => Envelope::CmdVel(VelocityCommand {
            vx: as_f64(field(obj, "vx")?, "vx")?,
            vy: as_f64(field(obj, "vy")?, "vy")?,
            vz: as_f64(field(obj, "vz")?, "vz")?,
            yaw_rate: as_f64(field(obj, "yaw_rate")?, "yaw_rate")?,
        }),
        "takeoff" => Envelope::Takeoff,
        "land" => Envelope::Land,
        "ping" | "pong" => {
            let id = as_u64(field(obj, "id")?, "id")?;
            let t_tx_ns = as_u64(field(obj, "t_tx_ns")?, "t_tx_ns")?;
            if ty == "ping" {
                Envelope::Ping { id, t_tx_ns }
            } else {
                Envelope::Pong { id, t_tx_ns }
            }
        }
        "chunk_notice" => Envelope::ChunkNotice {
            coords: as_coords(field(obj, "coords")?, "coords")?,
            revision: as_u32(field(obj, "revision")?, "revision")?,
        },
        other => return Err(MessageError::UnknownType(other.to_owned())),
    };
    Ok(env)
}
