//! Framed streaming protocol between actors and the learner.
//!
//! Every frame is a u32 little-endian length (counting the type byte and
//! payload), one type byte, and the payload. Actors open a connection, send
//! one Hello carrying their identity, then stream StepRequests in lock-step
//! per environment; the learner answers each with an ActionResponse. All
//! integers and floats are little-endian; frames are capped at 16 MiB.
//!
//! [`FrameDecoder`] reassembles messages from arbitrary stream
//! fragmentation, so callers can feed it whatever `read` returns.

mod batcher;

pub use batcher::{BatchEntry, Batcher, InferenceBatch};

use crate::error::{Result, SeedError};

pub const MAX_FRAME: usize = 16 * 1024 * 1024;

const TYPE_ERROR: u8 = 0x00;
const TYPE_HELLO: u8 = 0x01;
const TYPE_STEP_REQUEST: u8 = 0x02;
const TYPE_ACTION_RESPONSE: u8 = 0x03;

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    /// Once per connection, before any steps: who is connecting and how
    /// many environments it hosts.
    Hello { actor_id: u32, num_envs: u32 },
    /// One environment observation plus the reward and termination flag of
    /// the transition that produced it. The first request of an episode
    /// carries `done = true` (the previous episode's end, or a fresh start).
    StepRequest {
        env_id: u32,
        reward: f32,
        done: bool,
        obs: Vec<f32>,
    },
    /// The learner's action for one environment.
    ActionResponse { env_id: u32, action: u32 },
    /// Fatal condition in either direction.
    Error { code: u16, message: String },
}

impl WireMessage {
    /// Appends the framed encoding of `self` to `buf`.
    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        let len_at = buf.len();
        buf.extend_from_slice(&[0; 4]);
        match self {
            WireMessage::Hello { actor_id, num_envs } => {
                buf.push(TYPE_HELLO);
                buf.extend_from_slice(&actor_id.to_le_bytes());
                buf.extend_from_slice(&num_envs.to_le_bytes());
            }
            WireMessage::StepRequest {
                env_id,
                reward,
                done,
                obs,
            } => {
                buf.push(TYPE_STEP_REQUEST);
                buf.extend_from_slice(&env_id.to_le_bytes());
                buf.extend_from_slice(&reward.to_le_bytes());
                buf.push(u8::from(*done));
                buf.extend_from_slice(&(obs.len() as u32).to_le_bytes());
                for v in obs {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            WireMessage::ActionResponse { env_id, action } => {
                buf.push(TYPE_ACTION_RESPONSE);
                buf.extend_from_slice(&env_id.to_le_bytes());
                buf.extend_from_slice(&action.to_le_bytes());
            }
            WireMessage::Error { code, message } => {
                buf.push(TYPE_ERROR);
                buf.extend_from_slice(&code.to_le_bytes());
                buf.extend_from_slice(&(message.len() as u16).to_le_bytes());
                buf.extend_from_slice(message.as_bytes());
            }
        }
        let frame_len = (buf.len() - len_at - 4) as u32;
        buf[len_at..len_at + 4].copy_from_slice(&frame_len.to_le_bytes());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64);
        self.encode_into(&mut buf);
        buf
    }
}

fn take_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes one frame body (type byte + payload, the bytes the length prefix
/// counts).
pub fn decode_frame(body: &[u8]) -> Result<WireMessage> {
    let Some((&msg_type, payload)) = body.split_first() else {
        return Err(SeedError::protocol("empty frame"));
    };
    match msg_type {
        TYPE_HELLO => {
            if payload.len() != 8 {
                return Err(SeedError::protocol(format!(
                    "hello payload must be 8 bytes, got {}",
                    payload.len()
                )));
            }
            Ok(WireMessage::Hello {
                actor_id: take_u32(payload, 0),
                num_envs: take_u32(payload, 4),
            })
        }
        TYPE_STEP_REQUEST => {
            if payload.len() < 13 {
                return Err(SeedError::protocol("step request payload truncated"));
            }
            let done = match payload[8] {
                0 => false,
                1 => true,
                other => {
                    return Err(SeedError::protocol(format!(
                        "done flag must be 0 or 1, got {other}"
                    )))
                }
            };
            let obs_count = take_u32(payload, 9) as usize;
            if payload.len() != 13 + 4 * obs_count {
                return Err(SeedError::protocol(format!(
                    "step request claims {obs_count} obs values but payload has {} bytes",
                    payload.len()
                )));
            }
            let obs = payload[13..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(WireMessage::StepRequest {
                env_id: take_u32(payload, 0),
                reward: f32::from_le_bytes([payload[4], payload[5], payload[6], payload[7]]),
                done,
                obs,
            })
        }
        TYPE_ACTION_RESPONSE => {
            if payload.len() != 8 {
                return Err(SeedError::protocol(format!(
                    "action response payload must be 8 bytes, got {}",
                    payload.len()
                )));
            }
            Ok(WireMessage::ActionResponse {
                env_id: take_u32(payload, 0),
                action: take_u32(payload, 4),
            })
        }
        TYPE_ERROR => {
            if payload.len() < 4 {
                return Err(SeedError::protocol("error payload truncated"));
            }
            let code = u16::from_le_bytes([payload[0], payload[1]]);
            let msg_len = u16::from_le_bytes([payload[2], payload[3]]) as usize;
            if payload.len() != 4 + msg_len {
                return Err(SeedError::protocol("error message length mismatch"));
            }
            let message = std::str::from_utf8(&payload[4..])
                .map_err(|_| SeedError::protocol("error message is not UTF-8"))?
                .to_string();
            Ok(WireMessage::Error { code, message })
        }
        other => Err(SeedError::protocol(format!(
            "unknown message type 0x{other:02X}"
        ))),
    }
}

/// Incremental stream decoder: feed arbitrary byte chunks, take complete
/// messages out.
#[derive(Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        // Compact before growing when the consumed prefix dominates.
        if self.start > 0 && (self.start >= self.buf.len() || self.start > 64 * 1024) {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Returns the next complete message, or `None` until more bytes arrive.
    pub fn next(&mut self) -> Result<Option<WireMessage>> {
        let avail = &self.buf[self.start..];
        if avail.len() < 4 {
            return Ok(None);
        }
        let frame_len = take_u32(avail, 0) as usize;
        if frame_len == 0 {
            return Err(SeedError::protocol("zero-length frame"));
        }
        if frame_len > MAX_FRAME {
            return Err(SeedError::protocol(format!(
                "frame of {frame_len} bytes exceeds the 16 MiB cap"
            )));
        }
        if avail.len() < 4 + frame_len {
            return Ok(None);
        }
        let msg = decode_frame(&avail[4..4 + frame_len])?;
        self.start += 4 + frame_len;
        Ok(Some(msg))
    }
}
