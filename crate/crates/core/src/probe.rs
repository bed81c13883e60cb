//! Probe wire format and RTT sampling.
//!
//! Every probe datagram starts with the same fixed header. All multi-octet
//! integers are big-endian.
//!
//! | offset | len | field                                   |
//! |--------|-----|-----------------------------------------|
//! | 0      | 4   | magic `"PMM1"`                          |
//! | 4      | 1   | version (`1`)                           |
//! | 5      | 1   | kind (`0x01` request, `0x02` response)  |
//! | 6      | 4   | seq                                     |
//! | 10     | 8   | send timestamp, microseconds            |
//!
//! A request then carries 3 reserved zero octets (header length 21) and zero
//! padding up to the configured payload size. A response carries two more
//! timestamps (responder receive and send, 8 octets each) followed by the same
//! 3 reserved octets, for a header length of 37.

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PMM1";
pub const VERSION: u8 = 1;

/// Octets in a request header: magic, version, kind, seq, timestamp, reserved.
pub const REQUEST_HEADER_LEN: usize = 21;
/// Octets in a response header.
pub const RESPONSE_HEADER_LEN: usize = 37;
/// Offset of the kind octet, shared by every message on the probe socket.
pub const KIND_OFFSET: usize = 5;
/// Octets every message on the probe socket carries before kind-specific data.
pub const COMMON_HEADER_LEN: usize = 6;

pub const DEFAULT_PAYLOAD_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Request = 0x01,
    Response = 0x02,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeRequest {
    pub seq: u32,
    /// Sender monotonic clock, microseconds.
    pub send_ts_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeResponse {
    pub seq: u32,
    pub echo_send_ts_us: u64,
    pub resp_recv_ts_us: u64,
    pub resp_send_ts_us: u64,
}

impl ProbeResponse {
    /// Builds the echo for `req`. The responder timestamps are clamped so that
    /// `resp_send_ts_us >= resp_recv_ts_us` always holds.
    pub fn echo(req: &ProbeRequest, resp_recv_ts_us: u64, resp_send_ts_us: u64) -> Self {
        Self {
            seq: req.seq,
            echo_send_ts_us: req.send_ts_us,
            resp_recv_ts_us,
            resp_send_ts_us: resp_send_ts_us.max(resp_recv_ts_us),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMessage {
    Request(ProbeRequest),
    Response(ProbeResponse),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("payload size {requested} is below the {minimum}-octet header")]
    PayloadTooSmall { requested: usize, minimum: usize },
    #[error("truncated message: {len} octets, need at least {needed}")]
    Truncated { len: usize, needed: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error(
        "receive timestamp {recv_ts_us} precedes send timestamp {send_ts_us}; clocks are mixed"
    )]
    ClockViolation { send_ts_us: u64, recv_ts_us: u64 },
}

/// Encodes `req` into exactly `payload_size` octets.
pub fn encode_request(req: &ProbeRequest, payload_size: usize) -> Result<Vec<u8>, ProbeError> {
    if payload_size < REQUEST_HEADER_LEN {
        return Err(ProbeError::PayloadTooSmall {
            requested: payload_size,
            minimum: REQUEST_HEADER_LEN,
        });
    }
    let mut buf = Vec::with_capacity(payload_size);
    put_common(&mut buf, Kind::Request as u8);
    buf.extend_from_slice(&req.seq.to_be_bytes());
    buf.extend_from_slice(&req.send_ts_us.to_be_bytes());
    buf.resize(payload_size, 0);
    Ok(buf)
}

/// Encodes `resp` padded to `payload_size` octets, or to the bare response
/// header when `payload_size` is smaller than that.
pub fn encode_response(resp: &ProbeResponse, payload_size: usize) -> Vec<u8> {
    let len = payload_size.max(RESPONSE_HEADER_LEN);
    let mut buf = Vec::with_capacity(len);
    put_common(&mut buf, Kind::Response as u8);
    buf.extend_from_slice(&resp.seq.to_be_bytes());
    buf.extend_from_slice(&resp.echo_send_ts_us.to_be_bytes());
    buf.extend_from_slice(&resp.resp_recv_ts_us.to_be_bytes());
    buf.extend_from_slice(&resp.resp_send_ts_us.to_be_bytes());
    buf.resize(len, 0);
    buf
}

/// Writes the common header for a message of `kind`.
pub fn put_common(buf: &mut Vec<u8>, kind: u8) {
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.push(kind);
}

/// Validates magic and version and returns the kind octet.
pub fn peek_kind(message: &[u8]) -> Result<u8, ProbeError> {
    if message.len() < COMMON_HEADER_LEN {
        return Err(ProbeError::Truncated {
            len: message.len(),
            needed: COMMON_HEADER_LEN,
        });
    }
    let magic: [u8; 4] = message[0..4].try_into().expect("slice of 4");
    if magic != MAGIC {
        return Err(ProbeError::BadMagic(magic));
    }
    if message[4] != VERSION {
        return Err(ProbeError::UnsupportedVersion(message[4]));
    }
    Ok(message[KIND_OFFSET])
}

pub fn decode(message: &[u8]) -> Result<ProbeMessage, ProbeError> {
    // Anything shorter than a request header cannot be a probe, whatever its kind.
    if message.len() < REQUEST_HEADER_LEN {
        return Err(ProbeError::Truncated {
            len: message.len(),
            needed: REQUEST_HEADER_LEN,
        });
    }
    let kind = peek_kind(message)?;
    let seq = be_u32(message, 6);
    let ts = be_u64(message, 10);
    match kind {
        k if k == Kind::Request as u8 => Ok(ProbeMessage::Request(ProbeRequest {
            seq,
            send_ts_us: ts,
        })),
        k if k == Kind::Response as u8 => {
            if message.len() < RESPONSE_HEADER_LEN {
                return Err(ProbeError::Truncated {
                    len: message.len(),
                    needed: RESPONSE_HEADER_LEN,
                });
            }
            Ok(ProbeMessage::Response(ProbeResponse {
                seq,
                echo_send_ts_us: ts,
                resp_recv_ts_us: be_u64(message, 18),
                resp_send_ts_us: be_u64(message, 26),
            }))
        }
        other => Err(ProbeError::UnknownKind(other)),
    }
}

fn be_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(buf[at..at + 4].try_into().expect("slice of 4"))
}

fn be_u64(buf: &[u8], at: usize) -> u64 {
    u64::from_be_bytes(buf[at..at + 8].try_into().expect("slice of 8"))
}

/// One RTT measurement towards a peer.
#[derive(Debug, Clone, PartialEq)]
pub struct RttSample {
    pub peer_id: String,
    pub rtt_ms: f64,
    pub seq: u32,
    /// Wall clock, Unix milliseconds.
    pub sampled_at_ms: u64,
}

/// Turns an echoed response into a sample. `recv_ts_us` must come from the
/// same monotonic clock that stamped the request.
pub fn rtt_from_response(
    peer_id: impl Into<String>,
    resp: &ProbeResponse,
    recv_ts_us: u64,
    sampled_at_ms: u64,
) -> Result<RttSample, ProbeError> {
    let elapsed =
        recv_ts_us
            .checked_sub(resp.echo_send_ts_us)
            .ok_or(ProbeError::ClockViolation {
                send_ts_us: resp.echo_send_ts_us,
                recv_ts_us,
            })?;
    Ok(RttSample {
        peer_id: peer_id.into(),
        rtt_ms: elapsed as f64 / 1000.0,
        seq: resp.seq,
        sampled_at_ms,
    })
}

/// Hands out request sequence numbers for one connection, starting at 1.
#[derive(Debug, Clone, Default)]
pub struct SeqGenerator {
    last: u32,
}

impl SeqGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last sequence number handed out, 0 before the first request.
    pub fn last(&self) -> u32 {
        self.last
    }

    /// Next sequence number. Saturates at `u32::MAX` instead of wrapping so a
    /// connection can never repeat a seq; at 1 Hz that is over a century away.
    pub fn next_seq(&mut self) -> Option<u32> {
        let next = self.last.checked_add(1)?;
        self.last = next;
        Some(next)
    }
}
