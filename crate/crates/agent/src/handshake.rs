//! Connection handshake datagrams. They share the probe's common header so
//! one socket carries both, and are told apart by the kind octet.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PMM1"
//!      4     1  version
//!      5     1  kind: 0x10 hello, 0x11 hello-ack, 0x12 ack
//!      6     8  nonce of the sender's link
//!     14     8  echoed nonce (0 in hello)
//!     22     1  length of the sender's client id
//!     23     n  client id, UTF-8
//! ```

use meshmeter_core::probe::{self, ProbeError, ProbeMessage, COMMON_HEADER_LEN};
use thiserror::Error;

pub const KIND_HELLO: u8 = 0x10;
pub const KIND_HELLO_ACK: u8 = 0x11;
pub const KIND_ACK: u8 = 0x12;
const FIXED_LEN: usize = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeKind {
    Hello,
    HelloAck,
    Ack,
}

impl HandshakeKind {
    fn octet(self) -> u8 {
        match self {
            HandshakeKind::Hello => KIND_HELLO,
            HandshakeKind::HelloAck => KIND_HELLO_ACK,
            HandshakeKind::Ack => KIND_ACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub kind: HandshakeKind,
    pub nonce: u64,
    pub echo: u64,
    pub client_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatagramError {
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("handshake truncated: {len} octets")]
    Truncated { len: usize },
    #[error("client id is not UTF-8 or longer than 255 octets")]
    BadClientId,
}

/// Anything that can arrive on an agent socket.
#[derive(Debug, Clone, PartialEq)]
pub enum Datagram {
    Probe(ProbeMessage),
    Handshake(Handshake),
}

pub fn encode(h: &Handshake) -> Result<Vec<u8>, DatagramError> {
    let id = h.client_id.as_bytes();
    let id_len = u8::try_from(id.len()).map_err(|_| DatagramError::BadClientId)?;
    let mut buf = Vec::with_capacity(FIXED_LEN + id.len());
    probe::put_common(&mut buf, h.kind.octet());
    buf.extend_from_slice(&h.nonce.to_be_bytes());
    buf.extend_from_slice(&h.echo.to_be_bytes());
    buf.push(id_len);
    buf.extend_from_slice(id);
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<Datagram, DatagramError> {
    let kind = match probe::peek_kind(bytes)? {
        KIND_HELLO => HandshakeKind::Hello,
        KIND_HELLO_ACK => HandshakeKind::HelloAck,
        KIND_ACK => HandshakeKind::Ack,
        _ => return Ok(Datagram::Probe(probe::decode(bytes)?)),
    };
    if bytes.len() < FIXED_LEN {
        return Err(DatagramError::Truncated { len: bytes.len() });
    }
    let nonce = u64::from_be_bytes(bytes[COMMON_HEADER_LEN..14].try_into().expect("8 octets"));
    let echo = u64::from_be_bytes(bytes[14..22].try_into().expect("8 octets"));
    let id_len = bytes[22] as usize;
    let id = bytes
        .get(FIXED_LEN..FIXED_LEN + id_len)
        .ok_or(DatagramError::Truncated { len: bytes.len() })?;
    let client_id = std::str::from_utf8(id)
        .map_err(|_| DatagramError::BadClientId)?
        .to_string();
    Ok(Datagram::Handshake(Handshake {
        kind,
        nonce,
        echo,
        client_id,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use meshmeter_core::probe::{encode_request, ProbeRequest};

    #[test]
    fn hand_built_hello() {
        let h = Handshake {
            kind: HandshakeKind::Hello,
            nonce: 0x0102030405060708,
            echo: 0,
            client_id: "ab".into(),
        };
        let mut want = b"PMM1".to_vec();
        want.extend_from_slice(&[
            1, 0x10, 1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 0, 0, 0, 0, 0, 2, b'a', b'b',
        ]);
        assert_eq!(encode(&h).unwrap(), want);
        assert_eq!(decode(&want).unwrap(), Datagram::Handshake(h));
    }

    #[test]
    fn probes_pass_through() {
        let req = ProbeRequest {
            seq: 9,
            send_ts_us: 77,
        };
        let bytes = encode_request(&req, 100).unwrap();
        assert_eq!(
            decode(&bytes).unwrap(),
            Datagram::Probe(ProbeMessage::Request(req))
        );
    }

    #[test]
    fn malformed_inputs() {
        let h = Handshake {
            kind: HandshakeKind::Ack,
            nonce: 1,
            echo: 2,
            client_id: "node-7".into(),
        };
        let bytes = encode(&h).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(DatagramError::Truncated { .. })
        ));
        assert!(matches!(
            decode(&bytes[..10]),
            Err(DatagramError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode(&bad),
            Err(DatagramError::Probe(ProbeError::BadMagic(_)))
        ));
        let long = Handshake {
            client_id: "x".repeat(256),
            ..h
        };
        assert_eq!(encode(&long).unwrap_err(), DatagramError::BadClientId);
    }
}
