use std::io;
use std::net::SocketAddr;

use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use crate::envelope::{Envelope, EnvelopeKind, SessionRoster};
use crate::server::ErrorPayload;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("signaling i/o: {0}")]
    Io(#[from] io::Error),
    #[error("signaling channel closed")]
    Closed,
    #[error("malformed envelope from server: {0}")]
    Malformed(String),
    #[error("server rejected request: {code}: {message}")]
    Rejected { code: String, message: String },
}

/// Accepts `tcp://host:port` or a bare `host:port`.
pub fn parse_signaling_url(url: &str) -> &str {
    let s = url.strip_prefix("tcp://").unwrap_or(url);
    s.trim_end_matches('/')
}

pub struct SignalReader {
    lines: Lines<BufReader<OwnedReadHalf>>,
}

impl SignalReader {
    /// Next envelope, or `None` once the server closes the channel.
    pub async fn recv(&mut self) -> Result<Option<Envelope>, ClientError> {
        loop {
            let Some(line) = self.lines.next_line().await? else {
                return Ok(None);
            };
            if line.trim().is_empty() {
                continue;
            }
            return Envelope::parse(&line)
                .map(Some)
                .map_err(|e| ClientError::Malformed(e.to_string()));
        }
    }
}

pub struct SignalWriter {
    writer: OwnedWriteHalf,
}

impl SignalWriter {
    pub async fn send(&mut self, env: &Envelope) -> Result<(), ClientError> {
        self.writer.write_all(env.to_line().as_bytes()).await?;
        Ok(())
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.writer.shutdown().await?;
        Ok(())
    }
}

pub struct SignalingClient {
    pub reader: SignalReader,
    pub writer: SignalWriter,
    pub local_addr: SocketAddr,
}

impl SignalingClient {
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(parse_signaling_url(url)).await?;
        stream.set_nodelay(true)?;
        let local_addr = stream.local_addr()?;
        let (rd, wr) = stream.into_split();
        Ok(Self {
            reader: SignalReader {
                lines: BufReader::new(rd).lines(),
            },
            writer: SignalWriter { writer: wr },
            local_addr,
        })
    }

    pub async fn send(&mut self, env: &Envelope) -> Result<(), ClientError> {
        self.writer.send(env).await
    }

    pub async fn recv(&mut self) -> Result<Option<Envelope>, ClientError> {
        self.reader.recv().await
    }

    /// Joins and waits for the server's answer. The server queues `joined`
    /// ahead of any later roster change, so nothing is skipped here.
    pub async fn join(
        &mut self,
        session: &str,
        client_id: &str,
    ) -> Result<SessionRoster, ClientError> {
        self.send(&Envelope::join(session, client_id)).await?;
        loop {
            let env = self.recv().await?.ok_or(ClientError::Closed)?;
            match env.kind {
                EnvelopeKind::Joined => {
                    return serde_json::from_str(&env.payload)
                        .map_err(|e| ClientError::Malformed(e.to_string()));
                }
                EnvelopeKind::Error => return Err(rejection(&env)),
                _ => continue,
            }
        }
    }

    pub fn into_split(self) -> (SignalWriter, SignalReader) {
        (self.writer, self.reader)
    }
}

/// Decodes an `error` envelope's payload.
pub fn rejection(env: &Envelope) -> ClientError {
    match serde_json::from_str::<ErrorPayload>(&env.payload) {
        Ok(p) => ClientError::Rejected {
            code: p.code,
            message: p.message,
        },
        Err(_) => ClientError::Rejected {
            code: "Unknown".into(),
            message: env.payload.clone(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_forms() {
        assert_eq!(
            parse_signaling_url("tcp://127.0.0.1:7401"),
            "127.0.0.1:7401"
        );
        assert_eq!(parse_signaling_url("localhost:7401/"), "localhost:7401");
    }
}
