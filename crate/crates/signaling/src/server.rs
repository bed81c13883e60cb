use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc::unbounded_channel;
use tokio::task::JoinHandle;
use tokio::time::timeout;
use tracing::{debug, info};

use crate::envelope::{Envelope, EnvelopeKind};
use crate::registry::{MemberToken, Registry, SignalError};

pub const DEFAULT_PORT: u16 = 7401;
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30);

/// Payload of an `error` envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
}

impl SignalError {
    pub fn code(&self) -> &'static str {
        match self {
            SignalError::EmptyClientId => "EmptyClientId",
            SignalError::DuplicateClientId(_) => "DuplicateClientId",
            SignalError::UnknownPeer(_) => "UnknownPeer",
            SignalError::NotJoined => "NotJoined",
            SignalError::SessionFull(_) => "SessionFull",
            SignalError::MissingEndpoint => "MissingEndpoint",
        }
    }
}

fn error_envelope(session: &str, to: Option<&str>, code: &str, message: String) -> Envelope {
    let payload = ErrorPayload {
        code: code.to_string(),
        message,
    };
    Envelope::error(
        session,
        to,
        serde_json::to_string(&payload).expect("payload serializes"),
    )
}

fn signal_error(session: &str, to: Option<&str>, e: &SignalError) -> Envelope {
    error_envelope(session, to, e.code(), e.to_string())
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub capacity: usize,
    /// A channel with no inbound line for this long is treated as a leave.
    pub idle_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            capacity: crate::registry::DEFAULT_CAPACITY,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    pub registry: Arc<Registry>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn abort(&self) {
        self.task.abort();
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Binds `bind` and serves in a background task.
pub async fn start(bind: &str, config: ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let registry = Arc::new(Registry::new(config.capacity));
    let task = tokio::spawn(serve(listener, registry.clone(), config.idle_timeout));
    Ok(ServerHandle {
        addr,
        registry,
        task,
    })
}

pub async fn serve(listener: TcpListener, registry: Arc<Registry>, idle_timeout: Duration) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let _ = stream.set_nodelay(true);
                tokio::spawn(handle_connection(
                    stream,
                    peer,
                    registry.clone(),
                    idle_timeout,
                ));
            }
            Err(e) => {
                debug!("accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

struct Membership {
    session: String,
    client: String,
    token: MemberToken,
}

async fn handle_connection(
    stream: TcpStream,
    peer: SocketAddr,
    registry: Arc<Registry>,
    idle_timeout: Duration,
) {
    let (rd, mut wr) = stream.into_split();
    let (tx, mut rx) = unbounded_channel::<Envelope>();
    let writer = tokio::spawn(async move {
        while let Some(env) = rx.recv().await {
            if wr.write_all(env.to_line().as_bytes()).await.is_err() {
                break;
            }
        }
    });

    let mut lines = BufReader::new(rd).lines();
    let mut membership: Option<Membership> = None;
    loop {
        let line = match timeout(idle_timeout, lines.next_line()).await {
            Ok(Ok(Some(line))) => line,
            Ok(Ok(None)) | Ok(Err(_)) => break,
            Err(_) => {
                debug!(%peer, "inactivity timeout");
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let env = match Envelope::parse(&line) {
            Ok(env) => env,
            Err(e) => {
                let _ = tx.send(error_envelope("", None, "Malformed", e.to_string()));
                continue;
            }
        };
        match env.kind {
            EnvelopeKind::Join => {
                if let Some(m) = &membership {
                    let msg = format!("already joined session `{}` as `{}`", m.session, m.client);
                    let _ = tx.send(error_envelope(&env.session, None, "AlreadyJoined", msg));
                    continue;
                }
                let client = env.from.clone().unwrap_or_default();
                match registry.join(&env.session, &client, &peer.to_string(), tx.clone()) {
                    Ok((roster, token)) => {
                        info!(session = %env.session, %client, %peer, members = roster.members.len(), "join");
                        membership = Some(Membership {
                            session: env.session.clone(),
                            client,
                            token,
                        });
                    }
                    Err(e) => {
                        let _ = tx.send(signal_error(&env.session, env.from.as_deref(), &e));
                    }
                }
            }
            EnvelopeKind::Relay => {
                // The sender is whoever joined on this channel; a mismatched
                // `from` is treated as an unknown sender.
                let result = match &membership {
                    Some(m)
                        if env.from.as_deref() == Some(&m.client) && env.session == m.session =>
                    {
                        registry.relay(&env)
                    }
                    _ => Err(SignalError::NotJoined),
                };
                if let Err(e) = result {
                    let _ = tx.send(signal_error(&env.session, env.from.as_deref(), &e));
                }
            }
            EnvelopeKind::Leave => {
                let result = match membership.take() {
                    Some(m) => registry.disconnect(&m.session, &m.client, m.token),
                    None => Err(SignalError::NotJoined),
                };
                if let Err(e) = result {
                    let _ = tx.send(signal_error(&env.session, env.from.as_deref(), &e));
                }
            }
            EnvelopeKind::Ping => {}
            other => {
                let msg = format!("clients may not send `{}` envelopes", kind_name(other));
                let _ = tx.send(error_envelope(&env.session, None, "UnexpectedKind", msg));
            }
        }
    }
    if let Some(m) = membership {
        info!(session = %m.session, client = %m.client, "disconnect");
        let _ = registry.disconnect(&m.session, &m.client, m.token);
    }
    drop(tx);
    let _ = writer.await;
}

fn kind_name(kind: EnvelopeKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}
