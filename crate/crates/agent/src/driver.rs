//! Runs a [`MeshEngine`] against a real signaling channel, UDP socket and
//! collector.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use meshmeter_collector::CollectorClient;
use meshmeter_core::MeasurementRecord;
use meshmeter_signaling::{ClientError, Envelope, EnvelopeKind, SignalingClient};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{mpsc, watch};
use tokio::time::{sleep_until, Instant};
use tracing::{info, warn};

use crate::config::{AgentConfig, ConfigError};
use crate::engine::{EngineConfig, LinkSnapshot, LinkState, MeshEngine, Now, Output};
use crate::lookup::{lookup_self, SelfInfo};
use crate::net::{AgentSocket, SharedNetwork};
use crate::reporter::{spawn_reporter, Reporter, ReporterStats, MAX_BACKLOG};

const KEEPALIVE: Duration = Duration::from_secs(10);
const REPORTER_DRAIN: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("signaling unreachable: {0}")]
    SignalingUnreachable(String),
    #[error("join rejected: {0}")]
    JoinRejected(String),
    #[error("no link established with any of {0} peers")]
    AllPeersFailed(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub struct RunOptions {
    pub udp_bind: SocketAddr,
    /// Route datagrams through a shared emulator instead of sending directly.
    pub network: Option<Arc<SharedNetwork>>,
    /// Stops the run when the value flips to true.
    pub shutdown: Option<watch::Receiver<bool>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            udp_bind: "0.0.0.0:0".parse().expect("literal address"),
            network: None,
            shutdown: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentSummary {
    pub client_id: String,
    pub udp_addr: SocketAddr,
    pub self_info: SelfInfo,
    pub links: Vec<LinkSnapshot>,
    pub records_emitted: u64,
    pub reporter: ReporterStats,
}

fn wall_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn wait_shutdown(rx: &mut Option<watch::Receiver<bool>>) {
    match rx {
        Some(rx) => {
            while !*rx.borrow() {
                if rx.changed().await.is_err() {
                    std::future::pending::<()>().await;
                }
            }
        }
        None => std::future::pending().await,
    }
}

async fn wait_until(at: Option<Instant>) {
    match at {
        Some(at) => sleep_until(at).await,
        None => std::future::pending().await,
    }
}

pub async fn run_agent(cfg: AgentConfig, mut opts: RunOptions) -> Result<AgentSummary, AgentError> {
    cfg.validate()?;
    let self_info = lookup_self(cfg.ip_lookup, &cfg.lookup_url).await;
    let mut socket = AgentSocket::bind(opts.udp_bind, opts.network.clone(), &cfg.client_id)?;
    let udp_addr = socket.local_addr();

    let mut signaling = SignalingClient::connect(&cfg.signaling_url)
        .await
        .map_err(|e| AgentError::SignalingUnreachable(e.to_string()))?;
    signaling
        .send(&Envelope::join(&cfg.session_id, &cfg.client_id))
        .await
        .map_err(|e| AgentError::SignalingUnreachable(e.to_string()))?;
    let (mut writer, mut reader) = signaling.into_split();

    let start = Instant::now();
    let now = || Now {
        mono_us: start.elapsed().as_micros() as u64,
        wall_ms: wall_ms(),
    };
    let seed =
        start.elapsed().as_nanos() as u64 ^ wall_ms().rotate_left(17) ^ u64::from(udp_addr.port());
    let mut engine = MeshEngine::new(
        EngineConfig::from_agent(&cfg, self_info.clone()),
        udp_addr,
        now(),
        seed,
    );

    // Wait for the join answer before anything else touches the engine.
    loop {
        let env = reader
            .recv()
            .await
            .map_err(|e| AgentError::SignalingUnreachable(e.to_string()))?
            .ok_or_else(|| AgentError::SignalingUnreachable("closed during join".into()))?;
        match env.kind {
            EnvelopeKind::Joined => {
                engine.on_signal(&env, now());
                break;
            }
            EnvelopeKind::Error => {
                let msg = match meshmeter_signaling::client::rejection(&env) {
                    ClientError::Rejected { code, message } => format!("{code}: {message}"),
                    other => other.to_string(),
                };
                return Err(AgentError::JoinRejected(msg));
            }
            _ => {}
        }
    }
    let initial_peers: BTreeSet<String> = engine.links().into_iter().map(|l| l.peer_id).collect();

    let reporter = Reporter::new(
        CollectorClient::new(&cfg.collector_url),
        cfg.log_path.as_deref(),
        MAX_BACKLOG,
    )?;
    let (records_tx, records_rx) = mpsc::unbounded_channel::<MeasurementRecord>();
    let reporter_task = spawn_reporter(reporter, records_rx, REPORTER_DRAIN);

    let end = cfg.duration().map(|d| start + d);
    let mut keepalive = tokio::time::interval_at(start + KEEPALIVE, KEEPALIVE);
    let mut signaling_open = true;
    let mut buf = vec![0u8; 65_536];
    let mut outcome: Result<(), AgentError> = Ok(());
    let mut initial_checked = initial_peers.is_empty();

    loop {
        dispatch(
            &mut engine,
            &mut socket,
            &mut writer,
            &mut signaling_open,
            &records_tx,
        )
        .await;
        if !initial_checked {
            let links = engine.links();
            let initial: Vec<&LinkSnapshot> = links
                .iter()
                .filter(|l| initial_peers.contains(&l.peer_id))
                .collect();
            if initial.iter().all(|l| l.state != LinkState::Connecting) {
                initial_checked = true;
                let established = initial
                    .iter()
                    .filter(|l| l.state == LinkState::Established)
                    .count();
                if established == 0 && !initial.is_empty() {
                    outcome = Err(AgentError::AllPeersFailed(initial.len()));
                    break;
                }
            }
        }
        let wake = start + Duration::from_micros(engine.next_wakeup_us());
        // Stop conditions first, so a shared shutdown is never overtaken by
        // departures it caused in other agents.
        tokio::select! {
            biased;
            _ = wait_until(end) => break,
            _ = wait_shutdown(&mut opts.shutdown) => break,
            env = reader.recv(), if signaling_open => match env {
                Ok(Some(env)) => engine.on_signal(&env, now()),
                Ok(None) | Err(_) => {
                    warn!(client = %cfg.client_id, "signaling channel lost; established links keep measuring");
                    signaling_open = false;
                }
            },
            res = socket.recv_from(&mut buf) => match res {
                Ok((n, from)) => engine.on_datagram(from, &buf[..n], now()),
                Err(e) => warn!("datagram receive failed: {e}"),
            },
            _ = sleep_until(wake) => {}
            _ = keepalive.tick(), if signaling_open => {
                let ping = Envelope::new(EnvelopeKind::Ping, &cfg.session_id).from(&cfg.client_id);
                if writer.send(&ping).await.is_err() {
                    signaling_open = false;
                }
            }
        }
        engine.poll(now());
    }

    // Report the interval in progress, then leave.
    engine.stats_tick(now());
    dispatch(
        &mut engine,
        &mut socket,
        &mut writer,
        &mut signaling_open,
        &records_tx,
    )
    .await;
    if signaling_open {
        let _ = writer.send(&engine.leave_envelope()).await;
        let _ = writer.close().await;
    }
    drop(records_tx);
    let reporter_stats = reporter_task.await.unwrap_or_default();
    let summary = AgentSummary {
        client_id: cfg.client_id.clone(),
        udp_addr,
        self_info,
        links: engine.links(),
        records_emitted: engine.records_emitted(),
        reporter: reporter_stats,
    };
    info!(
        client = %cfg.client_id,
        records = summary.records_emitted,
        posted = summary.reporter.posted,
        "agent finished"
    );
    outcome.map(|_| summary)
}

async fn dispatch(
    engine: &mut MeshEngine,
    socket: &mut AgentSocket,
    writer: &mut meshmeter_signaling::SignalWriter,
    signaling_open: &mut bool,
    records: &mpsc::UnboundedSender<MeasurementRecord>,
) {
    let outputs: Vec<Output> = engine.drain().collect();
    for out in outputs {
        match out {
            Output::Datagram { to, bytes } => {
                if let Err(e) = socket.send_to(bytes, to).await {
                    warn!(%to, "datagram send failed: {e}");
                }
            }
            Output::Signal(env) => {
                if *signaling_open && writer.send(&env).await.is_err() {
                    *signaling_open = false;
                }
            }
            Output::Record(rec) => {
                let _ = records.send(rec);
            }
        }
    }
}
