//! The agent's measurement state machine, free of sockets and clocks.
//!
//! Drivers feed it inbound envelopes and datagrams stamped with the current
//! time, and carry out the [`Output`]s it queues. The same engine runs over real
//! sockets and inside the virtual-time simulation.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::{IpAddr, SocketAddr};

use meshmeter_core::jitter::JitterState;
use meshmeter_core::probe::{
    self, ProbeMessage, ProbeRequest, ProbeResponse, RttSample, SeqGenerator,
};
use meshmeter_core::record::{EXT_BYTES_SENT, EXT_JITTER_MS};
use meshmeter_core::MeasurementRecord;
use meshmeter_signaling::{Envelope, EnvelopeKind, SessionRoster};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, info, warn};

use crate::config::AgentConfig;
use crate::handshake::{self, Datagram, Handshake, HandshakeKind};
use crate::lookup::SelfInfo;

pub const HANDSHAKE_DEADLINE_MS: u64 = 10_000;
pub const MAX_RETRANSMITS: u32 = 5;

/// Monotonic microseconds for RTT and timers, wall-clock milliseconds for
/// record dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Now {
    pub mono_us: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub client_id: String,
    pub session_id: String,
    pub payload_size: usize,
    pub send_interval_us: u64,
    pub stats_interval_us: u64,
    pub handshake_deadline_us: u64,
    pub max_retransmits: u32,
    pub self_info: SelfInfo,
}

impl EngineConfig {
    pub fn from_agent(cfg: &AgentConfig, self_info: SelfInfo) -> Self {
        Self {
            client_id: cfg.client_id.clone(),
            session_id: cfg.session_id.clone(),
            payload_size: cfg.payload_size,
            send_interval_us: cfg.send_interval_ms * 1000,
            stats_interval_us: cfg.stats_interval_ms * 1000,
            handshake_deadline_us: HANDSHAKE_DEADLINE_MS * 1000,
            max_retransmits: MAX_RETRANSMITS,
            self_info,
        }
    }

    /// Hellos are spread so the last retransmit still lands before the deadline.
    fn retransmit_interval_us(&self) -> u64 {
        self.handshake_deadline_us / (u64::from(self.max_retransmits) + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailReason {
    /// The peer never sent its datagram address over signaling.
    NoCandidate,
    /// Addresses were exchanged but no handshake completed in time.
    HandshakeTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "state", content = "reason")]
pub enum LinkState {
    Connecting,
    Established,
    Failed(FailReason),
}

/// Relay payloads agents exchange through signaling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SignalPayload {
    Candidate { addr: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Datagram { to: SocketAddr, bytes: Vec<u8> },
    Signal(Envelope),
    Record(MeasurementRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSnapshot {
    pub peer_id: String,
    pub remote_addr: Option<SocketAddr>,
    pub state: LinkState,
    pub last_seq_sent: u32,
    pub jitter_ms: f64,
    pub latest_rtt_ms: Option<f64>,
    pub probes_sent: u64,
    pub samples: u64,
    pub records: u64,
    pub hellos_sent: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeshStatus {
    pub connecting: usize,
    pub established: usize,
    pub failed: usize,
}

#[derive(Debug)]
struct PeerLink {
    peer_id: String,
    remote: Option<SocketAddr>,
    state: LinkState,
    deadline_us: u64,
    nonce: u64,
    hellos_sent: u32,
    next_hello_us: Option<u64>,
    seq: SeqGenerator,
    next_probe_us: u64,
    jitter: JitterState,
    latest: Option<RttSample>,
    /// A sample arrived since the last stats tick.
    fresh: bool,
    bytes_this_interval: u64,
    probes_sent: u64,
    samples: u64,
    records: u64,
}

impl PeerLink {
    fn snapshot(&self) -> LinkSnapshot {
        LinkSnapshot {
            peer_id: self.peer_id.clone(),
            remote_addr: self.remote,
            state: self.state,
            last_seq_sent: self.seq.last(),
            jitter_ms: self.jitter.j_ms,
            latest_rtt_ms: self.latest.as_ref().map(|s| s.rtt_ms),
            probes_sent: self.probes_sent,
            samples: self.samples,
            records: self.records,
            hellos_sent: self.hellos_sent,
        }
    }
}

pub struct MeshEngine {
    cfg: EngineConfig,
    local: SocketAddr,
    advertised: Option<SocketAddr>,
    roster: SessionRoster,
    links: BTreeMap<String, PeerLink>,
    by_addr: HashMap<SocketAddr, String>,
    rng: StdRng,
    next_stats_us: u64,
    out: VecDeque<Output>,
    records_emitted: u64,
}

impl MeshEngine {
    /// `local` is the datagram socket's bound address; when its IP is
    /// unspecified the IP the signaling server observed is advertised.
    pub fn new(cfg: EngineConfig, local: SocketAddr, now: Now, seed: u64) -> Self {
        Self {
            next_stats_us: now.mono_us + cfg.stats_interval_us,
            roster: SessionRoster::empty(&cfg.session_id),
            cfg,
            local,
            advertised: None,
            links: BTreeMap::new(),
            by_addr: HashMap::new(),
            rng: StdRng::seed_from_u64(seed),
            out: VecDeque::new(),
            records_emitted: 0,
        }
    }

    pub fn client_id(&self) -> &str {
        &self.cfg.client_id
    }

    pub fn roster(&self) -> &SessionRoster {
        &self.roster
    }

    pub fn advertised_addr(&self) -> Option<SocketAddr> {
        self.advertised
    }

    pub fn records_emitted(&self) -> u64 {
        self.records_emitted
    }

    pub fn drain(&mut self) -> std::collections::vec_deque::Drain<'_, Output> {
        self.out.drain(..)
    }

    pub fn links(&self) -> Vec<LinkSnapshot> {
        self.links.values().map(PeerLink::snapshot).collect()
    }

    pub fn link(&self, peer_id: &str) -> Option<LinkSnapshot> {
        self.links.get(peer_id).map(PeerLink::snapshot)
    }

    pub fn status(&self) -> MeshStatus {
        let mut s = MeshStatus::default();
        for l in self.links.values() {
            match l.state {
                LinkState::Connecting => s.connecting += 1,
                LinkState::Established => s.established += 1,
                LinkState::Failed(_) => s.failed += 1,
            }
        }
        s
    }

    pub fn leave_envelope(&self) -> Envelope {
        Envelope::new(EnvelopeKind::Leave, &self.cfg.session_id).from(&self.cfg.client_id)
    }

    /// Earliest instant at which [`poll`](Self::poll) has work to do.
    pub fn next_wakeup_us(&self) -> u64 {
        let mut t = self.next_stats_us;
        for l in self.links.values() {
            match l.state {
                LinkState::Connecting => {
                    t = t.min(l.deadline_us);
                    if let Some(h) = l.next_hello_us {
                        t = t.min(h);
                    }
                }
                LinkState::Established => t = t.min(l.next_probe_us),
                LinkState::Failed(_) => {}
            }
        }
        t
    }

    pub fn on_signal(&mut self, env: &Envelope, now: Now) {
        match env.kind {
            EnvelopeKind::Joined => {
                if !self.roster.apply(env) {
                    warn!("unreadable roster in joined envelope");
                    return;
                }
                self.advertised = self.roster.get(&self.cfg.client_id).and_then(|me| {
                    let observed: SocketAddr = me.observed_addr.parse().ok()?;
                    let ip: IpAddr = if self.local.ip().is_unspecified() {
                        observed.ip()
                    } else {
                        self.local.ip()
                    };
                    Some(SocketAddr::new(ip, self.local.port()))
                });
                let peers: Vec<String> = self
                    .roster
                    .members
                    .iter()
                    .map(|m| m.client_id.clone())
                    .filter(|id| *id != self.cfg.client_id)
                    .collect();
                info!(client = %self.cfg.client_id, peers = peers.len(), advertised = ?self.advertised, "joined");
                for id in peers {
                    self.add_link(&id, now);
                    self.send_candidate(&id);
                }
            }
            EnvelopeKind::PeerJoined => {
                if !self.roster.apply(env) {
                    return;
                }
                if let Some(id) = env.from.clone() {
                    if id != self.cfg.client_id {
                        self.add_link(&id, now);
                        self.send_candidate(&id);
                    }
                }
            }
            EnvelopeKind::PeerLeft => {
                self.roster.apply(env);
                if let Some(id) = &env.from {
                    if let Some(link) = self.links.remove(id) {
                        info!(client = %self.cfg.client_id, peer = %id, "peer left");
                        if let Some(addr) = link.remote {
                            self.by_addr.remove(&addr);
                        }
                    }
                }
            }
            EnvelopeKind::Relay => {
                let Some(from) = env.from.as_deref() else {
                    return;
                };
                match serde_json::from_str::<SignalPayload>(&env.payload) {
                    Ok(SignalPayload::Candidate { addr }) => match addr.parse::<SocketAddr>() {
                        Ok(addr) => self.on_candidate(from, addr, now),
                        Err(_) => warn!(peer = %from, %addr, "unparseable candidate address"),
                    },
                    Err(_) => debug!(peer = %from, "ignoring unknown relay payload"),
                }
            }
            EnvelopeKind::Error => {
                warn!(client = %self.cfg.client_id, payload = %env.payload, "signaling error")
            }
            _ => {}
        }
    }

    fn add_link(&mut self, peer_id: &str, now: Now) {
        if self.links.contains_key(peer_id) {
            return;
        }
        let nonce = self.rng.random_range(1..=u64::MAX);
        self.links.insert(
            peer_id.to_string(),
            PeerLink {
                peer_id: peer_id.to_string(),
                remote: None,
                state: LinkState::Connecting,
                deadline_us: now.mono_us + self.cfg.handshake_deadline_us,
                nonce,
                hellos_sent: 0,
                next_hello_us: None,
                seq: SeqGenerator::new(),
                next_probe_us: u64::MAX,
                jitter: JitterState::new(),
                latest: None,
                fresh: false,
                bytes_this_interval: 0,
                probes_sent: 0,
                samples: 0,
                records: 0,
            },
        );
    }

    fn send_candidate(&mut self, peer_id: &str) {
        let Some(addr) = self.advertised else { return };
        let payload = serde_json::to_string(&SignalPayload::Candidate {
            addr: addr.to_string(),
        })
        .expect("payload serializes");
        self.out.push_back(Output::Signal(Envelope::relay(
            &self.cfg.session_id,
            &self.cfg.client_id,
            peer_id,
            payload,
        )));
    }

    fn bind_addr(&mut self, peer_id: &str, addr: SocketAddr) {
        let Some(link) = self.links.get_mut(peer_id) else {
            return;
        };
        if link.remote == Some(addr) {
            return;
        }
        if let Some(old) = link.remote.replace(addr) {
            self.by_addr.remove(&old);
        }
        self.by_addr.insert(addr, peer_id.to_string());
    }

    fn on_candidate(&mut self, peer_id: &str, addr: SocketAddr, now: Now) {
        let Some(link) = self.links.get(peer_id) else {
            debug!(peer = %peer_id, "candidate for a peer outside the roster");
            return;
        };
        if link.state != LinkState::Connecting {
            return;
        }
        self.bind_addr(peer_id, addr);
        let link = self.links.get_mut(peer_id).expect("checked above");
        if link.next_hello_us.is_none() && link.hellos_sent == 0 {
            link.next_hello_us = Some(now.mono_us);
        }
        self.service(peer_id, now);
    }

    pub fn on_datagram(&mut self, from: SocketAddr, bytes: &[u8], now: Now) {
        match handshake::decode(bytes) {
            Ok(Datagram::Probe(ProbeMessage::Request(req))) => {
                self.answer_probe(from, &req, bytes.len(), now)
            }
            Ok(Datagram::Probe(ProbeMessage::Response(resp))) => self.on_response(from, &resp, now),
            Ok(Datagram::Handshake(h)) => self.on_handshake(from, h, now),
            Err(e) => debug!(%from, "dropping datagram: {e}"),
        }
    }

    fn answer_probe(&mut self, from: SocketAddr, req: &ProbeRequest, len: usize, now: Now) {
        // Echo immediately; receive and send stamps are the same instant.
        let resp = ProbeResponse::echo(req, now.mono_us, now.mono_us);
        self.out.push_back(Output::Datagram {
            to: from,
            bytes: probe::encode_response(&resp, len),
        });
    }

    fn on_response(&mut self, from: SocketAddr, resp: &ProbeResponse, now: Now) {
        let Some(peer_id) = self.by_addr.get(&from) else {
            return;
        };
        let Some(link) = self.links.get_mut(peer_id) else {
            return;
        };
        if link.state != LinkState::Established || resp.seq == 0 || resp.seq > link.seq.last() {
            return;
        }
        let sample = match probe::rtt_from_response(peer_id.clone(), resp, now.mono_us, now.wall_ms)
        {
            Ok(s) => s,
            Err(e) => {
                warn!(peer = %peer_id, "discarding response: {e}");
                return;
            }
        };
        link.jitter.observe(sample.rtt_ms);
        link.samples += 1;
        link.fresh = true;
        if link.latest.as_ref().is_none_or(|l| sample.seq > l.seq) {
            link.latest = Some(sample);
        }
    }

    fn handshake_datagram(&mut self, to: SocketAddr, kind: HandshakeKind, nonce: u64, echo: u64) {
        let h = Handshake {
            kind,
            nonce,
            echo,
            client_id: self.cfg.client_id.clone(),
        };
        match handshake::encode(&h) {
            Ok(bytes) => self.out.push_back(Output::Datagram { to, bytes }),
            Err(e) => warn!("cannot encode handshake: {e}"),
        }
    }

    fn on_handshake(&mut self, from: SocketAddr, h: Handshake, now: Now) {
        let peer = h.client_id.clone();
        let Some(link) = self.links.get(&peer) else {
            // Not in our roster yet; the peer keeps retransmitting.
            debug!(%peer, "handshake from unknown peer");
            return;
        };
        let (nonce, state) = (link.nonce, link.state);
        if matches!(state, LinkState::Failed(_)) {
            return;
        }
        // The datagram's source is the most direct evidence of where the
        // peer is reachable.
        self.bind_addr(&peer, from);
        match h.kind {
            HandshakeKind::Hello => {
                self.handshake_datagram(from, HandshakeKind::HelloAck, nonce, h.nonce);
            }
            HandshakeKind::HelloAck if h.echo == nonce => {
                self.handshake_datagram(from, HandshakeKind::Ack, nonce, h.nonce);
                self.establish(&peer, now);
            }
            HandshakeKind::Ack if h.echo == nonce => self.establish(&peer, now),
            _ => debug!(%peer, "stale handshake nonce"),
        }
    }

    fn establish(&mut self, peer_id: &str, now: Now) {
        let link = self.links.get_mut(peer_id).expect("caller checked");
        if link.state != LinkState::Connecting {
            return;
        }
        link.state = LinkState::Established;
        link.next_hello_us = None;
        link.next_probe_us = now.mono_us;
        info!(client = %self.cfg.client_id, peer = %peer_id, remote = ?link.remote, "link established");
        self.service(peer_id, now);
    }

    /// Runs every timer that is due.
    pub fn poll(&mut self, now: Now) {
        let ids: Vec<String> = self.links.keys().cloned().collect();
        for id in ids {
            self.service(&id, now);
        }
        if now.mono_us >= self.next_stats_us {
            self.stats_tick(now);
            while self.next_stats_us <= now.mono_us {
                self.next_stats_us += self.cfg.stats_interval_us;
            }
        }
    }

    fn service(&mut self, peer_id: &str, now: Now) {
        let retransmit = self.cfg.retransmit_interval_us();
        let max_sends = self.cfg.max_retransmits + 1;
        let Some(link) = self.links.get_mut(peer_id) else {
            return;
        };
        match link.state {
            LinkState::Connecting => {
                if now.mono_us >= link.deadline_us {
                    let reason = if link.remote.is_none() {
                        FailReason::NoCandidate
                    } else {
                        FailReason::HandshakeTimeout
                    };
                    link.state = LinkState::Failed(reason);
                    link.next_hello_us = None;
                    warn!(client = %self.cfg.client_id, peer = %peer_id, ?reason, "link failed");
                    return;
                }
                let (Some(to), Some(at)) = (link.remote, link.next_hello_us) else {
                    return;
                };
                if now.mono_us < at {
                    return;
                }
                link.hellos_sent += 1;
                link.next_hello_us = (link.hellos_sent < max_sends).then_some(at + retransmit);
                let nonce = link.nonce;
                self.handshake_datagram(to, HandshakeKind::Hello, nonce, 0);
            }
            LinkState::Established => {
                if now.mono_us < link.next_probe_us {
                    return;
                }
                let Some(to) = link.remote else { return };
                let Some(seq) = link.seq.next_seq() else {
                    warn!(peer = %peer_id, "sequence space exhausted");
                    link.next_probe_us = u64::MAX;
                    return;
                };
                while link.next_probe_us <= now.mono_us {
                    link.next_probe_us += self.cfg.send_interval_us;
                }
                let req = ProbeRequest {
                    seq,
                    send_ts_us: now.mono_us,
                };
                let bytes = probe::encode_request(&req, self.cfg.payload_size)
                    .expect("payload size validated against the header length");
                link.probes_sent += 1;
                link.bytes_this_interval += bytes.len() as u64;
                self.out.push_back(Output::Datagram { to, bytes });
            }
            LinkState::Failed(_) => {}
        }
    }

    /// Emits one record per established link that produced a sample since
    /// the previous tick, carrying the latest sample. Drivers also call this
    /// once at shutdown so the last interval is reported.
    pub fn stats_tick(&mut self, now: Now) {
        for link in self.links.values_mut() {
            let bytes = std::mem::take(&mut link.bytes_this_interval);
            if link.state != LinkState::Established || !link.fresh {
                continue;
            }
            link.fresh = false;
            let Some(sample) = &link.latest else { continue };
            let mut rec = MeasurementRecord::new(
                now.wall_ms,
                &self.cfg.client_id,
                &link.peer_id,
                sample.rtt_ms,
            );
            rec.your_ip = self.cfg.self_info.ip.clone();
            rec.your_isp = self.cfg.self_info.isp.clone();
            rec.extra.insert(EXT_BYTES_SENT.into(), json!(bytes));
            rec.extra
                .insert(EXT_JITTER_MS.into(), json!(link.jitter.j_ms));
            if let Err(e) = rec.validate() {
                warn!(peer = %link.peer_id, "not emitting invalid record: {e}");
                continue;
            }
            link.records += 1;
            self.records_emitted += 1;
            self.out.push_back(Output::Record(rec));
        }
    }
}
