//! Deterministic virtual-time runs of whole sessions: several engines, an
//! in-process signaling registry and a link emulator on one clock. Signaling
//! is instantaneous; datagrams take whatever the emulator decides.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};

use meshmeter_core::linklab::{Delivery, LinkSpec, NetworkEmulator};
use meshmeter_core::MeasurementRecord;
use meshmeter_signaling::{Envelope, EnvelopeKind, Registry};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver};

use crate::engine::{
    EngineConfig, LinkSnapshot, MeshEngine, Now, Output, HANDSHAKE_DEADLINE_MS, MAX_RETRANSMITS,
};
use crate::lookup::SelfInfo;

const WALL_EPOCH_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub session_id: String,
    pub payload_size: usize,
    pub send_interval_ms: u64,
    pub stats_interval_ms: u64,
    pub default_link: LinkSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            session_id: "sim".into(),
            payload_size: 100,
            send_interval_ms: 1000,
            stats_interval_ms: 1000,
            default_link: LinkSpec::default(),
        }
    }
}

enum Event {
    Join(usize),
    Leave(usize),
    Datagram {
        to: usize,
        from: SocketAddr,
        bytes: Vec<u8>,
    },
}

struct Node {
    id: String,
    addr: SocketAddr,
    engine: Option<MeshEngine>,
    inbox: Option<UnboundedReceiver<Envelope>>,
}

pub struct Simulation {
    cfg: SimConfig,
    nodes: Vec<Node>,
    by_addr: HashMap<SocketAddr, usize>,
    registry: Registry,
    net: NetworkEmulator<String>,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: HashMap<u64, Event>,
    next_event: u64,
    now_us: u64,
    records: Vec<MeasurementRecord>,
}

fn clock(us: u64) -> Now {
    Now {
        mono_us: us,
        wall_ms: WALL_EPOCH_MS + us / 1000,
    }
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Self {
        Self {
            net: NetworkEmulator::new(cfg.default_link.clone()),
            cfg,
            nodes: Vec::new(),
            by_addr: HashMap::new(),
            registry: Registry::new(64),
            queue: BinaryHeap::new(),
            events: HashMap::new(),
            next_event: 0,
            now_us: 0,
            records: Vec::new(),
        }
    }

    /// Adds a node that joins at `join_at_ms`.
    pub fn add_node(&mut self, id: &str, join_at_ms: u64) -> usize {
        let i = self.nodes.len();
        let addr = SocketAddr::new(
            IpAddr::V4(Ipv4Addr::new(10, 0, (i / 250) as u8, (i % 250 + 1) as u8)),
            40_000,
        );
        self.nodes.push(Node {
            id: id.to_string(),
            addr,
            engine: None,
            inbox: None,
        });
        self.by_addr.insert(addr, i);
        self.schedule(join_at_ms * 1000, Event::Join(i));
        i
    }

    pub fn leave_at(&mut self, node: usize, at_ms: u64) {
        self.schedule(at_ms * 1000, Event::Leave(node));
    }

    pub fn set_link(&mut self, a: &str, b: &str, spec: LinkSpec) {
        self.net.set_link(a.to_string(), b.to_string(), spec);
    }

    fn schedule(&mut self, at_us: u64, ev: Event) {
        let id = self.next_event;
        self.next_event += 1;
        self.queue.push(Reverse((at_us, id)));
        self.events.insert(id, ev);
    }

    pub fn now_ms(&self) -> u64 {
        self.now_us / 1000
    }

    pub fn records(&self) -> &[MeasurementRecord] {
        &self.records
    }

    pub fn links(&self, id: &str) -> Vec<LinkSnapshot> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .and_then(|n| n.engine.as_ref())
            .map(|e| e.links())
            .unwrap_or_default()
    }

    pub fn engine(&self, id: &str) -> Option<&MeshEngine> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .and_then(|n| n.engine.as_ref())
    }

    /// Advances virtual time to `until_ms`, processing every event and timer
    /// due at or before it.
    pub fn run_until(&mut self, until_ms: u64) {
        let until = until_ms * 1000;
        loop {
            let next_event = self.queue.peek().map(|Reverse((t, _))| *t);
            let next_timer = self
                .nodes
                .iter()
                .filter_map(|n| n.engine.as_ref().map(|e| e.next_wakeup_us()))
                .min();
            let next = match (next_event, next_timer) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => match a.or(b) {
                    Some(t) => t,
                    None => break,
                },
            };
            if next > until {
                break;
            }
            self.now_us = next;
            if next_event == Some(next) {
                let Reverse((_, id)) = self.queue.pop().expect("peeked");
                let ev = self.events.remove(&id).expect("scheduled");
                self.handle(ev);
            } else {
                for i in 0..self.nodes.len() {
                    if let Some(e) = self.nodes[i].engine.as_mut() {
                        if e.next_wakeup_us() <= next {
                            e.poll(clock(next));
                        }
                    }
                }
            }
            self.settle();
        }
        self.now_us = until;
    }

    /// Reports every node's interval in progress, as a driver does on exit.
    pub fn finish(&mut self) {
        let now = clock(self.now_us);
        for n in &mut self.nodes {
            if let Some(e) = n.engine.as_mut() {
                e.stats_tick(now);
            }
        }
        self.settle();
    }

    fn handle(&mut self, ev: Event) {
        let now = clock(self.now_us);
        match ev {
            Event::Join(i) => {
                let (tx, rx) = unbounded_channel();
                let node = &mut self.nodes[i];
                let cfg = EngineConfig {
                    client_id: node.id.clone(),
                    session_id: self.cfg.session_id.clone(),
                    payload_size: self.cfg.payload_size,
                    send_interval_us: self.cfg.send_interval_ms * 1000,
                    stats_interval_us: self.cfg.stats_interval_ms * 1000,
                    handshake_deadline_us: HANDSHAKE_DEADLINE_MS * 1000,
                    max_retransmits: MAX_RETRANSMITS,
                    self_info: SelfInfo::stub(),
                };
                node.engine = Some(MeshEngine::new(cfg, node.addr, now, i as u64 + 1));
                node.inbox = Some(rx);
                let addr = node.addr.to_string();
                if let Err(e) = self
                    .registry
                    .join(&self.cfg.session_id, &node.id, &addr, tx)
                {
                    tracing::warn!("sim join failed: {e}");
                }
            }
            Event::Leave(i) => {
                let node = &mut self.nodes[i];
                if let Some(e) = node.engine.as_mut() {
                    e.stats_tick(now);
                }
                let _ = self.registry.leave(&self.cfg.session_id, &node.id);
                self.collect(i);
                let node = &mut self.nodes[i];
                node.engine = None;
                node.inbox = None;
            }
            Event::Datagram { to, from, bytes } => {
                if let Some(e) = self.nodes[to].engine.as_mut() {
                    e.on_datagram(from, &bytes, now);
                }
            }
        }
    }

    /// Delivers signaling and collects outputs until nothing moves.
    fn settle(&mut self) {
        loop {
            let mut moved = false;
            let now = clock(self.now_us);
            for i in 0..self.nodes.len() {
                let node = &mut self.nodes[i];
                if let (Some(engine), Some(inbox)) = (node.engine.as_mut(), node.inbox.as_mut()) {
                    while let Ok(env) = inbox.try_recv() {
                        engine.on_signal(&env, now);
                        moved = true;
                    }
                }
                moved |= self.collect(i);
            }
            if !moved {
                break;
            }
        }
    }

    fn collect(&mut self, i: usize) -> bool {
        let Some(engine) = self.nodes[i].engine.as_mut() else {
            return false;
        };
        let outputs: Vec<Output> = engine.drain().collect();
        let moved = !outputs.is_empty();
        let (src_id, src_addr) = (self.nodes[i].id.clone(), self.nodes[i].addr);
        for out in outputs {
            match out {
                Output::Record(r) => self.records.push(r),
                Output::Signal(env) => {
                    if env.kind == EnvelopeKind::Relay {
                        let _ = self.registry.relay(&env);
                    }
                }
                Output::Datagram { to, bytes } => {
                    let Some(&dst) = self.by_addr.get(&to) else {
                        continue;
                    };
                    let dst_id = self.nodes[dst].id.clone();
                    if let Delivery::At(at) = self.net.send(&src_id, &dst_id, self.now_us, &bytes) {
                        self.schedule(
                            at,
                            Event::Datagram {
                                to: dst,
                                from: src_addr,
                                bytes,
                            },
                        );
                    }
                }
            }
        }
        moved
    }

    /// Records grouped by directed pair.
    pub fn records_by_pair(&self) -> BTreeMap<(String, String), Vec<f64>> {
        let mut m: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            m.entry((r.your_id.clone(), r.peer_id.clone()))
                .or_default()
                .push(r.candidate_pair_rtt);
        }
        m
    }
}
