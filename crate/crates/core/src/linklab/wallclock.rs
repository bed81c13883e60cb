//! Wall-clock emulation over real loopback sockets, for measuring how much a
//! native probe adds on top of the injected delays.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::emulator::{Delivery, Direction, LinkEmulator};
use super::validation::{ValidationReport, ValidationSample};
use super::{LinkError, LinkSpec};
use crate::jitter::JitterState;
use crate::probe::{
    self, ProbeMessage, ProbeRequest, ProbeResponse, SeqGenerator, DEFAULT_PAYLOAD_SIZE,
};

struct Pending {
    at: Instant,
    order: u64,
    to: SocketAddr,
    bytes: Vec<u8>,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

/// A thread that sends datagrams from its own socket at scheduled instants.
///
/// Dropping the handle stops the thread once the queue is drained.
pub struct DelayLine {
    tx: Option<mpsc::Sender<Pending>>,
    order: u64,
    worker: Option<JoinHandle<()>>,
}

impl DelayLine {
    pub fn new(socket: UdpSocket) -> Self {
        let (tx, rx) = mpsc::channel::<Pending>();
        let worker = thread::Builder::new()
            .name("delay-line".into())
            .spawn(move || {
                let mut heap: BinaryHeap<Reverse<Pending>> = BinaryHeap::new();
                let mut open = true;
                while open || !heap.is_empty() {
                    let now = Instant::now();
                    while heap.peek().is_some_and(|Reverse(p)| p.at <= now) {
                        let Reverse(p) = heap.pop().expect("peeked");
                        let _ = socket.send_to(&p.bytes, p.to);
                    }
                    let next = heap.peek().map(|Reverse(p)| p.at);
                    let incoming = match (next, open) {
                        (Some(at), true) => rx
                            .recv_timeout(at.saturating_duration_since(Instant::now()))
                            .map_err(|e| e == RecvTimeoutError::Disconnected),
                        (None, true) => rx.recv().map_err(|_| true),
                        (Some(at), false) => {
                            thread::sleep(at.saturating_duration_since(Instant::now()));
                            continue;
                        }
                        (None, false) => break,
                    };
                    match incoming {
                        Ok(p) => heap.push(Reverse(p)),
                        Err(true) => open = false,
                        Err(false) => {}
                    }
                }
            })
            .expect("spawn delay line");
        Self {
            tx: Some(tx),
            order: 0,
            worker: Some(worker),
        }
    }

    pub fn send_at(&mut self, at: Instant, to: SocketAddr, bytes: Vec<u8>) {
        self.order += 1;
        if let Some(tx) = &self.tx {
            let _ = tx.send(Pending {
                at,
                order: self.order,
                to,
                bytes,
            });
        }
    }
}

impl Drop for DelayLine {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Sends `bytes` now or via the delay line, per the emulator's decision.
fn dispatch(
    emu: &Mutex<LinkEmulator>,
    line: &Mutex<DelayLine>,
    epoch: Instant,
    direction: Direction,
    to: SocketAddr,
    bytes: Vec<u8>,
) {
    let now = Instant::now();
    let now_us = now.duration_since(epoch).as_micros() as u64;
    let decision = emu
        .lock()
        .expect("emulator lock")
        .emulate_datagram(direction, now_us, &bytes);
    if let Delivery::At(at_us) = decision {
        let at = epoch + Duration::from_micros(at_us);
        line.lock().expect("delay line lock").send_at(at, to, bytes);
    }
}

/// Like [`run_validation`](super::run_validation) but over two UDP sockets on
/// 127.0.0.1 with real time. The measured RTT then includes socket, thread
/// wake-up and scheduling overhead on top of the injected delays.
pub fn run_validation_wallclock(
    link: &LinkSpec,
    n_probes: usize,
    interval_ms: f64,
) -> Result<ValidationReport, LinkError> {
    link.validate()?;
    if n_probes == 0 {
        return Err(LinkError::NoProbes);
    }
    let interval = Duration::from_secs_f64(interval_ms / 1000.0);
    let prober = UdpSocket::bind("127.0.0.1:0")?;
    let responder = UdpSocket::bind("127.0.0.1:0")?;
    let responder_addr = responder.local_addr()?;
    prober.set_read_timeout(Some(Duration::from_millis(50)))?;
    responder.set_read_timeout(Some(Duration::from_millis(50)))?;

    let epoch = Instant::now();
    let emu = Arc::new(Mutex::new(LinkEmulator::new(link.clone())));
    let forward_line = Arc::new(Mutex::new(DelayLine::new(prober.try_clone()?)));
    let reverse_line = Arc::new(Mutex::new(DelayLine::new(responder.try_clone()?)));
    let stop = Arc::new(AtomicBool::new(false));

    let responder_thread = {
        let (emu, line, stop) = (emu.clone(), reverse_line.clone(), stop.clone());
        thread::spawn(move || {
            let mut buf = [0u8; 2048];
            while !stop.load(Ordering::Relaxed) {
                let Ok((len, from)) = responder.recv_from(&mut buf) else {
                    continue;
                };
                let recv_us = epoch.elapsed().as_micros() as u64;
                if let Ok(ProbeMessage::Request(req)) = probe::decode(&buf[..len]) {
                    let send_us = epoch.elapsed().as_micros() as u64;
                    let out =
                        probe::encode_response(&ProbeResponse::echo(&req, recv_us, send_us), len);
                    dispatch(&emu, &line, epoch, Direction::Reverse, from, out);
                }
            }
        })
    };

    let receiver_thread = {
        let stop = stop.clone();
        let prober = prober.try_clone()?;
        thread::spawn(move || {
            let mut got: Vec<(u32, f64)> = Vec::new();
            let mut jitter = JitterState::new();
            let mut buf = [0u8; 2048];
            while !stop.load(Ordering::Relaxed) {
                let Ok((len, _)) = prober.recv_from(&mut buf) else {
                    continue;
                };
                let now_us = epoch.elapsed().as_micros() as u64;
                if let Ok(ProbeMessage::Response(resp)) = probe::decode(&buf[..len]) {
                    if let Ok(s) = probe::rtt_from_response("responder", &resp, now_us, 0) {
                        jitter.observe(s.rtt_ms);
                        got.push((s.seq, s.rtt_ms));
                    }
                }
            }
            (got, jitter.j_ms)
        })
    };

    let mut seqs = SeqGenerator::new();
    for i in 0..n_probes as u32 {
        let due = epoch + interval * i;
        thread::sleep(due.saturating_duration_since(Instant::now()));
        let seq = seqs.next_seq().expect("seq space");
        let send_us = epoch.elapsed().as_micros() as u64;
        let bytes = probe::encode_request(
            &ProbeRequest {
                seq,
                send_ts_us: send_us,
            },
            DEFAULT_PAYLOAD_SIZE,
        )
        .map_err(|e| LinkError::Invalid(e.to_string()))?;
        dispatch(
            &emu,
            &forward_line,
            epoch,
            Direction::Forward,
            responder_addr,
            bytes,
        );
    }
    let max_rtt_ms = link.forward_delay_ms
        + link.forward_jitter_ms
        + link.reverse_delay_ms
        + link.reverse_jitter_ms;
    thread::sleep(Duration::from_secs_f64(max_rtt_ms / 1000.0) + Duration::from_millis(200));
    stop.store(true, Ordering::Relaxed);
    let _ = responder_thread.join();
    let (measured, final_jitter) = receiver_thread.join().expect("receiver thread");

    let log = emu.lock().expect("emulator lock").log().clone();
    let fwd = log.delays_by_seq(Direction::Forward);
    let rev = log.delays_by_seq(Direction::Reverse);
    let mut truth_by_seq: BTreeMap<u32, u64> = BTreeMap::new();
    for (seq, f) in &fwd {
        if let Some(r) = rev.get(seq) {
            truth_by_seq.insert(*seq, f + r);
        }
    }
    let samples = measured
        .into_iter()
        .filter_map(|(seq, measured_ms)| {
            truth_by_seq.get(&seq).map(|t| ValidationSample {
                seq,
                measured_ms,
                truth_ms: *t as f64 / 1000.0,
            })
        })
        .collect();
    Ok(ValidationReport::build(
        String::new(),
        link.clone(),
        n_probes,
        interval_ms,
        true,
        samples,
        final_jitter,
        log,
    ))
}
