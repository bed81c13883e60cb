use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::emulator::{Delivery, Direction, GroundTruthLog, LinkEmulator};
use super::{LinkError, LinkSpec};
use crate::analysis::{percentile_sorted, Summary};
use crate::jitter::JitterState;
use crate::probe::{
    self, ProbeMessage, ProbeRequest, ProbeResponse, SeqGenerator, DEFAULT_PAYLOAD_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSample {
    pub seq: u32,
    pub measured_ms: f64,
    pub truth_ms: f64,
}

/// Outcome of probing one emulated link.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub name: String,
    pub link: LinkSpec,
    pub n_probes: usize,
    pub interval_ms: f64,
    pub wall_clock: bool,
    pub samples: Vec<ValidationSample>,
    pub measured: Option<Summary>,
    pub truth: Option<Summary>,
    /// measured minus truth for Q1, Q2, Q3, Q4.
    pub quartile_deltas: Option<[f64; 4]>,
    pub mean_delta_ms: Option<f64>,
    /// 95th percentile of per-seq (measured - truth).
    pub delta_p95_ms: Option<f64>,
    pub final_jitter_ms: f64,
    pub ground_truth: GroundTruthLog,
}

impl ValidationReport {
    pub fn no_samples(&self) -> bool {
        self.samples.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn build(
        name: String,
        link: LinkSpec,
        n_probes: usize,
        interval_ms: f64,
        wall_clock: bool,
        mut samples: Vec<ValidationSample>,
        final_jitter_ms: f64,
        ground_truth: GroundTruthLog,
    ) -> Self {
        samples.sort_by_key(|s| s.seq);
        let measured_v: Vec<f64> = samples.iter().map(|s| s.measured_ms).collect();
        let truth_v: Vec<f64> = samples.iter().map(|s| s.truth_ms).collect();
        let measured = Summary::of(&measured_v).ok();
        let truth = Summary::of(&truth_v).ok();
        let (quartile_deltas, mean_delta_ms) = match (&measured, &truth) {
            (Some(m), Some(t)) => {
                let (mq, tq) = (m.quartiles(), t.quartiles());
                (
                    Some([mq[0] - tq[0], mq[1] - tq[1], mq[2] - tq[2], mq[3] - tq[3]]),
                    Some(m.mean - t.mean),
                )
            }
            _ => (None, None),
        };
        let delta_p95_ms = if samples.is_empty() {
            None
        } else {
            let mut d: Vec<f64> = samples.iter().map(|s| s.measured_ms - s.truth_ms).collect();
            d.sort_by(f64::total_cmp);
            Some(percentile_sorted(&d, 95.0))
        };
        Self {
            name,
            link,
            n_probes,
            interval_ms,
            wall_clock,
            samples,
            measured,
            truth,
            quartile_deltas,
            mean_delta_ms,
            delta_p95_ms,
            final_jitter_ms,
            ground_truth,
        }
    }
}

/// Virtual-time event queue; same-instant events run in insertion order.
#[derive(Default)]
struct Scheduler {
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: Vec<Option<Event>>,
}

impl Scheduler {
    fn push(&mut self, at: u64, ev: Event) {
        self.queue.push(Reverse((at, self.events.len() as u64)));
        self.events.push(Some(ev));
    }

    fn pop(&mut self) -> Option<(u64, Event)> {
        let Reverse((at, id)) = self.queue.pop()?;
        let ev = self.events[id as usize]
            .take()
            .expect("each event runs once");
        Some((at, ev))
    }
}

#[derive(Debug)]
enum Event {
    SendRequest,
    AtResponder(Vec<u8>),
    AtSender(Vec<u8>),
}

/// Runs a prober and an echo responder across `link` on a virtual clock.
///
/// The prober sends one request every `interval_ms`; the responder echoes
/// each request the instant it arrives. Processing adds no time, so any
/// difference between measured and ground-truth RTT is a defect.
pub fn run_validation(
    link: &LinkSpec,
    n_probes: usize,
    interval_ms: f64,
) -> Result<ValidationReport, LinkError> {
    run_validation_with(
        link,
        n_probes,
        interval_ms,
        DEFAULT_PAYLOAD_SIZE,
        String::new(),
    )
}

pub fn run_validation_with(
    link: &LinkSpec,
    n_probes: usize,
    interval_ms: f64,
    payload_size: usize,
    name: String,
) -> Result<ValidationReport, LinkError> {
    link.validate()?;
    if n_probes == 0 {
        return Err(LinkError::NoProbes);
    }
    if !(interval_ms.is_finite() && interval_ms > 0.0) {
        return Err(LinkError::Invalid(format!(
            "interval_ms must be positive, got {interval_ms}"
        )));
    }
    let interval_us = (interval_ms * 1000.0).round().max(1.0) as u64;
    let mut emulator = LinkEmulator::new(link.clone());
    let mut seqs = SeqGenerator::new();
    let mut jitter = JitterState::new();
    let mut measured: Vec<(u32, f64)> = Vec::new();

    let mut sched = Scheduler::default();
    for i in 0..n_probes as u64 {
        sched.push(i * interval_us, Event::SendRequest);
    }

    while let Some((now, ev)) = sched.pop() {
        match ev {
            Event::SendRequest => {
                let seq = seqs.next_seq().expect("seq space");
                let req = ProbeRequest {
                    seq,
                    send_ts_us: now,
                };
                let bytes = probe::encode_request(&req, payload_size)
                    .map_err(|e| LinkError::Invalid(e.to_string()))?;
                if let Delivery::At(at) = emulator.emulate(Direction::Forward, now, Some(seq)) {
                    sched.push(at, Event::AtResponder(bytes));
                }
            }
            Event::AtResponder(bytes) => {
                if let Ok(ProbeMessage::Request(req)) = probe::decode(&bytes) {
                    let resp = ProbeResponse::echo(&req, now, now);
                    let out = probe::encode_response(&resp, bytes.len());
                    if let Delivery::At(at) =
                        emulator.emulate(Direction::Reverse, now, Some(req.seq))
                    {
                        sched.push(at, Event::AtSender(out));
                    }
                }
            }
            Event::AtSender(bytes) => {
                if let Ok(ProbeMessage::Response(resp)) = probe::decode(&bytes) {
                    let sample = probe::rtt_from_response("responder", &resp, now, now / 1000)
                        .map_err(|e| LinkError::Invalid(e.to_string()))?;
                    jitter.observe(sample.rtt_ms);
                    measured.push((sample.seq, sample.rtt_ms));
                }
            }
        }
    }

    let log = emulator.into_log();
    let fwd = log.delays_by_seq(Direction::Forward);
    let rev = log.delays_by_seq(Direction::Reverse);
    let samples = measured
        .into_iter()
        .map(|(seq, measured_ms)| {
            let truth_us = fwd[&seq] + rev[&seq];
            ValidationSample {
                seq,
                measured_ms,
                truth_ms: truth_us as f64 / 1000.0,
            }
        })
        .collect();
    Ok(ValidationReport::build(
        name,
        link.clone(),
        n_probes,
        interval_ms,
        false,
        samples,
        jitter.j_ms,
        log,
    ))
}
