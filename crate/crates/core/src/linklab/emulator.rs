use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::LinkSpec;
use crate::probe::{self, ProbeMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Reverse => 1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// Deliver at this emulator time, microseconds.
    At(u64),
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthEntry {
    /// Per-direction datagram counter, from 1.
    pub datagram: u64,
    /// Probe sequence number when the datagram is a probe request or response.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq: Option<u32>,
    pub direction: Direction,
    pub sent_at_us: u64,
    /// Delay actually applied, including any FIFO hold-back. Zero when dropped.
    pub injected_delay_us: u64,
    pub injected_delay_ms: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthLog {
    pub entries: Vec<GroundTruthEntry>,
}

impl GroundTruthLog {
    /// Applied delay of the delivered probe with `seq` in `direction`.
    pub fn delay_us(&self, direction: Direction, seq: u32) -> Option<u64> {
        self.entries
            .iter()
            .find(|e| e.direction == direction && e.seq == Some(seq) && !e.dropped)
            .map(|e| e.injected_delay_us)
    }

    /// Per-seq applied delays for one direction, delivered datagrams only.
    pub fn delays_by_seq(&self, direction: Direction) -> BTreeMap<u32, u64> {
        self.entries
            .iter()
            .filter(|e| e.direction == direction && !e.dropped)
            .filter_map(|e| e.seq.map(|s| (s, e.injected_delay_us)))
            .collect()
    }

    /// One JSON object per line, each tagged with `scenario`.
    pub fn to_ndjson(&self, scenario: &str) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let mut v = serde_json::to_value(e).expect("entry serializes");
            v.as_object_mut()
                .expect("object")
                .insert("scenario".into(), scenario.into());
            let _ = writeln!(out, "{v}");
        }
        out
    }
}

/// One two-way link. Each direction draws from its own seeded stream, so the
/// sequence of decisions per direction depends only on the spec and on how
/// many datagrams went that way.
#[derive(Debug, Clone)]
pub struct LinkEmulator {
    spec: LinkSpec,
    rng: [ChaCha8Rng; 2],
    last_delivery_us: [Option<u64>; 2],
    counters: [u64; 2],
    log: GroundTruthLog,
}

impl LinkEmulator {
    pub fn new(spec: LinkSpec) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(s);
            r
        };
        Self {
            rng: [stream(1), stream(2)],
            spec,
            last_delivery_us: [None; 2],
            counters: [0; 2],
            log: GroundTruthLog::default(),
        }
    }

    pub fn spec(&self) -> &LinkSpec {
        &self.spec
    }

    pub fn log(&self) -> &GroundTruthLog {
        &self.log
    }

    pub fn into_log(self) -> GroundTruthLog {
        self.log
    }

    /// Decides the fate of one datagram sent at `now_us`.
    pub fn emulate(&mut self, direction: Direction, now_us: u64, seq: Option<u32>) -> Delivery {
        let i = direction.index();
        let (base, jitter) = match direction {
            Direction::Forward => (self.spec.forward_delay_ms, self.spec.forward_jitter_ms),
            Direction::Reverse => (self.spec.reverse_delay_ms, self.spec.reverse_jitter_ms),
        };
        // Both draws happen for every datagram so the stream stays aligned
        // whatever the loss outcome.
        let loss_draw: f64 = self.rng[i].random();
        let jitter_draw: f64 = self.rng[i].random();
        let dropped = loss_draw < self.spec.loss_prob;
        self.counters[i] += 1;

        let (delivery, applied_us) = if dropped {
            (Delivery::Dropped, 0)
        } else {
            let delay_ms = base + jitter_draw * jitter;
            let mut at = now_us + (delay_ms * 1000.0).round() as u64;
            if !self.spec.reorder {
                if let Some(last) = self.last_delivery_us[i] {
                    at = at.max(last);
                }
            }
            self.last_delivery_us[i] = Some(at);
            (Delivery::At(at), at - now_us)
        };
        self.log.entries.push(GroundTruthEntry {
            datagram: self.counters[i],
            seq,
            direction,
            sent_at_us: now_us,
            injected_delay_us: applied_us,
            injected_delay_ms: applied_us as f64 / 1000.0,
            dropped,
        });
        delivery
    }

    /// Like [`emulate`](Self::emulate), tagging the log entry with the probe
    /// seq when `datagram` decodes as a probe.
    pub fn emulate_datagram(
        &mut self,
        direction: Direction,
        now_us: u64,
        datagram: &[u8],
    ) -> Delivery {
        let seq = match probe::decode(datagram) {
            Ok(ProbeMessage::Request(r)) => Some(r.seq),
            Ok(ProbeMessage::Response(r)) => Some(r.seq),
            Err(_) => None,
        };
        self.emulate(direction, now_us, seq)
    }
}

/// A set of links between endpoints. A link registered as `(a, b)` treats
/// `a -> b` as forward. Pairs without a registered link use `default`.
#[derive(Debug, Clone)]
pub struct NetworkEmulator<A: Ord + Clone> {
    default: LinkSpec,
    links: BTreeMap<(A, A), LinkEmulator>,
}

impl<A: Ord + Clone> NetworkEmulator<A> {
    pub fn new(default: LinkSpec) -> Self {
        Self {
            default,
            links: BTreeMap::new(),
        }
    }

    pub fn set_link(&mut self, a: A, b: A, spec: LinkSpec) {
        self.links.remove(&(b.clone(), a.clone()));
        self.links.insert((a, b), LinkEmulator::new(spec));
    }

    fn route(&mut self, src: &A, dst: &A) -> (&mut LinkEmulator, Direction) {
        let fwd = (src.clone(), dst.clone());
        let rev = (dst.clone(), src.clone());
        if self.links.contains_key(&fwd) {
            (
                self.links.get_mut(&fwd).expect("present"),
                Direction::Forward,
            )
        } else if self.links.contains_key(&rev) {
            (
                self.links.get_mut(&rev).expect("present"),
                Direction::Reverse,
            )
        } else {
            let spec = self.default.clone();
            (
                self.links
                    .entry(fwd)
                    .or_insert_with(|| LinkEmulator::new(spec)),
                Direction::Forward,
            )
        }
    }

    pub fn send(&mut self, src: &A, dst: &A, now_us: u64, datagram: &[u8]) -> Delivery {
        let (link, dir) = self.route(src, dst);
        link.emulate_datagram(dir, now_us, datagram)
    }

    pub fn links(&self) -> impl Iterator<Item = (&(A, A), &LinkEmulator)> {
        self.links.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_link_delivers_immediately() {
        let mut l = LinkEmulator::new(LinkSpec::default());
        assert_eq!(
            l.emulate(Direction::Forward, 500, Some(1)),
            Delivery::At(500)
        );
        assert_eq!(l.log().entries[0].injected_delay_ms, 0.0);
        assert!(!l.log().entries[0].dropped);
    }

    #[test]
    fn constant_forward_only() {
        let mut l = LinkEmulator::new(LinkSpec::constant(10.0));
        for i in 0..50u32 {
            let now = u64::from(i) * 1_000_000;
            assert_eq!(
                l.emulate(Direction::Forward, now, Some(i)),
                Delivery::At(now + 10_000)
            );
            assert_eq!(
                l.emulate(Direction::Reverse, now + 10_000, Some(i)),
                Delivery::At(now + 10_000)
            );
        }
        for e in &l.log().entries {
            let expected = if e.direction == Direction::Forward {
                10.0
            } else {
                0.0
            };
            assert_eq!(e.injected_delay_ms, expected);
        }
    }

    #[test]
    fn jitter_is_bounded_and_deterministic() {
        let spec = LinkSpec::constant(30.0).with_jitter(30.0).with_seed(42);
        let run = || {
            let mut l = LinkEmulator::new(spec.clone());
            for i in 0..1000u32 {
                l.emulate(Direction::Forward, u64::from(i) * 1_000_000, Some(i));
            }
            l.into_log()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a
            .entries
            .iter()
            .all(|e| (30.0..=60.0).contains(&e.injected_delay_ms)));
        let distinct: std::collections::BTreeSet<u64> =
            a.entries.iter().map(|e| e.injected_delay_us).collect();
        assert!(distinct.len() > 500);
        let other = {
            let mut l = LinkEmulator::new(spec.with_seed(43));
            l.emulate(Direction::Forward, 0, Some(0));
            l.into_log()
        };
        assert_ne!(other.entries[0], a.entries[0]);
    }

    #[test]
    fn fifo_clamps_without_reorder() {
        let spec = LinkSpec::constant(0.0).with_jitter(50.0).with_seed(3);
        let mut l = LinkEmulator::new(spec.clone());
        let mut last = 0;
        for i in 0..500u32 {
            // 1 ms apart, so jitter alone would reorder plenty.
            if let Delivery::At(at) = l.emulate(Direction::Forward, u64::from(i) * 1000, Some(i)) {
                assert!(at >= last);
                last = at;
            }
        }
        let mut reordering = LinkEmulator::new(LinkSpec {
            reorder: true,
            ..spec
        });
        let times: Vec<u64> = (0..500u32)
            .filter_map(|i| {
                match reordering.emulate(Direction::Forward, u64::from(i) * 1000, None) {
                    Delivery::At(at) => Some(at),
                    Delivery::Dropped => None,
                }
            })
            .collect();
        assert!(times.windows(2).any(|w| w[1] < w[0]));
    }

    #[test]
    fn loss_extremes() {
        let mut l = LinkEmulator::new(LinkSpec::blackhole());
        assert!((0..100).all(|i| l.emulate(Direction::Forward, i, None) == Delivery::Dropped));
        assert!(l.log().entries.iter().all(|e| e.dropped));
        let mut l = LinkEmulator::new(LinkSpec::default().with_loss(0.3).with_seed(11));
        let drops = (0..10_000)
            .filter(|&i| l.emulate(Direction::Reverse, i, None) == Delivery::Dropped)
            .count();
        assert!((2_700..3_300).contains(&drops), "drops={drops}");
    }

    #[test]
    fn probe_datagrams_are_tagged() {
        let mut l = LinkEmulator::new(LinkSpec::constant(1.0));
        let bytes = probe::encode_request(
            &probe::ProbeRequest {
                seq: 77,
                send_ts_us: 0,
            },
            100,
        )
        .unwrap();
        l.emulate_datagram(Direction::Forward, 0, &bytes);
        l.emulate_datagram(Direction::Forward, 0, b"not a probe");
        assert_eq!(l.log().entries[0].seq, Some(77));
        assert_eq!(l.log().entries[1].seq, None);
        assert_eq!(l.log().delay_us(Direction::Forward, 77), Some(1000));
    }

    #[test]
    fn network_routes_both_directions() {
        let mut net = NetworkEmulator::new(LinkSpec::default());
        net.set_link("a", "b", LinkSpec::constant(5.0));
        assert_eq!(net.send(&"a", &"b", 0, b"x"), Delivery::At(5000));
        assert_eq!(net.send(&"b", &"a", 0, b"x"), Delivery::At(0));
        assert_eq!(net.send(&"a", &"c", 0, b"x"), Delivery::At(0));
        assert_eq!(net.links().count(), 2);
    }

    #[test]
    fn ndjson_has_scenario_tag() {
        let mut l = LinkEmulator::new(LinkSpec::constant(2.0));
        l.emulate(Direction::Forward, 0, Some(1));
        let line = l.log().to_ndjson("s1");
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["scenario"], "s1");
        assert_eq!(v["direction"], "forward");
        assert_eq!(v["injected_delay_ms"], 2.0);
    }
}
