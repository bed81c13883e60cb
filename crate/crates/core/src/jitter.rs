//! Interarrival jitter estimate over successive RTT samples.
//!
//! The transit difference between consecutive samples is taken as half the RTT
//! delta, and the estimate moves towards `|D|` with gain 1/16.

use crate::probe::RttSample;

const GAIN: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JitterState {
    pub j_ms: f64,
    pub last_transit_ms: Option<f64>,
}

impl JitterState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from a given estimate with no transit history.
    pub fn with_estimate(j_ms: f64) -> Self {
        Self {
            j_ms: j_ms.max(0.0),
            last_transit_ms: None,
        }
    }

    /// Feeds one RTT, using the transit remembered from the previous call.
    pub fn observe(&mut self, rtt_ms: f64) {
        let transit = rtt_ms / 2.0;
        if let Some(last) = self.last_transit_ms {
            self.step(transit - last);
        }
        self.last_transit_ms = Some(transit);
    }

    fn step(&mut self, d: f64) {
        self.j_ms += (d.abs() - self.j_ms) * GAIN;
        // Rounding can leave a tiny negative residue when j and |D| are both near zero.
        if self.j_ms < 0.0 {
            self.j_ms = 0.0;
        }
    }
}

/// Applies one sample. Without a previous sample the estimate is unchanged and
/// only the transit history is seeded.
pub fn update_jitter(
    state: JitterState,
    sample: &RttSample,
    prev_sample: Option<&RttSample>,
) -> JitterState {
    let mut next = state;
    if let Some(prev) = prev_sample {
        next.step((sample.rtt_ms - prev.rtt_ms) / 2.0);
    }
    next.last_transit_ms = Some(sample.rtt_ms / 2.0);
    next
}
