use std::collections::BTreeMap;

use serde::Serialize;

use super::percentile::percentile_sorted;
use super::DEFAULT_THRESHOLD_MS;
use crate::record::MeasurementRecord;

/// Directed pair key: (reporter, peer).
pub type PairKey = (String, String);

/// Aggregates for one directed pair, keyed by reporter then peer.
pub type PairStatsMap = BTreeMap<PairKey, PairStats>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStats {
    pub reporter_id: String,
    pub peer_id: String,
    pub n: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_over_threshold: bool,
    pub p99_over_threshold: bool,
}

impl PairStats {
    /// Builds stats from RTTs; `None` when there are none.
    pub fn from_rtts(
        reporter_id: &str,
        peer_id: &str,
        mut rtts: Vec<f64>,
        threshold_ms: f64,
    ) -> Option<Self> {
        if rtts.is_empty() {
            return None;
        }
        // Summing in sorted order makes the mean independent of input order.
        rtts.sort_by(f64::total_cmp);
        let n = rtts.len();
        let min = rtts[0];
        let max = rtts[n - 1];
        let mean = (rtts.iter().sum::<f64>() / n as f64).clamp(min, max);
        let p99 = percentile_sorted(&rtts, 99.0);
        Some(Self {
            reporter_id: reporter_id.to_string(),
            peer_id: peer_id.to_string(),
            n,
            mean_ms: mean,
            p99_ms: p99,
            min_ms: min,
            max_ms: max,
            mean_over_threshold: mean > threshold_ms,
            p99_over_threshold: p99 > threshold_ms,
        })
    }
}

pub fn pair_stats(records: &[MeasurementRecord]) -> PairStatsMap {
    pair_stats_with_threshold(records, DEFAULT_THRESHOLD_MS)
}

/// Groups records by (yourID, peerID). Directions are never merged.
pub fn pair_stats_with_threshold(records: &[MeasurementRecord], threshold_ms: f64) -> PairStatsMap {
    let mut groups: BTreeMap<PairKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.your_id.clone(), r.peer_id.clone()))
            .or_default()
            .push(r.candidate_pair_rtt);
    }
    groups
        .into_iter()
        .filter_map(|((rep, peer), rtts)| {
            PairStats::from_rtts(&rep, &peer, rtts, threshold_ms).map(|s| ((rep, peer), s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(from: &str, to: &str, rtt: f64) -> MeasurementRecord {
        MeasurementRecord::new(1, from, to, rtt)
    }

    #[test]
    fn mean_of_three() {
        let recs = [
            rec("a", "b", 10.0),
            rec("a", "b", 20.0),
            rec("a", "b", 30.0),
        ];
        let m = pair_stats(&recs);
        let s = &m[&("a".to_string(), "b".to_string())];
        assert_eq!(s.mean_ms, 20.0);
        assert_eq!(s.n, 3);
        assert_eq!((s.min_ms, s.max_ms, s.p99_ms), (10.0, 30.0, 30.0));
        assert!(!s.mean_over_threshold);
    }

    #[test]
    fn empty_records_give_empty_map() {
        assert!(pair_stats(&[]).is_empty());
    }

    #[test]
    fn directions_stay_separate() {
        let recs = [rec("a", "b", 10.0), rec("b", "a", 70.0)];
        let m = pair_stats(&recs);
        assert_eq!(m.len(), 2);
        assert!(!m[&("a".into(), "b".into())].mean_over_threshold);
        assert!(m[&("b".into(), "a".into())].mean_over_threshold);
    }

    #[test]
    fn threshold_is_strictly_greater() {
        let m = pair_stats(&[rec("a", "b", 60.0)]);
        assert!(!m[&("a".into(), "b".into())].mean_over_threshold);
        let m = pair_stats_with_threshold(&[rec("a", "b", 30.0)], 20.0);
        assert!(m[&("a".into(), "b".into())].p99_over_threshold);
    }

    #[test]
    fn ordering_is_by_label() {
        let recs = [rec("c", "a", 1.0), rec("a", "c", 1.0), rec("a", "b", 1.0)];
        let keys: Vec<_> = pair_stats(&recs).into_keys().collect();
        assert_eq!(
            keys,
            vec![
                ("a".to_string(), "b".to_string()),
                ("a".to_string(), "c".to_string()),
                ("c".to_string(), "a".to_string())
            ]
        );
    }

    fn arb_records() -> impl Strategy<Value = Vec<MeasurementRecord>> {
        proptest::collection::vec(
            (0usize..4, 0usize..4, 0.0f64..200.0).prop_filter_map("self pair", |(a, b, r)| {
                (a != b).then(|| rec(&format!("n{a}"), &format!("n{b}"), r))
            }),
            0..120,
        )
    }

    proptest! {
        #[test]
        fn permutation_invariant(recs in arb_records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(pair_stats(&recs), pair_stats(&shuffled));
        }

        #[test]
        fn stats_invariants(recs in arb_records()) {
            for s in pair_stats(&recs).values() {
                prop_assert!(s.min_ms <= s.mean_ms && s.mean_ms <= s.max_ms);
                prop_assert!(s.p99_ms <= s.max_ms);
                prop_assert_eq!(s.mean_over_threshold, s.mean_ms > 60.0);
                prop_assert_eq!(s.p99_over_threshold, s.p99_ms > 60.0);
            }
        }
    }
}
