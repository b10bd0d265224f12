//! One-to-one pairing of estimates with ground-truth paths.

use std::cmp::Ordering;

use crate::array::wrap_phase;
use crate::extractor::PathEstimate;

use super::TruthPath;

/// Largest errors at which an estimate still counts as a truth path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchGates {
    pub max_bin_error: usize,
    /// On the wrapped receive sin-domain phase, radians.
    pub max_sin_phase_error: f64,
}

impl Default for MatchGates {
    fn default() -> Self {
        Self {
            max_bin_error: 1,
            max_sin_phase_error: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    /// Index into the truth list passed to [`match_estimates`].
    pub truth: usize,
    /// Index into the estimate list.
    pub estimate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    /// Estimate index matched to each truth path, if any.
    pub truth_matches: Vec<Option<usize>>,
    /// Matched truths over all truths; 1 when there is no truth.
    pub detection_rate: f64,
    pub false_alarm_count: usize,
    pub miss_count: usize,
    pub rmse_distance_m: Option<f64>,
    pub rmse_aoa_deg: Option<f64>,
    /// Over pairs whose estimate carries a Doppler value.
    pub rmse_doppler_hz: Option<f64>,
}

fn phase_error(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

fn truth_order(a: &TruthPath, b: &TruthPath) -> Ordering {
    b.magnitude
        .total_cmp(&a.magnitude)
        .then((a.source_id, a.delay_bin).cmp(&(b.source_id, b.delay_bin)))
        .then(a.aoa_phase.total_cmp(&b.aoa_phase))
        .then(a.doppler_hz.total_cmp(&b.doppler_hz))
}

fn estimate_key(e: &PathEstimate) -> (usize, usize, u64, u64) {
    (e.source_id, e.delay_bin, e.aoa_phase.to_bits(), e.magnitude.to_bits())
}

fn rms(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Greedy strongest-truth-first matching: each truth takes the closest
/// unclaimed estimate of the same source inside the gates (bin error first,
/// then phase error). Unmatched estimates are false alarms, unmatched truths
/// misses. The pairing does not depend on the order of either input list.
pub fn match_estimates(estimates: &[PathEstimate], truth: &[TruthPath], gates: &MatchGates) -> MatchReport {
    let mut truth_idx: Vec<usize> = (0..truth.len()).collect();
    truth_idx.sort_by(|&a, &b| truth_order(&truth[a], &truth[b]));

    let mut taken = vec![false; estimates.len()];
    let mut truth_matches = vec![None; truth.len()];
    for &ti in &truth_idx {
        let t = &truth[ti];
        let best = estimates
            .iter()
            .enumerate()
            .filter(|&(ei, e)| {
                !taken[ei]
                    && e.source_id == t.source_id
                    && e.delay_bin.abs_diff(t.delay_bin) <= gates.max_bin_error
                    && phase_error(e.aoa_phase, t.aoa_phase) <= gates.max_sin_phase_error
            })
            .min_by(|(_, a), (_, b)| {
                a.delay_bin
                    .abs_diff(t.delay_bin)
                    .cmp(&b.delay_bin.abs_diff(t.delay_bin))
                    .then(phase_error(a.aoa_phase, t.aoa_phase).total_cmp(&phase_error(b.aoa_phase, t.aoa_phase)))
                    .then(estimate_key(a).cmp(&estimate_key(b)))
            })
            .map(|(ei, _)| ei);
        if let Some(ei) = best {
            taken[ei] = true;
            truth_matches[ti] = Some(ei);
        }
    }

    let pairs: Vec<MatchedPair> = truth_matches
        .iter()
        .enumerate()
        .filter_map(|(ti, m)| m.map(|ei| MatchedPair { truth: ti, estimate: ei }))
        .collect();
    let matched = pairs.len();
    MatchReport {
        detection_rate: if truth.is_empty() { 1.0 } else { matched as f64 / truth.len() as f64 },
        false_alarm_count: estimates.len() - matched,
        miss_count: truth.len() - matched,
        rmse_distance_m: rms(pairs.iter().map(|p| estimates[p.estimate].distance_m - truth[p.truth].distance_m)),
        rmse_aoa_deg: rms(pairs.iter().map(|p| (estimates[p.estimate].aoa - truth[p.truth].aoa).to_degrees())),
        rmse_doppler_hz: rms(pairs
            .iter()
            .filter_map(|p| estimates[p.estimate].doppler_hz.map(|f| f - truth[p.truth].doppler_hz))),
        pairs,
        truth_matches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(source: usize, bin: usize, phase: f64, mag: f64) -> TruthPath {
        TruthPath {
            source_id: source,
            delay_bin: bin,
            distance_m: 3.0 * bin as f64,
            aoa: (phase / std::f64::consts::PI).asin(),
            aoa_phase: phase,
            aod_phase: None,
            doppler_hz: 100.0,
            magnitude: mag,
            snr_db: 20.0,
        }
    }

    fn estimate_of(t: &TruthPath) -> PathEstimate {
        PathEstimate {
            source_id: t.source_id,
            delay_bin: t.delay_bin,
            distance_m: t.distance_m,
            aoa_phase: t.aoa_phase,
            aoa: t.aoa,
            aod_phase: None,
            aod: None,
            doppler_hz: Some(t.doppler_hz),
            magnitude: t.magnitude,
            power_score: t.magnitude,
            angle_clamped: false,
        }
    }

    fn sample() -> Vec<TruthPath> {
        vec![truth(0, 3, 0.5, 1.0), truth(0, 4, 0.55, 0.5), truth(1, 3, -1.0, 0.7), truth(2, 10, 2.0, 0.1)]
    }

    #[test]
    fn identical_lists_match_perfectly() {
        let t = sample();
        let e: Vec<_> = t.iter().map(estimate_of).collect();
        let r = match_estimates(&e, &t, &MatchGates::default());
        assert_eq!(r.detection_rate, 1.0);
        assert_eq!(r.false_alarm_count, 0);
        assert_eq!(r.rmse_distance_m, Some(0.0));
        assert_eq!(r.rmse_aoa_deg, Some(0.0));
        assert_eq!(r.rmse_doppler_hz, Some(0.0));
        assert!(r.pairs.iter().all(|p| p.truth == p.estimate));
    }

    #[test]
    fn empty_estimates_detect_nothing() {
        let r = match_estimates(&[], &sample(), &MatchGates::default());
        assert_eq!(r.detection_rate, 0.0);
        assert_eq!(r.miss_count, 4);
        assert_eq!(r.rmse_distance_m, None);
    }

    #[test]
    fn off_gate_estimate_is_false_alarm_and_miss() {
        let t = vec![truth(0, 3, 0.5, 1.0)];
        let mut e = estimate_of(&t[0]);
        e.aoa_phase += 0.2;
        let r = match_estimates(&[e.clone()], &t, &MatchGates::default());
        assert_eq!((r.false_alarm_count, r.miss_count), (1, 1));
        e.aoa_phase = 0.5;
        e.delay_bin = 5;
        let r = match_estimates(&[e], &t, &MatchGates::default());
        assert_eq!((r.false_alarm_count, r.miss_count), (1, 1));
    }

    #[test]
    fn stronger_truth_claims_contested_estimate() {
        // one estimate between two truths of the same source: the stronger wins
        let t = vec![truth(0, 4, 0.55, 0.5), truth(0, 3, 0.5, 1.0)];
        let mut e = estimate_of(&t[1]);
        e.delay_bin = 4;
        e.aoa_phase = 0.53;
        let r = match_estimates(&[e], &t, &MatchGates::default());
        assert_eq!(r.truth_matches, vec![None, Some(0)]);
    }

    #[test]
    fn phase_gate_wraps() {
        let t = vec![truth(0, 3, 3.1, 1.0)];
        let mut e = estimate_of(&t[0]);
        e.aoa_phase = -3.1;
        let r = match_estimates(&[e], &t, &MatchGates::default());
        assert_eq!(r.detection_rate, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pairing_is_permutation_stable(
                jitter in proptest::collection::vec((0usize..3, -0.15f64..0.15), 4),
                rot_t in 0usize..4,
                rot_e in 0usize..4,
            ) {
                let t = sample();
                let e: Vec<PathEstimate> = t
                    .iter()
                    .zip(&jitter)
                    .map(|(tp, &(db, dp))| {
                        let mut e = estimate_of(tp);
                        e.delay_bin = (e.delay_bin + db).saturating_sub(1);
                        e.aoa_phase += dp;
                        e
                    })
                    .collect();
                let base = match_estimates(&e, &t, &MatchGates::default());
                let mut t2 = t.clone();
                t2.rotate_left(rot_t);
                let mut e2 = e.clone();
                e2.rotate_left(rot_e);
                let other = match_estimates(&e2, &t2, &MatchGates::default());
                let as_values = |r: &MatchReport, t: &[TruthPath], e: &[PathEstimate]| {
                    let mut v: Vec<_> = r.pairs.iter().map(|p| (t[p.truth].delay_bin, t[p.truth].source_id, estimate_key(&e[p.estimate]))).collect();
                    v.sort();
                    v
                };
                prop_assert_eq!(as_values(&base, &t, &e), as_values(&other, &t2, &e2));
                prop_assert!(base.detection_rate >= 0.0 && base.detection_rate <= 1.0);
            }
        }
    }
}
