//! Per-tick scoring, point-adjusted detection, best-F1 threshold sweep, AUC.
//!
//! Anomalies are HIGH scores; a prediction at threshold θ is `score >= θ`.
//! Threshold candidates are exactly the distinct observed score values, which
//! makes the sweep exhaustive: any real-valued threshold produces the same
//! prediction vector as one of the candidates.

use crate::data::{make_windows, TimeSeries, WindowSpec};
use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{batch_graph, context_batch, suspect_batch};
use crate::transforms::TransformBank;
use crate::Scalar;

/// How many windows to push through the graph at once while scoring.
const SCORE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries<F> {
    /// One score per tick of the scored series.
    pub scores: Vec<F>,
    /// Index of the first tick with a full window behind it; every earlier
    /// tick carries a copy of this tick's score (leading-fill).
    pub first_scored: usize,
}

/// One labeled anomaly segment and whether the chosen threshold caught it.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRow {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub roc_auc: f64,
    pub adjusted: bool,
    pub segments: Vec<SegmentRow>,
}

impl EvalReport {
    /// Flat `key=value` lines, one metric per line, segments included.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("precision={}\n", self.precision));
        out.push_str(&format!("recall={}\n", self.recall));
        out.push_str(&format!("f1={}\n", self.f1));
        out.push_str(&format!("threshold={}\n", self.threshold));
        out.push_str(&format!("roc_auc={}\n", self.roc_auc));
        out.push_str(&format!("adjusted={}\n", u8::from(self.adjusted)));
        out.push_str(&format!("segments={}\n", self.segments.len()));
        for (i, seg) in self.segments.iter().enumerate() {
            out.push_str(&format!(
                "segment.{i}.start={}\nsegment.{i}.end={}\nsegment.{i}.detected={}\n",
                seg.start,
                seg.end,
                u8::from(seg.detected)
            ));
        }
        out
    }
}

/// Score every tick of `test` with a stride-1 sweep of the window spec.
/// Ticks before the first full window receive the first computed score.
pub fn score_series<F: Scalar>(
    encoder: &EncoderState<F>,
    bank: &TransformBank<F>,
    loss_config: &LossConfig<F>,
    test: &TimeSeries<F>,
    spec: &WindowSpec,
) -> Result<ScoreSeries<F>> {
    loss_config.validate()?;
    let dense = WindowSpec::new(spec.window, spec.suspect_offset, 1)?;
    let windows = make_windows(test, &dense)?;
    let mut per_window: Vec<F> = Vec::with_capacity(windows.len());
    let idxs: Vec<usize> = (0..windows.len()).collect();
    for chunk in idxs.chunks(SCORE_CHUNK) {
        let sus = suspect_batch(&windows, chunk)?;
        let ctx = if loss_config.mode.uses_context() {
            Some(context_batch(&windows, chunk)?)
        } else {
            None
        };
        let graph = batch_graph(encoder, bank, loss_config, &sus, ctx.as_ref(), false, false)?;
        per_window.extend_from_slice(graph.tape.value(graph.scores)?.data());
    }
    if let Some(bad) = per_window.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("per-window score {bad}"),
        });
    }
    let first_scored = dense.window - 1;
    let mut scores = vec![per_window[0]; first_scored];
    scores.extend_from_slice(&per_window);
    debug_assert_eq!(scores.len(), test.ticks());
    Ok(ScoreSeries { scores, first_scored })
}

/// Maximal runs of 1s in a label vector, as inclusive (start, end) pairs.
pub fn label_segments(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l, start) {
            (1, None) => start = Some(i),
            (0, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.len() - 1));
    }
    out
}

/// Credit a whole labeled run once any tick inside it is predicted: every
/// pred inside a label run containing at least one 1 becomes 1. Preds where
/// labels are 0 are untouched.
pub fn point_adjust(preds: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    if preds.len() != labels.len() {
        return Err(Error::shape(
            "point_adjust",
            format!("{} labels", preds.len()),
            format!("{}", labels.len()),
        ));
    }
    let mut out = preds.to_vec();
    for (start, end) in label_segments(labels) {
        if preds[start..=end].iter().any(|&p| p == 1) {
            for slot in &mut out[start..=end] {
                *slot = 1;
            }
        }
    }
    Ok(out)
}

fn counts(preds: &[u8], labels: &[u8]) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

/// (precision, recall, f1) of a prediction vector; empty classes yield 0.
pub fn prf(preds: &[u8], labels: &[u8]) -> (f64, f64, f64) {
    let (tp, fp, fn_) = counts(preds, labels);
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

fn check_labels(labels: &[u8]) -> Result<()> {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::DegenerateLabels {
            message: format!("{ones} of {} ticks labeled anomalous", labels.len()),
        });
    }
    Ok(())
}

fn preds_at<F: Scalar>(scores: &[F], threshold: F) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}

fn distinct_ascending<F: Scalar>(scores: &[F]) -> Vec<F> {
    let mut cand = scores.to_vec();
    cand.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    cand.dedup();
    cand
}

/// Sweep every distinct score value as a threshold and return the one with
/// the best F1 (ties broken toward the smallest threshold) plus its report.
pub fn best_f1_search<F: Scalar>(
    scores: &[F],
    labels: &[u8],
    adjust: bool,
) -> Result<(F, EvalReport)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "best_f1_search",
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    check_labels(labels)?;
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("score {bad}"),
        });
    }
    let mut best: Option<(F, f64)> = None;
    for theta in distinct_ascending(scores) {
        let mut preds = preds_at(scores, theta);
        if adjust {
            preds = point_adjust(&preds, labels)?;
        }
        let (_, _, f1) = prf(&preds, labels);
        if best.map(|(_, bf)| f1 > bf).unwrap_or(true) {
            best = Some((theta, f1));
        }
    }
    let (threshold, _) = best.expect("at least one candidate");
    let mut preds = preds_at(scores, threshold);
    if adjust {
        preds = point_adjust(&preds, labels)?;
    }
    let (precision, recall, f1) = prf(&preds, labels);
    let segments = label_segments(labels)
        .into_iter()
        .map(|(start, end)| SegmentRow {
            start,
            end,
            detected: preds[start..=end].iter().any(|&p| p == 1),
        })
        .collect();
    let report = EvalReport {
        precision,
        recall,
        f1,
        threshold: threshold.as_f64(),
        roc_auc: roc_auc(scores, labels)?,
        adjusted: adjust,
        segments,
    };
    Ok((threshold, report))
}

/// One row per candidate threshold, for the sweep dump.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn threshold_sweep<F: Scalar>(
    scores: &[F],
    labels: &[u8],
    adjust: bool,
) -> Result<Vec<SweepRow>> {
    check_labels(labels)?;
    let mut rows = Vec::new();
    for theta in distinct_ascending(scores) {
        let mut preds = preds_at(scores, theta);
        if adjust {
            preds = point_adjust(&preds, labels)?;
        }
        let (precision, recall, f1) = prf(&preds, labels);
        rows.push(SweepRow {
            threshold: theta.as_f64(),
            precision,
            recall,
            f1,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,precision,recall,f1\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.threshold, r.precision, r.recall, r.f1));
    }
    out
}

/// Rank-based AUC with midrank handling for ties; probability a random
/// anomalous tick outscores a random normal one.
pub fn roc_auc<F: Scalar>(scores: &[F], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "roc_auc",
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    check_labels(labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the midrank
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = n as f64 - pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&r, _)| r)
        .sum();
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::losses::Mode;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn point_adjust_spreads_credit_across_the_run() {
        let out = point_adjust(&[0, 0, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!(out, vec![0, 1, 1, 0]);
    }

    #[test]
    fn point_adjust_without_anomalies_is_identity() {
        let preds = vec![1, 0, 1, 1, 0];
        let out = point_adjust(&preds, &[0; 5]).unwrap();
        assert_eq!(out, preds);
    }

    #[test]
    fn point_adjust_rejects_length_mismatch() {
        assert!(point_adjust(&[0, 1], &[0, 1, 0]).is_err());
    }

    /// Scan-based reference: for every tick labeled 1, walk left and right to
    /// the run's ends and look for any predicted 1.
    fn adjust_oracle(preds: &[u8], labels: &[u8]) -> Vec<u8> {
        let mut out = preds.to_vec();
        for t in 0..labels.len() {
            if labels[t] != 1 {
                continue;
            }
            let mut s = t;
            while s > 0 && labels[s - 1] == 1 {
                s -= 1;
            }
            let mut e = t;
            while e + 1 < labels.len() && labels[e + 1] == 1 {
                e += 1;
            }
            if preds[s..=e].contains(&1) {
                out[t] = 1;
            }
        }
        out
    }

    #[test]
    fn point_adjust_matches_oracle_for_every_short_case() {
        for len in 1..=6usize {
            for lbits in 0..(1u32 << len) {
                for pbits in 0..(1u32 << len) {
                    let labels: Vec<u8> = (0..len).map(|i| ((lbits >> i) & 1) as u8).collect();
                    let preds: Vec<u8> = (0..len).map(|i| ((pbits >> i) & 1) as u8).collect();
                    let got = point_adjust(&preds, &labels).unwrap();
                    assert_eq!(got, adjust_oracle(&preds, &labels), "preds {preds:?} labels {labels:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn point_adjust_is_idempotent_and_monotone(
            pair in proptest::collection::vec((0u8..2, 0u8..2), 1..40)
        ) {
            let preds: Vec<u8> = pair.iter().map(|&(p, _)| p).collect();
            let labels: Vec<u8> = pair.iter().map(|&(_, l)| l).collect();
            let once = point_adjust(&preds, &labels).unwrap();
            let twice = point_adjust(&once, &labels).unwrap();
            prop_assert_eq!(&once, &twice);
            for i in 0..preds.len() {
                if preds[i] == 1 {
                    prop_assert_eq!(once[i], 1, "a 1 never flips to 0");
                }
                if labels[i] == 0 {
                    prop_assert_eq!(once[i], preds[i], "untouched outside label runs");
                }
            }
        }
    }

    #[test]
    fn best_f1_simple_cases() {
        let (theta, report) = best_f1_search(&[1.0, 2.0, 3.0], &[0, 0, 1], false).unwrap();
        assert_eq!(theta, 3.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);

        // all scores equal: the single candidate predicts everything positive
        let (theta, report) = best_f1_search(&[2.0; 4], &[0, 1, 0, 1], false).unwrap();
        assert_eq!(theta, 2.0);
        let expected = 2.0 * 0.5 * 1.0 / 1.5;
        assert!((report.f1 - expected).abs() < 1e-15);
    }

    #[test]
    fn best_f1_rejects_degenerate_labels() {
        assert!(best_f1_search(&[1.0, 2.0], &[0, 0], false).is_err());
        assert!(best_f1_search(&[1.0, 2.0], &[1, 1], false).is_err());
    }

    fn best_f1_oracle(scores: &[f64], labels: &[u8], adjust: bool) -> (f64, f64) {
        let mut best: Option<(f64, f64)> = None;
        let mut cand = scores.to_vec();
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cand.dedup();
        for &theta in &cand {
            let mut preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= theta)).collect();
            if adjust {
                preds = adjust_oracle(&preds, labels);
            }
            let (_, _, f1) = prf(&preds, labels);
            if best.map(|(_, bf)| f1 > bf).unwrap_or(true) {
                best = Some((theta, f1));
            }
        }
        best.unwrap()
    }

    #[test]
    fn best_f1_matches_exhaustive_oracle_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..300 {
            let len = rng.random_range(2..=12);
            let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..5) as f64 * 0.5).collect();
            let mut labels: Vec<u8> = (0..len).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 0;
            let one = rng.random_range(1..len);
            labels[one] = 1;
            for adjust in [false, true] {
                let (theta, report) = best_f1_search(&scores, &labels, adjust).unwrap();
                let (otheta, of1) = best_f1_oracle(&scores, &labels, adjust);
                assert_eq!(theta, otheta, "case {case} adjust {adjust}");
                assert_eq!(report.f1, of1, "case {case} adjust {adjust}");
            }
        }
    }

    #[test]
    fn best_f1_dominates_random_probe_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scores: Vec<f64> = (0..120).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<u8> = (0..120).map(|i| u8::from(scores[i] + rng.random_range(-0.5..0.5) > 0.4)).collect();
        if label_segments(&labels).is_empty() || labels.iter().all(|&l| l == 1) {
            return; // vanishingly unlikely under this seed
        }
        let (_, report) = best_f1_search(&scores, &labels, false).unwrap();
        for _ in 0..200 {
            let theta = rng.random_range(-1.2..1.2);
            let preds = preds_at(&scores, theta);
            let (_, _, f1) = prf(&preds, &labels);
            assert!(report.f1 >= f1 - 1e-15);
        }
    }

    #[test]
    fn monotone_transforms_change_neither_best_f1_nor_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let scores: Vec<f64> = (0..60).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut labels: Vec<u8> = (0..60).map(|_| rng.random_range(0..2) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let (_, base) = best_f1_search(&scores, &labels, true).unwrap();
        for transform in [|x: f64| x.exp(), |x: f64| x * x * x, |x: f64| 3.0 * x + 11.0] {
            let mapped: Vec<f64> = scores.iter().map(|&s| transform(s)).collect();
            let (_, rep) = best_f1_search(&mapped, &labels, true).unwrap();
            assert_eq!(rep.f1, base.f1);
            assert!((rep.roc_auc - base.roc_auc).abs() < 1e-12);
        }
    }

    fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_perfect_separation_and_tie_handling() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.9, 0.8], &[0, 0, 1, 1]).unwrap(), 1.0);
        // one tie between a positive and a negative contributes half a win
        let auc = roc_auc(&[1.0, 1.0, 2.0], &[0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_matches_pair_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let len = rng.random_range(2..=14);
            let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..6) as f64).collect();
            let mut labels: Vec<u8> = (0..len).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 0;
            let one = rng.random_range(1..len);
            labels[one] = 1;
            let got = roc_auc(&scores, &labels).unwrap();
            let want = auc_oracle(&scores, &labels);
            assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        }
    }

    #[test]
    fn auc_near_half_for_independent_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let n = 20_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_range(0.0..1.0) < 0.3)).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.02, "auc {auc}");
    }

    fn zero_setup(k: usize) -> (EncoderState<f64>, TransformBank<f64>, TimeSeries<f64>) {
        let cfg = EncoderConfig {
            hidden_dim: 8,
            block_count: 2,
            kernel_set: vec![2, 3],
            dilation_base: 2,
            seed: 0,
        };
        let enc = EncoderState::zero_weights(cfg, 1).unwrap();
        let bank = TransformBank::zero_weights(k, 8).unwrap();
        let vals: Vec<f64> = (0..64).map(|t| (t as f64 * 0.3).sin()).collect();
        let series = TimeSeries::new(Tensor::from_vec(vec![1, 64], vals).unwrap(), None).unwrap();
        (enc, bank, series)
    }

    #[test]
    fn zero_encoder_scores_k_ln_k_everywhere() {
        for k in [2usize, 6] {
            let (enc, bank, series) = zero_setup(k);
            let lc = LossConfig::new(Mode::Cdcl);
            let spec = WindowSpec::new(12, 3, 1).unwrap();
            let out = score_series(&enc, &bank, &lc, &series, &spec).unwrap();
            assert_eq!(out.scores.len(), 64);
            assert_eq!(out.first_scored, 11);
            let want = k as f64 * (k as f64).ln();
            for &s in &out.scores {
                assert!((s - want).abs() < 1e-9, "k {k}: score {s} want {want}");
            }
        }
    }

    #[test]
    fn single_window_series_broadcasts_its_score() {
        let (enc, bank, series) = zero_setup(3);
        let lc = LossConfig::new(Mode::Cdcl);
        let spec = WindowSpec::new(64, 3, 7).unwrap(); // stride ignored by scoring
        let out = score_series(&enc, &bank, &lc, &series, &spec).unwrap();
        assert_eq!(out.first_scored, 63);
        let first = out.scores[0];
        assert!(out.scores.iter().all(|&s| s == first));
    }

    #[test]
    fn chunked_scores_equal_independent_per_window_scores() {
        // trained-ish random weights: nonzero, mode with context and bank
        let cfg = EncoderConfig {
            hidden_dim: 8,
            block_count: 1,
            kernel_set: vec![2, 3],
            dilation_base: 2,
            seed: 4,
        };
        let enc = EncoderState::init(cfg, 1, true).unwrap();
        let bank = TransformBank::init(4, 8, 9).unwrap();
        let vals: Vec<f64> = (0..90).map(|t| (t as f64 * 0.21).sin() + 0.1 * (t as f64 * 0.05).cos()).collect();
        let series = TimeSeries::new(Tensor::from_vec(vec![1, 90], vals).unwrap(), None).unwrap();
        let lc = LossConfig::new(Mode::Cdcl);
        let spec = WindowSpec::new(16, 4, 1).unwrap();
        let out = score_series(&enc, &bank, &lc, &series, &spec).unwrap();

        let windows = make_windows(&series, &spec).unwrap();
        for (i, w) in windows.iter().enumerate() {
            let sus = suspect_batch(&windows, &[i]).unwrap();
            let ctx = context_batch(&windows, &[i]).unwrap();
            let graph = batch_graph(&enc, &bank, &lc, &sus, Some(&ctx), false, false).unwrap();
            let solo = graph.tape.value(graph.scores).unwrap().data()[0];
            assert_eq!(out.scores[w.end_tick], solo, "window {i}");
        }
    }

    #[test]
    fn report_text_is_flat_key_value() {
        let report = EvalReport {
            precision: 0.75,
            recall: 1.0,
            f1: 6.0 / 7.0,
            threshold: 2.5,
            roc_auc: 0.9,
            adjusted: true,
            segments: vec![SegmentRow { start: 3, end: 5, detected: true }],
        };
        let text = report.to_text();
        assert!(text.contains("precision=0.75\n"));
        assert!(text.contains("adjusted=1\n"));
        assert!(text.contains("segment.0.start=3\n"));
        assert!(text.contains("segment.0.detected=1\n"));
    }

    #[test]
    fn sweep_rows_cover_every_distinct_value() {
        let scores = [0.5, 0.2, 0.5, 0.9];
        let labels = [0, 0, 1, 1];
        let rows = threshold_sweep(&scores, &labels, false).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[0].threshold < w[1].threshold));
        let csv = sweep_to_csv(&rows);
        assert!(csv.starts_with("threshold,precision,recall,f1\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn segment_table_marks_detected_runs() {
        let scores = [0.0, 9.0, 0.0, 0.0, 0.0, 0.0];
        let labels = [0, 1, 1, 0, 1, 0];
        let (_, report) = best_f1_search(&scores, &labels, true).unwrap();
        assert_eq!(report.segments.len(), 2);
        assert_eq!(report.segments[0], SegmentRow { start: 1, end: 2, detected: true });
        assert_eq!(report.segments[1], SegmentRow { start: 4, end: 4, detected: false });
    }
}
