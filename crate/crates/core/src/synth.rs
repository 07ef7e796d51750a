//! Deterministic univariate benchmark generator: a noisy sinusoid with five
//! kinds of injected anomalies and exact tick labels.
//!
//! The injection rules here are OUR rules — parameterized, documented, and
//! pinned by the tests in this file:
//!
//! * global point — pushed beyond the observed range of the clean series by
//!   at least a quarter of its span.
//! * contextual point — stays inside the global range but deviates from the
//!   mean of a quarter-period local window by ≥ 3 of that window's standard
//!   deviations. A FULL-period window cannot work here: over one period a
//!   sinusoid has mean ≈ 0 and std ≈ 0.707·amplitude, so a 3-std deviation
//!   (≈ 2.1·amplitude) always leaves the global range. The quarter-period
//!   window keeps "local" meaningful, and injection sites are restricted to
//!   positions whose local mean is well away from zero (near peaks/troughs)
//!   so the deviation can point back toward the interior of the range.
//! * shapelet — interval replaced by a square wave of the same period,
//!   phase, and amplitude.
//! * seasonal — interval re-rendered with the frequency multiplied by a
//!   factor ≠ 1, phase-continuous at the interval start.
//! * trend — linear drift with nonzero per-tick slope added over the
//!   interval.
//!
//! Anomalies land only in the test segment, at least one period away from
//! its edges, and never overlap one another.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Relative weights of the five anomaly types; normalized at use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TypeMix<F> {
    pub global_point: F,
    pub contextual_point: F,
    pub shapelet: F,
    pub seasonal: F,
    pub trend: F,
}

impl<F: Scalar> Default for TypeMix<F> {
    fn default() -> Self {
        TypeMix {
            global_point: F::cast(0.5),
            contextual_point: F::cast(0.5),
            shapelet: F::zero(),
            seasonal: F::zero(),
            trend: F::zero(),
        }
    }
}

impl<F: Scalar> TypeMix<F> {
    fn weights(&self) -> Result<[f64; 5]> {
        let w = [
            self.global_point.as_f64(),
            self.contextual_point.as_f64(),
            self.shapelet.as_f64(),
            self.seasonal.as_f64(),
            self.trend.as_f64(),
        ];
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("type_mix", "weights must be finite and nonnegative"));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("type_mix", "at least one weight must be positive"));
        }
        Ok(w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec<F> {
    pub train_length: usize,
    pub test_length: usize,
    /// Ticks per cycle of the base sinusoid.
    pub period: F,
    pub amplitude: F,
    pub noise_std: F,
    /// Fraction of test ticks to corrupt, in [0, 1).
    pub anomaly_ratio: F,
    pub mix: TypeMix<F>,
    pub seed: u64,
}

impl<F: Scalar> Default for SynthSpec<F> {
    fn default() -> Self {
        SynthSpec {
            train_length: 2000,
            test_length: 1000,
            period: F::cast(50.0),
            amplitude: F::one(),
            noise_std: F::cast(0.05),
            anomaly_ratio: F::cast(0.0274),
            mix: TypeMix::default(),
            seed: 0,
        }
    }
}

impl<F: Scalar> SynthSpec<F> {
    pub fn validate(&self) -> Result<()> {
        if self.train_length == 0 {
            return Err(Error::invalid("train_length", "must be positive"));
        }
        if self.test_length == 0 {
            return Err(Error::invalid("test_length", "must be positive"));
        }
        if !(self.period > F::zero()) {
            return Err(Error::invalid("period", "must be > 0"));
        }
        if !(self.amplitude > F::zero()) {
            return Err(Error::invalid("amplitude", "must be > 0"));
        }
        if !(self.noise_std >= F::zero()) {
            return Err(Error::invalid("noise_std", "must be >= 0"));
        }
        let r = self.anomaly_ratio.as_f64();
        if !(0.0..1.0).contains(&r) {
            return Err(Error::invalid("anomaly_ratio", "must lie in [0, 1)"));
        }
        self.mix.weights()?;
        Ok(())
    }

    fn margin(&self) -> usize {
        self.period.as_f64().ceil() as usize
    }

    fn interval_len(&self) -> usize {
        (self.period.as_f64().round() as usize).max(4)
    }
}

/// Everything `generate` produces, plus the uncorrupted test values that
/// tests compare against.
#[derive(Clone, Debug)]
pub struct SynthOutput<F> {
    pub train: TimeSeries<F>,
    pub test: TimeSeries<F>,
    pub clean_test: Vec<F>,
}

pub fn generate<F: Scalar>(spec: &SynthSpec<F>) -> Result<(TimeSeries<F>, TimeSeries<F>)> {
    let out = generate_full(spec)?;
    Ok((out.train, out.test))
}

pub fn generate_full<F: Scalar>(spec: &SynthSpec<F>) -> Result<SynthOutput<F>> {
    spec.validate()?;
    let total = spec.train_length + spec.test_length;
    let period = spec.period.as_f64();
    let amp = spec.amplitude.as_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.as_f64())
        .map_err(|e| Error::invalid("noise_std", e.to_string()))?;
    let base: Vec<F> = (0..total)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / period;
            F::cast(amp * phase.sin() + noise.sample(&mut rng))
        })
        .collect();

    let clean_test: Vec<F> = base[spec.train_length..].to_vec();
    let mut test_values = clean_test.clone();
    let mut labels = vec![0u8; spec.test_length];

    let budget = (spec.anomaly_ratio.as_f64() * spec.test_length as f64).ceil() as usize;
    if budget > 0 {
        let (lo, hi) = value_range(&base);
        let mut inj_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x53_59_4E_54_48);
        let per_type = allocate_ticks(budget, &spec.mix.weights()?);
        let ilen = spec.interval_len();
        let margin = spec.margin();
        place_intervals(spec, &mut test_values, &mut labels, (lo, hi), per_type, ilen, margin, &mut inj_rng)?;
        place_points(spec, &mut test_values, &mut labels, &clean_test, (lo, hi), per_type, margin, &mut inj_rng)?;
    }

    let train = TimeSeries::new(
        Tensor::from_vec(vec![1, spec.train_length], base[..spec.train_length].to_vec())?,
        None,
    )?;
    let test = TimeSeries::new(
        Tensor::from_vec(vec![1, spec.test_length], test_values)?,
        Some(labels),
    )?;
    Ok(SynthOutput { train, test, clean_test })
}

fn value_range<F: Scalar>(values: &[F]) -> (F, F) {
    let mut lo = values[0];
    let mut hi = values[0];
    for &v in values {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    (lo, hi)
}

/// Largest-remainder split of `budget` ticks across the five types.
fn allocate_ticks(budget: usize, weights: &[f64; 5]) -> [usize; 5] {
    let total: f64 = weights.iter().sum();
    let mut out = [0usize; 5];
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(5);
    let mut used = 0;
    for (i, &w) in weights.iter().enumerate() {
        let exact = budget as f64 * w / total;
        out[i] = exact.floor() as usize;
        used += out[i];
        fracs.push((i, exact - exact.floor()));
    }
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in fracs {
        if used == budget {
            break;
        }
        out[i] += 1;
        used += 1;
    }
    out
}

fn events_for(target_ticks: usize, interval_len: usize) -> usize {
    if target_ticks == 0 {
        return 0;
    }
    ((target_ticks as f64 / interval_len as f64).round() as usize).max(1)
}

#[allow(clippy::too_many_arguments)]
fn place_intervals<F: Scalar>(
    spec: &SynthSpec<F>,
    values: &mut [F],
    labels: &mut [u8],
    _range: (F, F),
    per_type: [usize; 5],
    ilen: usize,
    margin: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let len = values.len();
    for (kind, target) in [(2usize, per_type[2]), (3, per_type[3]), (4, per_type[4])] {
        for _ in 0..events_for(target, ilen) {
            if len < 2 * margin + ilen {
                return Err(Error::invalid(
                    "test_length",
                    format!("too short to place a {ilen}-tick interval {margin} ticks from each edge"),
                ));
            }
            let start = pick_free_interval(labels, margin, len - margin, ilen, rng)?;
            match kind {
                2 => inject_shapelet(values, labels, spec.amplitude, spec.period, spec.train_length, (start, ilen))?,
                3 => inject_seasonal(
                    values,
                    labels,
                    spec.amplitude,
                    spec.period,
                    F::cast(2.0),
                    spec.train_length,
                    (start, ilen),
                )?,
                _ => {
                    let mag = 2.0 * spec.amplitude.as_f64() / ilen as f64;
                    let sign = if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
                    inject_trend(values, labels, F::cast(sign * mag), (start, ilen))?;
                }
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn place_points<F: Scalar>(
    spec: &SynthSpec<F>,
    values: &mut [F],
    labels: &mut [u8],
    clean: &[F],
    range: (F, F),
    per_type: [usize; 5],
    margin: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let len = values.len();
    if (per_type[0] > 0 || per_type[1] > 0) && len <= 2 * margin {
        return Err(Error::invalid(
            "test_length",
            format!("too short to place points {margin} ticks from each edge"),
        ));
    }
    for _ in 0..per_type[0] {
        let pos = pick_free_tick(labels, margin, len - margin, rng)?;
        inject_global_point(values, labels, range, pos, rng)?;
    }
    if per_type[1] > 0 {
        let eligible = contextual_sites(clean, spec.period, range, margin);
        if eligible.len() < per_type[1] {
            return Err(Error::invalid(
                "anomaly_ratio",
                format!(
                    "only {} contextual sites available for {} requested points",
                    eligible.len(),
                    per_type[1]
                ),
            ));
        }
        for _ in 0..per_type[1] {
            let pos = pick_from(&eligible, labels, rng)?;
            inject_contextual_point(values, labels, clean, spec.period, range, pos)?;
        }
    }
    Ok(())
}

fn pick_free_tick(labels: &[u8], lo: usize, hi: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    for _ in 0..10_000 {
        let pos = rng.random_range(lo..hi);
        if labels[pos] == 0 {
            return Ok(pos);
        }
    }
    Err(Error::invalid("anomaly_ratio", "could not place a point without overlap"))
}

fn pick_from(sites: &[usize], labels: &[u8], rng: &mut ChaCha8Rng) -> Result<usize> {
    for _ in 0..10_000 {
        let pos = sites[rng.random_range(0..sites.len())];
        if labels[pos] == 0 {
            return Ok(pos);
        }
    }
    Err(Error::invalid("anomaly_ratio", "could not place a contextual point without overlap"))
}

fn pick_free_interval(
    labels: &[u8],
    lo: usize,
    hi: usize,
    ilen: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if hi < lo + ilen {
        return Err(Error::invalid("test_length", "no room for an interval"));
    }
    for _ in 0..10_000 {
        let start = rng.random_range(lo..=hi - ilen);
        if labels[start..start + ilen].iter().all(|&l| l == 0) {
            return Ok(start);
        }
    }
    Err(Error::invalid("anomaly_ratio", "could not place an interval without overlap"))
}

/// Quarter-period local window around `pos`, clamped to the slice.
fn local_window<F: Scalar>(clean: &[F], period: F, pos: usize) -> (F, F) {
    let qlen = ((period.as_f64() / 4.0).round() as usize).max(4);
    let half = qlen / 2;
    let start = pos.saturating_sub(half);
    let end = (start + qlen).min(clean.len());
    let start = end.saturating_sub(qlen);
    let window = &clean[start..end];
    let n = F::cast(window.len() as f64);
    let mut mean = F::zero();
    for &v in window {
        mean += v;
    }
    mean /= n;
    let mut var = F::zero();
    for &v in window {
        let c = v - mean;
        var += c * c;
    }
    var /= n;
    (mean, var.sqrt())
}

/// Positions whose quarter-period mean sits far enough from zero that a
/// 3-sigma deviation toward zero stays inside the global range.
fn contextual_sites<F: Scalar>(clean: &[F], period: F, range: (F, F), margin: usize) -> Vec<usize> {
    let (lo, hi) = range;
    let half_span = (hi - lo).as_f64() / 2.0;
    let mut out = Vec::new();
    if clean.len() <= 2 * margin {
        return out;
    }
    for pos in margin..clean.len() - margin {
        let (mean, std) = local_window(clean, period, pos);
        let dev = (3.2 * std.as_f64()).max(0.10 * (hi - lo).as_f64());
        let v = mean.as_f64() - mean.as_f64().signum() * dev;
        let in_range = v >= lo.as_f64() && v <= hi.as_f64();
        if mean.as_f64().abs() >= 0.3 * half_span && in_range && dev >= 3.0 * std.as_f64() {
            out.push(pos);
        }
    }
    out
}

/// Replace one tick with a value beyond the clean range by 25–50% of the span.
pub fn inject_global_point<F: Scalar>(
    values: &mut [F],
    labels: &mut [u8],
    range: (F, F),
    position: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    check_point(values, labels, position)?;
    let (lo, hi) = range;
    let span = (hi - lo).as_f64();
    let offset = span * (0.05 + 0.10 * rng.random_range(0.0..1.0));
    let v = if rng.random_range(0..2) == 0 {
        hi.as_f64() + offset
    } else {
        lo.as_f64() - offset
    };
    values[position] = F::cast(v);
    labels[position] = 1;
    Ok(())
}

/// Replace one tick with an in-range value ≥ 3 local stds from the
/// quarter-period local mean, displaced toward zero.
pub fn inject_contextual_point<F: Scalar>(
    values: &mut [F],
    labels: &mut [u8],
    clean: &[F],
    period: F,
    range: (F, F),
    position: usize,
) -> Result<()> {
    check_point(values, labels, position)?;
    let (lo, hi) = range;
    let (mean, std) = local_window(clean, period, position);
    let dev = (3.2 * std.as_f64()).max(0.10 * (hi - lo).as_f64());
    let v = mean.as_f64() - mean.as_f64().signum() * dev;
    if v < lo.as_f64() || v > hi.as_f64() || dev < 3.0 * std.as_f64() {
        return Err(Error::invalid(
            "position",
            format!("tick {position} cannot host a contextual point (local mean too close to zero)"),
        ));
    }
    values[position] = F::cast(v);
    labels[position] = 1;
    Ok(())
}

/// Replace the interval with a square wave of the same period and phase.
/// `phase_tick` is the absolute tick index of `values[0]`.
pub fn inject_shapelet<F: Scalar>(
    values: &mut [F],
    labels: &mut [u8],
    amplitude: F,
    period: F,
    phase_tick: usize,
    interval: (usize, usize),
) -> Result<()> {
    let (start, len) = check_interval(values, labels, interval)?;
    for t in start..start + len {
        let phase = 2.0 * std::f64::consts::PI * (phase_tick + t) as f64 / period.as_f64();
        values[t] = F::cast(amplitude.as_f64() * phase.sin().signum());
        labels[t] = 1;
    }
    Ok(())
}

/// Re-render the interval with frequency multiplied by `factor`,
/// phase-continuous at the interval start.
pub fn inject_seasonal<F: Scalar>(
    values: &mut [F],
    labels: &mut [u8],
    amplitude: F,
    period: F,
    factor: F,
    phase_tick: usize,
    interval: (usize, usize),
) -> Result<()> {
    if factor == F::one() || !(factor > F::zero()) {
        return Err(Error::invalid("factor", "must be positive and different from 1"));
    }
    let (start, len) = check_interval(values, labels, interval)?;
    let w = 2.0 * std::f64::consts::PI / period.as_f64();
    let theta0 = w * (phase_tick + start) as f64;
    for t in start..start + len {
        let theta = theta0 + w * factor.as_f64() * (t - start) as f64;
        values[t] = F::cast(amplitude.as_f64() * theta.sin());
        labels[t] = 1;
    }
    Ok(())
}

/// Add a linear drift of `slope` per tick across the interval.
pub fn inject_trend<F: Scalar>(
    values: &mut [F],
    labels: &mut [u8],
    slope: F,
    interval: (usize, usize),
) -> Result<()> {
    if slope == F::zero() {
        return Err(Error::invalid("slope", "must be nonzero"));
    }
    let (start, len) = check_interval(values, labels, interval)?;
    for (i, t) in (start..start + len).enumerate() {
        values[t] += slope * F::cast((i + 1) as f64);
        labels[t] = 1;
    }
    Ok(())
}

fn check_point<F>(values: &[F], labels: &[u8], position: usize) -> Result<()> {
    if position >= values.len() {
        return Err(Error::invalid(
            "position",
            format!("tick {position} outside series of length {}", values.len()),
        ));
    }
    if labels[position] != 0 {
        return Err(Error::invalid("position", format!("tick {position} already anomalous")));
    }
    Ok(())
}

fn check_interval<F>(values: &[F], labels: &[u8], interval: (usize, usize)) -> Result<(usize, usize)> {
    let (start, len) = interval;
    if len == 0 || start + len > values.len() {
        return Err(Error::invalid(
            "interval",
            format!("[{start}, {start}+{len}) outside series of length {}", values.len()),
        ));
    }
    if labels[start..start + len].iter().any(|&l| l != 0) {
        return Err(Error::invalid("interval", "overlaps an existing anomaly"));
    }
    Ok((start, len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec<f64> {
        SynthSpec::default()
    }

    #[test]
    fn ratio_zero_is_clean() {
        let mut s = spec();
        s.anomaly_ratio = 0.0;
        let out = generate_full(&s).unwrap();
        assert!(out.test.labels.as_ref().unwrap().iter().all(|&l| l == 0));
        assert_eq!(out.test.values.data(), out.clean_test.as_slice());
        assert_eq!(out.train.ticks(), 2000);
        assert_eq!(out.test.ticks(), 1000);
    }

    #[test]
    fn default_budget_is_twenty_eight_ticks() {
        let out = generate_full(&spec()).unwrap();
        let labeled: usize = out.test.labels.as_ref().unwrap().iter().map(|&l| l as usize).sum();
        assert_eq!(labeled, 28, "ceil(0.0274 * 1000)");
    }

    #[test]
    fn same_seed_is_bit_identical_and_other_seeds_differ() {
        let a = generate_full(&spec()).unwrap();
        let b = generate_full(&spec()).unwrap();
        assert_eq!(a.train.values.data(), b.train.values.data());
        assert_eq!(a.test.values.data(), b.test.values.data());
        assert_eq!(a.test.labels, b.test.labels);

        let mut s = spec();
        s.seed = 1;
        let c = generate_full(&s).unwrap();
        assert_ne!(a.train.values.data(), c.train.values.data());
    }

    #[test]
    fn series_outside_masks_matches_the_clean_base() {
        let out = generate_full(&spec()).unwrap();
        let labels = out.test.labels.as_ref().unwrap();
        for t in 0..out.test.ticks() {
            if labels[t] == 0 {
                assert_eq!(out.test.value(0, t), out.clean_test[t], "tick {t}");
            } else {
                assert_ne!(out.test.value(0, t), out.clean_test[t], "tick {t}");
            }
        }
    }

    #[test]
    fn anomalies_keep_a_period_margin_from_test_edges() {
        let out = generate_full(&spec()).unwrap();
        let labels = out.test.labels.as_ref().unwrap();
        for t in 0..50 {
            assert_eq!(labels[t], 0, "leading margin tick {t}");
        }
        for t in 950..1000 {
            assert_eq!(labels[t], 0, "trailing margin tick {t}");
        }
    }

    #[test]
    fn global_points_leave_the_clean_range_decisively() {
        let mut s = spec();
        s.mix = TypeMix {
            global_point: 1.0,
            contextual_point: 0.0,
            shapelet: 0.0,
            seasonal: 0.0,
            trend: 0.0,
        };
        let out = generate_full(&s).unwrap();
        let full_clean: Vec<f64> = out
            .train
            .values
            .data()
            .iter()
            .copied()
            .chain(out.clean_test.iter().copied())
            .collect();
        let (lo, hi) = value_range(&full_clean);
        let labels = out.test.labels.as_ref().unwrap();
        let mut seen = 0;
        for t in 0..out.test.ticks() {
            if labels[t] == 1 {
                seen += 1;
                let v = out.test.value(0, t);
                assert!(v > hi || v < lo, "tick {t}: {v} inside [{lo}, {hi}]");
                assert!(v.abs() > 1.0 + 4.0 * s.noise_std, "tick {t}: {v} not decisive");
            }
        }
        assert_eq!(seen, 28);
    }

    #[test]
    fn contextual_points_are_in_range_but_locally_extreme() {
        let mut s = spec();
        s.mix = TypeMix {
            global_point: 0.0,
            contextual_point: 1.0,
            shapelet: 0.0,
            seasonal: 0.0,
            trend: 0.0,
        };
        let out = generate_full(&s).unwrap();
        let full_clean: Vec<f64> = out
            .train
            .values
            .data()
            .iter()
            .copied()
            .chain(out.clean_test.iter().copied())
            .collect();
        let (lo, hi) = value_range(&full_clean);
        let labels = out.test.labels.as_ref().unwrap();
        let mut seen = 0;
        for t in 0..out.test.ticks() {
            if labels[t] == 0 {
                continue;
            }
            seen += 1;
            let v = out.test.value(0, t);
            assert!(v >= lo && v <= hi, "tick {t}: {v} escapes [{lo}, {hi}]");
            let (mean, std) = local_window(&out.clean_test, s.period, t);
            assert!(
                (v - mean).abs() >= 3.0 * std,
                "tick {t}: |{v} - {mean}| < 3 * {std}"
            );
        }
        assert_eq!(seen, 28);
    }

    #[test]
    fn shapelet_replaces_interval_with_square_wave() {
        let period = 8.0;
        let mut values: Vec<f64> = (0..32)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / period).sin())
            .collect();
        let before = values.clone();
        let mut labels = vec![0u8; 32];
        inject_shapelet(&mut values, &mut labels, 1.0, period, 0, (8, 8)).unwrap();
        for t in 8..16 {
            assert_eq!(labels[t], 1);
            let want = (2.0 * std::f64::consts::PI * t as f64 / period).sin().signum();
            assert_eq!(values[t], want, "tick {t}");
        }
        for t in (0..8).chain(16..32) {
            assert_eq!(labels[t], 0);
            assert_eq!(values[t], before[t]);
        }
    }

    #[test]
    fn seasonal_factor_two_completes_two_cycles() {
        let period = 8.0;
        let mut values = vec![0.0f64; 24];
        let mut labels = vec![0u8; 24];
        // interval starts at absolute tick 8 = exactly one period: phase 0
        inject_seasonal(&mut values, &mut labels, 1.0, period, 2.0, 0, (8, 8)).unwrap();
        // doubled frequency: sin(2pi * 2t/8) has zeros at t = 0, 2, 4, 6
        for (i, want) in [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0].iter().enumerate() {
            assert!((values[8 + i] - want).abs() < 1e-12, "offset {i}: {}", values[8 + i]);
        }
        assert!(inject_seasonal(&mut values, &mut labels, 1.0, period, 1.0, 0, (16, 4)).is_err());
    }

    #[test]
    fn trend_requires_nonzero_slope_and_drifts_linearly() {
        let mut values = vec![1.0f64; 10];
        let mut labels = vec![0u8; 10];
        assert!(inject_trend(&mut values, &mut labels, 0.0, (2, 4)).is_err());
        inject_trend(&mut values, &mut labels, 0.5, (2, 4)).unwrap();
        assert_eq!(values, vec![1.0, 1.0, 1.5, 2.0, 2.5, 3.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(labels, vec![0, 0, 1, 1, 1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn injectors_reject_bad_positions_and_overlap() {
        let mut values = vec![0.0f64; 10];
        let mut labels = vec![0u8; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(inject_global_point(&mut values, &mut labels, (-1.0, 1.0), 10, &mut rng).is_err());
        inject_global_point(&mut values, &mut labels, (-1.0, 1.0), 4, &mut rng).unwrap();
        assert!(inject_global_point(&mut values, &mut labels, (-1.0, 1.0), 4, &mut rng).is_err());
        assert!(inject_trend(&mut values, &mut labels, 0.1, (3, 4)).is_err(), "overlaps tick 4");
        assert!(inject_trend(&mut values, &mut labels, 0.1, (8, 3)).is_err(), "runs off the end");
    }

    #[test]
    fn interval_mix_lands_near_budget_within_granularity() {
        let mut s = spec();
        s.mix = TypeMix {
            global_point: 0.2,
            contextual_point: 0.2,
            shapelet: 0.2,
            seasonal: 0.2,
            trend: 0.2,
        };
        let out = generate_full(&s).unwrap();
        let labels = out.test.labels.as_ref().unwrap();
        let labeled: usize = labels.iter().map(|&l| l as usize).sum();
        // largest-remainder on 28 ticks at equal weights: targets [6,6,6,5,5];
        // each interval type rounds up to one whole 50-tick event
        assert_eq!(labeled, 6 + 6 + 3 * 50, "6+6 points plus one event per interval type");
    }

    #[test]
    fn infeasible_margins_are_rejected() {
        let mut s = spec();
        s.test_length = 60; // margin 50 on each side leaves nothing
        let err = generate_full(&s).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("test_length"), "{msg}");
    }

    #[test]
    fn phase_is_continuous_across_the_train_test_boundary() {
        let mut s = spec();
        s.anomaly_ratio = 0.0;
        s.noise_std = 0.0;
        let out = generate_full(&s).unwrap();
        let t = s.train_length; // first test tick, absolute index t
        let expect = (2.0 * std::f64::consts::PI * t as f64 / 50.0).sin();
        assert!((out.test.value(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        for (field, mutate) in [
            ("period", Box::new(|s: &mut SynthSpec<f64>| s.period = 0.0) as Box<dyn Fn(&mut SynthSpec<f64>)>),
            ("anomaly_ratio", Box::new(|s| s.anomaly_ratio = 1.0)),
            ("noise_std", Box::new(|s| s.noise_std = -0.1)),
            ("train_length", Box::new(|s| s.train_length = 0)),
        ] {
            let mut s = spec();
            mutate(&mut s);
            let msg = generate_full(&s).unwrap_err().to_string();
            assert!(msg.contains(field), "{field}: {msg}");
        }
    }
}
