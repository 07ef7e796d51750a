//! Mini-batch training: Adam, chronological validation split, early stopping.
//!
//! The validation part is the LAST ceil(fraction * n) windows — chronological,
//! never shuffled across the boundary, so overlapping windows cannot leak
//! between the parts. Each epoch shuffles only the training part with a
//! seeded generator; the best-validation snapshot (not the last) is what a
//! run returns. A non-finite loss is a hard abort naming the epoch and batch
//! rather than a silent skip — silently skipping NaNs hides exactly the
//! collapse bugs this code exists to expose.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowSample;
use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, Mode};
use crate::model::{batch_graph, context_batch, suspect_batch};
use crate::tensor::Tensor;
use crate::transforms::TransformBank;
use crate::Scalar;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct TrainConfig<F> {
    pub learning_rate: F,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub val_fraction: F,
    pub seed: u64,
}

impl<F: Scalar> Default for TrainConfig<F> {
    fn default() -> Self {
        TrainConfig {
            learning_rate: F::cast(0.001),
            max_epochs: 50,
            patience: 10,
            batch_size: 64,
            val_fraction: F::cast(0.2),
            seed: 0,
        }
    }
}

impl<F: Scalar> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > F::zero()) {
            return Err(Error::invalid("learning_rate", "must be > 0"));
        }
        if self.max_epochs < 1 {
            return Err(Error::invalid("max_epochs", "must be >= 1"));
        }
        if self.patience < 1 || self.patience > self.max_epochs {
            return Err(Error::invalid(
                "patience",
                format!(
                    "need 1 <= patience <= max_epochs, got {} with max_epochs {}",
                    self.patience, self.max_epochs
                ),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size",
                "batch norm and the variance regularizer need batches of >= 2",
            ));
        }
        let zero = F::zero();
        let one = F::one();
        if !(self.val_fraction > zero && self.val_fraction < one) {
            return Err(Error::invalid("val_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// Per-parameter Adam moments; lazily shaped on the first step.
#[derive(Clone, Debug, Default)]
pub struct AdamState<F> {
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new() -> Self {
        AdamState {
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>], lr: F) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam",
                format!("{} gradients", params.len()),
                format!("{}", grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!("{} parameters", self.m.len()),
                format!("{}", params.len()),
            ));
        }
        let (b1, b2, eps) = (F::cast(BETA1), F::cast(BETA2), F::cast(ADAM_EPS));
        self.step += 1;
        let t = self.step as i32;
        let corr1 = F::one() - b1.powi(t);
        let corr2 = F::one() - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !p.same_shape(g) {
                return Err(Error::shape(
                    "adam",
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            for i in 0..p.numel() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (F::one() - b1) * gi;
                let vi = b2 * v.data()[i] + (F::one() - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / corr1;
                let v_hat = vi / corr2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport<F> {
    pub train_losses: Vec<F>,
    pub val_losses: Vec<F>,
    /// Zero-based epoch whose validation loss was the minimum recorded.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Wall time of the run; excluded from any determinism comparison.
    pub wall_seconds: f64,
}

/// Tracks the best validation loss and decides when patience runs out.
#[derive(Debug)]
pub struct EarlyStopper<F> {
    patience: usize,
    best: Option<(usize, F)>,
    since_improve: usize,
}

impl<F: Scalar> EarlyStopper<F> {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            since_improve: 0,
        }
    }

    /// Record one epoch's validation loss. Returns `(improved, stop_now)`.
    pub fn observe(&mut self, epoch: usize, loss: F) -> (bool, bool) {
        let improved = match self.best {
            None => true,
            Some((_, best)) => loss < best,
        };
        if improved {
            self.best = Some((epoch, loss));
            self.since_improve = 0;
        } else {
            self.since_improve += 1;
        }
        (improved, self.since_improve >= self.patience)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// Chronological split: validation is the LAST ceil(fraction * n) samples.
pub fn split_train_val<F: Scalar>(
    samples: &[WindowSample<F>],
    val_fraction: F,
) -> Result<(&[WindowSample<F>], &[WindowSample<F>])> {
    let n = samples.len();
    let val = (val_fraction.as_f64() * n as f64).ceil() as usize;
    if val == 0 || val >= n {
        return Err(Error::invalid(
            "val_fraction",
            format!("split of {n} samples leaves an empty part (validation {val})"),
        ));
    }
    Ok((&samples[..n - val], &samples[n - val..]))
}

fn collect_grads<F: Scalar>(
    graph: &crate::model::BatchGraph<F>,
) -> Result<Vec<Tensor<F>>> {
    graph
        .param_ids
        .iter()
        .map(|&id| graph.tape.grad(id))
        .collect()
}

/// Weighted-mean objective over the given samples in eval mode. Chunks of
/// `batch_size`; a trailing chunk of one sample is merged into its
/// predecessor so regularizers that need batch statistics stay defined.
pub fn evaluate_loss<F: Scalar>(
    encoder: &EncoderState<F>,
    bank: &TransformBank<F>,
    lc: &LossConfig<F>,
    samples: &[WindowSample<F>],
    batch_size: usize,
) -> Result<F> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "nothing to evaluate"));
    }
    if samples.len() == 1 && lc.mode == Mode::CclReg {
        return Err(Error::invalid(
            "samples",
            "variance regularizer needs at least two validation samples",
        ));
    }
    let idxs: Vec<usize> = (0..samples.len()).collect();
    let mut chunks: Vec<&[usize]> = idxs.chunks(batch_size).collect();
    if chunks.len() >= 2 && chunks.last().map(|c| c.len()) == Some(1) {
        // merge a trailing singleton into the preceding chunk
        let merged_from = (chunks.len() - 2) * batch_size;
        chunks.truncate(chunks.len() - 2);
        chunks.push(&idxs[merged_from..]);
    }
    let mut total = F::zero();
    let mut count = 0usize;
    for chunk in chunks {
        let sus = suspect_batch(samples, chunk)?;
        let ctx = if lc.mode.uses_context() {
            Some(context_batch(samples, chunk)?)
        } else {
            None
        };
        let graph = batch_graph(encoder, bank, lc, &sus, ctx.as_ref(), false, true)?;
        let loss = graph.tape.value(graph.objective.expect("requested"))?.item();
        total += loss * F::cast(chunk.len() as f64);
        count += chunk.len();
    }
    Ok(total / F::cast(count as f64))
}

/// Mean over latent dimensions of the unbiased variance of eval-mode suspect
/// latents — the collapse witness number.
pub fn suspect_latent_variance<F: Scalar>(
    encoder: &EncoderState<F>,
    samples: &[WindowSample<F>],
) -> Result<F> {
    if samples.len() < 2 {
        return Err(Error::invalid("samples", "variance needs at least two samples"));
    }
    let d = encoder.hidden_dim();
    let n = samples.len();
    let mut latents: Vec<F> = Vec::with_capacity(n * d);
    let idxs: Vec<usize> = (0..n).collect();
    for chunk in idxs.chunks(256) {
        let sus = suspect_batch(samples, chunk)?;
        let out = encoder.encode_batch_values(&sus)?;
        latents.extend_from_slice(out.data());
    }
    let nf = F::cast(n as f64);
    let mut total = F::zero();
    for j in 0..d {
        let mut mean = F::zero();
        for r in 0..n {
            mean += latents[r * d + j];
        }
        mean /= nf;
        let mut var = F::zero();
        for r in 0..n {
            let c = latents[r * d + j] - mean;
            var += c * c;
        }
        total += var / F::cast((n - 1) as f64);
    }
    Ok(total / F::cast(d as f64))
}

/// Train encoder and bank on the windows, returning the best-validation
/// snapshot in place plus the per-epoch report. In one-class mode the center
/// is fixed to the mean initial latent and written into `loss_config`.
pub fn train<F: Scalar>(
    encoder: &mut EncoderState<F>,
    bank: &mut TransformBank<F>,
    samples: &[WindowSample<F>],
    train_config: &TrainConfig<F>,
    loss_config: &mut LossConfig<F>,
) -> Result<TrainReport<F>> {
    let start = Instant::now();
    train_config.validate()?;
    loss_config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("samples", "no training windows"));
    }
    if loss_config.mode.strips_bias() && encoder.has_bias {
        return Err(Error::invalid(
            "encoder",
            "one-class training needs a bias-free encoder (init with has_bias = false)",
        ));
    }
    let (train_part, val_part) = split_train_val(samples, train_config.val_fraction)?;
    if train_part.len() < 2 {
        return Err(Error::invalid(
            "samples",
            format!("training part has {} samples; need at least 2", train_part.len()),
        ));
    }

    if loss_config.mode == Mode::Occ && loss_config.occ_center.is_none() {
        loss_config.occ_center = Some(initial_center(encoder, train_part)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut adam = AdamState::new();
    let mut stopper = EarlyStopper::new(train_config.patience);
    let mut best_snapshot: Option<(EncoderState<F>, TransformBank<F>)> = None;
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..train_config.max_epochs {
        let mut order: Vec<usize> = (0..train_part.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = F::zero();
        let mut counted = 0usize;
        for (batch_idx, chunk) in order.chunks(train_config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // leftover single sample: batch statistics undefined
            }
            let sus = suspect_batch(train_part, chunk)?;
            let ctx = if loss_config.mode.uses_context() {
                Some(context_batch(train_part, chunk)?)
            } else {
                None
            };
            let mut graph = batch_graph(encoder, bank, loss_config, &sus, ctx.as_ref(), true, true)?;
            let loss_id = graph.objective.expect("requested");
            let loss = graph.tape.value(loss_id)?.item();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            graph.tape.backward(loss_id)?;
            let grads = collect_grads(&graph)?;
            encoder.absorb_batch_stats(&graph.tape, &graph.fwd_suspect)?;
            if let Some(fc) = &graph.fwd_context {
                encoder.absorb_batch_stats(&graph.tape, fc)?;
            }
            let mut params = encoder.params_mut();
            if loss_config.mode.uses_bank() {
                params.extend(bank.params_mut());
            }
            adam.step(&mut params, &grads, train_config.learning_rate)?;
            loss_sum += loss * F::cast(chunk.len() as f64);
            counted += chunk.len();
        }
        if counted == 0 {
            return Err(Error::invalid("batch_size", "no batch of >= 2 samples could be formed"));
        }
        train_losses.push(loss_sum / F::cast(counted as f64));

        let val_loss = evaluate_loss(encoder, bank, loss_config, val_part, train_config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        val_losses.push(val_loss);

        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_snapshot = Some((encoder.clone(), bank.clone()));
        }
        if stop {
            stopped_early = true;
            break;
        }
    }

    let (best_encoder, best_bank) = best_snapshot.expect("at least one epoch ran");
    *encoder = best_encoder;
    *bank = best_bank;

    Ok(TrainReport {
        train_losses,
        val_losses,
        best_epoch: stopper.best_epoch().expect("observed epochs"),
        stopped_early,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean eval-mode suspect latent over the training part; the frozen
/// one-class center.
fn initial_center<F: Scalar>(
    encoder: &EncoderState<F>,
    train_part: &[WindowSample<F>],
) -> Result<Tensor<F>> {
    let d = encoder.hidden_dim();
    let mut acc = vec![F::zero(); d];
    let idxs: Vec<usize> = (0..train_part.len()).collect();
    for chunk in idxs.chunks(256) {
        let sus = suspect_batch(train_part, chunk)?;
        let out = encoder.encode_batch_values(&sus)?;
        for r in 0..chunk.len() {
            for (j, slot) in acc.iter_mut().enumerate() {
                *slot += out.data()[r * d + j];
            }
        }
    }
    let n = F::cast(train_part.len() as f64);
    for slot in &mut acc {
        *slot /= n;
    }
    Tensor::from_vec(vec![d], acc)
}

/// Report of a pure-ccl training run: the batch variance of suspect latents
/// before and after — an executable witness of representation collapse.
/// Descriptive only; no pass/fail judgement.
#[derive(Clone, Debug)]
pub struct CollapseReport<F> {
    pub variance_before: F,
    pub variance_after: F,
    pub train: TrainReport<F>,
}

pub fn collapse_demo<F: Scalar>(
    encoder: &mut EncoderState<F>,
    samples: &[WindowSample<F>],
    train_config: &TrainConfig<F>,
    loss_config: &LossConfig<F>,
) -> Result<CollapseReport<F>> {
    if loss_config.mode != Mode::Ccl {
        return Err(Error::invalid(
            "mode",
            format!("collapse demonstration runs under CCL only, got {}", loss_config.mode),
        ));
    }
    let (train_part, _) = split_train_val(samples, train_config.val_fraction)?;
    let variance_before = suspect_latent_variance(encoder, train_part)?;
    // the bank is unused under ccl; a minimal one keeps the interface uniform
    let mut bank = TransformBank::init(2, encoder.hidden_dim(), train_config.seed)?;
    let mut lc = loss_config.clone();
    let train = crate::trainer::train(encoder, &mut bank, samples, train_config, &mut lc)?;
    let variance_after = suspect_latent_variance(encoder, train_part)?;
    Ok(CollapseReport {
        variance_before,
        variance_after,
        train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, TimeSeries, WindowSpec};
    use crate::encoder::EncoderConfig;

    fn adam_1d(start: f64, grad: f64, lr: f64) -> f64 {
        let mut p = Tensor::from_vec(vec![1], vec![start]).unwrap();
        let g = Tensor::from_vec(vec![1], vec![grad]).unwrap();
        let mut adam = AdamState::new();
        adam.step(&mut [&mut p], &[g], lr).unwrap();
        p.data()[0]
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        // bias correction makes the very first update ~= lr regardless of
        // gradient scale
        for grad in [0.001, 1.0, 250.0] {
            let x = adam_1d(0.0, grad, 0.05);
            assert!((x + 0.05).abs() < 1e-6, "grad {grad}: step {x}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        assert_eq!(adam_1d(1.5, 0.0, 0.1), 1.5);
    }

    #[test]
    fn adam_hand_computed_quadratic_step() {
        // f(x) = x^2 at x0 = 1: g = 2, m-hat = 2, v-hat = 4,
        // x1 = 1 - 0.1 * 2/(2 + 1e-8) = 0.9000000005
        let x = adam_1d(1.0, 2.0, 0.1);
        assert!((x - 0.9000000005).abs() < 1e-12, "got {x}");
    }

    #[test]
    fn split_examples() {
        let s = series(40, 0);
        let spec = WindowSpec::new(6, 2, 1).unwrap();
        let ws = make_windows(&s, &spec).unwrap();
        let (a, b) = split_train_val(&ws[..10], 0.2).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a, b) = split_train_val(&ws[..5], 0.2).unwrap();
        assert_eq!((a.len(), b.len()), (4, 1));
        let (a, b) = split_train_val(&ws[..2], 0.5).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(b[0].end_tick > a[0].end_tick, "validation is the tail");
        assert!(split_train_val(&ws[..1], 0.2).is_err());
    }

    #[test]
    fn early_stopper_logic() {
        let mut s = EarlyStopper::new(1);
        assert_eq!(s.observe(0, 3.0), (true, false));
        assert_eq!(s.observe(1, 4.0), (false, true), "patience 1 stops at once");
        assert_eq!(s.best_epoch(), Some(0));

        let mut s = EarlyStopper::new(2);
        s.observe(0, 3.0);
        s.observe(1, 5.0);
        assert_eq!(s.observe(2, 2.0), (true, false), "improvement resets patience");
        s.observe(3, 2.5);
        assert_eq!(s.observe(4, 2.6), (false, true));
        assert_eq!(s.best_epoch(), Some(2));
    }

    fn series(ticks: usize, seed: u64) -> TimeSeries<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..ticks)
            .map(|t| (t as f64 * 0.4).sin() + rng.random_range(-0.05..0.05))
            .collect();
        TimeSeries::new(Tensor::from_vec(vec![1, ticks], vals).unwrap(), None).unwrap()
    }

    fn tiny_setup(mode: Mode, seed: u64) -> (EncoderState<f64>, TransformBank<f64>, Vec<WindowSample<f64>>) {
        let cfg = EncoderConfig {
            hidden_dim: 8,
            block_count: 1,
            kernel_set: vec![2, 3],
            dilation_base: 2,
            seed,
        };
        let encoder = EncoderState::init(cfg, 1, !mode.strips_bias()).unwrap();
        let bank = TransformBank::init(2, 8, seed + 1).unwrap();
        let s = series(120, seed);
        let spec = WindowSpec::new(12, 2, 1).unwrap();
        let windows = make_windows(&s, &spec).unwrap();
        (encoder, bank, windows)
    }

    fn quick_config(seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            learning_rate: 0.01,
            max_epochs: 3,
            patience: 3,
            batch_size: 16,
            val_fraction: 0.2,
            seed,
        }
    }

    #[test]
    fn training_is_deterministic_and_tracks_best_epoch() {
        let run = || {
            let (mut enc, mut bank, windows) = tiny_setup(Mode::Cdcl, 5);
            let mut lc = LossConfig::new(Mode::Cdcl);
            let report = train(&mut enc, &mut bank, &windows, &quick_config(7), &mut lc).unwrap();
            (enc, bank, report)
        };
        let (e1, b1, r1) = run();
        let (e2, b2, r2) = run();
        assert_eq!(e1, e2, "weights identical across reruns");
        assert_eq!(b1, b2);
        assert_eq!(r1.train_losses, r2.train_losses);
        assert_eq!(r1.val_losses, r2.val_losses);
        assert_eq!(r1.best_epoch, r2.best_epoch);
        let best = r1.val_losses[r1.best_epoch];
        for &v in &r1.val_losses {
            assert!(best <= v, "best epoch is the recorded minimum");
        }
    }

    #[test]
    fn max_epochs_one_runs_exactly_one_epoch() {
        let (mut enc, mut bank, windows) = tiny_setup(Mode::Ccl, 9);
        let mut lc = LossConfig::new(Mode::Ccl);
        let tc = TrainConfig {
            max_epochs: 1,
            patience: 1,
            ..quick_config(3)
        };
        let report = train(&mut enc, &mut bank, &windows, &tc, &mut lc).unwrap();
        assert_eq!(report.train_losses.len(), 1);
        assert_eq!(report.val_losses.len(), 1);
        assert!(!report.stopped_early);
        assert_eq!(report.best_epoch, 0);
    }

    #[test]
    fn every_mode_trains_one_epoch() {
        for (i, mode) in Mode::ALL.into_iter().enumerate() {
            let (mut enc, mut bank, windows) = tiny_setup(mode, 20 + i as u64);
            let mut lc = LossConfig::new(mode);
            let tc = TrainConfig {
                max_epochs: 1,
                patience: 1,
                ..quick_config(11)
            };
            let report = train(&mut enc, &mut bank, &windows, &tc, &mut lc).unwrap();
            assert!(report.train_losses[0].is_finite(), "{mode}: finite loss");
            if mode == Mode::Occ {
                assert!(lc.occ_center.is_some(), "center fixed at initialization");
            }
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let (mut enc, mut bank, mut windows) = tiny_setup(Mode::Ccl, 31);
        for (i, w) in windows.iter_mut().enumerate() {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            for v in w.suspect.data_mut() {
                *v = sign * 1e308;
            }
            for (j, v) in w.context.data_mut().iter_mut().enumerate() {
                *v = -sign * 1e308 * (j % 3) as f64;
            }
        }
        let mut lc = LossConfig::new(Mode::Ccl);
        let err = train(&mut enc, &mut bank, &windows, &quick_config(1), &mut lc).unwrap_err();
        match err {
            Error::NonFiniteLoss { epoch, batch } => {
                assert_eq!(epoch, 0);
                assert_eq!(batch, 0);
            }
            other => panic!("expected a non-finite-loss abort, got {other}"),
        }
    }

    #[test]
    fn occ_requires_bias_free_encoder() {
        let (mut enc, mut bank, windows) = tiny_setup(Mode::Ccl, 41); // has_bias = true
        let mut lc = LossConfig::new(Mode::Occ);
        assert!(train(&mut enc, &mut bank, &windows, &quick_config(1), &mut lc).is_err());
    }

    #[test]
    fn collapse_demo_reports_variances_and_rejects_wrong_mode() {
        let (mut enc, _, windows) = tiny_setup(Mode::Ccl, 51);
        let lc = LossConfig::new(Mode::Ccl);
        let tc = TrainConfig {
            max_epochs: 2,
            patience: 2,
            ..quick_config(13)
        };
        let report = collapse_demo(&mut enc, &windows, &tc, &lc).unwrap();
        assert!(report.variance_before.is_finite() && report.variance_before >= 0.0);
        assert!(report.variance_after.is_finite() && report.variance_after >= 0.0);

        let bad = LossConfig::new(Mode::Occ);
        let (mut enc2, _, windows2) = tiny_setup(Mode::Ccl, 52);
        assert!(collapse_demo(&mut enc2, &windows2, &tc, &bad).is_err());
    }

    #[test]
    fn zero_weight_encoder_has_zero_ccl_everywhere() {
        let cfg = EncoderConfig {
            hidden_dim: 8,
            block_count: 2,
            kernel_set: vec![2, 3],
            dilation_base: 2,
            seed: 0,
        };
        let enc = EncoderState::<f64>::zero_weights(cfg, 1).unwrap();
        let bank = TransformBank::init(2, 8, 0).unwrap();
        let s = series(60, 3);
        let windows = make_windows(&s, &WindowSpec::new(10, 2, 1).unwrap()).unwrap();
        let lc = LossConfig::new(Mode::Ccl);
        let loss = evaluate_loss(&enc, &bank, &lc, &windows, 16).unwrap();
        assert_eq!(loss, 0.0, "constant encoder minimizes the plain contextual loss exactly");
    }
}
