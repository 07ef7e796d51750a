//! Training objectives and the anomaly score.
//!
//! Everything operates on latent batches `[B, d]` recorded on a tape, so the
//! same code path serves training (with backward) and scoring (forward only).
//! The `*_rows` functions return per-sample `[B]` values; `*_batch` wrappers
//! reduce them to the scalar mean that is optimized.
//!
//! The combined objective `cdcl = cncl + dcl` is also, verbatim, the
//! per-sample anomaly score at inference.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Which objective a run trains and scores with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Contextual discriminative contrastive: cncl + dcl. The default.
    Cdcl,
    /// Plain suspect-vs-context squared distance; collapses without help.
    Ccl,
    /// Discriminative contrastive over transformed views only.
    Dcl,
    /// One-class objective: pull latents to a fixed center, weight decay on.
    Occ,
    /// Ccl plus batch-variance hinge regularizers; scores with ccl alone.
    CclReg,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Cdcl, Mode::Ccl, Mode::Dcl, Mode::Occ, Mode::CclReg];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Cdcl => "CDCL",
            Mode::Ccl => "CCL",
            Mode::Dcl => "DCL",
            Mode::Occ => "OCC",
            Mode::CclReg => "CCL_REG",
        }
    }

    /// Does this mode use the transformation bank?
    pub fn uses_bank(&self) -> bool {
        matches!(self, Mode::Cdcl | Mode::Dcl)
    }

    /// Does this mode use the context sequence?
    pub fn uses_context(&self) -> bool {
        matches!(self, Mode::Cdcl | Mode::Ccl | Mode::CclReg)
    }

    /// One-class mode removes every additive bias from the encoder so the
    /// trivial constant solution is not reachable through bias terms.
    pub fn strips_bias(&self) -> bool {
        matches!(self, Mode::Occ)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CDCL" => Ok(Mode::Cdcl),
            "CCL" => Ok(Mode::Ccl),
            "DCL" => Ok(Mode::Dcl),
            "OCC" => Ok(Mode::Occ),
            "CCL_REG" => Ok(Mode::CclReg),
            other => Err(Error::invalid(
                "mode",
                format!("unknown mode '{other}' (expected CDCL, CCL, DCL, OCC, or CCL_REG)"),
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossConfig<F> {
    pub mode: Mode,
    /// Temperature τ inside the exponential cosine score.
    pub temperature: F,
    /// Hinge target for the variance regularizer.
    pub hinge_target: F,
    /// Stabilizer inside the variance square root.
    pub epsilon: F,
    /// Weight-decay coefficient (one-class mode).
    pub lambda: F,
    /// Fixed one-class center; the trainer fills this in at initialization
    /// when absent.
    pub occ_center: Option<Tensor<F>>,
}

impl<F: Scalar> LossConfig<F> {
    pub fn new(mode: Mode) -> Self {
        LossConfig {
            mode,
            temperature: F::cast(0.1),
            hinge_target: F::one(),
            epsilon: F::cast(1e-4),
            lambda: F::cast(1e-4),
            occ_center: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= F::zero() {
            return Err(Error::invalid("temperature", "must be > 0"));
        }
        if self.hinge_target <= F::zero() {
            return Err(Error::invalid("hinge_target", "must be > 0"));
        }
        if self.epsilon <= F::zero() {
            return Err(Error::invalid("epsilon", "must be > 0"));
        }
        if self.lambda < F::zero() {
            return Err(Error::invalid("lambda", "must be >= 0"));
        }
        Ok(())
    }
}

/// Per-row cosine similarity of two `[B, d]` batches; norms floored at
/// 1e-12, so zero vectors yield similarity 0 rather than NaN.
pub fn cos_sim_rows<F: Scalar>(tape: &mut Tape<F>, a: TensorId, b: TensorId) -> Result<TensorId> {
    let dot = tape.row_dot(a, b)?;
    let na = tape.row_norm(a)?;
    let nb = tape.row_norm(b)?;
    let den = tape.mul(na, nb)?;
    tape.div(dot, den)
}

/// `h(a, b) = exp(cos_sim(a, b)/τ)`, rowwise.
pub fn h_rows<F: Scalar>(tape: &mut Tape<F>, a: TensorId, b: TensorId, tau: F) -> Result<TensorId> {
    let cos = cos_sim_rows(tape, a, b)?;
    let scaled = tape.scale(cos, F::one() / tau)?;
    tape.exp(scaled)
}

/// Plain-value `h` for single vectors, shared by tests and the scale
/// invariance check.
pub fn h_value<F: Scalar>(a: &[F], b: &[F], tau: F) -> F {
    let floor = F::numeric_floor();
    let dot: F = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<F>().sqrt().max(floor);
    let nb = b.iter().map(|&x| x * x).sum::<F>().sqrt().max(floor);
    (dot / (na * nb) / tau).exp()
}

/// Rowwise squared distance `||o - g||^2` on `[B, d]`.
pub fn ccl_rows<F: Scalar>(tape: &mut Tape<F>, o: TensorId, g: TensorId) -> Result<TensorId> {
    let diff = tape.sub(o, g)?;
    let sq = tape.mul(diff, diff)?;
    tape.row_sum(sq)
}

/// Discriminative contrastive loss per row:
/// `-sum_k log[ h(O, O_k) / (h(O, O_k) + sum_{l != k} h(O_k, O_l)) ]`.
/// The untransformed latent is the anchor; requires at least two views.
pub fn dcl_rows<F: Scalar>(
    tape: &mut Tape<F>,
    o: TensorId,
    views: &[TensorId],
    tau: F,
) -> Result<TensorId> {
    let k_count = views.len();
    if k_count < 2 {
        return Err(Error::invalid(
            "views",
            format!("discriminative loss needs K >= 2 transformations, got {k_count}"),
        ));
    }
    let numerators: Vec<TensorId> = views
        .iter()
        .map(|&v| h_rows(tape, o, v, tau))
        .collect::<Result<_>>()?;
    // pair[k][l] for k < l; h is symmetric in its arguments
    let mut pairs = vec![vec![None; k_count]; k_count];
    for k in 0..k_count {
        for l in k + 1..k_count {
            pairs[k][l] = Some(h_rows(tape, views[k], views[l], tau)?);
        }
    }
    let mut acc: Option<TensorId> = None;
    for k in 0..k_count {
        let mut den = numerators[k];
        for l in 0..k_count {
            if l == k {
                continue;
            }
            let p = pairs[k.min(l)][k.max(l)].expect("filled above");
            den = tape.add(den, p)?;
        }
        let log_num = tape.log(numerators[k])?;
        let log_den = tape.log(den)?;
        let term = tape.sub(log_num, log_den)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    tape.neg(acc.expect("K >= 2"))
}

/// Contextual loss over the transformed views:
/// `sum_k ||O_k - G||^2`, rowwise.
pub fn cncl_rows<F: Scalar>(tape: &mut Tape<F>, views: &[TensorId], g: TensorId) -> Result<TensorId> {
    if views.is_empty() {
        return Err(Error::invalid("views", "need at least one view"));
    }
    let mut acc: Option<TensorId> = None;
    for &v in views {
        let term = ccl_rows(tape, v, g)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("views nonempty"))
}

/// Combined objective and anomaly score: `cncl + dcl`, rowwise.
pub fn cdcl_rows<F: Scalar>(
    tape: &mut Tape<F>,
    o: TensorId,
    views: &[TensorId],
    g: TensorId,
    tau: F,
) -> Result<TensorId> {
    let c = cncl_rows(tape, views, g)?;
    let d = dcl_rows(tape, o, views, tau)?;
    tape.add(c, d)
}

/// Rowwise squared distance to the fixed one-class center.
pub fn occ_rows<F: Scalar>(tape: &mut Tape<F>, latents: TensorId, center: &Tensor<F>) -> Result<TensorId> {
    let c = tape.leaf(center.clone());
    let neg_c = tape.neg(c)?;
    let diff = tape.add_row_broadcast(latents, neg_c)?;
    let sq = tape.mul(diff, diff)?;
    tape.row_sum(sq)
}

/// Batch-variance hinge on `[B, d]`:
/// `(1/d) sum_j max(0, target - sqrt(Var_j + eps))` with the unbiased
/// per-dimension variance across the batch. Needs B >= 2.
pub fn var_reg<F: Scalar>(tape: &mut Tape<F>, x: TensorId, target: F, eps: F) -> Result<TensorId> {
    let shape = tape.value(x)?.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("var_reg", "[B, d]", format!("{shape:?}")));
    }
    let b = shape[0];
    if b < 2 {
        return Err(Error::invalid(
            "batch",
            format!("variance regularizer needs a batch of >= 2, got {b}"),
        ));
    }
    let mean = tape.col_mean(x)?;
    let neg_mean = tape.neg(mean)?;
    let centered = tape.add_row_broadcast(x, neg_mean)?;
    let sq = tape.mul(centered, centered)?;
    let biased = tape.col_mean(sq)?;
    let var = tape.scale(biased, F::cast(b as f64 / (b as f64 - 1.0)))?;
    let std = {
        let shifted = tape.add_scalar(var, eps)?;
        tape.sqrt(shifted)?
    };
    let neg_std = tape.neg(std)?;
    let margin = tape.add_scalar(neg_std, target)?;
    let hinge = tape.relu(margin)?;
    tape.mean(hinge)
}

fn batch_mean<F: Scalar>(tape: &mut Tape<F>, rows: TensorId) -> Result<TensorId> {
    tape.mean(rows)
}

pub fn ccl_batch<F: Scalar>(tape: &mut Tape<F>, o: TensorId, g: TensorId) -> Result<TensorId> {
    let rows = ccl_rows(tape, o, g)?;
    batch_mean(tape, rows)
}

pub fn dcl_batch<F: Scalar>(
    tape: &mut Tape<F>,
    o: TensorId,
    views: &[TensorId],
    tau: F,
) -> Result<TensorId> {
    let rows = dcl_rows(tape, o, views, tau)?;
    batch_mean(tape, rows)
}

pub fn cncl_batch<F: Scalar>(tape: &mut Tape<F>, views: &[TensorId], g: TensorId) -> Result<TensorId> {
    let rows = cncl_rows(tape, views, g)?;
    batch_mean(tape, rows)
}

pub fn cdcl_batch<F: Scalar>(
    tape: &mut Tape<F>,
    o: TensorId,
    views: &[TensorId],
    g: TensorId,
    tau: F,
) -> Result<TensorId> {
    let rows = cdcl_rows(tape, o, views, g, tau)?;
    batch_mean(tape, rows)
}

/// One-class objective: mean squared distance to the center plus
/// `lambda * sum of squared weight norms` over the given weight tensors.
pub fn occ_batch<F: Scalar>(
    tape: &mut Tape<F>,
    latents: TensorId,
    center: &Tensor<F>,
    lambda: F,
    weight_ids: &[TensorId],
) -> Result<TensorId> {
    let rows = occ_rows(tape, latents, center)?;
    let mut loss = batch_mean(tape, rows)?;
    if lambda > F::zero() {
        let mut penalty: Option<TensorId> = None;
        for &w in weight_ids {
            let sq = tape.mul(w, w)?;
            let s = tape.sum(sq)?;
            penalty = Some(match penalty {
                Some(p) => tape.add(p, s)?,
                None => s,
            });
        }
        if let Some(p) = penalty {
            let scaled = tape.scale(p, lambda)?;
            loss = tape.add(loss, scaled)?;
        }
    }
    Ok(loss)
}

/// Ccl plus variance hinges on both latent batches; the score at inference
/// is ccl alone.
pub fn ccl_reg_batch<F: Scalar>(
    tape: &mut Tape<F>,
    o: TensorId,
    g: TensorId,
    target: F,
    eps: F,
) -> Result<TensorId> {
    let base = ccl_batch(tape, o, g)?;
    let vo = var_reg(tape, o, target, eps)?;
    let vg = var_reg(tape, g, target, eps)?;
    let partial = tape.add(base, vo)?;
    tape.add(partial, vg)
}

/// Per-sample anomaly scores for a mode, as `[B]` rows. Context latents and
/// views are only consulted by the modes that use them.
pub fn score_rows<F: Scalar>(
    tape: &mut Tape<F>,
    cfg: &LossConfig<F>,
    suspect_latents: TensorId,
    context_latents: Option<TensorId>,
    views: Option<&[TensorId]>,
) -> Result<TensorId> {
    let need_ctx = || {
        context_latents.ok_or_else(|| Error::invalid("context", "mode requires context latents"))
    };
    let need_views = || views.ok_or_else(|| Error::invalid("views", "mode requires transformed views"));
    match cfg.mode {
        Mode::Cdcl => {
            let g = need_ctx()?;
            let v = need_views()?;
            cdcl_rows(tape, suspect_latents, v, g, cfg.temperature)
        }
        Mode::Ccl | Mode::CclReg => {
            let g = need_ctx()?;
            ccl_rows(tape, suspect_latents, g)
        }
        Mode::Dcl => {
            let v = need_views()?;
            dcl_rows(tape, suspect_latents, v, cfg.temperature)
        }
        Mode::Occ => {
            let center = cfg
                .occ_center
                .as_ref()
                .ok_or_else(|| Error::invalid("occ_center", "one-class center not initialized"))?;
            occ_rows(tape, suspect_latents, center)
        }
    }
}
