//! One recorded graph tying encoder, transformation bank, and loss together
//! for a batch of window samples. Training, validation, and scoring all go
//! through [`batch_graph`] so the arithmetic is identical everywhere.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, Tape, TensorId};
use crate::data::WindowSample;
use crate::encoder::{EncoderConfig, EncoderForward, EncoderState};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, Mode};
use crate::tensor::Tensor;
use crate::transforms::TransformBank;
use crate::Scalar;

pub struct BatchGraph<F> {
    pub tape: Tape<F>,
    /// Per-sample anomaly scores `[B]` for the configured mode.
    pub scores: TensorId,
    /// The scalar training objective; present only when requested (it can
    /// add regularizers on top of the mean score).
    pub objective: Option<TensorId>,
    /// Trainable leaves in canonical order: encoder params, then bank params
    /// when the mode uses the bank.
    pub param_ids: Vec<TensorId>,
    pub fwd_suspect: EncoderForward,
    pub fwd_context: Option<EncoderForward>,
}

/// Stack the suspect matrices of the chosen samples into `[B, N, c]`.
pub fn suspect_batch<F: Scalar>(samples: &[WindowSample<F>], idxs: &[usize]) -> Result<Tensor<F>> {
    stack(samples, idxs, true)
}

/// Stack the context matrices of the chosen samples into `[B, N, c]`.
pub fn context_batch<F: Scalar>(samples: &[WindowSample<F>], idxs: &[usize]) -> Result<Tensor<F>> {
    stack(samples, idxs, false)
}

fn stack<F: Scalar>(samples: &[WindowSample<F>], idxs: &[usize], suspect: bool) -> Result<Tensor<F>> {
    if idxs.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    let first = if suspect {
        &samples[idxs[0]].suspect
    } else {
        &samples[idxs[0]].context
    };
    let (n, c) = (first.shape()[0], first.shape()[1]);
    let mut data = Vec::with_capacity(idxs.len() * n * c);
    for &i in idxs {
        let t = if suspect { &samples[i].suspect } else { &samples[i].context };
        if t.shape() != [n, c] {
            return Err(Error::shape("batch", format!("[{n}, {c}]"), format!("{:?}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(vec![idxs.len(), n, c], data)
}

/// Build the forward graph for one batch. `train` selects batch-norm
/// behaviour; `with_objective` additionally assembles the scalar loss
/// (which for some modes carries regularizers that need batch size >= 2).
pub fn batch_graph<F: Scalar>(
    encoder: &EncoderState<F>,
    bank: &TransformBank<F>,
    lc: &LossConfig<F>,
    suspects: &Tensor<F>,
    contexts: Option<&Tensor<F>>,
    train: bool,
    with_objective: bool,
) -> Result<BatchGraph<F>> {
    lc.validate()?;
    if lc.mode.uses_bank() && bank.dim() != encoder.hidden_dim() {
        return Err(Error::shape(
            "bank",
            format!("dim {}", encoder.hidden_dim()),
            format!("{}", bank.dim()),
        ));
    }
    let mut tape = Tape::new();
    let enc_ids = encoder.register(&mut tape);
    let mut param_ids = enc_ids.param_ids();
    let bank_ids = lc.mode.uses_bank().then(|| bank.register(&mut tape));
    if let Some(b) = &bank_ids {
        param_ids.extend(b.param_ids());
    }

    let xs = tape.leaf(suspects.clone());
    let fwd_suspect = encoder.forward(&mut tape, &enc_ids, xs, train)?;
    let fwd_context = if lc.mode.uses_context() {
        let ctx = contexts.ok_or_else(|| {
            Error::invalid("context", format!("{} mode needs context sequences", lc.mode))
        })?;
        let xc = tape.leaf(ctx.clone());
        Some(encoder.forward(&mut tape, &enc_ids, xc, train)?)
    } else {
        None
    };
    let g_latent = fwd_context.as_ref().map(|f| f.latent);

    let views = match &bank_ids {
        Some(ids) => Some(bank.apply_all(&mut tape, ids, fwd_suspect.latent)?),
        None => None,
    };

    let scores = losses::score_rows(&mut tape, lc, fwd_suspect.latent, g_latent, views.as_deref())?;

    let objective = if with_objective {
        let base = tape.mean(scores)?;
        Some(match lc.mode {
            Mode::Cdcl | Mode::Ccl | Mode::Dcl => base,
            Mode::Occ => {
                if lc.lambda > F::zero() {
                    let mut penalty: Option<TensorId> = None;
                    for w in enc_ids.weight_ids() {
                        let sq = tape.mul(w, w)?;
                        let s = tape.sum(sq)?;
                        penalty = Some(match penalty {
                            Some(p) => tape.add(p, s)?,
                            None => s,
                        });
                    }
                    let scaled = tape.scale(penalty.expect("encoder has weights"), lc.lambda)?;
                    tape.add(base, scaled)?
                } else {
                    base
                }
            }
            Mode::CclReg => {
                let g = g_latent.expect("ccl_reg uses context");
                let vs = losses::var_reg(&mut tape, fwd_suspect.latent, lc.hinge_target, lc.epsilon)?;
                let vg = losses::var_reg(&mut tape, g, lc.hinge_target, lc.epsilon)?;
                let partial = tape.add(base, vs)?;
                tape.add(partial, vg)?
            }
        })
    } else {
        None
    };

    Ok(BatchGraph {
        tape,
        scores,
        objective,
        param_ids,
        fwd_suspect,
        fwd_context,
    })
}

/// The six differentiable objectives the finite-difference verb verifies.
/// Wider than [`Mode`]: the intermediate cncl term is checked on its own
/// even though it is not a trainable mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckedLoss {
    Ccl,
    Dcl,
    Cncl,
    Cdcl,
    Occ,
    CclReg,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 6] = [
        CheckedLoss::Ccl,
        CheckedLoss::Dcl,
        CheckedLoss::Cncl,
        CheckedLoss::Cdcl,
        CheckedLoss::Occ,
        CheckedLoss::CclReg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckedLoss::Ccl => "CCL",
            CheckedLoss::Dcl => "DCL",
            CheckedLoss::Cncl => "CNCL",
            CheckedLoss::Cdcl => "CDCL",
            CheckedLoss::Occ => "OCC",
            CheckedLoss::CclReg => "CCL_REG",
        }
    }

    fn uses_bank(self) -> bool {
        matches!(self, CheckedLoss::Dcl | CheckedLoss::Cncl | CheckedLoss::Cdcl)
    }

    fn uses_context(self) -> bool {
        matches!(
            self,
            CheckedLoss::Ccl | CheckedLoss::Cncl | CheckedLoss::Cdcl | CheckedLoss::CclReg
        )
    }

    fn strips_bias(self) -> bool {
        matches!(self, CheckedLoss::Occ)
    }
}

impl fmt::Display for CheckedLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Max relative error between analytic and central-difference gradients of
/// the given objective on a small random model (d=4, K in {2,3} by seed
/// parity, batch 3, sequence length 8, 2 blocks), batch-norm in train mode.
///
/// Inert parameters are held fixed: on them the analytic gradient is zero by
/// construction and central differences return only rounding noise, so
/// perturbing them would check nothing:
///
/// * per-block conv biases — batch norm subtracts any constant channel
///   shift, under every loss;
/// * for difference-of-latents losses (ccl and its regularized variant), the
///   readout bias and the last block's bn shift — both latents receive the
///   identical head-level offset, which cancels in `O - G` (exactly for the
///   readout bias; through the locally linear relu for the bn shift).
///
/// Every other parameter is checked strictly.
pub fn finite_diff_loss_error<F: Scalar>(loss: CheckedLoss, seed: u64) -> Result<F> {
    const DIM: usize = 4;
    const BATCH: usize = 3;
    const SEQ: usize = 8;
    let k = 2 + (seed % 2) as usize;
    let config = EncoderConfig {
        hidden_dim: DIM,
        block_count: 2,
        kernel_set: vec![2, 3],
        dilation_base: 2,
        seed,
    };
    let mut encoder = EncoderState::<F>::init(config, 1, !loss.strips_bias())?;
    let bank = TransformBank::<F>::init(k, DIM, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
    // The production initializer sets every norm scale to the same damped
    // constant; differentiate at a generic point instead so no gradient
    // path sits at a special value.
    for b in &mut encoder.blocks {
        b.bn_gamma = Tensor::uniform(b.bn_gamma.shape(), 0.5, 1.5, &mut rng);
    }
    let suspects = Tensor::<F>::uniform(&[BATCH, 1, SEQ], -1.0, 1.0, &mut rng);
    let contexts = Tensor::<F>::uniform(&[BATCH, 1, SEQ], -1.0, 1.0, &mut rng);
    let center = Tensor::<F>::uniform(&[DIM], -0.5, 0.5, &mut rng);
    let tau = F::cast(0.1);
    let lambda = F::cast(1e-4);

    let names = encoder.param_names();
    let difference_head = matches!(loss, CheckedLoss::Ccl | CheckedLoss::CclReg);
    let last_beta = format!("encoder.block{}.bn_beta", 1);
    let keep: Vec<bool> = names
        .iter()
        .map(|n| {
            !n.contains("conv_bias")
                && !(difference_head && (n == "encoder.output_b" || *n == last_beta))
        })
        .collect();
    let enc_params = encoder.params();
    let mut params: Vec<Tensor<F>> = enc_params
        .iter()
        .zip(&keep)
        .filter_map(|(p, &kept)| kept.then(|| (*p).clone()))
        .collect();
    let kept_enc = params.len();
    let frozen: Vec<Tensor<F>> = enc_params
        .iter()
        .zip(&keep)
        .filter_map(|(p, &kept)| (!kept).then(|| (*p).clone()))
        .collect();
    if loss.uses_bank() {
        params.extend(bank.params().into_iter().cloned());
    }

    finite_diff_check(&params, F::cast(1e-5), |tape, ids| {
        let mut flat = Vec::with_capacity(names.len());
        let mut kept_it = ids[..kept_enc].iter().copied();
        let mut frozen_it = frozen.iter();
        for &kept in &keep {
            flat.push(if kept {
                kept_it.next().expect("counted")
            } else {
                tape.leaf(frozen_it.next().expect("counted").clone())
            });
        }
        let enc_ids = encoder.ids_from_slice(&flat)?;
        let bank_ids = if loss.uses_bank() {
            Some(bank.ids_from_slice(&ids[kept_enc..])?)
        } else {
            None
        };
        let xs = tape.leaf(suspects.clone());
        let o = encoder.forward(tape, &enc_ids, xs, true)?.latent;
        let g = if loss.uses_context() {
            let xc = tape.leaf(contexts.clone());
            Some(encoder.forward(tape, &enc_ids, xc, true)?.latent)
        } else {
            None
        };
        let views = match &bank_ids {
            Some(b) => Some(bank.apply_all(tape, b, o)?),
            None => None,
        };
        let views = views.as_deref();
        let rows = match loss {
            CheckedLoss::Ccl | CheckedLoss::CclReg => {
                losses::ccl_rows(tape, o, g.expect("context"))?
            }
            CheckedLoss::Dcl => losses::dcl_rows(tape, o, views.expect("bank"), tau)?,
            CheckedLoss::Cncl => losses::cncl_rows(tape, views.expect("bank"), g.expect("context"))?,
            CheckedLoss::Cdcl => {
                losses::cdcl_rows(tape, o, views.expect("bank"), g.expect("context"), tau)?
            }
            CheckedLoss::Occ => losses::occ_rows(tape, o, &center)?,
        };
        let base = tape.mean(rows)?;
        match loss {
            CheckedLoss::Occ => {
                let mut penalty: Option<TensorId> = None;
                for w in enc_ids.weight_ids() {
                    let sq = tape.mul(w, w)?;
                    let s = tape.sum(sq)?;
                    penalty = Some(match penalty {
                        Some(p) => tape.add(p, s)?,
                        None => s,
                    });
                }
                let scaled = tape.scale(penalty.expect("weights"), lambda)?;
                tape.add(base, scaled)
            }
            CheckedLoss::CclReg => {
                let vs = losses::var_reg(tape, o, F::one(), F::cast(1e-4))?;
                let vg = losses::var_reg(tape, g.expect("context"), F::one(), F::cast(1e-4))?;
                let partial = tape.add(base, vs)?;
                tape.add(partial, vg)
            }
            _ => Ok(base),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_checked_loss_matches_finite_differences() {
        for loss in CheckedLoss::ALL {
            for seed in 0..3u64 {
                let err = finite_diff_loss_error::<f64>(loss, seed).unwrap();
                assert!(err < 1e-4, "{loss} seed {seed}: {err}");
            }
        }
    }
}
