//! Shared temporal-convolutional feature encoder.
//!
//! An input 1x1 convolution lifts the raw channels to width `d`, then each
//! of `L` blocks runs parallel causal dilated convolutions (one per kernel
//! size, `d/m` channels each), concatenates them back to `d`, applies batch
//! norm and ReLU, and adds a residual connection. Dilation grows as
//! `dilation_base^block`, capped at the sequence length; left zero-padding
//! keeps every length intact, so the stack works for any sub-sequence length.
//! The latent is read from the LAST time position (preserving causality) and
//! mapped through a final `d x d` linear layer.
//!
//! The same state encodes both context and suspect sequences — the two views
//! must share every weight.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub block_count: usize,
    pub kernel_set: Vec<usize>,
    pub dilation_base: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dim: 32,
            block_count: 8,
            kernel_set: vec![2, 3, 6, 7],
            dilation_base: 2,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.kernel_set.len();
        if m == 0 {
            return Err(Error::invalid("kernel_set", "must not be empty"));
        }
        if self.kernel_set.iter().any(|&k| k < 1) {
            return Err(Error::invalid("kernel_set", "kernel sizes must be >= 1"));
        }
        if self.block_count < 1 {
            return Err(Error::invalid("block_count", "need L >= 1"));
        }
        if self.hidden_dim < m {
            return Err(Error::invalid(
                "hidden_dim",
                format!("d = {} smaller than kernel count {m}", self.hidden_dim),
            ));
        }
        if self.hidden_dim % m != 0 {
            return Err(Error::invalid(
                "hidden_dim",
                format!("d = {} not divisible by kernel count {m}", self.hidden_dim),
            ));
        }
        if self.dilation_base < 1 {
            return Err(Error::invalid("dilation_base", "must be >= 1"));
        }
        Ok(())
    }

    /// Dilation of block `b` on sequences of length `seq_len`:
    /// `dilation_base^b`, capped at the sequence length.
    pub fn dilation(&self, block: usize, seq_len: usize) -> usize {
        let raw = (self.dilation_base as u128).saturating_pow(block as u32);
        raw.min(seq_len.max(1) as u128) as usize
    }

    /// Ticks of history one latent can see:
    /// `1 + sum over blocks of (max kernel - 1) * dilation(block)`.
    pub fn receptive_field(&self, seq_len: usize) -> usize {
        let max_k = self.kernel_set.iter().copied().max().unwrap_or(1);
        1 + (0..self.block_count)
            .map(|b| (max_k - 1) * self.dilation(b, seq_len))
            .sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockState<F> {
    /// One `[d/m, d, k]` kernel per entry of the kernel set.
    pub kernels: Vec<Tensor<F>>,
    /// Post-concat bias `[d]`; feeds straight into batch norm, which absorbs
    /// constant channel shifts in train mode.
    pub conv_bias: Tensor<F>,
    pub bn_gamma: Tensor<F>,
    pub bn_beta: Tensor<F>,
    pub bn_running_mean: Tensor<F>,
    pub bn_running_var: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState<F> {
    pub config: EncoderConfig,
    pub in_channels: usize,
    /// When false (one-class mode), every additive bias — input/output/conv
    /// biases and the batch-norm shift — is frozen at zero and excluded from
    /// the trainable set, closing the constant-map escape hatch.
    pub has_bias: bool,
    pub input_w: Tensor<F>,
    pub input_b: Tensor<F>,
    pub blocks: Vec<BlockState<F>>,
    pub output_w: Tensor<F>,
    pub output_b: Tensor<F>,
}

/// Tape handles for one registration of the encoder's trainable tensors.
pub struct EncoderIds {
    input_w: TensorId,
    input_b: Option<TensorId>,
    blocks: Vec<BlockIds>,
    output_w: TensorId,
    output_b: Option<TensorId>,
}

struct BlockIds {
    kernels: Vec<TensorId>,
    conv_bias: Option<TensorId>,
    bn_gamma: TensorId,
    bn_beta: Option<TensorId>,
}

impl EncoderIds {
    /// Handles of the weight matrices/kernels (no biases, no batch-norm
    /// affine), matching [`EncoderState::weight_square_norms`].
    pub fn weight_ids(&self) -> Vec<TensorId> {
        let mut out = vec![self.input_w];
        for b in &self.blocks {
            out.extend(b.kernels.iter().copied());
        }
        out.push(self.output_w);
        out
    }

    /// All trainable handles, in [`EncoderState::params`] order.
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut out = vec![self.input_w];
        out.extend(self.input_b);
        for b in &self.blocks {
            out.extend(b.kernels.iter().copied());
            out.extend(b.conv_bias);
            out.push(b.bn_gamma);
            out.extend(b.bn_beta);
        }
        out.push(self.output_w);
        out.extend(self.output_b);
        out
    }
}

/// Result of one forward pass.
pub struct EncoderForward {
    /// `[B, d]` latent after the output linear layer.
    pub latent: TensorId,
    /// `[B, d, c]` features before the last-step readout.
    pub features: TensorId,
    /// Train mode only: one batch-norm node per block, for running-stat
    /// absorption via [`EncoderState::absorb_batch_stats`].
    pub bn_nodes: Vec<TensorId>,
}

impl<F: Scalar> EncoderState<F> {
    pub fn init(config: EncoderConfig, in_channels: usize, has_bias: bool) -> Result<Self> {
        config.validate()?;
        if in_channels < 1 {
            return Err(Error::invalid("in_channels", "need at least one channel"));
        }
        let d = config.hidden_dim;
        let m = config.kernel_set.len();
        let branch = d / m;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let input_bound = (1.0 / in_channels as f64).sqrt();
        let input_w = Tensor::uniform(&[d, in_channels, 1], -input_bound, input_bound, &mut rng);
        let blocks = (0..config.block_count)
            .map(|_| {
                let kernels = config
                    .kernel_set
                    .iter()
                    .map(|&k| {
                        let bound = (1.0 / (d * k) as f64).sqrt();
                        Tensor::uniform(&[branch, d, k], -bound, bound, &mut rng)
                    })
                    .collect();
                BlockState {
                    kernels,
                    conv_bias: Tensor::zeros(&[d]),
                    // Damped norm scale starts every residual block close to
                    // the identity map, so temporal depth is mostly grown by
                    // the optimizer instead of imposed at initialization. At
                    // scale 1 the stacked convolutions smear each tick's
                    // influence across the whole receptive field from step
                    // one, and a point disturbance keeps scoring high for
                    // several ticks after it has left the suspect sequence; at
                    // scale 0 the kernel gradient paths are dead and training
                    // never learns temporal structure at all.
                    bn_gamma: Tensor::full(&[d], F::cast(0.5)),
                    bn_beta: Tensor::zeros(&[d]),
                    bn_running_mean: Tensor::zeros(&[d]),
                    bn_running_var: Tensor::full(&[d], F::one()),
                }
            })
            .collect();
        let out_bound = (1.0 / d as f64).sqrt();
        let output_w = Tensor::uniform(&[d, d], -out_bound, out_bound, &mut rng);
        Ok(EncoderState {
            config,
            in_channels,
            has_bias,
            input_w,
            input_b: Tensor::zeros(&[d]),
            blocks,
            output_w,
            output_b: Tensor::zeros(&[d]),
        })
    }

    /// The constant-map construction: every weight and bias zero. Any input
    /// encodes to the zero vector, so distance-based losses sit at their
    /// degenerate optimum.
    pub fn zero_weights(config: EncoderConfig, in_channels: usize) -> Result<Self> {
        let mut s = Self::init(config, in_channels, true)?;
        s.input_w = Tensor::zeros(s.input_w.shape());
        for b in &mut s.blocks {
            for k in &mut b.kernels {
                *k = Tensor::zeros(k.shape());
            }
        }
        s.output_w = Tensor::zeros(s.output_w.shape());
        Ok(s)
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Trainable tensors in canonical order. Running statistics are state,
    /// not parameters, and are never returned here.
    pub fn params(&self) -> Vec<&Tensor<F>> {
        let mut out: Vec<&Tensor<F>> = vec![&self.input_w];
        if self.has_bias {
            out.push(&self.input_b);
        }
        for b in &self.blocks {
            out.extend(b.kernels.iter());
            if self.has_bias {
                out.push(&b.conv_bias);
            }
            out.push(&b.bn_gamma);
            if self.has_bias {
                out.push(&b.bn_beta);
            }
        }
        out.push(&self.output_w);
        if self.has_bias {
            out.push(&self.output_b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let has_bias = self.has_bias;
        let mut out: Vec<&mut Tensor<F>> = vec![&mut self.input_w];
        if has_bias {
            out.push(&mut self.input_b);
        }
        for b in &mut self.blocks {
            out.extend(b.kernels.iter_mut());
            if has_bias {
                out.push(&mut b.conv_bias);
            }
            out.push(&mut b.bn_gamma);
            if has_bias {
                out.push(&mut b.bn_beta);
            }
        }
        out.push(&mut self.output_w);
        if has_bias {
            out.push(&mut self.output_b);
        }
        out
    }

    /// Names matching [`EncoderState::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["encoder.input_w".to_string()];
        if self.has_bias {
            out.push("encoder.input_b".into());
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            for ki in 0..b.kernels.len() {
                out.push(format!("encoder.block{bi}.kernel{ki}"));
            }
            if self.has_bias {
                out.push(format!("encoder.block{bi}.conv_bias"));
            }
            out.push(format!("encoder.block{bi}.bn_gamma"));
            if self.has_bias {
                out.push(format!("encoder.block{bi}.bn_beta"));
            }
        }
        out.push("encoder.output_w".into());
        if self.has_bias {
            out.push("encoder.output_b".into());
        }
        out
    }

    /// Squared L2 norms of all weight matrices/kernels (biases and batch-norm
    /// affine excluded), for the one-class weight-decay term.
    pub fn weight_square_norms(&self) -> F {
        let mut total = F::zero();
        let mut add = |t: &Tensor<F>| total += t.data().iter().map(|&x| x * x).sum::<F>();
        add(&self.input_w);
        for b in &self.blocks {
            for k in &b.kernels {
                add(k);
            }
        }
        add(&self.output_w);
        total
    }

    /// Push current parameter values onto the tape.
    pub fn register(&self, tape: &mut Tape<F>) -> EncoderIds {
        EncoderIds {
            input_w: tape.leaf(self.input_w.clone()),
            input_b: self.has_bias.then(|| tape.leaf(self.input_b.clone())),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockIds {
                    kernels: b.kernels.iter().map(|k| tape.leaf(k.clone())).collect(),
                    conv_bias: self.has_bias.then(|| tape.leaf(b.conv_bias.clone())),
                    bn_gamma: tape.leaf(b.bn_gamma.clone()),
                    bn_beta: self.has_bias.then(|| tape.leaf(b.bn_beta.clone())),
                })
                .collect(),
            output_w: tape.leaf(self.output_w.clone()),
            output_b: self.has_bias.then(|| tape.leaf(self.output_b.clone())),
        }
    }

    /// Rebuild handles from a flat id list laid out like
    /// [`EncoderState::params`]; the gradient checker owns leaf creation.
    pub fn ids_from_slice(&self, ids: &[TensorId]) -> Result<EncoderIds> {
        let need = self.params().len();
        if ids.len() != need {
            return Err(Error::shape("encoder ids", format!("{need}"), format!("{}", ids.len())));
        }
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("length checked");
        let input_w = next();
        let input_b = self.has_bias.then(&mut next);
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockIds {
                kernels: (0..b.kernels.len()).map(|_| next()).collect(),
                conv_bias: self.has_bias.then(&mut next),
                bn_gamma: next(),
                bn_beta: self.has_bias.then(&mut next),
            })
            .collect();
        let output_w = next();
        let output_b = self.has_bias.then(&mut next);
        Ok(EncoderIds {
            input_w,
            input_b,
            blocks,
            output_w,
            output_b,
        })
    }

    /// Forward a `[B, N, c]` batch to `[B, d]` latents. Train mode runs
    /// batch norm on batch statistics (recorded for later absorption into
    /// running stats); eval mode folds the stored running statistics into a
    /// per-channel affine map.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        ids: &EncoderIds,
        x: TensorId,
        train: bool,
    ) -> Result<EncoderForward> {
        let shape = tape.value(x)?.shape().to_vec();
        if shape.len() != 3 || shape[1] != self.in_channels {
            return Err(Error::shape(
                "encoder input",
                format!("[B, {}, c]", self.in_channels),
                format!("{shape:?}"),
            ));
        }
        let seq_len = shape[2];
        let eps = F::cast(BN_EPS);
        let mut z = tape.conv1d_causal(x, ids.input_w, 1, true)?;
        if let Some(b) = ids.input_b {
            z = tape.add_channel_bias(z, b)?;
        }
        let mut bn_nodes = Vec::new();
        for (bi, (block, bids)) in self.blocks.iter().zip(&ids.blocks).enumerate() {
            let dilation = self.config.dilation(bi, seq_len);
            let branches: Vec<TensorId> = bids
                .kernels
                .iter()
                .map(|&k| tape.conv1d_causal(z, k, dilation, true))
                .collect::<Result<_>>()?;
            let mut y = tape.concat_channels(&branches)?;
            if let Some(b) = bids.conv_bias {
                y = tape.add_channel_bias(y, b)?;
            }
            y = if train {
                let beta = match bids.bn_beta {
                    Some(b) => b,
                    None => tape.leaf(Tensor::zeros(&[self.config.hidden_dim])),
                };
                let bn = tape.batch_norm(y, bids.bn_gamma, beta, eps)?;
                bn_nodes.push(bn);
                bn
            } else {
                // running stats are constants; gamma/beta stay differentiable
                let inv_std: Vec<F> = block
                    .bn_running_var
                    .data()
                    .iter()
                    .map(|&v| F::one() / (v + eps).sqrt())
                    .collect();
                let mean_scaled: Vec<F> = block
                    .bn_running_mean
                    .data()
                    .iter()
                    .zip(&inv_std)
                    .map(|(&m, &i)| m * i)
                    .collect();
                let d = self.config.hidden_dim;
                let inv_std = tape.leaf(Tensor::from_vec(vec![d], inv_std)?);
                let mean_scaled = tape.leaf(Tensor::from_vec(vec![d], mean_scaled)?);
                let scale = tape.mul(bids.bn_gamma, inv_std)?;
                let centered = tape.mul(bids.bn_gamma, mean_scaled)?;
                let shift = match bids.bn_beta {
                    Some(beta) => tape.sub(beta, centered)?,
                    None => tape.neg(centered)?,
                };
                tape.channel_affine(y, scale, shift)?
            };
            y = tape.relu(y)?;
            z = tape.add(z, y)?;
        }
        let feat = tape.last_step(z)?;
        let mut latent = tape.matmul(feat, ids.output_w)?;
        if let Some(b) = ids.output_b {
            latent = tape.add_row_broadcast(latent, b)?;
        }
        Ok(EncoderForward {
            latent,
            features: z,
            bn_nodes,
        })
    }

    /// Fold the batch statistics captured by a train-mode forward pass into
    /// the running statistics (momentum 0.1, unbiased variance).
    pub fn absorb_batch_stats(&mut self, tape: &Tape<F>, fwd: &EncoderForward) -> Result<()> {
        if fwd.bn_nodes.len() != self.blocks.len() {
            return Err(Error::invalid("forward", "not a train-mode forward pass"));
        }
        let mom = F::cast(BN_MOMENTUM);
        let keep = F::one() - mom;
        for (block, &bn) in self.blocks.iter_mut().zip(&fwd.bn_nodes) {
            let stats = tape.batch_norm_stats(bn)?;
            for (slot, &m) in block.bn_running_mean.data_mut().iter_mut().zip(&stats.mean) {
                *slot = keep * *slot + mom * m;
            }
            for (slot, &v) in block
                .bn_running_var
                .data_mut()
                .iter_mut()
                .zip(&stats.var_unbiased)
            {
                *slot = keep * *slot + mom * v;
            }
        }
        Ok(())
    }

    /// Eval-mode batch encoding outside any training graph.
    pub fn encode_batch_values(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let ids = self.register(&mut tape);
        let xid = tape.leaf(x.clone());
        let fwd = self.forward(&mut tape, &ids, xid, false)?;
        Ok(tape.value(fwd.latent)?.clone())
    }

    /// Eval-mode encoding of a single `[N, c]` sequence to a `[d]` latent.
    pub fn encode_value(&self, seq: &Tensor<F>) -> Result<Tensor<F>> {
        if seq.shape().len() != 2 {
            return Err(Error::shape("sequence", "[N, c]", format!("{:?}", seq.shape())));
        }
        let batched = Tensor::from_vec(
            vec![1, seq.shape()[0], seq.shape()[1]],
            seq.data().to_vec(),
        )?;
        let out = self.encode_batch_values(&batched)?;
        Tensor::from_vec(vec![self.config.hidden_dim], out.data().to_vec())
    }

    /// Train-mode encoding of a single sequence; updates running statistics.
    pub fn encode_train(&mut self, seq: &Tensor<F>) -> Result<Tensor<F>> {
        if seq.shape().len() != 2 {
            return Err(Error::shape("sequence", "[N, c]", format!("{:?}", seq.shape())));
        }
        let batched = Tensor::from_vec(
            vec![1, seq.shape()[0], seq.shape()[1]],
            seq.data().to_vec(),
        )?;
        let mut tape = Tape::new();
        let ids = self.register(&mut tape);
        let xid = tape.leaf(batched);
        let fwd = self.forward(&mut tape, &ids, xid, true)?;
        let out = tape.value(fwd.latent)?.clone();
        self.absorb_batch_stats(&tape, &fwd)?;
        Tensor::from_vec(vec![self.config.hidden_dim], out.data().to_vec())
    }

    /// Eval-mode features `[d, c]` before the readout, for causality checks.
    pub fn encode_features_value(&self, seq: &Tensor<F>) -> Result<Tensor<F>> {
        let batched = Tensor::from_vec(
            vec![1, seq.shape()[0], seq.shape()[1]],
            seq.data().to_vec(),
        )?;
        let mut tape = Tape::new();
        let ids = self.register(&mut tape);
        let xid = tape.leaf(batched);
        let fwd = self.forward(&mut tape, &ids, xid, false)?;
        let f = tape.value(fwd.features)?;
        Tensor::from_vec(vec![f.shape()[1], f.shape()[2]], f.data().to_vec())
    }
}
