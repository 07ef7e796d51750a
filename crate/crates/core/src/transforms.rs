//! Bank of K learnable latent-space transformations.
//!
//! Each transformation is a three-layer map `R^d -> R^d` with hidden width
//! `d`, ReLU between layers 1-2 and 2-3, and an unbounded output so the
//! cosine geometry of the contrastive loss is unconstrained. Transformations
//! share no parameters with each other or with the encoder; the untransformed
//! latent itself plays the identity-view role inside the discriminative loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Weights of one transformation: three affine layers `d -> d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformWeights<F> {
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
    pub w3: Tensor<F>,
    pub b3: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformBank<F> {
    dim: usize,
    pub transforms: Vec<TransformWeights<F>>,
}

/// Tape handles for a registered bank, in the same order as
/// [`TransformBank::params`].
pub struct BankIds {
    per_transform: Vec<[TensorId; 6]>,
}

impl BankIds {
    /// All trainable handles, in [`TransformBank::params`] order.
    pub fn param_ids(&self) -> Vec<TensorId> {
        self.per_transform.iter().flatten().copied().collect()
    }
}

impl<F: Scalar> TransformBank<F> {
    /// `K` transformations over `R^dim`, each initialized from its own
    /// stream derived from `seed` so banks are reproducible and
    /// per-transformation independent.
    pub fn init(k: usize, dim: usize, seed: u64) -> Result<Self> {
        if k < 1 {
            return Err(Error::invalid("transform_count", "need K >= 1"));
        }
        if dim < 1 {
            return Err(Error::invalid("hidden_dim", "need d >= 1"));
        }
        // Weight scales target unit gain per layer (the rectified layers get
        // the doubled He variance, the linear output layer the plain one).
        // Gradient steps equalize the gain along directions that occur in
        // training data, but a transformation stays roughly norm-preserving
        // along directions it never saw — so an outlier latent is not damped
        // into the normal range on its way through the views.
        let relu_bound = (6.0 / dim as f64).sqrt();
        let out_bound = (3.0 / dim as f64).sqrt();
        let bias_bound = (1.0 / dim as f64).sqrt();
        let transforms = (0..k)
            .map(|i| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                // Biases keep the fan-in uniform range. A nonzero output
                // bias also keeps views away from the zero vector when a
                // row's hidden units all land in the dead ReLU region, where
                // cosine similarity is ill-conditioned.
                TransformWeights {
                    w1: Tensor::uniform(&[dim, dim], -relu_bound, relu_bound, &mut rng),
                    b1: Tensor::uniform(&[dim], -bias_bound, bias_bound, &mut rng),
                    w2: Tensor::uniform(&[dim, dim], -relu_bound, relu_bound, &mut rng),
                    b2: Tensor::uniform(&[dim], -bias_bound, bias_bound, &mut rng),
                    w3: Tensor::uniform(&[dim, dim], -out_bound, out_bound, &mut rng),
                    b3: Tensor::uniform(&[dim], -bias_bound, bias_bound, &mut rng),
                }
            })
            .collect();
        Ok(TransformBank { dim, transforms })
    }

    /// All-zero weights and biases: every view is the zero vector, the
    /// constant configuration used by the collapse baselines.
    pub fn zero_weights(k: usize, dim: usize) -> Result<Self> {
        let mut bank = Self::init(k, dim, 0)?;
        for t in &mut bank.transforms {
            t.w1 = Tensor::zeros(&[dim, dim]);
            t.b1 = Tensor::zeros(&[dim]);
            t.w2 = Tensor::zeros(&[dim, dim]);
            t.b2 = Tensor::zeros(&[dim]);
            t.w3 = Tensor::zeros(&[dim, dim]);
            t.b3 = Tensor::zeros(&[dim]);
        }
        Ok(bank)
    }

    pub fn transform_count(&self) -> usize {
        self.transforms.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Trainable tensors in canonical order: per transformation,
    /// `w1, b1, w2, b2, w3, b3`.
    pub fn params(&self) -> Vec<&Tensor<F>> {
        self.transforms
            .iter()
            .flat_map(|t| [&t.w1, &t.b1, &t.w2, &t.b2, &t.w3, &t.b3])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.transforms
            .iter_mut()
            .flat_map(|t| [&mut t.w1, &mut t.b1, &mut t.w2, &mut t.b2, &mut t.w3, &mut t.b3])
            .collect()
    }

    /// Array names matching [`TransformBank::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        (0..self.transforms.len())
            .flat_map(|i| {
                ["w1", "b1", "w2", "b2", "w3", "b3"]
                    .into_iter()
                    .map(move |n| format!("bank.t{i}.{n}"))
            })
            .collect()
    }

    /// Push current weights onto `tape` as leaves.
    pub fn register(&self, tape: &mut Tape<F>) -> BankIds {
        let per_transform = self
            .transforms
            .iter()
            .map(|t| {
                [
                    tape.leaf(t.w1.clone()),
                    tape.leaf(t.b1.clone()),
                    tape.leaf(t.w2.clone()),
                    tape.leaf(t.b2.clone()),
                    tape.leaf(t.w3.clone()),
                    tape.leaf(t.b3.clone()),
                ]
            })
            .collect();
        BankIds { per_transform }
    }

    /// Rebuild handles from a flat id list laid out like
    /// [`TransformBank::params`]; used by the gradient checker, which owns
    /// leaf creation itself.
    pub fn ids_from_slice(&self, ids: &[TensorId]) -> Result<BankIds> {
        let need = self.transforms.len() * 6;
        if ids.len() != need {
            return Err(Error::shape("bank ids", format!("{need}"), format!("{}", ids.len())));
        }
        let per_transform = ids
            .chunks_exact(6)
            .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
            .collect();
        Ok(BankIds { per_transform })
    }

    /// Apply every transformation to the latent batch `[B, d]`, returning
    /// the K transformed batches in fixed index order.
    pub fn apply_all(&self, tape: &mut Tape<F>, ids: &BankIds, latent: TensorId) -> Result<Vec<TensorId>> {
        let shape = tape.value(latent)?.shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape(
                "transform input",
                format!("[B, {}]", self.dim),
                format!("{shape:?}"),
            ));
        }
        ids.per_transform
            .iter()
            .map(|&[w1, b1, w2, b2, w3, b3]| {
                let h1 = tape.matmul(latent, w1)?;
                let h1 = tape.add_row_broadcast(h1, b1)?;
                let h1 = tape.relu(h1)?;
                let h2 = tape.matmul(h1, w2)?;
                let h2 = tape.add_row_broadcast(h2, b2)?;
                let h2 = tape.relu(h2)?;
                let h3 = tape.matmul(h2, w3)?;
                tape.add_row_broadcast(h3, b3)
            })
            .collect()
    }

    /// Convenience forward pass outside any training graph.
    pub fn apply_all_values(&self, latent: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        let mut tape = Tape::new();
        let ids = self.register(&mut tape);
        let l = tape.leaf(latent.clone());
        let outs = self.apply_all(&mut tape, &ids, l)?;
        outs.into_iter().map(|id| Ok(tape.value(id)?.clone())).collect()
    }
}
