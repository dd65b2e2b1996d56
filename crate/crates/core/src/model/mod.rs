//! The two sequence-to-sequence variants and their shared plumbing.
//!
//! Both models consume a window of K audio feature vectors plus the
//! right-shifted pose window (zero start pose, zero right padding) and emit K
//! predicted poses through a shared tanh·π head, so every output angle lies
//! in [−π, π].

mod checkpoint;
pub mod ssm;
pub mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, ArchHeader};
pub use ssm::{MambaConfig, MambaModel};
pub use transformer::{
    make_causal_mask, make_padding_mask, TransformerConfig, TransformerModel,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, NodeId, Scalar, Tensor};

pub const POSE_DIM: usize = 4;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named parameter tensors in a fixed registration order. The order defines
/// both the optimizer-state layout and the checkpoint blob order, so it must
/// be deterministic for a given architecture.
pub struct ParamStore<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|(n, _)| n != &name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, t));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> Vec<Tensor<S>>
    where
        Tensor<S>: Clone,
    {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn set(&mut self, name: &str, t: Tensor<S>) -> Option<()> {
        let entry = self.entries.iter_mut().find(|(n, _)| n == name)?;
        if entry.1.shape() != t.shape() {
            return None;
        }
        entry.1 = t;
        Some(())
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Register every parameter as a gradient-bearing leaf, in store order.
    pub fn bind(&self, g: &mut Graph<S>) -> Vec<NodeId> {
        self.entries
            .iter()
            .map(|(_, t)| g.param(t.clone()))
            .collect()
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// One batch of training or inference windows, already normalized.
pub struct WindowInput<'a, S> {
    /// `(batch, K, feature_dim)`, zero-padded on the right.
    pub audio: &'a Tensor<S>,
    /// `(batch, K, 4)`: zero start pose, then the targets delayed by one,
    /// zero-padded on the right.
    pub shifted_poses: &'a Tensor<S>,
    /// Real (unpadded) length of each window, in `[1, K]`.
    pub valid_lens: &'a [usize],
    /// Song frame index of window slot 0, per batch element.
    pub start_positions: &'a [usize],
}

pub enum Model<S: Scalar> {
    Transformer(TransformerModel<S>),
    Mamba(MambaModel<S>),
}

impl<S: Scalar> Model<S> {
    pub fn window(&self) -> usize {
        match self {
            Model::Transformer(m) => m.config().window,
            Model::Mamba(m) => m.config().window,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Model::Transformer(m) => m.config().feature_dim,
            Model::Mamba(m) => m.config().feature_dim,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Model::Transformer(_) => "transformer",
            Model::Mamba(_) => "mamba",
        }
    }

    pub fn store(&self) -> &ParamStore<S> {
        match self {
            Model::Transformer(m) => m.store(),
            Model::Mamba(m) => m.store(),
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        match self {
            Model::Transformer(m) => m.store_mut(),
            Model::Mamba(m) => m.store_mut(),
        }
    }

    pub fn bind(&self, g: &mut Graph<S>) -> Vec<NodeId> {
        self.store().bind(g)
    }

    /// Predicted pose window `(batch, K, 4)`.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeId],
        input: &WindowInput<'_, S>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        match self {
            Model::Transformer(m) => m.forward(g, bound, input, training, rng),
            Model::Mamba(m) => m.forward(g, bound, input, training, rng),
        }
    }

    pub fn arch_header(&self, position_vocab_step: u64) -> ArchHeader {
        checkpoint::header_for(self, position_vocab_step)
    }
}

/// Uniform init in ±1/√fan_in, the house rule for linear layers.
pub(crate) fn linear_init<S: Scalar>(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<S> = (0..fan_in * fan_out)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data)
}

pub(crate) fn normal_init<S: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    sigma: f64,
) -> Tensor<S> {
    let numel: usize = shape.iter().product();
    // Box-Muller; two uniforms per draw keeps the stream deterministic.
    let data: Vec<S> = (0..numel)
        .map(|_| {
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            S::from_f64(z * sigma)
        })
        .collect();
    Tensor::new(shape, data)
}

/// Shared output head: linear to 4 joints, tanh, scale by π.
pub(crate) fn pose_head<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    w: NodeId,
    b: NodeId,
) -> NodeId {
    let proj = g.linear(x, w, b);
    let t = g.tanh(proj);
    g.scale(t, S::from_f64(std::f64::consts::PI))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_store_orders_and_names() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let a = store.add("a.w", Tensor::zeros(vec![2, 3]));
        let b = store.add("b.w", Tensor::zeros(vec![3]));
        assert_eq!(store.name(a), "a.w");
        assert_eq!(store.name(b), "b.w");
        assert_eq!(store.total_params(), 9);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut store: ParamStore<f32> = ParamStore::new();
        store.add("w", Tensor::zeros(vec![1]));
        store.add("w", Tensor::zeros(vec![1]));
    }
}
