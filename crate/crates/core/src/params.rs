//! Named parameter storage and the glue that binds it to a tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Position of a parameter in its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Flat, ordered list of named trainable tensors. The order is fixed at
/// construction and is what optimizers and checkpoints iterate over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }
}

/// Uniform Glorot initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..=bound))
}

/// Lazily registers parameters on a tape, at most once each.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
        }
    }

    pub fn bind(&mut self, tape: &mut Tape<'a>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = tape.param(self.store.get(id));
        self.vars[id.0] = Some(v);
        v
    }

    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    /// Moves accumulated leaf gradients out of the tape. Parameters that were
    /// never bound, or that the loss does not depend on, have no entry.
    pub fn gradients(&self, tape: &mut Tape<'a>) -> Gradients {
        let grads = self
            .vars
            .iter()
            .map(|v| v.and_then(|v| tape.take_grad(v)))
            .collect();
        Gradients { grads }
    }
}

/// Sparse per-parameter gradients; `None` means exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n: usize) -> Self {
        Self {
            grads: vec![None; n],
        }
    }

    /// Materialises a zero tensor for every parameter without a gradient.
    pub fn dense(store: &ParamStore) -> Self {
        Self {
            grads: store
                .iter()
                .map(|(_, _, t)| Some(Tensor::zeros(t.rows(), t.cols())))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, g: Tensor) {
        self.grads[id.0] = Some(g);
    }

    /// `self += other`, entry by entry. Adding an absent gradient is a no-op,
    /// so sparse accumulation equals dense accumulation bit for bit.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<(), TensorError> {
        if self.grads.len() != other.grads.len() {
            return Err(TensorError::Contract(format!(
                "gradient sets of different length: {} vs {}",
                self.grads.len(),
                other.grads.len()
            )));
        }
        for (acc, g) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) if a.shape() == g.shape() => a.add_assign(g),
                    Some(a) => {
                        return Err(TensorError::Shape {
                            op: "accumulate",
                            left: a.shape(),
                            right: g.shape(),
                        })
                    }
                    None => *acc = Some(g.clone()),
                }
            }
        }
        Ok(())
    }

    /// Fills every absent entry with zeros shaped like the parameter.
    pub fn fill_missing(&mut self, store: &ParamStore) {
        for (g, (_, _, t)) in self.grads.iter_mut().zip(store.iter()) {
            if g.is_none() {
                *g = Some(Tensor::zeros(t.rows(), t.cols()));
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> {
        self.grads
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i), g.as_ref()))
    }
}
