use rand::Rng;

use super::{Gradients, NumericsError, Tape, Tensor, Var};

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    /// Uniform ±sqrt(6 / fan_in) initialisation (He, for ReLU stacks).
    pub fn push_he(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> usize {
        let bound = (6.0 / fan_in as f32).sqrt();
        self.push_uniform(name, shape, bound, rng)
    }

    pub fn push_uniform(&mut self, name: &str, shape: &[usize], bound: f32, rng: &mut impl Rng) -> usize {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.push(name, Tensor::new(shape, data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every tensor on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Puts every tensor on the tape as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Gradients of the bound vars, in parameter order.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| grads.get(v)).collect()
    }

    /// Replaces each tensor with the one of the same name in `other`.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<(), NumericsError> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = other.by_name(name).ok_or_else(|| NumericsError::MissingParameter { name: name.clone() })?;
            if src.shape() != t.shape() {
                return Err(NumericsError::shape("load_from", t.shape(), src.shape()));
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f32) -> f32 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt() as f32;
    if norm > max_norm && norm.is_finite() {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}
