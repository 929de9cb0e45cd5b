use rand::Rng;

use crate::numerics::Tensor;

/// A trainable tensor paired with its gradient accumulator.
///
/// Backward passes add into `grad`; only [`Param::zero_grad`] (or an
/// optimizer step) clears it.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    /// Glorot-uniform draw with the given fan sizes.
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut value = Tensor::zeros(shape);
        for v in value.data_mut() {
            *v = rng.random_range(-limit..limit);
        }
        Self::new(value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Anything that owns trainable parameters.
///
/// Both methods must visit parameters in the same order; names are stable
/// and used as checkpoint keys.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a Param)>) -> Vec<(String, &'a Param)> {
    inner
        .into_iter()
        .map(|(name, p)| (format!("{prefix}.{name}"), p))
        .collect()
}
