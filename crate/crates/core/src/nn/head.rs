use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::{Param, Parameterized};
use crate::numerics::{argmax, matvec_acc, matvec_t_acc, outer_acc, softmax_slice};

/// Affine output layer `logits = W f + b` feeding a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    /// `[C × F]`
    pub weight: Param,
    /// `[C]`
    pub bias: Param,
}

impl OutputHead {
    pub fn zeros(in_dim: usize, classes: usize) -> Self {
        Self {
            weight: Param::zeros(&[classes, in_dim]),
            bias: Param::zeros(&[classes]),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::glorot(&[classes, in_dim], in_dim, classes, rng),
            bias: Param::zeros(&[classes]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.in_dim() {
            return Err(Error::shapes("output head input", &[features.len()], &[self.in_dim()]));
        }
        let mut logits = self.bias.value.data().to_vec();
        matvec_acc(self.weight.value.data(), self.in_dim(), features, &mut logits);
        Ok(logits)
    }

    /// Accumulates weight/bias gradients and returns `dL/df`.
    pub fn backward(&mut self, features: &[f64], d_logits: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.in_dim() || d_logits.len() != self.classes() {
            return Err(Error::shapes(
                "output head backward",
                &[features.len(), d_logits.len()],
                &[self.in_dim(), self.classes()],
            ));
        }
        outer_acc(self.weight.grad.data_mut(), d_logits, features);
        for (g, d) in self.bias.grad.data_mut().iter_mut().zip(d_logits) {
            *g += d;
        }
        let mut d_features = vec![0.0; self.in_dim()];
        matvec_t_acc(self.weight.value.data(), self.in_dim(), d_logits, &mut d_features);
        Ok(d_features)
    }
}

impl Parameterized for OutputHead {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Categorical negative log-likelihood of `label` under `softmax(logits)`.
///
/// Returns the loss and its gradient `softmax(logits) − onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let top = argmax(logits);
    let max = logits[top];
    // log Σ exp − v_label = (max − v_label) + log1p(Σ_{j≠top} exp(v_j − max))
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let loss = (max - logits[label]) + rest.ln_1p();
    let mut grad = softmax_slice(logits)?;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_cost_ln_c() {
        let (loss, _) = cross_entropy(&[0.3; 4], 2).unwrap();
        assert_abs_diff_eq!(loss, 4.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 1.3863, epsilon = 1e-4);
    }

    #[test]
    fn confident_correct_prediction() {
        let (loss, _) = cross_entropy(&[10.0, -10.0], 0).unwrap();
        // ln(1 + e^-20)
        let expected = (-20.0f64).exp().ln_1p();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-18);
        assert_abs_diff_eq!(loss, 2.06e-9, epsilon = 1e-11);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(cross_entropy(&[0.0, 1.0], 2), Err(Error::Argument(_))));
    }

    #[test]
    fn head_forward_is_affine() {
        let mut head = OutputHead::zeros(2, 2);
        head.weight.value.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        head.bias.value.data_mut().copy_from_slice(&[0.5, -0.5]);
        assert_eq!(head.forward(&[1.0, 1.0]).unwrap(), vec![3.5, 6.5]);
        assert!(head.forward(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn gradient_sums_to_zero(logits in prop::collection::vec(-40.0f64..40.0, 1..10), pick in 0usize..10) {
            let label = pick % logits.len();
            let (loss, grad) = cross_entropy(&logits, label).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() <= 1e-12);
        }
    }
}
