//! Gated recurrent unit without gate biases.
//!
//! For input `x` and previous state `h`:
//!
//! ```text
//! u  = σ(W_u x + V_u h)
//! r  = σ(W_r x + V_r h)
//! h̃  = tanh(W x + V (r ⊙ h))
//! h' = (1 − u) ⊙ h + u ⊙ h̃
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::{Param, Parameterized};
use crate::numerics::{matvec_acc, matvec_t_acc, outer_acc, sigmoid_scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    input_dim: usize,
    hidden_dim: usize,
    /// `W_u`, `[H × D]`
    pub update_in: Param,
    /// `V_u`, `[H × H]`
    pub update_rec: Param,
    /// `W`, `[H × D]`
    pub cand_in: Param,
    /// `V`, `[H × H]`
    pub cand_rec: Param,
    /// `W_r`, `[H × D]`
    pub reset_in: Param,
    /// `V_r`, `[H × H]`
    pub reset_rec: Param,
}

/// Intermediates of one step, enough to run the step backwards.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub candidate: Vec<f64>,
    /// `r ⊙ h_prev`
    pub reset_hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruSequenceCache {
    input_dim: usize,
    hidden_dim: usize,
    pub steps: Vec<GruStepCache>,
}

impl GruSequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            update_in: Param::zeros(&[h, d]),
            update_rec: Param::zeros(&[h, h]),
            cand_in: Param::zeros(&[h, d]),
            cand_rec: Param::zeros(&[h, h]),
            reset_in: Param::zeros(&[h, d]),
            reset_rec: Param::zeros(&[h, h]),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            update_in: Param::glorot(&[h, d], d, h, rng),
            update_rec: Param::glorot(&[h, h], h, h, rng),
            cand_in: Param::glorot(&[h, d], d, h, rng),
            cand_rec: Param::glorot(&[h, h], h, h, rng),
            reset_in: Param::glorot(&[h, d], d, h, rng),
            reset_rec: Param::glorot(&[h, h], h, h, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruStepCache)> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        if x.len() != d || h_prev.len() != h {
            return Err(Error::shapes("gru step input/state", &[x.len(), h_prev.len()], &[d, h]));
        }

        let mut update = vec![0.0; h];
        matvec_acc(self.update_in.value.data(), d, x, &mut update);
        matvec_acc(self.update_rec.value.data(), h, h_prev, &mut update);
        update.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));

        let mut reset = vec![0.0; h];
        matvec_acc(self.reset_in.value.data(), d, x, &mut reset);
        matvec_acc(self.reset_rec.value.data(), h, h_prev, &mut reset);
        reset.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));

        let reset_hidden: Vec<f64> = reset.iter().zip(h_prev).map(|(r, hp)| r * hp).collect();
        let mut candidate = vec![0.0; h];
        matvec_acc(self.cand_in.value.data(), d, x, &mut candidate);
        matvec_acc(self.cand_rec.value.data(), h, &reset_hidden, &mut candidate);
        candidate.iter_mut().for_each(|v| *v = v.tanh());

        let h_next = (0..h)
            .map(|i| (1.0 - update[i]) * h_prev[i] + update[i] * candidate[i])
            .collect();

        let cache = GruStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            update,
            reset,
            candidate,
            reset_hidden,
        };
        Ok((h_next, cache))
    }

    /// Runs the cell left to right from `h0` (zeros when `None`).
    pub fn forward<S: AsRef<[f64]>>(
        &self,
        seq: &[S],
        h0: Option<&[f64]>,
    ) -> Result<(Vec<f64>, GruSequenceCache)> {
        if seq.is_empty() {
            return Err(Error::Argument("GRU input sequence is empty".into()));
        }
        let mut h = match h0 {
            Some(h0) => h0.to_vec(),
            None => vec![0.0; self.hidden_dim],
        };
        let mut steps = Vec::with_capacity(seq.len());
        for x in seq {
            let (next, cache) = self.step(x.as_ref(), &h)?;
            steps.push(cache);
            h = next;
        }
        Ok((
            h,
            GruSequenceCache {
                input_dim: self.input_dim,
                hidden_dim: self.hidden_dim,
                steps,
            },
        ))
    }

    /// Backpropagates one step. Accumulates parameter gradients and
    /// returns `(dL/dx, dL/dh_prev)`.
    pub fn backward_step(&mut self, cache: &GruStepCache, d_h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let mut d_x = vec![0.0; d];
        let mut d_h_prev = vec![0.0; h];

        let mut d_cand_pre = vec![0.0; h];
        let mut d_update_pre = vec![0.0; h];
        for i in 0..h {
            let u = cache.update[i];
            let c = cache.candidate[i];
            d_h_prev[i] = d_h[i] * (1.0 - u);
            d_cand_pre[i] = d_h[i] * u * (1.0 - c * c);
            d_update_pre[i] = d_h[i] * (c - cache.h_prev[i]) * u * (1.0 - u);
        }

        // candidate branch
        outer_acc(self.cand_in.grad.data_mut(), &d_cand_pre, &cache.x);
        outer_acc(self.cand_rec.grad.data_mut(), &d_cand_pre, &cache.reset_hidden);
        matvec_t_acc(self.cand_in.value.data(), d, &d_cand_pre, &mut d_x);
        let mut d_reset_hidden = vec![0.0; h];
        matvec_t_acc(self.cand_rec.value.data(), h, &d_cand_pre, &mut d_reset_hidden);

        let mut d_reset_pre = vec![0.0; h];
        for i in 0..h {
            let r = cache.reset[i];
            d_h_prev[i] += d_reset_hidden[i] * r;
            d_reset_pre[i] = d_reset_hidden[i] * cache.h_prev[i] * r * (1.0 - r);
        }

        // update gate
        outer_acc(self.update_in.grad.data_mut(), &d_update_pre, &cache.x);
        outer_acc(self.update_rec.grad.data_mut(), &d_update_pre, &cache.h_prev);
        matvec_t_acc(self.update_in.value.data(), d, &d_update_pre, &mut d_x);
        matvec_t_acc(self.update_rec.value.data(), h, &d_update_pre, &mut d_h_prev);

        // reset gate
        outer_acc(self.reset_in.grad.data_mut(), &d_reset_pre, &cache.x);
        outer_acc(self.reset_rec.grad.data_mut(), &d_reset_pre, &cache.h_prev);
        matvec_t_acc(self.reset_in.value.data(), d, &d_reset_pre, &mut d_x);
        matvec_t_acc(self.reset_rec.value.data(), h, &d_reset_pre, &mut d_h_prev);

        (d_x, d_h_prev)
    }

    /// Backpropagation through time from a cotangent on the last hidden
    /// state. Returns the gradient with respect to every input vector.
    pub fn backward(&mut self, cache: &GruSequenceCache, d_h_last: &[f64]) -> Result<Vec<Vec<f64>>> {
        if cache.input_dim != self.input_dim || cache.hidden_dim != self.hidden_dim {
            return Err(Error::State(format!(
                "GRU cache built for D={}, H={} but parameters have D={}, H={}",
                cache.input_dim, cache.hidden_dim, self.input_dim, self.hidden_dim
            )));
        }
        if d_h_last.len() != self.hidden_dim {
            return Err(Error::shapes("gru backward cotangent", &[d_h_last.len()], &[self.hidden_dim]));
        }
        let mut d_inputs = vec![Vec::new(); cache.steps.len()];
        let mut d_h = d_h_last.to_vec();
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let (d_x, d_prev) = self.backward_step(step, &d_h);
            d_inputs[t] = d_x;
            d_h = d_prev;
        }
        Ok(d_inputs)
    }
}

impl Parameterized for GruParams {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![
            ("update_in".into(), &self.update_in),
            ("update_rec".into(), &self.update_rec),
            ("cand_in".into(), &self.cand_in),
            ("cand_rec".into(), &self.cand_rec),
            ("reset_in".into(), &self.reset_in),
            ("reset_rec".into(), &self.reset_rec),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.update_in,
            &mut self.update_rec,
            &mut self.cand_in,
            &mut self.cand_rec,
            &mut self.reset_in,
            &mut self.reset_rec,
        ]
    }
}
