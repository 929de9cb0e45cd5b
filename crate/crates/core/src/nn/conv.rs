//! Valid 2-D cross-correlation, 2×2 max pooling and the elementwise
//! activations used between them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::{Param, Parameterized};
use crate::numerics::{sigmoid_scalar, Tensor};

/// Elementwise nonlinearity. Sigmoid and tanh are the only ones the
/// models ever apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Sigmoid,
    #[default]
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 2] = [Activation::Sigmoid, Activation::Tanh];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown activation {s:?}")))
    }
}

/// Stride-1, unpadded convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[out_ch × in_ch × kh × kw]`
    pub kernel: Param,
    /// `[out_ch]`
    pub bias: Param,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, kh: usize, kw: usize) -> Self {
        Self {
            kernel: Param::zeros(&[out_ch, in_ch, kh, kw]),
            bias: Param::zeros(&[out_ch]),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kh: usize, kw: usize, rng: &mut R) -> Self {
        let area = kh * kw;
        Self {
            kernel: Param::glorot(&[out_ch, in_ch, kh, kw], in_ch * area, out_ch * area, rng),
            bias: Param::zeros(&[out_ch]),
        }
    }

    /// `(out_ch, in_ch, kh, kw)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.kernel.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (_, _, kh, kw) = self.dims();
        if height < kh || width < kw {
            return Err(Error::shapes("conv input smaller than kernel", &[height, width], &[kh, kw]));
        }
        Ok((height - kh + 1, width - kw + 1))
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let (c, h, w) = input.dims3()?;
        let (_, in_ch, _, _) = self.dims();
        if c != in_ch {
            return Err(Error::shapes("conv input channels", input.shape(), self.kernel.shape()));
        }
        let (oh, ow) = self.output_size(h, w)?;
        Ok((h, w, oh, ow))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w, oh, ow) = self.check_input(input)?;
        let (out_ch, in_ch, kh, kw) = self.dims();
        let x = input.data();
        let k = self.kernel.value.data();
        let mut out = vec![0.0; out_ch * oh * ow];
        for o in 0..out_ch {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(self.bias.value.data()[o]);
            for i in 0..in_ch {
                let xin = &x[i * h * w..(i + 1) * h * w];
                let kern = &k[(o * in_ch + i) * kh * kw..(o * in_ch + i + 1) * kh * kw];
                for a in 0..kh {
                    for b in 0..kw {
                        let kv = kern[a * kw + b];
                        for y in 0..oh {
                            let src = &xin[(y + a) * w + b..(y + a) * w + b + ow];
                            let dst = &mut plane[y * ow..(y + 1) * ow];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![out_ch, oh, ow], out)
    }

    /// Accumulates kernel and bias gradients; returns `dL/dinput`.
    pub fn backward(&mut self, input: &Tensor, d_out: &Tensor) -> Result<Tensor> {
        let (h, w, oh, ow) = self.check_input(input)?;
        let (out_ch, in_ch, kh, kw) = self.dims();
        if d_out.shape() != [out_ch, oh, ow] {
            return Err(Error::shapes("conv backward cotangent", d_out.shape(), &[out_ch, oh, ow]));
        }
        let x = input.data();
        let g = d_out.data();
        let mut d_in = vec![0.0; in_ch * h * w];
        {
            let k = self.kernel.value.data();
            let dk = self.kernel.grad.data_mut();
            for o in 0..out_ch {
                let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
                for i in 0..in_ch {
                    let base = (o * in_ch + i) * kh * kw;
                    let xin = &x[i * h * w..(i + 1) * h * w];
                    let din = &mut d_in[i * h * w..(i + 1) * h * w];
                    for a in 0..kh {
                        for b in 0..kw {
                            let kv = k[base + a * kw + b];
                            let mut acc = 0.0;
                            for y in 0..oh {
                                let off = (y + a) * w + b;
                                let grow = &gplane[y * ow..(y + 1) * ow];
                                let src = &xin[off..off + ow];
                                acc += grow.iter().zip(src).map(|(p, q)| p * q).sum::<f64>();
                                for (d, gv) in din[off..off + ow].iter_mut().zip(grow) {
                                    *d += kv * gv;
                                }
                            }
                            dk[base + a * kw + b] += acc;
                        }
                    }
                }
            }
        }
        for (o, db) in self.bias.grad.data_mut().iter_mut().enumerate() {
            *db += g[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
        }
        Tensor::new(vec![in_ch, h, w], d_in)
    }
}

impl Parameterized for ConvLayer {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

/// 2×2 max pooling with stride 2.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolLayer;

/// Flat input index of each pooled maximum.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolLayer {
    pub const WINDOW: usize = 2;

    pub fn output_size(height: usize, width: usize) -> Result<(usize, usize)> {
        if !height.is_multiple_of(2) || !width.is_multiple_of(2) || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "2x2 pooling needs even spatial dims, got {height}x{width}"
            )));
        }
        Ok((height / 2, width / 2))
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, PoolCache)> {
        let (c, h, w) = input.dims3()?;
        let (oh, ow) = Self::output_size(h, w)?;
        let x = input.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = ch * h * w + 2 * y * w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ch * h * w + (2 * y + dy) * w + 2 * xo + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let cache = PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        };
        Ok((Tensor::new(vec![c, oh, ow], out)?, cache))
    }

    /// Routes each output gradient to its window's maximum.
    pub fn backward(&self, cache: &PoolCache, d_out: &Tensor) -> Result<Tensor> {
        if d_out.len() != cache.argmax.len() {
            return Err(Error::shapes("pool backward cotangent", d_out.shape(), &[cache.argmax.len()]));
        }
        let mut d_in = Tensor::zeros(&cache.input_shape);
        let d = d_in.data_mut();
        for (&idx, &g) in cache.argmax.iter().zip(d_out.data()) {
            d[idx] += g;
        }
        Ok(d_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_kernel_is_identity() {
        let mut conv = ConvLayer::zeros(1, 1, 1, 1);
        conv.kernel.value.data_mut()[0] = 1.0;
        let x = Tensor::new(vec![1, 3, 2], vec![1.0, -2.0, 3.0, 4.5, 0.0, 6.0]).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_hand_example() {
        let mut conv = ConvLayer::zeros(1, 1, 2, 2);
        conv.kernel.value.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, -1.0]);
        conv.bias.value.data_mut()[0] = 0.5;
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        // out[y][x] = in[y][x] - in[y+1][x+1] + 0.5 = -4 + 0.5
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == -3.5));
    }

    #[test]
    fn conv_shape_errors() {
        let conv = ConvLayer::zeros(2, 3, 4, 4);
        assert!(matches!(conv.forward(&Tensor::zeros(&[2, 3, 3])), Err(Error::Shape(_))));
        assert!(matches!(conv.forward(&Tensor::zeros(&[1, 5, 5])), Err(Error::Shape(_))));
    }

    #[test]
    fn pool_picks_max_first_on_ties() {
        let x = Tensor::new(vec![1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 5.0, 0.0, 2.0, 2.0]).unwrap();
        let pool = PoolLayer;
        let (y, cache) = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 2.0]);
        let d = pool.backward(&cache, &Tensor::vector(vec![1.0, 1.0]).unwrap()).unwrap();
        // first window: tie between (0,1) and (1,0); second: all equal → (0,2)
        assert_eq!(d.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_rejects_odd_input() {
        assert!(matches!(PoolLayer.forward(&Tensor::zeros(&[1, 3, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_backward_accumulates_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = ConvLayer::glorot(2, 3, 2, 2, &mut rng);
        let x = Tensor::filled(&[2, 4, 4], 0.5);
        let d = Tensor::filled(&[3, 3, 3], 1.0);
        conv.backward(&x, &d).unwrap();
        assert!(conv.bias.grad.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn activation_vocabulary_round_trips() {
        for a in Activation::ALL {
            assert_eq!(a.name().parse::<Activation>().unwrap(), a);
        }
        assert!("relu".parse::<Activation>().is_err());
    }
}
