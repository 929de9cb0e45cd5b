//! Two-layer cascaded GRU over band groups.
//!
//! The `k` input vectors are split into `l` contiguous groups. One shared
//! first-layer GRU summarizes every group from a zero state; its last hidden
//! states `F₁ … F_l` form a length-`l` sequence for the second-layer GRU,
//! whose last state `F⁽²⁾` feeds the output head. Variants:
//!
//! * [`Variant::Base`]: head over `F⁽²⁾`.
//! * [`Variant::FeatureFusion`]: head over `[w₁F₁, …, w_lF_l, w⁽²⁾F⁽²⁾]`.
//! * [`Variant::OutputFusion`]: extra training heads over each `F_i`, loss
//!   `(1/l)·Σ wᵢ·Lᵢ + w⁽²⁾·L⁽²⁾`. Prediction uses the main head only.
//! * [`Variant::PlainRnnBaseline`]: one GRU over all bands, no cascade.
//!
//! Fusion weights start at 1 and are unconstrained.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy, fit, Checkpoint, GruParams, GruSequenceCache, Objective, OutputHead, Param, Parameterized,
    SampleOutcome, SgdConfig, Stage, TrainingLog,
};
use crate::nn::param::prefixed;
use crate::numerics::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Base,
    FeatureFusion,
    OutputFusion,
    PlainRnnBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Base,
        Variant::FeatureFusion,
        Variant::OutputFusion,
        Variant::PlainRnnBaseline,
    ];

    /// Short name used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "cas",
            Variant::FeatureFusion => "cas-f",
            Variant::OutputFusion => "cas-o",
            Variant::PlainRnnBaseline => "rnn",
        }
    }

    fn code(self) -> f64 {
        match self {
            Variant::Base => 0.0,
            Variant::FeatureFusion => 1.0,
            Variant::OutputFusion => 2.0,
            Variant::PlainRnnBaseline => 3.0,
        }
    }

    fn from_code(code: usize) -> Result<Self> {
        Variant::ALL
            .get(code)
            .copied()
            .ok_or_else(|| Error::State(format!("unknown variant code {code}")))
    }

    pub fn has_fusion_weights(self) -> bool {
        matches!(self, Variant::FeatureFusion | Variant::OutputFusion)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown variant {s:?} (expected rnn, cas, cas-f or cas-o)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeConfig {
    /// Sequence length `k`.
    pub bands: usize,
    /// Number of band groups `l`.
    pub sub_sequences: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
    pub variant: Variant,
    /// Width of each input vector: 1 for raw spectra, the CNN feature width
    /// for the spectral-spatial model.
    pub input_dim: usize,
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bands", self.bands),
            ("hidden1", self.hidden1),
            ("classes", self.classes),
            ("input_dim", self.input_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        if self.variant != Variant::PlainRnnBaseline {
            if self.hidden2 == 0 {
                return Err(Error::Argument("hidden2 must be positive".into()));
            }
            if self.sub_sequences == 0 || self.sub_sequences > self.bands {
                return Err(Error::Argument(format!(
                    "sub-sequence count l={} must lie in 1..={}",
                    self.sub_sequences, self.bands
                )));
            }
        }
        Ok(())
    }

    /// Width of the main head's input.
    pub fn head_in_dim(&self) -> usize {
        match self.variant {
            Variant::Base | Variant::OutputFusion => self.hidden2,
            Variant::FeatureFusion => self.sub_sequences * self.hidden1 + self.hidden2,
            Variant::PlainRnnBaseline => self.hidden1,
        }
    }
}

/// `l` contiguous, ordered, disjoint band ranges covering `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    ranges: Vec<Range<usize>>,
}

impl Partition {
    /// Zero-based half-open ranges.
    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }
}

/// Splits `k` bands into `l` groups of `floor(k/l)` bands, the last group
/// taking the remainder.
pub fn partition_bands(bands: usize, groups: usize) -> Result<Partition> {
    if groups == 0 || groups > bands {
        return Err(Error::Argument(format!(
            "cannot split {bands} bands into {groups} sub-sequences"
        )));
    }
    let d = bands / groups;
    let ranges = (0..groups)
        .map(|i| {
            let end = if i + 1 == groups { bands } else { (i + 1) * d };
            i * d..end
        })
        .collect();
    Ok(Partition { ranges })
}

/// One labeled input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vec<f64>>,
    /// Zero-based class index.
    pub label: usize,
}

impl Sample {
    /// A spectrum as a sequence of 1-vectors.
    pub fn from_spectrum(spectrum: &[f64], label: usize) -> Self {
        Self {
            inputs: spectrum.iter().map(|&v| vec![v]).collect(),
            label,
        }
    }
}

/// Everything the forward pass produced.
#[derive(Debug, Clone)]
pub struct CascadeTrace {
    pub logits: Vec<f64>,
    /// `F₁ … F_l` (the single GRU summary for the plain baseline).
    pub first_features: Vec<Vec<f64>>,
    /// `F⁽²⁾`; empty for the plain baseline.
    pub second_feature: Vec<f64>,
    pub head_input: Vec<f64>,
    first_caches: Vec<GruSequenceCache>,
    second_cache: Option<GruSequenceCache>,
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    /// Cross-entropy of the main head.
    pub main: f64,
    /// Per-group cross-entropies of the training heads (output fusion only).
    pub aux: Vec<f64>,
    main_grad: Vec<f64>,
    aux_grads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    config: CascadeConfig,
    partition: Partition,
    /// The one first-layer parameter set, shared by every group.
    pub first_layer: GruParams,
    pub second_layer: Option<GruParams>,
    /// `w₁ … w_l`, shape `[l]`.
    pub fusion_first: Option<Param>,
    /// `w⁽²⁾`, shape `[1]`.
    pub fusion_second: Option<Param>,
    pub main_head: OutputHead,
    /// Training-only heads over `F_i` (output fusion).
    pub aux_heads: Vec<OutputHead>,
    /// Whether SGD updates the output-fusion loss weights. They always
    /// receive gradients.
    pub loss_weights: LossWeights,
}

/// Treatment of the loss weights `wᵢ`, `w⁽²⁾` of output fusion during
/// training. The loss is linear in them with gradient `Lᵢ ≥ 0`, so updating
/// them drives every weight negative and the loss without bound; `Fixed`
/// keeps them at their initial value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossWeights {
    #[default]
    Fixed,
    Learned,
}

impl LossWeights {
    pub fn name(self) -> &'static str {
        match self {
            LossWeights::Fixed => "fixed",
            LossWeights::Learned => "learned",
        }
    }
}

impl fmt::Display for LossWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(LossWeights::Fixed),
            "learned" => Ok(LossWeights::Learned),
            other => Err(Error::Argument(format!("unknown loss weight mode {other:?} (expected fixed or learned)"))),
        }
    }
}

impl CascadeModel {
    /// Glorot-initialized model; fusion weights start at 1.
    pub fn new<R: Rng + ?Sized>(config: CascadeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let partition = match c.variant {
            Variant::PlainRnnBaseline => partition_bands(c.bands, 1)?,
            _ => partition_bands(c.bands, c.sub_sequences)?,
        };
        let first_layer = GruParams::glorot(c.input_dim, c.hidden1, rng);
        let second_layer = match c.variant {
            Variant::PlainRnnBaseline => None,
            _ => Some(GruParams::glorot(c.hidden1, c.hidden2, rng)),
        };
        let main_head = OutputHead::glorot(c.head_in_dim(), c.classes, rng);
        let aux_heads = match c.variant {
            Variant::OutputFusion => (0..c.sub_sequences)
                .map(|_| OutputHead::glorot(c.hidden1, c.classes, rng))
                .collect(),
            _ => Vec::new(),
        };
        let (fusion_first, fusion_second) = if c.variant.has_fusion_weights() {
            (
                Some(Param::new(Tensor::filled(&[c.sub_sequences], 1.0))),
                Some(Param::new(Tensor::scalar(1.0))),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            partition,
            first_layer,
            second_layer,
            fusion_first,
            fusion_second,
            main_head,
            aux_heads,
            loss_weights: LossWeights::default(),
        })
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Copy with the training-only heads dropped.
    pub fn without_aux_heads(&self) -> Self {
        Self {
            aux_heads: Vec::new(),
            ..self.clone()
        }
    }

    pub fn forward<S: AsRef<[f64]>>(&self, inputs: &[S]) -> Result<CascadeTrace> {
        let c = &self.config;
        if inputs.len() != c.bands {
            return Err(Error::shapes("cascade input length", &[inputs.len()], &[c.bands]));
        }
        if let Some(bad) = inputs.iter().find(|x| x.as_ref().len() != c.input_dim) {
            return Err(Error::shapes("cascade input width", &[bad.as_ref().len()], &[c.input_dim]));
        }

        let mut first_features = Vec::with_capacity(self.partition.len());
        let mut first_caches = Vec::with_capacity(self.partition.len());
        for range in self.partition.ranges() {
            let (f, cache) = self.first_layer.forward(&inputs[range.clone()], None)?;
            first_features.push(f);
            first_caches.push(cache);
        }

        let (second_feature, second_cache) = match &self.second_layer {
            Some(layer) => {
                let (f, cache) = layer.forward(&first_features, None)?;
                (f, Some(cache))
            }
            None => (Vec::new(), None),
        };

        let head_input = match c.variant {
            Variant::Base | Variant::OutputFusion => second_feature.clone(),
            Variant::PlainRnnBaseline => first_features[0].clone(),
            Variant::FeatureFusion => {
                let w1 = self.fusion_weights_first()?;
                let w2 = self.fusion_weight_second()?;
                let mut v = Vec::with_capacity(c.head_in_dim());
                for (w, f) in w1.iter().zip(&first_features) {
                    v.extend(f.iter().map(|x| w * x));
                }
                v.extend(second_feature.iter().map(|x| w2 * x));
                v
            }
        };
        let logits = self.main_head.forward(&head_input)?;
        Ok(CascadeTrace {
            logits,
            first_features,
            second_feature,
            head_input,
            first_caches,
            second_cache,
        })
    }

    pub fn loss(&self, trace: &CascadeTrace, label: usize) -> Result<LossBreakdown> {
        let (main, main_grad) = cross_entropy(&trace.logits, label)?;
        if self.config.variant != Variant::OutputFusion {
            return Ok(LossBreakdown {
                total: main,
                main,
                aux: Vec::new(),
                main_grad,
                aux_grads: Vec::new(),
            });
        }
        if self.aux_heads.len() != self.partition.len() {
            return Err(Error::State(format!(
                "output fusion needs {} training heads, model has {}",
                self.partition.len(),
                self.aux_heads.len()
            )));
        }
        let w1 = self.fusion_weights_first()?;
        let w2 = self.fusion_weight_second()?;
        let l = self.partition.len() as f64;
        let mut aux = Vec::with_capacity(self.aux_heads.len());
        let mut aux_grads = Vec::with_capacity(self.aux_heads.len());
        for (head, f) in self.aux_heads.iter().zip(&trace.first_features) {
            let (li, gi) = cross_entropy(&head.forward(f)?, label)?;
            aux.push(li);
            aux_grads.push(gi);
        }
        let total = w1.iter().zip(&aux).map(|(w, li)| w * li).sum::<f64>() / l + w2 * main;
        Ok(LossBreakdown {
            total,
            main,
            aux,
            main_grad,
            aux_grads,
        })
    }

    /// Accumulates `scale × ∇loss` into every parameter (fusion weights
    /// included) and returns the gradient with respect to each input vector.
    pub fn backward(&mut self, trace: &CascadeTrace, loss: &LossBreakdown, scale: f64) -> Result<Vec<Vec<f64>>> {
        let variant = self.config.variant;
        let groups = self.partition.len();
        let h1 = self.config.hidden1;
        let scaled = |g: &[f64], s: f64| g.iter().map(|v| v * s).collect::<Vec<f64>>();

        let mut d_first: Vec<Vec<f64>> = vec![vec![0.0; h1]; groups];
        let d_second: Vec<f64> = match variant {
            Variant::PlainRnnBaseline => {
                d_first[0] = self.main_head.backward(&trace.head_input, &scaled(&loss.main_grad, scale))?;
                Vec::new()
            }
            Variant::Base => self.main_head.backward(&trace.head_input, &scaled(&loss.main_grad, scale))?,
            Variant::FeatureFusion => {
                let d_tilde = self.main_head.backward(&trace.head_input, &scaled(&loss.main_grad, scale))?;
                let w1 = self.fusion_weights_first()?.to_vec();
                let w2 = self.fusion_weight_second()?;
                let mut dw1 = vec![0.0; groups];
                for i in 0..groups {
                    let chunk = &d_tilde[i * h1..(i + 1) * h1];
                    dw1[i] = dot(chunk, &trace.first_features[i]);
                    d_first[i] = chunk.iter().map(|g| g * w1[i]).collect();
                }
                let tail = &d_tilde[groups * h1..];
                let dw2 = dot(tail, &trace.second_feature);
                self.add_fusion_grads(&dw1, dw2)?;
                tail.iter().map(|g| g * w2).collect()
            }
            Variant::OutputFusion => {
                if loss.aux_grads.len() != groups || self.aux_heads.len() != groups {
                    return Err(Error::State("output fusion backward without training heads".into()));
                }
                let w1 = self.fusion_weights_first()?.to_vec();
                let w2 = self.fusion_weight_second()?;
                let l = groups as f64;
                for i in 0..groups {
                    let g = scaled(&loss.aux_grads[i], scale * w1[i] / l);
                    d_first[i] = self.aux_heads[i].backward(&trace.first_features[i], &g)?;
                }
                let dw1: Vec<f64> = loss.aux.iter().map(|li| scale * li / l).collect();
                self.add_fusion_grads(&dw1, scale * loss.main)?;
                self.main_head.backward(&trace.head_input, &scaled(&loss.main_grad, scale * w2))?
            }
        };

        if let (Some(layer), Some(cache)) = (self.second_layer.as_mut(), trace.second_cache.as_ref()) {
            let d_seq = layer.backward(cache, &d_second)?;
            for (acc, d) in d_first.iter_mut().zip(d_seq) {
                for (a, v) in acc.iter_mut().zip(d) {
                    *a += v;
                }
            }
        }

        let mut d_inputs = vec![Vec::new(); self.config.bands];
        for ((range, cache), d) in self.partition.ranges.iter().zip(&trace.first_caches).zip(&d_first) {
            let d_x = self.first_layer.backward(cache, d)?;
            for (slot, g) in d_inputs[range.clone()].iter_mut().zip(d_x) {
                *slot = g;
            }
        }
        Ok(d_inputs)
    }

    /// Main-path logits.
    pub fn logits<S: AsRef<[f64]>>(&self, inputs: &[S]) -> Result<Vec<f64>> {
        Ok(self.forward(inputs)?.logits)
    }

    /// Zero-based class with the largest main-path logit (lowest index on
    /// ties). Training heads are never consulted.
    pub fn predict<S: AsRef<[f64]>>(&self, inputs: &[S]) -> Result<usize> {
        Ok(argmax(&self.logits(inputs)?))
    }

    /// Loss and gradient for one sample; used by the training loop.
    pub fn accumulate_sample<S: AsRef<[f64]>>(
        &mut self,
        inputs: &[S],
        label: usize,
        scale: f64,
    ) -> Result<(SampleOutcome, Vec<Vec<f64>>)> {
        let trace = self.forward(inputs)?;
        let loss = self.loss(&trace, label)?;
        let d_inputs = self.backward(&trace, &loss, scale)?;
        let outcome = SampleOutcome {
            loss: loss.total,
            correct: argmax(&trace.logits) == label,
        };
        Ok((outcome, d_inputs))
    }

    fn fusion_weights_first(&self) -> Result<&[f64]> {
        self.fusion_first
            .as_ref()
            .map(|p| p.value.data())
            .ok_or_else(|| Error::State("model has no first-layer fusion weights".into()))
    }

    fn fusion_weight_second(&self) -> Result<f64> {
        self.fusion_second
            .as_ref()
            .map(|p| p.value.data()[0])
            .ok_or_else(|| Error::State("model has no second-layer fusion weight".into()))
    }

    fn add_fusion_grads(&mut self, dw1: &[f64], dw2: f64) -> Result<()> {
        let (Some(w1), Some(w2)) = (self.fusion_first.as_mut(), self.fusion_second.as_mut()) else {
            return Err(Error::State("model has no fusion weights".into()));
        };
        for (g, d) in w1.grad.data_mut().iter_mut().zip(dw1) {
            *g += d;
        }
        w2.grad.data_mut()[0] += dw2;
        Ok(())
    }

    /// Stores hyperparameters and weights under `prefix`.
    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let c = &self.config;
        ckpt.insert_scalar(format!("{prefix}meta.variant"), c.variant.code());
        ckpt.insert_scalar(format!("{prefix}meta.bands"), c.bands as f64);
        ckpt.insert_scalar(format!("{prefix}meta.sub_sequences"), c.sub_sequences as f64);
        ckpt.insert_scalar(format!("{prefix}meta.hidden1"), c.hidden1 as f64);
        ckpt.insert_scalar(format!("{prefix}meta.hidden2"), c.hidden2 as f64);
        ckpt.insert_scalar(format!("{prefix}meta.classes"), c.classes as f64);
        ckpt.insert_scalar(format!("{prefix}meta.input_dim"), c.input_dim as f64);
        let learned = self.loss_weights == LossWeights::Learned;
        ckpt.insert_scalar(format!("{prefix}meta.loss_weights_learned"), f64::from(u8::from(learned)));
        for (name, p) in self.named_params() {
            ckpt.insert(format!("{prefix}{name}"), p.value.clone());
        }
    }

    pub fn read_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let count = |key: &str| ckpt.count(&format!("{prefix}meta.{key}"));
        let config = CascadeConfig {
            variant: Variant::from_code(count("variant")?)?,
            bands: count("bands")?,
            sub_sequences: count("sub_sequences")?,
            hidden1: count("hidden1")?,
            hidden2: count("hidden2")?,
            classes: count("classes")?,
            input_dim: count("input_dim")?,
        };
        let mut model = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.loss_weights = match count("loss_weights_learned")? {
            0 => LossWeights::Fixed,
            1 => LossWeights::Learned,
            other => return Err(Error::State(format!("bad loss weight flag {other}"))),
        };
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(model.params_mut()) {
            let t = ckpt.get(&format!("{prefix}{name}"))?;
            if t.shape() != p.shape() {
                return Err(Error::shapes(name, t.shape(), p.shape()));
            }
            p.value = t.clone();
        }
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        self.write_checkpoint(&mut c, "");
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::read_checkpoint(ckpt, "")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Parameterized for CascadeModel {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = prefixed("first_layer", self.first_layer.named_params());
        if let Some(layer) = &self.second_layer {
            out.extend(prefixed("second_layer", layer.named_params()));
        }
        out.extend(prefixed("main_head", self.main_head.named_params()));
        for (i, head) in self.aux_heads.iter().enumerate() {
            out.extend(prefixed(&format!("aux_head.{i}"), head.named_params()));
        }
        if let Some(p) = &self.fusion_first {
            out.push(("fusion.first".into(), p));
        }
        if let Some(p) = &self.fusion_second {
            out.push(("fusion.second".into(), p));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.first_layer.params_mut();
        if let Some(layer) = &mut self.second_layer {
            out.extend(layer.params_mut());
        }
        out.extend(self.main_head.params_mut());
        for head in &mut self.aux_heads {
            out.extend(head.params_mut());
        }
        if let Some(p) = &mut self.fusion_first {
            out.push(p);
        }
        if let Some(p) = &mut self.fusion_second {
            out.push(p);
        }
        out
    }
}

impl Objective<Sample> for CascadeModel {
    fn accumulate(&mut self, sample: &Sample, scale: f64) -> Result<SampleOutcome> {
        Ok(self.accumulate_sample(&sample.inputs, sample.label, scale)?.0)
    }

    fn trainable(&mut self) -> Vec<&mut Param> {
        if self.config.variant == Variant::OutputFusion && self.loss_weights == LossWeights::Fixed {
            let mut out = self.first_layer.params_mut();
            if let Some(layer) = &mut self.second_layer {
                out.extend(layer.params_mut());
            }
            out.extend(self.main_head.params_mut());
            for head in &mut self.aux_heads {
                out.extend(head.params_mut());
            }
            return out;
        }
        self.params_mut()
    }
}

/// Trains all parameters jointly with seeded mini-batch SGD.
pub fn train_cascade(model: &mut CascadeModel, samples: &[Sample], sgd: &SgdConfig) -> Result<TrainingLog> {
    fit(model, samples, sgd, Stage::Train)
}
