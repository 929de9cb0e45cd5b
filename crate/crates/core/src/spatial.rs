//! Spectral-spatial cascade: a per-band CNN turns each band of a pixel's
//! neighborhood into a feature vector, and the cascade runs over those
//! vectors instead of raw band values.
//!
//! Training has three stages: the CNN is pretrained on single-band patches
//! that inherit their pixel's label, then frozen while the recurrent layers
//! train on its features, then everything is fine-tuned together.

use std::fmt;
use std::hash::{DefaultHasher, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cascade::{CascadeConfig, CascadeModel, Sample};
use crate::data::HsiCube;
use crate::error::{Error, Result};
use crate::nn::param::prefixed;
use crate::nn::{
    cross_entropy, fit, Activation, Checkpoint, ConvLayer, Objective, OutputHead, Param, Parameterized, PoolCache,
    PoolLayer, SampleOutcome, SgdConfig, Stage, TrainingLog,
};
use crate::numerics::{argmax, Tensor};

/// Square kernel side and output channel count of one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
}

pub const DEFAULT_CONVS: [ConvSpec; 3] = [
    ConvSpec { kernel: 4, channels: 32 },
    ConvSpec { kernel: 5, channels: 64 },
    ConvSpec { kernel: 4, channels: 128 },
];

/// Epoch budget of each training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageEpochs {
    pub pretrain: usize,
    pub rnn: usize,
    pub finetune: usize,
}

impl Default for StageEpochs {
    fn default() -> Self {
        Self {
            pretrain: 100,
            rnn: 100,
            finetune: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialConfig {
    /// Patch side ω; odd.
    pub patch_size: usize,
    /// conv → pool → conv → pool → conv
    pub convs: [ConvSpec; 3],
    pub activation: Activation,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            patch_size: 27,
            convs: DEFAULT_CONVS,
            activation: Activation::Tanh,
        }
    }
}

impl SpatialConfig {
    pub fn feature_dim(&self) -> usize {
        self.convs[2].channels
    }

    /// `(channels, side)` after the input and after every conv and pool.
    pub fn trace(&self) -> Result<Vec<(usize, usize)>> {
        let mut out = vec![(1, self.patch_size)];
        let mut side = self.patch_size;
        for (i, spec) in self.convs.iter().enumerate() {
            if spec.kernel == 0 || spec.channels == 0 || side < spec.kernel {
                return Err(Error::Shape(format!(
                    "conv {} ({}×{}×{}) does not fit a {side}×{side} input",
                    i + 1,
                    spec.kernel,
                    spec.kernel,
                    spec.channels
                )));
            }
            side = side - spec.kernel + 1;
            out.push((spec.channels, side));
            if i < 2 {
                side = PoolLayer::output_size(side, side)?.0;
                out.push((spec.channels, side));
            }
        }
        if side != 1 {
            return Err(Error::Shape(format!(
                "patch size {} traces to {side}×{side}, not 1×1",
                self.patch_size
            )));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size.is_multiple_of(2) {
            return Err(Error::Argument(format!("patch size must be odd, got {}", self.patch_size)));
        }
        self.trace().map(drop)
    }
}

/// Reflect-101 index: `… 2 1 | 0 1 2 … n−1 | n−2 …`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// `ω × ω × k` window centered on `(row, col)`; positions outside the image
/// are mirrored about the border pixel.
pub fn extract_patch(cube: &HsiCube, row: usize, col: usize, size: usize) -> Result<Tensor> {
    if size.is_multiple_of(2) {
        return Err(Error::Argument(format!("patch size must be odd, got {size}")));
    }
    if !cube.contains(row, col) {
        return Err(Error::Argument(format!(
            "pixel ({row}, {col}) is outside the {}×{} image",
            cube.rows(),
            cube.cols()
        )));
    }
    let half = (size / 2) as isize;
    let k = cube.bands();
    let mut data = Vec::with_capacity(size * size * k);
    for dy in -half..=half {
        let r = reflect(row as isize + dy, cube.rows());
        for dx in -half..=half {
            let c = reflect(col as isize + dx, cube.cols());
            data.extend_from_slice(cube.spectrum(r, c));
        }
    }
    Tensor::new(vec![size, size, k], data)
}

/// Splits an `ω × ω × k` patch into `k` single-channel `1 × ω × ω` images.
pub fn band_matrices(patch: &Tensor) -> Result<Vec<Tensor>> {
    let (h, w, k) = patch.dims3()?;
    let d = patch.data();
    (0..k)
        .map(|b| Tensor::new(vec![1, h, w], (0..h * w).map(|p| d[p * k + b]).collect()))
        .collect()
}

/// The per-band module: one parameter set applied to every band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandCnn {
    pub convs: [ConvLayer; 3],
    pub activation: Activation,
}

/// Intermediates of one band's forward pass.
#[derive(Debug, Clone)]
pub struct BandCache {
    input: Tensor,
    /// Post-activation outputs of the three convs.
    activated: [Tensor; 3],
    pooled: [Tensor; 2],
    pools: [PoolCache; 2],
}

impl BandCnn {
    pub fn glorot<R: Rng + ?Sized>(config: &SpatialConfig, rng: &mut R) -> Self {
        let mut in_ch = 1;
        let convs = config.convs.map(|s| {
            let layer = ConvLayer::glorot(in_ch, s.channels, s.kernel, s.kernel, rng);
            in_ch = s.channels;
            layer
        });
        Self {
            convs,
            activation: config.activation,
        }
    }

    pub fn zeros(config: &SpatialConfig) -> Self {
        let mut in_ch = 1;
        let convs = config.convs.map(|s| {
            let layer = ConvLayer::zeros(in_ch, s.channels, s.kernel, s.kernel);
            in_ch = s.channels;
            layer
        });
        Self {
            convs,
            activation: config.activation,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.convs[2].dims().0
    }

    fn activate(&self, t: Tensor) -> Tensor {
        t.map(|v| self.activation.apply(v))
    }

    /// One `1 × ω × ω` band image to its feature vector.
    pub fn forward_band(&self, band: &Tensor) -> Result<(Vec<f64>, BandCache)> {
        let a1 = self.activate(self.convs[0].forward(band)?);
        let (p1, c1) = PoolLayer.forward(&a1)?;
        let a2 = self.activate(self.convs[1].forward(&p1)?);
        let (p2, c2) = PoolLayer.forward(&a2)?;
        let a3 = self.activate(self.convs[2].forward(&p2)?);
        if a3.len() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "band features have shape {:?}, expected {}×1×1",
                a3.shape(),
                self.feature_dim()
            )));
        }
        let feature = a3.data().to_vec();
        let cache = BandCache {
            input: band.clone(),
            activated: [a1, a2, a3],
            pooled: [p1, p2],
            pools: [c1, c2],
        };
        Ok((feature, cache))
    }

    pub fn features(&self, bands: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        bands.iter().map(|b| self.forward_band(b).map(|(f, _)| f)).collect()
    }

    fn through_activation(&self, activated: &Tensor, d: &Tensor) -> Tensor {
        let data = activated
            .data()
            .iter()
            .zip(d.data())
            .map(|(&y, &g)| g * self.activation.derivative_from_output(y))
            .collect();
        Tensor::new(activated.shape().to_vec(), data).expect("same shape as the activation")
    }

    /// Accumulates conv gradients for `dL/dfeature`.
    pub fn backward_band(&mut self, cache: &BandCache, d_feature: &[f64]) -> Result<()> {
        let [a1, a2, a3] = &cache.activated;
        let [p1, p2] = &cache.pooled;
        let d_a3 = Tensor::new(a3.shape().to_vec(), d_feature.to_vec())
            .map_err(|_| Error::shapes("band feature cotangent", &[d_feature.len()], a3.shape()))?;
        let d_z3 = self.through_activation(a3, &d_a3);
        let d_p2 = self.convs[2].backward(p2, &d_z3)?;
        let d_a2 = PoolLayer.backward(&cache.pools[1], &d_p2)?;
        let d_z2 = self.through_activation(a2, &d_a2);
        let d_p1 = self.convs[1].backward(p1, &d_z2)?;
        let d_a1 = PoolLayer.backward(&cache.pools[0], &d_p1)?;
        let d_z1 = self.through_activation(a1, &d_a1);
        self.convs[0].backward(&cache.input, &d_z1)?;
        Ok(())
    }

    /// Hash of every parameter's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (_, p) in self.named_params() {
            for v in p.value.data() {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }
}

impl Parameterized for BandCnn {
    fn named_params(&self) -> Vec<(String, &Param)> {
        self.convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| prefixed(&format!("conv{}", i + 1), c.named_params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}

/// One labeled pixel as `k` band images.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSample {
    pub bands: Vec<Tensor>,
    /// 0-based class.
    pub label: usize,
}

impl SpatialSample {
    pub fn from_cube(cube: &HsiCube, row: usize, col: usize, patch_size: usize, label: usize) -> Result<Self> {
        Ok(Self {
            bands: band_matrices(&extract_patch(cube, row, col, patch_size)?)?,
            label,
        })
    }
}

/// A single band image of one pixel, labeled with the pixel's class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandRef {
    pub pixel: usize,
    pub band: usize,
    pub label: usize,
}

/// The `N × k` pretraining set.
pub fn pretrain_dataset(samples: &[SpatialSample]) -> Vec<BandRef> {
    samples
        .iter()
        .enumerate()
        .flat_map(|(pixel, s)| (0..s.bands.len()).map(move |band| BandRef { pixel, band, label: s.label }))
        .collect()
}

struct Pretrainer<'a> {
    cnn: &'a mut BandCnn,
    head: &'a mut OutputHead,
    data: &'a [SpatialSample],
}

impl Objective<BandRef> for Pretrainer<'_> {
    fn accumulate(&mut self, r: &BandRef, scale: f64) -> Result<SampleOutcome> {
        let (feature, cache) = self.cnn.forward_band(&self.data[r.pixel].bands[r.band])?;
        let logits = self.head.forward(&feature)?;
        let (loss, d_logits) = cross_entropy(&logits, r.label)?;
        let d_logits: Vec<f64> = d_logits.iter().map(|g| g * scale).collect();
        let d_feature = self.head.backward(&feature, &d_logits)?;
        self.cnn.backward_band(&cache, &d_feature)?;
        Ok(SampleOutcome {
            loss,
            correct: argmax(&logits) == r.label,
        })
    }

    fn trainable(&mut self) -> Vec<&mut Param> {
        let mut out = self.cnn.params_mut();
        out.extend(self.head.params_mut());
        out
    }
}

/// Trains the CNN and a band-level head on per-band labels.
pub fn pretrain_conv(
    cnn: &mut BandCnn,
    head: &mut OutputHead,
    samples: &[SpatialSample],
    sgd: &SgdConfig,
) -> Result<TrainingLog> {
    let dataset = pretrain_dataset(samples);
    let mut objective = Pretrainer { cnn, head, data: samples };
    fit(&mut objective, &dataset, sgd, Stage::Pretrain)
}

/// How far through the schedule a model is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum TrainingStage {
    #[default]
    Initialized,
    Pretrained,
    RnnTrained,
    FineTuned,
}

impl TrainingStage {
    const ALL: [TrainingStage; 4] = [
        TrainingStage::Initialized,
        TrainingStage::Pretrained,
        TrainingStage::RnnTrained,
        TrainingStage::FineTuned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingStage::Initialized => "initialized",
            TrainingStage::Pretrained => "pretrained",
            TrainingStage::RnnTrained => "rnn-trained",
            TrainingStage::FineTuned => "fine-tuned",
        }
    }
}

impl fmt::Display for TrainingStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsCascadeModel {
    pub spatial: SpatialConfig,
    pub band_cnn: BandCnn,
    pub cascade: CascadeModel,
    /// Band-level classifier used only while pretraining.
    pub pretrain_head: OutputHead,
    pub stage: TrainingStage,
}

impl SsCascadeModel {
    /// `cascade.input_dim` is overwritten with the CNN feature width.
    pub fn new<R: Rng + ?Sized>(spatial: SpatialConfig, mut cascade: CascadeConfig, rng: &mut R) -> Result<Self> {
        spatial.validate()?;
        cascade.input_dim = spatial.feature_dim();
        let band_cnn = BandCnn::glorot(&spatial, rng);
        let cascade = CascadeModel::new(cascade, rng)?;
        let pretrain_head = OutputHead::glorot(spatial.feature_dim(), cascade.config().classes, rng);
        Ok(Self {
            spatial,
            band_cnn,
            cascade,
            pretrain_head,
            stage: TrainingStage::Initialized,
        })
    }

    fn check_sample(&self, bands: &[Tensor]) -> Result<()> {
        let want = self.cascade.config().bands;
        if bands.len() != want {
            return Err(Error::shapes("spatial sample bands", &[bands.len()], &[want]));
        }
        Ok(())
    }

    pub fn logits(&self, bands: &[Tensor]) -> Result<Vec<f64>> {
        self.check_sample(bands)?;
        self.cascade.logits(&self.band_cnn.features(bands)?)
    }

    pub fn predict(&self, bands: &[Tensor]) -> Result<usize> {
        Ok(argmax(&self.logits(bands)?))
    }

    /// Stage A.
    pub fn pretrain(&mut self, samples: &[SpatialSample], sgd: &SgdConfig) -> Result<TrainingLog> {
        for s in samples {
            self.check_sample(&s.bands)?;
        }
        let log = pretrain_conv(&mut self.band_cnn, &mut self.pretrain_head, samples, sgd)?;
        self.stage = TrainingStage::Pretrained;
        Ok(log)
    }

    /// Stage B: features are computed once with the frozen CNN and the
    /// cascade trains on them.
    pub fn train_rnn(&mut self, samples: &[SpatialSample], sgd: &SgdConfig) -> Result<TrainingLog> {
        if self.stage < TrainingStage::Pretrained {
            return Err(Error::State(format!(
                "recurrent stage needs a pretrained CNN, model is {}",
                self.stage
            )));
        }
        let features = samples
            .iter()
            .map(|s| {
                self.check_sample(&s.bands)?;
                Ok(Sample {
                    inputs: self.band_cnn.features(&s.bands)?,
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let log = fit(&mut self.cascade, &features, sgd, Stage::Rnn)?;
        self.stage = TrainingStage::RnnTrained;
        Ok(log)
    }

    /// Stage C: CNN and cascade trained jointly.
    pub fn finetune(&mut self, samples: &[SpatialSample], sgd: &SgdConfig) -> Result<TrainingLog> {
        if self.stage < TrainingStage::RnnTrained {
            return Err(Error::State(format!(
                "fine-tuning needs the recurrent stage first, model is {}",
                self.stage
            )));
        }
        let log = fit(self, samples, sgd, Stage::Finetune)?;
        self.stage = TrainingStage::FineTuned;
        Ok(log)
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) {
        let s = &self.spatial;
        ckpt.insert_scalar("meta.stage", self.stage as usize as f64);
        ckpt.insert_scalar("meta.patch_size", s.patch_size as f64);
        let act = Activation::ALL.iter().position(|&a| a == s.activation).unwrap();
        ckpt.insert_scalar("meta.activation", act as f64);
        for (i, c) in s.convs.iter().enumerate() {
            ckpt.insert_scalar(format!("meta.conv{}.kernel", i + 1), c.kernel as f64);
            ckpt.insert_scalar(format!("meta.conv{}.channels", i + 1), c.channels as f64);
        }
        for (name, p) in prefixed("cnn", self.band_cnn.named_params()) {
            ckpt.insert(name, p.value.clone());
        }
        for (name, p) in prefixed("pretrain_head", self.pretrain_head.named_params()) {
            ckpt.insert(name, p.value.clone());
        }
        self.cascade.write_checkpoint(ckpt, "cascade.");
    }

    pub fn read_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let stage = TrainingStage::ALL
            .get(ckpt.count("meta.stage")?)
            .copied()
            .ok_or_else(|| Error::State("unknown training stage marker".into()))?;
        let activation = Activation::ALL
            .get(ckpt.count("meta.activation")?)
            .copied()
            .ok_or_else(|| Error::State("unknown activation code".into()))?;
        let mut convs = DEFAULT_CONVS;
        for (i, c) in convs.iter_mut().enumerate() {
            c.kernel = ckpt.count(&format!("meta.conv{}.kernel", i + 1))?;
            c.channels = ckpt.count(&format!("meta.conv{}.channels", i + 1))?;
        }
        let spatial = SpatialConfig {
            patch_size: ckpt.count("meta.patch_size")?,
            convs,
            activation,
        };
        spatial.validate()?;
        let cascade = CascadeModel::read_checkpoint(ckpt, "cascade.")?;
        let mut band_cnn = BandCnn::zeros(&spatial);
        let mut pretrain_head = OutputHead::zeros(spatial.feature_dim(), cascade.config().classes);
        load_params(ckpt, "cnn", &mut band_cnn)?;
        load_params(ckpt, "pretrain_head", &mut pretrain_head)?;
        Ok(Self {
            spatial,
            band_cnn,
            cascade,
            pretrain_head,
            stage,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        self.write_checkpoint(&mut c);
        c
    }

    /// Whether a checkpoint holds a spectral-spatial model.
    pub fn is_spatial_checkpoint(ckpt: &Checkpoint) -> bool {
        ckpt.contains("meta.stage")
    }
}

fn load_params<P: Parameterized>(ckpt: &Checkpoint, prefix: &str, target: &mut P) -> Result<()> {
    let names: Vec<String> = target.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, p) in names.iter().zip(target.params_mut()) {
        let key = format!("{prefix}.{name}");
        let t = ckpt.get(&key)?;
        if t.shape() != p.shape() {
            return Err(Error::shapes(&key, t.shape(), p.shape()));
        }
        p.value = t.clone();
    }
    Ok(())
}

impl Objective<SpatialSample> for SsCascadeModel {
    fn accumulate(&mut self, sample: &SpatialSample, scale: f64) -> Result<SampleOutcome> {
        self.check_sample(&sample.bands)?;
        let mut features = Vec::with_capacity(sample.bands.len());
        let mut caches = Vec::with_capacity(sample.bands.len());
        for band in &sample.bands {
            let (f, c) = self.band_cnn.forward_band(band)?;
            features.push(f);
            caches.push(c);
        }
        let (outcome, d_features) = self.cascade.accumulate_sample(&features, sample.label, scale)?;
        for (cache, d) in caches.iter().zip(&d_features) {
            self.band_cnn.backward_band(cache, d)?;
        }
        Ok(outcome)
    }

    fn trainable(&mut self) -> Vec<&mut Param> {
        let mut out = self.band_cnn.params_mut();
        out.extend(self.cascade.params_mut());
        out
    }
}

/// Learning rate, batch size and seed shared by all stages, plus per-stage
/// epoch counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsTrainConfig {
    pub sgd: SgdConfig,
    pub stages: StageEpochs,
}

/// Runs the three stages in order and concatenates their logs.
pub fn train_sscas(model: &mut SsCascadeModel, samples: &[SpatialSample], cfg: &SsTrainConfig) -> Result<TrainingLog> {
    let with_epochs = |epochs| SgdConfig { epochs, ..cfg.sgd };
    let mut log = model.pretrain(samples, &with_epochs(cfg.stages.pretrain))?;
    log.extend(model.train_rnn(samples, &with_epochs(cfg.stages.rnn))?);
    log.extend(model.finetune(samples, &with_epochs(cfg.stages.finetune))?);
    Ok(log)
}

/// Seeded generator used for spectral-spatial model construction.
pub fn model_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
