//! Flat `key = value` run configuration.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::cascade::{LossWeights, Variant};
use crate::data::{DatasetPreset, NormalizationFit, SpatialSynthSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::nn::{Activation, SgdConfig};
use crate::spatial::{ConvSpec, SpatialConfig, StageEpochs, DEFAULT_CONVS};

/// Model family selected by `variant`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Spectral(Variant),
    SpectralSpatial,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Spectral(v) => v.name(),
            ModelKind::SpectralSpatial => "sscas",
        }
    }

    pub fn is_spatial(self) -> bool {
        self == ModelKind::SpectralSpatial
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "sscas" {
            return Ok(ModelKind::SpectralSpatial);
        }
        s.parse::<Variant>()
            .map(ModelKind::Spectral)
            .map_err(|_| Error::Config(format!("unknown variant {s:?} (expected rnn, cas, cas-f, cas-o or sscas)")))
    }
}

/// Which generator `synth` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Spectral,
    Spatial,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Spectral => "spectral",
            SynthKind::Spatial => "spatial",
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(SynthKind::Spectral),
            "spatial" => Ok(SynthKind::Spatial),
            other => Err(Error::Config(format!("unknown synth kind {other:?} (expected spectral or spatial)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: PathBuf,

    /// Generate the scene in memory instead of reading `cube`/`labels`.
    pub synth: Option<SynthKind>,
    pub classes: usize,
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    pub redundancy: usize,
    pub noise: f64,
    pub margin: usize,
    pub amplitude: f64,
    pub synth_seed: u64,

    pub variant: ModelKind,
    pub l: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Output-fusion loss weights held fixed or updated by SGD.
    pub loss_weights: LossWeights,

    // spectral-spatial only
    pub patch_size: Option<usize>,
    pub convs: Option<[ConvSpec; 3]>,
    pub activation: Option<Activation>,
    pub pretrain_epochs: Option<usize>,
    pub rnn_epochs: Option<usize>,
    pub finetune_epochs: Option<usize>,

    pub normalization: NormalizationFit,
    /// One count per class, or a single count used for every class.
    pub train_counts: Vec<usize>,
    pub split_seed: u64,

    /// Empty means "the current value only".
    pub sweep_l: Vec<usize>,
    pub sweep_hidden1: Vec<usize>,
    pub sweep_hidden2: Vec<usize>,

    /// Evaluation worker threads; 0 picks the machine's parallelism.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        let synth = SynthSpec::default();
        let spatial = SpatialSynthSpec::default();
        Self {
            cube: None,
            labels: None,
            split: None,
            checkpoint: None,
            output: PathBuf::from("out"),
            synth: None,
            classes: synth.classes,
            bands: synth.bands,
            rows: synth.rows,
            cols: synth.cols,
            redundancy: synth.redundancy,
            noise: synth.noise,
            margin: spatial.margin,
            amplitude: spatial.amplitude,
            synth_seed: 0,
            variant: ModelKind::Spectral(Variant::Base),
            l: 10,
            hidden1: 128,
            hidden2: 256,
            lr: sgd.learning_rate,
            batch: sgd.batch_size,
            epochs: sgd.epochs,
            seed: sgd.seed,
            loss_weights: LossWeights::Fixed,
            patch_size: None,
            convs: None,
            activation: None,
            pretrain_epochs: None,
            rnn_epochs: None,
            finetune_epochs: None,
            normalization: NormalizationFit::Full,
            train_counts: vec![10],
            split_seed: 0,
            sweep_l: Vec::new(),
            sweep_hidden1: Vec::new(),
            sweep_hidden2: Vec::new(),
            threads: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn parse_convs(value: &str) -> Result<[ConvSpec; 3]> {
    let specs: Vec<ConvSpec> = value
        .split(',')
        .map(|s| {
            let (k, c) = s
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("conv spec {s:?} is not KERNELxCHANNELS")))?;
            Ok(ConvSpec {
                kernel: parse_value("convs", k)?,
                channels: parse_value("convs", c)?,
            })
        })
        .collect::<Result<_>>()?;
    specs
        .try_into()
        .map_err(|v: Vec<ConvSpec>| Error::Config(format!("convs needs 3 layers, got {}", v.len())))
}

fn join(list: &[usize]) -> String {
    list.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Every key `set` accepts, in serialization order. `preset` is
    /// accepted too but expands into other keys.
    pub const KEYS: &'static [&'static str] = &[
        "cube",
        "labels",
        "split",
        "checkpoint",
        "output",
        "synth",
        "classes",
        "bands",
        "rows",
        "cols",
        "redundancy",
        "noise",
        "margin",
        "amplitude",
        "synth_seed",
        "variant",
        "l",
        "hidden1",
        "hidden2",
        "lr",
        "batch",
        "epochs",
        "seed",
        "loss_weights",
        "patch_size",
        "convs",
        "activation",
        "pretrain_epochs",
        "rnn_epochs",
        "finetune_epochs",
        "normalization",
        "train_counts",
        "split_seed",
        "sweep_l",
        "sweep_hidden1",
        "sweep_hidden2",
        "threads",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => self.apply_preset(v)?,
            "cube" => self.cube = path(v),
            "labels" => self.labels = path(v),
            "split" => self.split = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "output" => self.output = PathBuf::from(v),
            "synth" => self.synth = if v.is_empty() { None } else { Some(v.parse()?) },
            "classes" => self.classes = parse_value(key, v)?,
            "bands" => self.bands = parse_value(key, v)?,
            "rows" => self.rows = parse_value(key, v)?,
            "cols" => self.cols = parse_value(key, v)?,
            "redundancy" => self.redundancy = parse_value(key, v)?,
            "noise" => self.noise = parse_value(key, v)?,
            "margin" => self.margin = parse_value(key, v)?,
            "amplitude" => self.amplitude = parse_value(key, v)?,
            "synth_seed" => self.synth_seed = parse_value(key, v)?,
            "variant" => self.variant = v.parse()?,
            "l" => self.l = parse_value(key, v)?,
            "hidden1" => self.hidden1 = parse_value(key, v)?,
            "hidden2" => self.hidden2 = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "batch" => self.batch = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "loss_weights" => self.loss_weights = parse_value(key, v)?,
            "patch_size" => self.patch_size = Some(parse_value(key, v)?),
            "convs" => self.convs = Some(parse_convs(v)?),
            "activation" => {
                self.activation = Some(v.parse().map_err(|_| Error::Config(format!("unknown activation {v:?}")))?)
            }
            "pretrain_epochs" => self.pretrain_epochs = Some(parse_value(key, v)?),
            "rnn_epochs" => self.rnn_epochs = Some(parse_value(key, v)?),
            "finetune_epochs" => self.finetune_epochs = Some(parse_value(key, v)?),
            "normalization" => {
                self.normalization = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "train_counts" => self.train_counts = parse_list(key, v)?,
            "split_seed" => self.split_seed = parse_value(key, v)?,
            "sweep_l" => self.sweep_l = parse_list(key, v)?,
            "sweep_hidden1" => self.sweep_hidden1 = parse_list(key, v)?,
            "sweep_hidden2" => self.sweep_hidden2 = parse_list(key, v)?,
            "threads" => self.threads = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Table class counts and best sizes for a benchmark scene. The
    /// spectral-spatial optimum is used when `variant` is already `sscas`.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let preset = DatasetPreset::by_name(name)?;
        self.train_counts = preset.train_counts.to_vec();
        self.classes = preset.classes();
        self.bands = preset.bands;
        let (l, h1, h2) = match (preset.name, self.variant.is_spatial()) {
            ("indian-pines", _) => (10, 128, 256),
            (_, false) => (8, 256, 16),
            (_, true) => (4, 256, 256),
        };
        self.l = l;
        self.hidden1 = h1;
        self.hidden2 = h2;
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Value of `key` as it would be written to a config file, or `None`
    /// for unset optional keys.
    pub fn get(&self, key: &str) -> Option<String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "cube" => return p(&self.cube),
            "labels" => return p(&self.labels),
            "split" => return p(&self.split),
            "checkpoint" => return p(&self.checkpoint),
            "output" => self.output.display().to_string(),
            "synth" => return self.synth.map(|s| s.name().to_string()),
            "classes" => self.classes.to_string(),
            "bands" => self.bands.to_string(),
            "rows" => self.rows.to_string(),
            "cols" => self.cols.to_string(),
            "redundancy" => self.redundancy.to_string(),
            "noise" => self.noise.to_string(),
            "margin" => self.margin.to_string(),
            "amplitude" => self.amplitude.to_string(),
            "synth_seed" => self.synth_seed.to_string(),
            "variant" => self.variant.to_string(),
            "l" => self.l.to_string(),
            "hidden1" => self.hidden1.to_string(),
            "hidden2" => self.hidden2.to_string(),
            "lr" => self.lr.to_string(),
            "batch" => self.batch.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "loss_weights" => self.loss_weights.to_string(),
            "patch_size" => return self.patch_size.map(|v| v.to_string()),
            "convs" => {
                return self.convs.map(|c| {
                    c.iter()
                        .map(|s| format!("{}x{}", s.kernel, s.channels))
                        .collect::<Vec<_>>()
                        .join(",")
                })
            }
            "activation" => return self.activation.map(|a| a.to_string()),
            "pretrain_epochs" => return self.pretrain_epochs.map(|v| v.to_string()),
            "rnn_epochs" => return self.rnn_epochs.map(|v| v.to_string()),
            "finetune_epochs" => return self.finetune_epochs.map(|v| v.to_string()),
            "normalization" => self.normalization.to_string(),
            "train_counts" => join(&self.train_counts),
            "split_seed" => self.split_seed.to_string(),
            "sweep_l" => join(&self.sweep_l),
            "sweep_hidden1" => join(&self.sweep_hidden1),
            "sweep_hidden2" => join(&self.sweep_hidden2),
            "threads" => self.threads.to_string(),
            _ => return None,
        })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            if let Some(v) = self.get(key) {
                writeln!(out, "{key} = {v}").unwrap();
            }
        }
        out
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn spatial(&self) -> SpatialConfig {
        let d = SpatialConfig::default();
        SpatialConfig {
            patch_size: self.patch_size.unwrap_or(d.patch_size),
            convs: self.convs.unwrap_or(DEFAULT_CONVS),
            activation: self.activation.unwrap_or(d.activation),
        }
    }

    pub fn stage_epochs(&self) -> StageEpochs {
        let d = StageEpochs::default();
        StageEpochs {
            pretrain: self.pretrain_epochs.unwrap_or(d.pretrain),
            rnn: self.rnn_epochs.unwrap_or(d.rnn),
            finetune: self.finetune_epochs.unwrap_or(d.finetune),
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            classes: self.classes,
            bands: self.bands,
            rows: self.rows,
            cols: self.cols,
            redundancy: self.redundancy,
            noise: self.noise,
            seed: self.synth_seed,
        }
    }

    pub fn spatial_synth_spec(&self) -> SpatialSynthSpec {
        SpatialSynthSpec {
            classes: self.classes,
            bands: self.bands,
            rows: self.rows,
            cols: self.cols,
            margin: self.margin,
            amplitude: self.amplitude,
            noise: self.noise,
            seed: self.synth_seed,
        }
    }

    /// Per-class train counts for `classes` classes.
    pub fn train_counts_for(&self, classes: usize) -> Result<Vec<usize>> {
        match self.train_counts.as_slice() {
            [n] => Ok(vec![*n; classes]),
            list if list.len() == classes => Ok(list.to_vec()),
            list => Err(Error::Config(format!(
                "train_counts has {} entries for {classes} classes",
                list.len()
            ))),
        }
    }

    /// Checks values and variant-specific keys.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.l == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("l, hidden1 and hidden2 must be positive".into());
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("lr must be a non-negative number, got {}", self.lr));
        }
        if !self.noise.is_finite() || self.noise < 0.0 || !self.amplitude.is_finite() {
            return bad("noise must be non-negative and amplitude finite".into());
        }
        if self.train_counts.is_empty() {
            return bad("train_counts must not be empty".into());
        }
        if self.variant.is_spatial() {
            self.spatial().validate().map_err(|e| Error::Config(format!("spatial settings: {e}")))?;
        } else {
            let spatial_only = [
                ("patch_size", self.patch_size.is_some()),
                ("convs", self.convs.is_some()),
                ("activation", self.activation.is_some()),
                ("pretrain_epochs", self.pretrain_epochs.is_some()),
                ("rnn_epochs", self.rnn_epochs.is_some()),
                ("finetune_epochs", self.finetune_epochs.is_some()),
            ];
            if let Some((key, _)) = spatial_only.iter().find(|(_, set)| *set) {
                return bad(format!("{key} only applies to variant sscas, not {}", self.variant));
            }
        }
        if self.cube.is_some() != self.labels.is_some() {
            return bad("cube and labels must be given together".into());
        }
        Ok(())
    }
}
