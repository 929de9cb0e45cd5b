//! Configuration-driven commands: `synth`, `train`, `eval`, `map`, `sweep`.
//!
//! Every command reads a [`RunConfig`] and writes its artifacts into
//! `output`:
//!
//! | command | files |
//! |---------|-------|
//! | synth   | `cube.hsc`, `labels.hsl`, `split.csv` |
//! | train   | `model.crnw`, `train_log.csv`, `config.txt` |
//! | eval    | `metrics.txt`, `metrics.kv` |
//! | map     | `map.ppm` |
//! | sweep   | `sweep.csv` |

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelKind, RunConfig, SynthKind};

use crate::cascade::{train_cascade, CascadeConfig, CascadeModel, Sample, Variant};
use crate::data::{build_split, synth_hsi, synth_spatial, BandScaling, GroundTruth, HsiCube, NormalizationFit, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{default_palette, render_map, summarize, ConfusionMatrix, Summary};
use crate::nn::{Checkpoint, TrainingLog};
use crate::numerics::Tensor;
use crate::spatial::{train_sscas, SpatialSample, SsCascadeModel, SsTrainConfig};

pub const CUBE_FILE: &str = "cube.hsc";
pub const LABELS_FILE: &str = "labels.hsl";
pub const SPLIT_FILE: &str = "split.csv";
pub const MODEL_FILE: &str = "model.crnw";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";
pub const METRICS_KV_FILE: &str = "metrics.kv";
pub const MAP_FILE: &str = "map.ppm";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Generator for parameter initialization. Kept on a stream the epoch
/// shuffles never use.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Prefixes I/O failures with the file they concern.
fn in_file(err: Error, path: &Path) -> Error {
    match err {
        Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
        other => other,
    }
}

/// Cube and labels either read from disk or generated.
pub fn load_scene(cfg: &RunConfig) -> Result<(HsiCube, Option<GroundTruth>)> {
    if let Some(cube_path) = &cfg.cube {
        let cube = HsiCube::load(cube_path).map_err(|e| in_file(e, cube_path))?;
        let gt = match &cfg.labels {
            Some(p) => {
                let gt = GroundTruth::load(p).map_err(|e| in_file(e, p))?;
                gt.check_matches(&cube)?;
                Some(gt)
            }
            None => None,
        };
        return Ok((cube, gt));
    }
    let (cube, gt) = match cfg.synth {
        Some(SynthKind::Spectral) => synth_hsi(&cfg.synth_spec())?,
        Some(SynthKind::Spatial) => synth_spatial(&cfg.spatial_synth_spec())?,
        None => return Err(Error::Config("no dataset: set cube and labels, or synth".into())),
    };
    Ok((cube, Some(gt)))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Raw, un-normalized values.
    pub cube: HsiCube,
    pub gt: GroundTruth,
    pub split: SplitSpec,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (cube, gt) = load_scene(cfg)?;
    let gt = gt.ok_or_else(|| Error::Config("labels are required".into()))?;
    let split = match &cfg.split {
        Some(p) => SplitSpec::load(p).map_err(|e| in_file(e, p))?,
        None => build_split(&gt, &cfg.train_counts_for(gt.classes())?, cfg.split_seed)?,
    };
    split.validate(&gt)?;
    Ok(Dataset { cube, gt, split })
}

/// A trained network of either family.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Spectral(CascadeModel),
    Spatial(SsCascadeModel),
}

impl Model {
    pub fn cascade(&self) -> &CascadeModel {
        match self {
            Model::Spectral(m) => m,
            Model::Spatial(m) => &m.cascade,
        }
    }

    pub fn classes(&self) -> usize {
        self.cascade().config().classes
    }

    pub fn bands(&self) -> usize {
        self.cascade().config().bands
    }

    /// 0-based class of one pixel of an already normalized cube.
    pub fn predict_pixel(&self, cube: &HsiCube, row: usize, col: usize) -> Result<usize> {
        match self {
            Model::Spectral(m) => {
                let inputs: Vec<[f64; 1]> = cube.spectrum(row, col).iter().map(|&v| [v]).collect();
                m.predict(&inputs)
            }
            Model::Spatial(m) => {
                let s = SpatialSample::from_cube(cube, row, col, m.spatial.patch_size, 0)?;
                m.predict(&s.bands)
            }
        }
    }
}

/// A model plus the band scaling its inputs were normalized with.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: Model,
    pub scaling: BandScaling,
}

impl SavedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = match &self.model {
            Model::Spectral(m) => m.to_checkpoint(),
            Model::Spatial(m) => m.to_checkpoint(),
        };
        let vector = |v: &[f64]| Tensor::vector(v.to_vec()).expect("finite band extrema");
        ckpt.insert("norm.min", vector(&self.scaling.min));
        ckpt.insert("norm.max", vector(&self.scaling.max));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = if SsCascadeModel::is_spatial_checkpoint(ckpt) {
            Model::Spatial(SsCascadeModel::read_checkpoint(ckpt)?)
        } else {
            Model::Spectral(CascadeModel::from_checkpoint(ckpt)?)
        };
        let scaling = BandScaling {
            min: ckpt.get("norm.min")?.data().to_vec(),
            max: ckpt.get("norm.max")?.data().to_vec(),
        };
        if scaling.min.len() != model.bands() || scaling.max.len() != model.bands() {
            return Err(Error::State("checkpoint band scaling does not match the model".into()));
        }
        Ok(Self { model, scaling })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Predicts 0-based classes for `pixels` of a raw cube, fanning out
    /// over `threads` workers (0 = all cores). Output order follows input.
    pub fn predict(&self, cube: &HsiCube, pixels: &[(usize, usize)], threads: usize) -> Result<Vec<usize>> {
        if cube.bands() != self.model.bands() {
            return Err(Error::shapes("cube bands vs model", &[cube.bands()], &[self.model.bands()]));
        }
        let normalized = self.scaling.apply(cube)?;
        parallel_map(pixels, threads, |&(r, c)| self.model.predict_pixel(&normalized, r, c))
    }
}

fn worker_count(threads: usize) -> usize {
    if threads > 0 {
        threads
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Ordered parallel map over contiguous chunks.
fn parallel_map<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let workers = worker_count(threads).min(items.len()).max(1);
    let chunk = items.len().div_ceil(workers).max(1);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Fits the scaling, builds the configured model and trains it on the
/// split's training pixels.
pub fn train_model(cfg: &RunConfig, data: &Dataset) -> Result<(SavedModel, TrainingLog)> {
    cfg.validate()?;
    let train: Vec<(usize, usize, usize)> = data
        .split
        .train()
        .map(|e| (e.row, e.col, e.class as usize - 1))
        .collect();
    let scaling = match cfg.normalization {
        NormalizationFit::Full => BandScaling::fit(&data.cube),
        NormalizationFit::TrainOnly => BandScaling::fit_pixels(&data.cube, train.iter().map(|&(r, c, _)| (r, c)))?,
    };
    let cube = scaling.apply(&data.cube)?;
    let cascade = |variant| CascadeConfig {
        bands: cube.bands(),
        sub_sequences: cfg.l,
        hidden1: cfg.hidden1,
        hidden2: cfg.hidden2,
        classes: data.gt.classes(),
        variant,
        input_dim: 1,
    };
    let mut rng = init_rng(cfg.seed);
    let (model, log) = match cfg.variant {
        ModelKind::Spectral(variant) => {
            let mut m = CascadeModel::new(cascade(variant), &mut rng)?;
            m.loss_weights = cfg.loss_weights;
            let samples: Vec<Sample> = train
                .iter()
                .map(|&(r, c, label)| Sample::from_spectrum(cube.spectrum(r, c), label))
                .collect();
            let log = train_cascade(&mut m, &samples, &cfg.sgd())?;
            (Model::Spectral(m), log)
        }
        ModelKind::SpectralSpatial => {
            let spatial = cfg.spatial();
            let mut m = SsCascadeModel::new(spatial, cascade(Variant::Base), &mut rng)?;
            let samples = train
                .iter()
                .map(|&(r, c, label)| SpatialSample::from_cube(&cube, r, c, spatial.patch_size, label))
                .collect::<Result<Vec<_>>>()?;
            let schedule = SsTrainConfig {
                sgd: cfg.sgd(),
                stages: cfg.stage_epochs(),
            };
            let log = train_sscas(&mut m, &samples, &schedule)?;
            (Model::Spatial(m), log)
        }
    };
    Ok((SavedModel { model, scaling }, log))
}

/// Confusion matrix over the split's test pixels.
pub fn evaluate(saved: &SavedModel, data: &Dataset, threads: usize) -> Result<ConfusionMatrix> {
    let classes = saved.model.classes();
    if data.gt.classes() > classes {
        return Err(Error::Argument(format!(
            "ground truth has {} classes, model predicts {classes}",
            data.gt.classes()
        )));
    }
    let test: Vec<_> = data.split.test().collect();
    let pixels: Vec<(usize, usize)> = test.iter().map(|e| (e.row, e.col)).collect();
    let predicted = saved.predict(&data.cube, &pixels, threads)?;
    let mut cm = ConfusionMatrix::new(classes);
    for (e, p) in test.iter().zip(predicted) {
        cm.accumulate(e.class as usize, p + 1)?;
    }
    Ok(cm)
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output)?;
    Ok(&cfg.output)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.output.join(MODEL_FILE))
}

#[derive(Debug, Clone)]
pub struct SynthArtifacts {
    pub cube: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
}

/// Generates a scene (spectral unless `synth = spatial`) with its split.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthArtifacts> {
    cfg.validate()?;
    let generated = RunConfig {
        cube: None,
        labels: None,
        split: None,
        synth: Some(cfg.synth.unwrap_or(SynthKind::Spectral)),
        ..cfg.clone()
    };
    let data = load_dataset(&generated)?;
    let dir = output_dir(cfg)?;
    let out = SynthArtifacts {
        cube: dir.join(CUBE_FILE),
        labels: dir.join(LABELS_FILE),
        split: dir.join(SPLIT_FILE),
    };
    data.cube.save(&out.cube)?;
    data.gt.save(&out.labels)?;
    data.split.save(&out.split)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: TrainingLog,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let (saved, log) = train_model(cfg, &data)?;
    let dir = output_dir(cfg)?;
    let checkpoint = checkpoint_path(cfg);
    saved.save(&checkpoint)?;
    log.write_csv(fs::File::create(dir.join(LOG_FILE))?)?;
    fs::write(dir.join(CONFIG_FILE), cfg.serialize())?;
    Ok(TrainArtifacts { checkpoint, log })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    let path = checkpoint_path(cfg);
    let saved = SavedModel::load(&path).map_err(|e| in_file(e, &path))?;
    let data = load_dataset(cfg)?;
    let summary = summarize(&evaluate(&saved, &data, cfg.threads)?)?;
    let dir = output_dir(cfg)?;
    fs::write(dir.join(METRICS_TEXT_FILE), summary.to_text())?;
    fs::write(dir.join(METRICS_KV_FILE), summary.to_kv())?;
    Ok(summary)
}

/// Renders predictions for every labeled pixel (every pixel when no labels
/// are configured); unlabeled pixels stay black.
pub fn cmd_map(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let path = checkpoint_path(cfg);
    let saved = SavedModel::load(&path).map_err(|e| in_file(e, &path))?;
    let (cube, gt) = load_scene(cfg)?;
    let pixels: Vec<(usize, usize)> = (0..cube.rows())
        .flat_map(|r| (0..cube.cols()).map(move |c| (r, c)))
        .filter(|&(r, c)| gt.as_ref().is_none_or(|g| g.get(r, c) > 0))
        .collect();
    let predicted = saved.predict(&cube, &pixels, cfg.threads)?;
    let mut classes = vec![0u16; cube.rows() * cube.cols()];
    for (&(r, c), p) in pixels.iter().zip(predicted) {
        classes[r * cube.cols() + c] = p as u16 + 1;
    }
    let image = render_map(&classes, cube.rows(), cube.cols(), &default_palette(saved.model.classes()))?;
    let path = output_dir(cfg)?.join(MAP_FILE);
    fs::write(&path, image)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub l: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub summary: Summary,
    pub seconds: f64,
}

/// Trains and evaluates every `(l, hidden1, hidden2)` in the grid.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let or_current = |list: &[usize], v: usize| if list.is_empty() { vec![v] } else { list.to_vec() };
    let mut rows = Vec::new();
    for &l in &or_current(&cfg.sweep_l, cfg.l) {
        for &hidden1 in &or_current(&cfg.sweep_hidden1, cfg.hidden1) {
            for &hidden2 in &or_current(&cfg.sweep_hidden2, cfg.hidden2) {
                let point = RunConfig {
                    l,
                    hidden1,
                    hidden2,
                    ..cfg.clone()
                };
                let start = Instant::now();
                let (saved, _) = train_model(&point, &data)?;
                let summary = summarize(&evaluate(&saved, &data, cfg.threads)?)?;
                rows.push(SweepRow {
                    l,
                    hidden1,
                    hidden2,
                    summary,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    let mut out = fs::File::create(output_dir(cfg)?.join(SWEEP_FILE))?;
    writeln!(out, "l,hidden1,hidden2,oa,aa,kappa,seconds")?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{:.3}",
            r.l, r.hidden1, r.hidden2, r.summary.oa, r.summary.aa, r.summary.kappa, r.seconds
        )?;
    }
    Ok(rows)
}

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}
