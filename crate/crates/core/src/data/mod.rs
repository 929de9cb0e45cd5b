//! Cubes, ground truth, train/test splits and band normalization.
//!
//! Binary layouts (little-endian):
//!
//! ```text
//! HSC1: "HSC1" u16 version u16 reserved u32 m u32 n u32 k, m·n·k × f64 (pixel-major, bands contiguous)
//! HSL1: "HSL1" u16 version u16 reserved u32 m u32 n, m·n × u16 (row-major, 0 = unlabeled)
//! ```

mod synth;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bytes::{product_checked, ByteReader};
use crate::error::{Error, Result};

pub use synth::{synth_hsi, synth_spatial, SpatialSynthSpec, SynthSpec};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const LABEL_MAGIC: &[u8; 4] = b"HSL1";
pub const FORMAT_VERSION: u16 = 1;

/// `m × n` pixels of `k` bands, stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    rows: usize,
    cols: usize,
    bands: usize,
    values: Vec<f64>,
}

impl HsiCube {
    pub fn new(rows: usize, cols: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::Shape(format!("cube dimensions must be positive, got {rows}×{cols}×{bands}")));
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|p| p.checked_mul(bands))
            .ok_or_else(|| Error::Shape(format!("cube {rows}×{cols}×{bands} is too large")))?;
        if values.len() != expected {
            return Err(Error::shapes("cube values", &[values.len()], &[expected]));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("cube value {i} is not finite")));
        }
        Ok(Self { rows, cols, bands, values })
    }

    pub fn from_fn(rows: usize, cols: usize, bands: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols * bands);
        for r in 0..rows {
            for c in 0..cols {
                for b in 0..bands {
                    values.push(f(r, c, b));
                }
            }
        }
        Self::new(rows, cols, bands, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.bands;
        &self.values[start..start + self.bands]
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.values[(row * self.cols + col) * self.bands + band]
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.values.len() * 8);
        out.extend_from_slice(CUBE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for d in [self.rows, self.cols, self.bands] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(CUBE_MAGIC)?;
        read_version(&mut r)?;
        let at = r.position();
        let dims = [r.u32("m")? as usize, r.u32("n")? as usize, r.u32("k")? as usize];
        if dims.contains(&0) {
            return Err(Error::format(at, format!("zero cube dimension in {dims:?}")));
        }
        let len = product_checked(&dims, at)?;
        let at = r.position();
        let values = r.f64s(len, "cube values")?;
        r.finish()?;
        Self::new(dims[0], dims[1], dims[2], values).map_err(|e| Error::format(at, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_version(r: &mut ByteReader<'_>) -> Result<()> {
    let at = r.position();
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = r.position();
    let reserved = r.u16("reserved")?;
    if reserved != 0 {
        return Err(Error::format(at, format!("reserved field is {reserved}, expected 0")));
    }
    Ok(())
}

/// Per-pixel class labels; 0 marks unlabeled pixels, classes are `1..=C`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    rows: usize,
    cols: usize,
    labels: Vec<u16>,
}

impl GroundTruth {
    pub fn new(rows: usize, cols: usize, labels: Vec<u16>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("label map dimensions must be positive, got {rows}×{cols}")));
        }
        if rows.checked_mul(cols) != Some(labels.len()) {
            return Err(Error::shapes("label map", &[labels.len()], &[rows, cols]));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: u16) {
        self.labels[row * self.cols + col] = label;
    }

    /// Number of classes, i.e. the largest label.
    pub fn classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Labeled pixels per class; index 0 is class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    /// `(row, col, class)` for every labeled pixel, row-major.
    pub fn labeled(&self) -> impl Iterator<Item = (usize, usize, u16)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0)
            .map(|(i, &l)| (i / self.cols, i % self.cols, l))
    }

    pub fn check_matches(&self, cube: &HsiCube) -> Result<()> {
        if (self.rows, self.cols) != (cube.rows(), cube.cols()) {
            return Err(Error::shapes(
                "ground truth vs cube",
                &[self.rows, self.cols],
                &[cube.rows(), cube.cols()],
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.labels.len() * 2);
        out.extend_from_slice(LABEL_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(LABEL_MAGIC)?;
        read_version(&mut r)?;
        let at = r.position();
        let dims = [r.u32("m")? as usize, r.u32("n")? as usize];
        if dims.contains(&0) {
            return Err(Error::format(at, format!("zero label map dimension in {dims:?}")));
        }
        let len = product_checked(&dims, at)?;
        let nbytes = len
            .checked_mul(2)
            .ok_or_else(|| Error::format(at, format!("label count {len} overflows")))?;
        let raw = r.take(nbytes, "labels")?;
        r.finish()?;
        let labels = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Self::new(dims[0], dims[1], labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            other => Err(Error::Argument(format!("unknown split role {other:?} (expected train or test)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitEntry {
    pub row: usize,
    pub col: usize,
    /// 1-based, as in the ground truth.
    pub class: u16,
    pub role: Role,
}

/// Train/test assignment of labeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub entries: Vec<SplitEntry>,
    /// Seed the split was drawn with; unknown for splits read from CSV.
    pub seed: Option<u64>,
}

impl SplitSpec {
    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &SplitEntry> + '_ {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn train(&self) -> impl Iterator<Item = &SplitEntry> + '_ {
        self.with_role(Role::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &SplitEntry> + '_ {
        self.with_role(Role::Test)
    }

    /// Entries per class for `role`; index 0 is class 1.
    pub fn counts(&self, role: Role, classes: usize) -> Vec<usize> {
        let mut out = vec![0; classes];
        for e in self.with_role(role) {
            if let Some(slot) = out.get_mut(e.class as usize - 1) {
                *slot += 1;
            }
        }
        out
    }

    /// Checks that no pixel repeats and every class agrees with `gt`.
    pub fn validate(&self, gt: &GroundTruth) -> Result<()> {
        let mut seen = vec![false; gt.rows() * gt.cols()];
        for e in &self.entries {
            if e.row >= gt.rows() || e.col >= gt.cols() {
                return Err(Error::Argument(format!(
                    "split pixel ({}, {}) is outside the {}×{} image",
                    e.row,
                    e.col,
                    gt.rows(),
                    gt.cols()
                )));
            }
            let idx = e.row * gt.cols() + e.col;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::Argument(format!("split lists pixel ({}, {}) twice", e.row, e.col)));
            }
            let truth = gt.get(e.row, e.col);
            if e.class == 0 || truth != e.class {
                return Err(Error::Argument(format!(
                    "split gives pixel ({}, {}) class {} but the ground truth says {truth}",
                    e.row, e.col, e.class
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row", "col", "class", "role"])?;
        for e in &self.entries {
            out.write_record([e.row.to_string(), e.col.to_string(), e.class.to_string(), e.role.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(r);
        let header = input.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["row", "col", "class", "role"] {
            return Err(Error::Argument(format!("split header must be row,col,class,role, got {header:?}")));
        }
        let mut entries = Vec::new();
        for (line, record) in input.records().enumerate() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").trim();
            let bad = |what: &str| Error::Argument(format!("split row {}: bad {what} {:?}", line + 1, record));
            entries.push(SplitEntry {
                row: field(0).parse().map_err(|_| bad("row"))?,
                col: field(1).parse().map_err(|_| bad("col"))?,
                class: field(2).parse().map_err(|_| bad("class"))?,
                role: field(3).parse().map_err(|_| bad("role"))?,
            });
        }
        Ok(Self { entries, seed: None })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Draws `per_class_train[c]` training pixels uniformly without replacement
/// from each class `c + 1`; every other labeled pixel becomes a test pixel.
/// Entries are listed row-major.
pub fn build_split(gt: &GroundTruth, per_class_train: &[usize], seed: u64) -> Result<SplitSpec> {
    let classes = gt.classes();
    if per_class_train.len() != classes {
        return Err(Error::Argument(format!(
            "{} train counts given for {classes} classes",
            per_class_train.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in gt.labels().iter().enumerate() {
        if l > 0 {
            by_class[l as usize - 1].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_train = vec![false; gt.labels().len()];
    for (c, (pixels, &want)) in by_class.iter().zip(per_class_train).enumerate() {
        if pixels.len() < want {
            return Err(Error::Argument(format!(
                "class {} has {} labeled pixels, {want} requested for training",
                c + 1,
                pixels.len()
            )));
        }
        for k in index::sample(&mut rng, pixels.len(), want) {
            is_train[pixels[k]] = true;
        }
    }
    let entries = gt
        .labeled()
        .map(|(row, col, class)| SplitEntry {
            row,
            col,
            class,
            role: if is_train[row * gt.cols() + col] { Role::Train } else { Role::Test },
        })
        .collect();
    Ok(SplitSpec {
        entries,
        seed: Some(seed),
    })
}

/// Which pixels the per-band extrema are taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationFit {
    #[default]
    Full,
    TrainOnly,
}

impl NormalizationFit {
    pub fn name(self) -> &'static str {
        match self {
            NormalizationFit::Full => "full",
            NormalizationFit::TrainOnly => "train",
        }
    }
}

impl fmt::Display for NormalizationFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormalizationFit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(NormalizationFit::Full),
            "train" => Ok(NormalizationFit::TrainOnly),
            other => Err(Error::Argument(format!("unknown normalization fit {other:?} (expected full or train)"))),
        }
    }
}

/// Per-band min-max scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BandScaling {
    /// Extrema over every pixel of the cube.
    pub fn fit(cube: &HsiCube) -> Self {
        Self::fit_pixels(cube, (0..cube.rows()).flat_map(|r| (0..cube.cols()).map(move |c| (r, c))))
            .expect("a cube has at least one pixel")
    }

    /// Extrema over the given pixels only.
    pub fn fit_pixels(cube: &HsiCube, pixels: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let k = cube.bands();
        let mut min = vec![f64::INFINITY; k];
        let mut max = vec![f64::NEG_INFINITY; k];
        let mut any = false;
        for (r, c) in pixels {
            if !cube.contains(r, c) {
                return Err(Error::Argument(format!("pixel ({r}, {c}) is outside the cube")));
            }
            any = true;
            for (b, &v) in cube.spectrum(r, c).iter().enumerate() {
                min[b] = min[b].min(v);
                max[b] = max[b].max(v);
            }
        }
        if !any {
            return Err(Error::Argument("cannot fit band scaling on zero pixels".into()));
        }
        Ok(Self { min, max })
    }

    /// `(v − min)/(max − min)`, clamped to `[0, 1]`; constant bands map to 0.
    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        if self.min.len() != cube.bands() {
            return Err(Error::shapes("band scaling", &[self.min.len()], &[cube.bands()]));
        }
        let k = cube.bands();
        let values = cube
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.min[i % k], self.max[i % k]);
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        HsiCube::new(cube.rows(), cube.cols(), k, values)
    }
}

/// Full-cube per-band min-max normalization.
pub fn normalize(cube: &HsiCube) -> HsiCube {
    BandScaling::fit(cube).apply(cube).expect("scaling fitted on the same cube")
}

/// Class counts and geometry of the two benchmark scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub train_counts: &'static [usize],
    pub test_counts: &'static [usize],
}

impl DatasetPreset {
    pub fn classes(&self) -> usize {
        self.train_counts.len()
    }

    pub fn by_name(name: &str) -> Result<Self> {
        [INDIAN_PINES, PAVIA_UNIVERSITY]
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?} (expected indian-pines or pavia-university)")))
    }
}

pub const INDIAN_PINES: DatasetPreset = DatasetPreset {
    name: "indian-pines",
    rows: 145,
    cols: 145,
    bands: 200,
    train_counts: &[50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 15, 15, 15],
    test_counts: &[1384, 784, 184, 447, 697, 439, 918, 2418, 564, 162, 1244, 330, 45, 39, 11, 5],
};

pub const PAVIA_UNIVERSITY: DatasetPreset = DatasetPreset {
    name: "pavia-university",
    rows: 610,
    cols: 340,
    bands: 103,
    train_counts: &[548, 540, 392, 524, 265, 532, 375, 514, 231],
    test_counts: &[6631, 18649, 2099, 3064, 1345, 5029, 1330, 3682, 947],
};
