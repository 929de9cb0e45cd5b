//! Confusion matrices, accuracy summaries and classification maps.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// `counts[i][j]` = pixels of true class `i + 1` predicted as class `j + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shapes("confusion counts", &[counts.len()], &[classes, classes]));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Records one pixel; classes are 1-based.
    pub fn accumulate(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for (what, c) in [("true", truth), ("predicted", predicted)] {
            if c == 0 || c > self.classes {
                return Err(Error::Argument(format!(
                    "{what} class {c} outside 1..={}",
                    self.classes
                )));
            }
        }
        self.counts[(truth - 1) * self.classes + predicted - 1] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shapes("confusion merge", &[self.classes], &[other.classes]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Count for 1-based classes.
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[(truth - 1) * self.classes + predicted - 1]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i * self.classes + i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.counts[i * self.classes + j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// `None` for classes with no test pixels.
    pub per_class: Vec<Option<f64>>,
    /// Chance agreement.
    pub expected_agreement: f64,
    pub total: u64,
}

pub fn summarize(cm: &ConfusionMatrix) -> Result<Summary> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::State("cannot summarize an empty confusion matrix".into()));
    }
    let n = total as f64;
    let oa = cm.trace() as f64 / n;
    let per_class: Vec<Option<f64>> = (0..cm.classes)
        .map(|i| {
            let row = cm.row_sum(i);
            (row > 0).then(|| cm.counts[i * cm.classes + i] as f64 / row as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = defined.iter().sum::<f64>() / defined.len() as f64;
    let pe = (0..cm.classes)
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    let kappa = if pe == 1.0 {
        if oa == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (oa - pe) / (1.0 - pe)
    };
    Ok(Summary {
        oa,
        aa,
        kappa,
        per_class,
        expected_agreement: pe,
        total,
    })
}

impl Summary {
    /// `key=value` lines with four decimals; absent classes read `absent`.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "oa={:.4}", self.oa).unwrap();
        writeln!(out, "aa={:.4}", self.aa).unwrap();
        writeln!(out, "kappa={:.4}", self.kappa).unwrap();
        for (i, acc) in self.per_class.iter().enumerate() {
            match acc {
                Some(a) => writeln!(out, "class.{}={a:.4}", i + 1).unwrap(),
                None => writeln!(out, "class.{}=absent", i + 1).unwrap(),
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "Evaluated pixels: {}", self.total).unwrap();
        writeln!(out, "Overall accuracy (OA): {:.4}", self.oa).unwrap();
        writeln!(out, "Average accuracy (AA): {:.4}", self.aa).unwrap();
        writeln!(out, "Kappa:                 {:.4}", self.kappa).unwrap();
        writeln!(out, "Per-class accuracy:").unwrap();
        for (i, acc) in self.per_class.iter().enumerate() {
            match acc {
                Some(a) => writeln!(out, "  class {:>3}: {a:.4}", i + 1).unwrap(),
                None => writeln!(out, "  class {:>3}: absent", i + 1).unwrap(),
            }
        }
        out
    }
}

pub type Rgb = [u8; 3];

const BASE_COLORS: [Rgb; 16] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [176, 48, 96],
    [46, 139, 87],
    [160, 32, 240],
    [255, 127, 80],
    [127, 255, 212],
    [218, 112, 214],
    [160, 82, 45],
    [127, 255, 0],
    [216, 191, 216],
    [238, 0, 0],
];

/// Black for class 0 followed by one color per class.
pub fn default_palette(classes: usize) -> Vec<Rgb> {
    let mut out = vec![[0, 0, 0]];
    for c in 0..classes {
        out.push(match BASE_COLORS.get(c) {
            Some(&rgb) => rgb,
            None => {
                // golden-ratio hue walk for large class counts
                let h = (c as f64 * 0.618_033_988_75).fract() * 6.0;
                let x = 1.0 - (h % 2.0 - 1.0).abs();
                let (r, g, b) = match h as usize {
                    0 => (1.0, x, 0.0),
                    1 => (x, 1.0, 0.0),
                    2 => (0.0, 1.0, x),
                    3 => (0.0, x, 1.0),
                    4 => (x, 0.0, 1.0),
                    _ => (1.0, 0.0, x),
                };
                [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
            }
        });
    }
    out
}

/// Encodes a row-major class map as a binary PPM (P6).
pub fn render_map(classes: &[u16], rows: usize, cols: usize, palette: &[Rgb]) -> Result<Vec<u8>> {
    if rows == 0 || cols == 0 || classes.len() != rows * cols {
        return Err(Error::shapes("class map", &[classes.len()], &[rows, cols]));
    }
    if let Some(&c) = classes.iter().find(|&&c| c as usize >= palette.len()) {
        return Err(Error::Argument(format!(
            "palette has {} colors, class {c} needs at least {}",
            palette.len(),
            c as usize + 1
        )));
    }
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    out.reserve(classes.len() * 3);
    for &c in classes {
        out.extend_from_slice(&palette[c as usize]);
    }
    Ok(out)
}

pub fn write_map(path: impl AsRef<Path>, classes: &[u16], rows: usize, cols: usize, palette: &[Rgb]) -> Result<()> {
    std::fs::write(path, render_map(classes, rows, cols, palette)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let cm = ConfusionMatrix::from_counts(2, vec![40, 10, 20, 30]).unwrap();
        let s = summarize(&cm).unwrap();
        assert_abs_diff_eq!(s.oa, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(s.expected_agreement, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.kappa, 0.4, epsilon = 1e-15);
        assert!(s.to_kv().contains("kappa=0.4000\n"));
    }

    #[test]
    fn chance_and_perfect_agreement() {
        let s = summarize(&ConfusionMatrix::from_counts(2, vec![25; 4]).unwrap()).unwrap();
        assert_eq!((s.oa, s.kappa), (0.5, 0.0));
        let s = summarize(&ConfusionMatrix::from_counts(3, vec![4, 0, 0, 0, 2, 0, 0, 0, 9]).unwrap()).unwrap();
        assert_eq!((s.oa, s.aa, s.kappa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn degenerate_single_cell() {
        let s = summarize(&ConfusionMatrix::from_counts(2, vec![5, 0, 0, 0]).unwrap()).unwrap();
        assert_eq!((s.kappa, s.aa), (1.0, 1.0));
        assert_eq!(s.per_class, vec![Some(1.0), None]);
        assert!(s.to_kv().contains("class.2=absent"));
        let s = summarize(&ConfusionMatrix::from_counts(2, vec![0, 5, 0, 0]).unwrap()).unwrap();
        assert_eq!(s.expected_agreement, 0.0);
        assert_eq!(s.kappa, 0.0);
    }

    #[test]
    fn accumulate_checks_range() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(1, 1).unwrap();
        assert_eq!(cm.trace(), 1);
        assert!(cm.accumulate(0, 1).is_err());
        assert!(cm.accumulate(1, 3).is_err());
        assert!(matches!(summarize(&ConfusionMatrix::new(2)), Err(Error::State(_))));
    }

    #[test]
    fn ppm_layout() {
        let img = render_map(&[0], 1, 1, &default_palette(1)).unwrap();
        assert_eq!(img, b"P6\n1 1\n255\n\0\0\0");
        assert!(render_map(&[2], 1, 1, &default_palette(1)).is_err());
    }

    #[test]
    fn palette_grows_with_distinct_black() {
        let p = default_palette(40);
        assert_eq!(p.len(), 41);
        assert_eq!(p[0], [0, 0, 0]);
        assert!(p[1..].iter().all(|&c| c != [0, 0, 0]));
    }

    proptest! {
        #[test]
        fn accumulation_is_order_independent(pairs in prop::collection::vec((1usize..5, 1usize..5), 1..50)) {
            let mut a = ConfusionMatrix::new(4);
            let mut b = ConfusionMatrix::new(4);
            for &(t, p) in &pairs {
                a.accumulate(t, p).unwrap();
            }
            for &(t, p) in pairs.iter().rev() {
                b.accumulate(t, p).unwrap();
            }
            prop_assert_eq!(a.total(), pairs.len() as u64);
            prop_assert_eq!(&a, &b);
        }

        #[test]
        fn kappa_is_one_iff_no_errors(counts in prop::collection::vec(0u64..20, 9)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let cm = ConfusionMatrix::from_counts(3, counts).unwrap();
            let s = summarize(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.oa) && (0.0..=1.0).contains(&s.aa));
            prop_assert!((-1.0..=1.0).contains(&s.kappa));
            let off_diagonal = cm.total() - cm.trace();
            prop_assert_eq!(s.kappa == 1.0, off_diagonal == 0);
        }

        #[test]
        fn relabeling_classes_preserves_summary(counts in prop::collection::vec(0u64..20, 9), shift in 1usize..3) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let cm = ConfusionMatrix::from_counts(3, counts.clone()).unwrap();
            let perm = |i: usize| (i + shift) % 3;
            let mut permuted = vec![0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    permuted[perm(i) * 3 + perm(j)] = counts[i * 3 + j];
                }
            }
            let a = summarize(&cm).unwrap();
            let b = summarize(&ConfusionMatrix::from_counts(3, permuted).unwrap()).unwrap();
            prop_assert!((a.oa - b.oa).abs() < 1e-12);
            prop_assert!((a.aa - b.aa).abs() < 1e-12);
            prop_assert!((a.kappa - b.kappa).abs() < 1e-12);
        }
    }
}
