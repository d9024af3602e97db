//! Labeled datasets: the built-in spiral generator, CSV and IDX loaders,
//! and seeded batch iteration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// `n x d` features (row-major) with labels in `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Precondition("dataset must have at least one sample".into()));
        }
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(Error::Dimension {
                expected: labels.len() * n_features,
                found: features.len(),
            });
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::Parse {
                location: format!("sample {}, feature {}", i / n_features, i % n_features),
                message: "non-finite feature".into(),
            });
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::LabelRange {
                label: y,
                classes: n_classes,
                location: format!("sample {i}"),
            });
        }
        Ok(Dataset {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn full(&self) -> DataSlice<'_> {
        DataSlice {
            dataset: self,
            indices: (0..self.len()).collect(),
        }
    }

    pub fn slice(&self, indices: Vec<usize>) -> Result<DataSlice<'_>> {
        DataSlice::new(self, indices)
    }

    /// Writes the dataset as CSV: features then the integer label, one row
    /// per sample, no header.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            for x in self.sample(i) {
                let _ = write!(out, "{x:?},");
            }
            let _ = writeln!(out, "{}", self.labels[i]);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// A view of selected samples of a dataset.
#[derive(Clone, Debug)]
pub struct DataSlice<'a> {
    pub dataset: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> DataSlice<'a> {
    pub fn new(dataset: &'a Dataset, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Precondition("data slice must be non-empty".into()));
        }
        let mut seen = vec![false; dataset.len()];
        for &i in &indices {
            if i >= dataset.len() {
                return Err(Error::Precondition(format!(
                    "index {i} out of range for {} samples",
                    dataset.len()
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Precondition(format!("duplicate index {i} in slice")));
            }
        }
        Ok(DataSlice { dataset, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Angular extent of each spiral arm, in radians.
pub const SPIRAL_ARM_SWEEP: f64 = 4.0;

/// Noise-free point `i` of `n` on spiral arm `class` out of `classes`.
///
/// Arm parameter `t = (i + 1) / n`, radius `t`, angle
/// `2π·class/classes + SPIRAL_ARM_SWEEP·t`.
pub fn spiral_arm_point(class: usize, classes: usize, i: usize, n: usize) -> (f64, f64, f64) {
    let t = (i + 1) as f64 / n as f64;
    let theta = std::f64::consts::TAU * class as f64 / classes as f64 + SPIRAL_ARM_SWEEP * t;
    (t, theta, t)
}

/// Standardizes each column of a row-major `n x d` matrix to zero mean and
/// unit variance (population). Constant columns are only centered.
pub fn standardize(features: &mut [f64], d: usize) {
    let n = features.len() / d;
    for j in 0..d {
        let mut mean = 0.0;
        for i in 0..n {
            mean += features[i * d + j];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let c = features[i * d + j] - mean;
            var += c * c;
        }
        let sd = (var / n as f64).sqrt();
        for i in 0..n {
            let c = features[i * d + j] - mean;
            features[i * d + j] = if sd > 0.0 { c / sd } else { c };
        }
    }
}

/// Interleaved 2-D spiral arms, one per class, with Gaussian angular noise,
/// standardized per feature. Samples are ordered class by class.
pub fn gen_spirals(
    n_per_class: usize,
    classes: usize,
    noise_std: f64,
    rng: RngStream,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config("spirals need at least two classes".into()));
    }
    if n_per_class == 0 {
        return Err(Error::Config("spirals need at least one point per class".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut gen = rng.rng();
    let mut features = Vec::with_capacity(2 * n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for class in 0..classes {
        for i in 0..n_per_class {
            let (r, theta, _) = spiral_arm_point(class, classes, i, n_per_class);
            let z: f64 = StandardNormal.sample(&mut gen);
            let theta = theta + noise_std * z;
            features.push(r * theta.cos());
            features.push(r * theta.sin());
            labels.push(class);
        }
    }
    standardize(&mut features, 2);
    Dataset::new(features, labels, 2, classes)
}

/// Reads a headerless CSV: one sample per row, feature columns followed by
/// an integer label. The class count is `max label + 1` unless given.
pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, classes)
}

pub fn parse_csv(text: &str, classes: Option<usize>) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = |col: usize| format!("line {}, column {}", lineno + 1, col + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                location: loc(0),
                message: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Parse {
                    location: loc(0),
                    message: format!("expected {w} columns, found {}", fields.len()),
                })
            }
            _ => {}
        }
        let (label_field, feature_fields) = fields.split_last().expect("len >= 2");
        for (col, f) in feature_fields.iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| Error::Parse {
                location: loc(col),
                message: format!("not a number: {f:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    location: loc(col),
                    message: format!("non-finite feature {f:?}"),
                });
            }
            features.push(x);
        }
        let y: usize = label_field.parse().map_err(|_| Error::Parse {
            location: loc(fields.len() - 1),
            message: format!("label is not a non-negative integer: {label_field:?}"),
        })?;
        if let Some(c) = classes {
            if y >= c {
                return Err(Error::LabelRange {
                    label: y,
                    classes: c,
                    location: format!("line {}", lineno + 1),
                });
            }
        }
        labels.push(y);
    }
    let Some(width) = width else {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: "no samples".into(),
        });
    };
    let c = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, labels, width - 1, c.max(2))
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            location: format!("{what}, byte offset {offset}"),
            message: "unexpected end of file in header".into(),
        })
}

/// Loads an IDX image/label pair (the MNIST container format). Pixels are
/// scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    parse_idx(&fs::read(images)?, &fs::read(labels)?, classes)
}

pub fn parse_idx(images: &[u8], labels: &[u8], classes: Option<usize>) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            location: "images, byte offset 0".into(),
            message: format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            location: "labels, byte offset 0".into(),
            message: format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::Parse {
            location: "labels, byte offset 4".into(),
            message: format!("{n_labels} labels for {n} images"),
        });
    }
    let d = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < n * d {
        return Err(Error::Parse {
            location: format!("images, byte offset {}", 16 + pixels.len()),
            message: format!("expected {} pixel bytes, found {}", n * d, pixels.len()),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n {
        return Err(Error::Parse {
            location: format!("labels, byte offset {}", 8 + label_bytes.len()),
            message: format!("expected {n} label bytes, found {}", label_bytes.len()),
        });
    }
    let features = pixels[..n * d].iter().map(|&p| p as f64 / 255.0).collect();
    let ys: Vec<usize> = label_bytes[..n].iter().map(|&b| b as usize).collect();
    if let Some(c) = classes {
        if let Some((i, &y)) = ys.iter().enumerate().find(|(_, &y)| y >= c) {
            return Err(Error::LabelRange {
                label: y,
                classes: c,
                location: format!("labels, byte offset {}", 8 + i),
            });
        }
    }
    let c = classes.unwrap_or_else(|| ys.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, ys, d, c.max(2))
}

/// One epoch of minibatches: a fresh permutation seeded by `(rng, epoch)`,
/// chunked in order, with the short final batch kept.
pub fn batches(ds: &Dataset, batch_size: usize, epoch: usize, rng: RngStream) -> Vec<DataSlice<'_>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng.child(epoch as u64).rng());
    order
        .chunks(batch_size)
        .map(|c| DataSlice {
            dataset: ds,
            indices: c.to_vec(),
        })
        .collect()
}

/// First `ceil(n / 5)` indices of a seeded permutation: the frozen subset
/// used for Hessian, radius, interpolation and surface evaluations.
pub fn analysis_subset(ds: &Dataset, rng: RngStream) -> DataSlice<'_> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng.rng());
    order.truncate(ds.len().div_ceil(5));
    DataSlice {
        dataset: ds,
        indices: order,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_csv() {
        let ds = parse_csv("1.0,2.0,0\n3.0,4.0,1\n", None).unwrap();
        assert_eq!((ds.len(), ds.n_features(), ds.n_classes()), (2, 2, 2));
        assert_eq!(ds.sample(1), &[3.0, 4.0]);
        // Trailing newline is optional.
        assert_eq!(parse_csv("1.0,2.0,0\n3.0,4.0,1", None).unwrap(), ds);
    }

    #[test]
    fn csv_errors_carry_locations() {
        let err = parse_csv("1.0,2.0,0\n3.0,x,1\n", None).unwrap_err().to_string();
        assert!(err.contains("line 2, column 2"), "{err}");
        let err = parse_csv("1.0,NaN,0\n", None).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
        let err = parse_csv("1.0,inf,0\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = parse_csv("1.0,2.0,0\n1.0,1\n", None).unwrap_err().to_string();
        assert!(err.contains("expected 3 columns"), "{err}");
        assert!(matches!(
            parse_csv("1.0,2.0,3\n", Some(3)),
            Err(Error::LabelRange { label: 3, .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_spirals(20, 3, 0.2, RngStream::new(5, 0)).unwrap();
        let back = parse_csv(&ds.to_csv_string(), Some(3)).unwrap();
        assert_eq!(back, ds);
    }

    fn idx_files(magic_images: u32) -> (Vec<u8>, Vec<u8>) {
        let mut img = magic_images.to_be_bytes().to_vec();
        for v in [2u32, 2, 2] {
            img.extend(v.to_be_bytes());
        }
        img.extend([0u8, 255, 51, 102, 10, 20, 30, 40]);
        let mut lab = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        lab.extend(2u32.to_be_bytes());
        lab.extend([1u8, 0]);
        (img, lab)
    }

    #[test]
    fn idx_parses_and_scales() {
        let (img, lab) = idx_files(IDX_IMAGES_MAGIC);
        let ds = parse_idx(&img, &lab, None).unwrap();
        assert_eq!((ds.len(), ds.n_features(), ds.n_classes()), (2, 4, 2));
        assert_eq!(ds.sample(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.labels(), &[1, 0]);
    }

    #[test]
    fn idx_wrong_magic_names_expected() {
        let (img, lab) = idx_files(0x0000_0801);
        let err = parse_idx(&img, &lab, None).unwrap_err().to_string();
        assert!(err.contains("0x00000803"), "{err}");
        let (mut img, lab) = idx_files(IDX_IMAGES_MAGIC);
        img.truncate(20);
        assert!(matches!(parse_idx(&img, &lab, None), Err(Error::Parse { .. })));
    }

    #[test]
    fn spirals_construction_and_determinism() {
        let a = gen_spirals(100, 3, 0.15, RngStream::new(9, 1)).unwrap();
        assert_eq!(a.len(), 300);
        for c in 0..3 {
            assert_eq!(a.labels().iter().filter(|&&y| y == c).count(), 100);
        }
        let b = gen_spirals(100, 3, 0.15, RngStream::new(9, 1)).unwrap();
        assert_eq!(a, b);
        assert!(gen_spirals(10, 1, 0.1, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn noiseless_spirals_lie_on_arms() {
        let (n, classes) = (50, 2);
        let ds = gen_spirals(n, classes, 0.0, RngStream::new(1, 0)).unwrap();
        let mut raw = Vec::new();
        for c in 0..classes {
            for i in 0..n {
                let (r, theta, t) = spiral_arm_point(c, classes, i, n);
                assert_eq!(r, t);
                raw.push(r * theta.cos());
                raw.push(r * theta.sin());
            }
        }
        standardize(&mut raw, 2);
        let max_dev = raw
            .iter()
            .zip(ds.features())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert_eq!(max_dev, 0.0);
    }

    #[test]
    fn batch_chunking_and_permutation() {
        let ds = parse_csv("0,0\n1,1\n2,0\n3,1\n4,0\n", None).unwrap();
        let bs = batches(&ds, 2, 0, RngStream::new(4, 2));
        assert_eq!(bs.iter().map(DataSlice::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut all: Vec<usize> = bs.iter().flat_map(|b| b.indices().to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);

        let big = gen_spirals(40, 2, 0.1, RngStream::new(0, 0)).unwrap();
        let e3: Vec<Vec<usize>> = batches(&big, 7, 3, RngStream::new(4, 2))
            .iter()
            .map(|b| b.indices().to_vec())
            .collect();
        let again: Vec<Vec<usize>> = batches(&big, 7, 3, RngStream::new(4, 2))
            .iter()
            .map(|b| b.indices().to_vec())
            .collect();
        assert_eq!(e3, again);
        let e4: Vec<Vec<usize>> = batches(&big, 7, 4, RngStream::new(4, 2))
            .iter()
            .map(|b| b.indices().to_vec())
            .collect();
        assert_ne!(e3, e4);
    }

    #[test]
    fn analysis_subset_is_a_fifth() {
        let ds = gen_spirals(7, 3, 0.1, RngStream::new(0, 0)).unwrap();
        let s = analysis_subset(&ds, RngStream::new(1, 1));
        assert_eq!(s.len(), 5);
        assert!(DataSlice::new(&ds, s.indices().to_vec()).is_ok());
    }

    #[test]
    fn slices_validate_indices() {
        let ds = parse_csv("0,0\n1,1\n", None).unwrap();
        assert!(ds.slice(vec![0, 0]).is_err());
        assert!(ds.slice(vec![2]).is_err());
        assert!(ds.slice(vec![]).is_err());
    }
}
