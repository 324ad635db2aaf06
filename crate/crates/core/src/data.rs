//! Labeled point collections, synthetic generators and the MNIST IDX reader.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::{Pool, TbalRng, ValidationSet};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// XOR disk centers and their classes; diagonal corners share a class.
pub const XOR_CENTERS: [([f64; 2], usize); 4] = [
    ([2.0, 2.0], 1),
    ([-2.0, -2.0], 1),
    ([2.0, -2.0], 0),
    ([-2.0, 2.0], 0),
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed IDX data at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("expected feature dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("label {label} is outside 0..{num_classes}")]
    Label { label: usize, num_classes: usize },
}

/// Dense row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        Dataset {
            dim,
            num_classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_parts(
        dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(DataError::Dimension {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Label { label, num_classes });
        }
        Ok(Dataset {
            dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn push(&mut self, x: &[f64], label: usize) -> Result<(), DataError> {
        if x.len() != self.dim {
            return Err(DataError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if label >= self.num_classes {
            return Err(DataError::Label {
                label,
                num_classes: self.num_classes,
            });
        }
        self.features.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().copied())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.dim, self.num_classes);
        out.features.reserve(idx.len() * self.dim);
        for &i in idx {
            out.features.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// FNV-1a over the shape, labels and feature bit patterns.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        mix(self.dim as u64);
        mix(self.num_classes as u64);
        mix(self.labels.len() as u64);
        for &l in &self.labels {
            mix(l as u64);
        }
        for &x in &self.features {
            mix(x.to_bits());
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    UnitBall,
    Xor,
    #[serde(alias = "mnist_linear")]
    Mnist,
}

/// Which dataset to build and how to split it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Dimension of the unit ball; ignored for XOR (2) and MNIST (784).
    #[serde(default = "default_dim")]
    pub d: usize,
    pub n_total: usize,
    pub pool_size: usize,
    pub val_size: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

fn default_dim() -> usize {
    30
}

fn default_radius() -> f64 {
    1.0
}

impl DatasetSpec {
    pub fn unit_ball(d: usize) -> Self {
        DatasetSpec {
            kind: DatasetKind::UnitBall,
            d,
            n_total: 20_000,
            pool_size: 16_000,
            val_size: 4_000,
            radius: default_radius(),
            images: None,
            labels: None,
        }
    }

    pub fn xor() -> Self {
        DatasetSpec {
            kind: DatasetKind::Xor,
            d: 2,
            n_total: 10_000,
            pool_size: 8_000,
            val_size: 2_000,
            radius: default_radius(),
            images: None,
            labels: None,
        }
    }

    /// The 5000/5000 XOR split used in the comparison experiments.
    pub fn xor_even_split() -> Self {
        DatasetSpec {
            pool_size: 5_000,
            val_size: 5_000,
            ..Self::xor()
        }
    }

    pub fn mnist(images: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        DatasetSpec {
            kind: DatasetKind::Mnist,
            d: 784,
            n_total: 60_000,
            pool_size: 48_000,
            val_size: 12_000,
            radius: default_radius(),
            images: Some(images.into()),
            labels: Some(labels.into()),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.pool_size == 0 {
            return Err(DataError::Config("pool_size must be at least 1".into()));
        }
        if self.pool_size + self.val_size > self.n_total {
            return Err(DataError::Config(format!(
                "pool_size + val_size = {} exceeds n_total = {}",
                self.pool_size + self.val_size,
                self.n_total
            )));
        }
        match self.kind {
            DatasetKind::UnitBall if self.d < 2 => {
                Err(DataError::Config(format!("unit ball needs d >= 2, got {}", self.d)))
            }
            DatasetKind::Xor if !(self.radius > 0.0 && self.radius <= 2.0) => Err(
                DataError::Config(format!("xor radius must be in (0, 2], got {}", self.radius)),
            ),
            DatasetKind::Mnist if self.images.is_none() || self.labels.is_none() => Err(
                DataError::Config("mnist needs both `images` and `labels` paths".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Generate (or load) the full labeled collection.
    pub fn build(&self, rng: &mut TbalRng) -> Result<Dataset, DataError> {
        self.validate()?;
        match self.kind {
            DatasetKind::UnitBall => gen_unit_ball(self.d, self.n_total, rng),
            DatasetKind::Xor => gen_xor(self.n_total, self.radius, rng),
            DatasetKind::Mnist => {
                // validate() guarantees both paths are present
                let images = self.images.as_deref().unwrap_or(Path::new(""));
                let labels = self.labels.as_deref().unwrap_or(Path::new(""));
                let data = load_mnist_idx(images, labels)?;
                if data.len() < self.n_total {
                    return Err(DataError::Config(format!(
                        "mnist files hold {} images, config asks for n_total = {}",
                        data.len(),
                        self.n_total
                    )));
                }
                Ok(data)
            }
        }
    }
}

/// Label of the homogeneous separator with normal (1/√d, …, 1/√d).
pub fn unit_ball_label(x: &[f64]) -> usize {
    let s: f64 = x.iter().sum::<f64>() / (x.len() as f64).sqrt();
    usize::from(s > 0.0)
}

/// `n` points uniform in the `d`-dimensional unit ball, labeled by [`unit_ball_label`].
pub fn gen_unit_ball(d: usize, n: usize, rng: &mut TbalRng) -> Result<Dataset, DataError> {
    if d < 2 {
        return Err(DataError::Config(format!("unit ball needs d >= 2, got {d}")));
    }
    if n == 0 {
        return Err(DataError::Config("unit ball needs n >= 1".into()));
    }
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut x = vec![0.0; d];
    for _ in 0..n {
        let norm = loop {
            for v in x.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        let radius = rng.random::<f64>().powf(1.0 / d as f64);
        let scale = radius / norm;
        for v in x.iter_mut() {
            *v *= scale;
        }
        // rounding can leave the norm a few ulps above one
        let after = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if after > 1.0 {
            for v in x.iter_mut() {
                *v /= after;
            }
        }
        features.extend_from_slice(&x);
        labels.push(unit_ball_label(&x));
    }
    Dataset::from_parts(d, 2, features, labels)
}

/// Class of the XOR center nearest to `x`.
pub fn xor_label(x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, label) in XOR_CENTERS {
        let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        if d2 < best.0 {
            best = (d2, label);
        }
    }
    best.1
}

/// `n` points drawn uniformly from four disks of the given radius centered at (±2, ±2).
pub fn gen_xor(n: usize, radius: f64, rng: &mut TbalRng) -> Result<Dataset, DataError> {
    if !(radius > 0.0 && radius <= 2.0) {
        return Err(DataError::Config(format!(
            "xor radius must be in (0, 2], got {radius}"
        )));
    }
    if n < 4 {
        return Err(DataError::Config(format!("xor needs n >= 4, got {n}")));
    }
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (center, label) = XOR_CENTERS[rng.random_range(0..4)];
        let theta = 2.0 * PI * rng.random::<f64>();
        let r = radius * rng.random::<f64>().sqrt();
        features.push(center[0] + r * theta.cos());
        features.push(center[1] + r * theta.sin());
        labels.push(label);
    }
    Dataset::from_parts(2, 2, features, labels)
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Format {
            offset,
            message: format!("file ends after {} bytes, header incomplete", bytes.len()),
        })
}

/// Header of an IDX image file: (count, rows, cols) and the pixel payload.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), DataError> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::Format {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(DataError::Format {
            offset: bytes.len(),
            message: format!(
                "truncated: header promises {count} images of {rows}x{cols} ({need} bytes), found {}",
                payload.len()
            ),
        });
    }
    Ok((count, rows, cols, &payload[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], DataError> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::Format {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(DataError::Format {
            offset: bytes.len(),
            message: format!(
                "truncated: header promises {count} labels, found {}",
                payload.len()
            ),
        });
    }
    Ok(&payload[..count])
}

/// Decode an image/label IDX pair held in memory. Pixels are scaled to [0, 1].
pub fn decode_mnist(images: &[u8], labels: &[u8]) -> Result<Dataset, DataError> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let label_bytes = parse_idx_labels(labels)?;
    if label_bytes.len() != count {
        return Err(DataError::Format {
            offset: 4,
            message: format!(
                "label file holds {} labels but image file holds {count} images",
                label_bytes.len()
            ),
        });
    }
    if let Some(pos) = label_bytes.iter().position(|&l| l > 9) {
        return Err(DataError::Format {
            offset: 8 + pos,
            message: format!("label {} is not a digit", label_bytes[pos]),
        });
    }
    let dim = rows * cols;
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels = label_bytes.iter().map(|&l| l as usize).collect();
    Dataset::from_parts(dim, 10, features, labels)
}

pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset, DataError> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| DataError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let images = read(images_path.as_ref())?;
    let labels = read(labels_path.as_ref())?;
    decode_mnist(&images, &labels)
}

/// Shuffle `data` and split it into a pool of `pool_size` and a validation set of `val_size`.
pub fn split_pool_val(
    data: &Dataset,
    pool_size: usize,
    val_size: usize,
    rng: &mut TbalRng,
) -> Result<(Pool, ValidationSet), DataError> {
    if pool_size + val_size > data.len() {
        return Err(DataError::Config(format!(
            "cannot split {} points into pool {pool_size} + validation {val_size}",
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    let pool = Pool::new(data.subset(&idx[..pool_size]));
    let val = ValidationSet::new(data.subset(&idx[pool_size..pool_size + val_size]));
    Ok((pool, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::RngSeed;

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn unit_ball_points_stay_inside() {
        let data = gen_unit_ball(30, 20_000, &mut RngSeed(1).rng()).unwrap();
        assert_eq!(data.len(), 20_000);
        assert_eq!(data.dim(), 30);
        for (x, y) in data.rows() {
            assert!(norm(x) <= 1.0);
            assert_eq!(y, unit_ball_label(x));
        }
    }

    #[test]
    fn unit_ball_label_symmetry() {
        let d = 30;
        let w: Vec<f64> = vec![1.0 / (d as f64).sqrt(); d];
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        assert_eq!(unit_ball_label(&w), 1);
        assert_eq!(unit_ball_label(&neg), 0);
    }

    #[test]
    fn unit_ball_is_class_balanced() {
        let data = gen_unit_ball(30, 100_000, &mut RngSeed(2).rng()).unwrap();
        let ones = data.labels().iter().filter(|&&l| l == 1).count() as f64;
        let frac = ones / data.len() as f64;
        assert!((frac - 0.5).abs() <= 0.01, "class-1 fraction {frac}");
    }

    #[test]
    fn unit_ball_radius_law() {
        // P(|x| <= r) = r^d for the uniform ball
        let d = 5;
        let data = gen_unit_ball(d, 50_000, &mut RngSeed(3).rng()).unwrap();
        let inside = data.rows().filter(|(x, _)| norm(x) <= 0.8).count() as f64;
        let expect = 0.8f64.powi(d as i32);
        assert!((inside / 50_000.0 - expect).abs() < 0.01);
    }

    #[test]
    fn unit_ball_rejects_bad_args() {
        assert!(gen_unit_ball(1, 10, &mut RngSeed(0).rng()).is_err());
        assert!(gen_unit_ball(3, 0, &mut RngSeed(0).rng()).is_err());
    }

    #[test]
    fn xor_points_sit_in_one_disk() {
        let data = gen_xor(10_000, 1.0, &mut RngSeed(4).rng()).unwrap();
        assert_eq!(data.len(), 10_000);
        for (x, y) in data.rows() {
            let inside: Vec<usize> = XOR_CENTERS
                .iter()
                .filter(|(c, _)| ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt() <= 1.0)
                .map(|(_, l)| *l)
                .collect();
            assert_eq!(inside.len(), 1);
            assert_eq!(inside[0], y);
        }
    }

    #[test]
    fn xor_center_labels() {
        assert_eq!(xor_label(&[2.0, 2.0]), 1);
        assert_eq!(xor_label(&[-2.0, -2.0]), 1);
        assert_eq!(xor_label(&[-2.0, 2.0]), 0);
        assert_eq!(xor_label(&[2.0, -2.0]), 0);
    }

    #[test]
    fn xor_rejects_bad_radius() {
        assert!(gen_xor(100, 0.0, &mut RngSeed(0).rng()).is_err());
        assert!(gen_xor(100, -1.0, &mut RngSeed(0).rng()).is_err());
        assert!(gen_xor(100, 2.5, &mut RngSeed(0).rng()).is_err());
        assert!(gen_xor(3, 1.0, &mut RngSeed(0).rng()).is_err());
    }

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn decode_scales_pixels() {
        let pixels = [0u8, 255, 51, 0];
        let data = decode_mnist(&idx_images(1, 2, 2, &pixels), &idx_labels(&[7])).unwrap();
        assert_eq!(data.row(0), &[0.0, 1.0, 0.2, 0.0]);
        assert_eq!(data.label(0), 7);
    }

    #[test]
    fn zero_image_is_zero_vector() {
        let pixels = vec![0u8; 784 * 2];
        let data = decode_mnist(&idx_images(2, 28, 28, &pixels), &idx_labels(&[0, 1])).unwrap();
        assert_eq!(data.dim(), 784);
        assert!(data.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let mut bad = idx_images(1, 2, 2, &[0; 4]);
        bad[3] = 0x01;
        match decode_mnist(&bad, &idx_labels(&[1])) {
            Err(DataError::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let short = idx_images(2, 2, 2, &[0; 5]);
        match decode_mnist(&short, &idx_labels(&[1, 2])) {
            Err(DataError::Format { offset, .. }) => assert_eq!(offset, short.len()),
            other => panic!("{other:?}"),
        }
        match decode_mnist(&idx_images(1, 2, 2, &[0; 4]), &idx_labels(&[1, 2])) {
            Err(DataError::Format { offset: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_mnist(&idx_images(1, 2, 2, &[0; 4]), &idx_labels(&[12])) {
            Err(DataError::Format { offset: 8, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_mnist(&[0, 0, 8], &idx_labels(&[1])) {
            Err(DataError::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let data = gen_unit_ball(3, 200, &mut RngSeed(5).rng()).unwrap();
        let (pool, val) = split_pool_val(&data, 160, 40, &mut RngSeed(5).rng()).unwrap();
        assert_eq!((pool.len(), val.len()), (160, 40));
        // rows are distinct with probability one, so compare by value
        let mut seen: Vec<Vec<u64>> = (0..pool.len())
            .map(|i| pool.features(i).iter().map(|v| v.to_bits()).collect())
            .chain((0..val.len()).map(|i| val.features(i).iter().map(|v| v.to_bits()).collect()))
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 200);
    }

    #[test]
    fn split_degenerate_and_overflow() {
        let data = gen_xor(50, 1.0, &mut RngSeed(6).rng()).unwrap();
        let (pool, val) = split_pool_val(&data, 50, 0, &mut RngSeed(6).rng()).unwrap();
        assert_eq!(pool.len(), 50);
        assert!(val.is_empty());
        assert!(split_pool_val(&data, 40, 11, &mut RngSeed(6).rng()).is_err());
    }

    #[test]
    fn default_specs_validate() {
        let ub = DatasetSpec::unit_ball(30);
        assert_eq!((ub.pool_size, ub.val_size), (16_000, 4_000));
        ub.validate().unwrap();
        DatasetSpec::xor().validate().unwrap();
        DatasetSpec::xor_even_split().validate().unwrap();
        let mut bad = DatasetSpec::xor();
        bad.val_size = 3_000;
        assert!(bad.validate().is_err());
        let m = DatasetSpec::mnist("a", "b");
        assert_eq!((m.pool_size, m.val_size), (48_000, 12_000));
    }
}
