//! Dataset loading: IRIS from CSV, MNIST from IDX files, stratified splits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng;

const IRIS_CSV: &str = include_str!("../../../data/iris.csv");
pub const IRIS_CLASSES: [&str; 3] = ["setosa", "versicolor", "virginica"];

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("unknown class label {0:?}")]
    UnknownClass(String),
    #[error("unknown dataset {0:?} (expected iris or mnist-subset)")]
    UnknownDataset(String),
}

/// Labelled samples with a fixed feature dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        dim: usize,
        classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        if dim == 0 || classes == 0 {
            return Err(DataError::Format(
                "dimension and class count must be positive".into(),
            ));
        }
        if features.len() != dim * labels.len() {
            return Err(DataError::Format(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Format(format!(
                "label {bad} >= class count {classes}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Format("non-finite feature".into()));
        }
        Ok(Self {
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks(self.dim)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dim: self.dim,
            classes: self.classes,
            features,
            labels,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same labels, features replaced row by row.
    pub fn with_features(&self, dim: usize, features: Vec<f64>) -> Result<Dataset, DataError> {
        Dataset::new(dim, self.classes, features, self.labels.clone())
    }
}

/// Splits each class separately, shuffling its members under `seed` and
/// sending `round(n_class * test_fraction)` of them to the test side.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = rng::derived(seed, "stratified_split", ds.len() as u64);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64) * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (ds.subset(&train), ds.subset(&test))
}

/// Parses the IRIS CSV layout: four numeric columns then a species name.
pub fn parse_iris_csv<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(DataError::Format(format!(
                "expected 5 columns, got {}",
                record.len()
            )));
        }
        for field in record.iter().take(4) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| DataError::Format(format!("bad number {field:?}")))?;
            features.push(v);
        }
        let name = record[4].trim();
        let name = name.strip_prefix("Iris-").unwrap_or(name);
        let class = IRIS_CLASSES
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| DataError::UnknownClass(name.to_string()))?;
        labels.push(class);
    }
    Dataset::new(4, 3, features, labels)
}

/// The bundled 150-row IRIS table.
pub fn iris() -> Dataset {
    parse_iris_csv(IRIS_CSV.as_bytes()).expect("bundled iris.csv is well formed")
}

pub fn load_iris(path: &Path) -> Result<Dataset, DataError> {
    let bytes = read_file(path)?;
    parse_iris_csv(bytes.as_slice())
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::Format("truncated IDX header".into()))
}

/// Raw IDX image tensor: `count` images of `rows x cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::Format(format!(
            "image magic {magic}, expected {IDX_IMAGES_MAGIC}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(DataError::Format(format!(
            "image payload is {} bytes, header promises {count}x{rows}x{cols}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::Format(format!(
            "label magic {magic}, expected {IDX_LABELS_MAGIC}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(DataError::Format(format!(
            "label payload is {} bytes, header promises {count}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

/// Averages non-overlapping `factor x factor` blocks; pixels scaled to
/// `[0, 1]`. A factor of 1 only rescales.
pub fn pool_images(images: &IdxImages, factor: usize) -> Result<(usize, Vec<f64>), DataError> {
    if factor == 0 || images.rows % factor != 0 || images.cols % factor != 0 {
        return Err(DataError::Format(format!(
            "pool factor {factor} does not divide {}x{}",
            images.rows, images.cols
        )));
    }
    let (out_r, out_c) = (images.rows / factor, images.cols / factor);
    let area = (factor * factor) as f64;
    let mut out = Vec::with_capacity(images.count * out_r * out_c);
    for img in images.pixels.chunks(images.rows * images.cols) {
        for r in 0..out_r {
            for c in 0..out_c {
                let mut sum = 0u32;
                for dr in 0..factor {
                    for dc in 0..factor {
                        sum += img[(r * factor + dr) * images.cols + c * factor + dc] as u32;
                    }
                }
                out.push(sum as f64 / area / 255.0);
            }
        }
    }
    Ok((out_r * out_c, out))
}

fn load_idx_pair(
    dir: &Path,
    images: &str,
    labels: &str,
    pool: usize,
) -> Result<Dataset, DataError> {
    let imgs = parse_idx_images(&read_file(&dir.join(images))?)?;
    let labs = parse_idx_labels(&read_file(&dir.join(labels))?)?;
    if labs.len() != imgs.count {
        return Err(DataError::Format(format!(
            "{} images but {} labels",
            imgs.count,
            labs.len()
        )));
    }
    let (dim, features) = pool_images(&imgs, pool)?;
    Dataset::new(
        dim,
        10,
        features,
        labs.into_iter().map(usize::from).collect(),
    )
}

/// Loads `train-*` and `t10k-*` IDX files from `dir`, pooling images by
/// `pool` (2 turns 28x28 into 14x14).
pub fn load_mnist(dir: &Path, pool: usize) -> Result<(Dataset, Dataset), DataError> {
    let train = load_idx_pair(
        dir,
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        pool,
    )?;
    let test = load_idx_pair(
        dir,
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
        pool,
    )?;
    Ok((train, test))
}

/// Repository `data/` directory.
pub fn default_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Datasets the experiments know how to load.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Iris,
    MnistSubset,
}

impl std::str::FromStr for DatasetKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iris" => Ok(Self::Iris),
            "mnist-subset" | "mnist" => Ok(Self::MnistSubset),
            other => Err(DataError::UnknownDataset(other.to_string())),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Iris => "iris",
            Self::MnistSubset => "mnist-subset",
        })
    }
}

/// Train/test pair for a dataset. IRIS is split 90/10 per class under
/// `seed`; the MNIST subset ships pre-split and is pooled 2x2.
pub fn load_split(
    kind: DatasetKind,
    data_dir: &Path,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    match kind {
        DatasetKind::Iris => {
            let path = data_dir.join("iris.csv");
            let ds = if path.exists() {
                load_iris(&path)?
            } else {
                iris()
            };
            Ok(stratified_split(&ds, 0.1, seed))
        }
        DatasetKind::MnistSubset => load_mnist(&data_dir.join("mnist-subset"), 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn bundled_iris_shape() {
        let ds = iris();
        assert_eq!(ds.len(), 150);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.class_counts(), vec![50, 50, 50]);
        assert_eq!(ds.sample(0), &[5.1, 3.5, 1.4, 0.2]);
    }

    #[test]
    fn iris_accepts_uci_names() {
        let csv = "a,b,c,d,e\n1,2,3,4,Iris-virginica\n";
        let ds = parse_iris_csv(csv.as_bytes()).unwrap();
        assert_eq!(ds.labels(), &[2]);
        assert!(parse_iris_csv("a,b,c,d,e\n1,2,3,4,rose\n".as_bytes()).is_err());
        assert!(parse_iris_csv("a,b,c,d,e\n1,x,3,4,setosa\n".as_bytes()).is_err());
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let ds = iris();
        let (train, test) = stratified_split(&ds, 0.1, 3);
        assert_eq!(test.class_counts(), vec![5, 5, 5]);
        assert_eq!(train.class_counts(), vec![45, 45, 45]);
        assert_eq!(stratified_split(&ds, 0.1, 3), (train.clone(), test.clone()));
        assert_ne!(stratified_split(&ds, 0.1, 4).1, test);
    }

    #[test]
    fn idx_parse_and_pool() {
        let pixels: Vec<u8> = (0..32).map(|v| v * 8).collect();
        let bytes = idx_images(2, 4, 4, &pixels);
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 4, 4));
        let (dim, pooled) = pool_images(&imgs, 2).unwrap();
        assert_eq!(dim, 4);
        // Top-left block of the first image: pixels 0, 1, 4, 5.
        let expected = (0.0 + 8.0 + 32.0 + 40.0) / 4.0 / 255.0;
        assert!((pooled[0] - expected).abs() < 1e-12);
        assert_eq!(pooled.len(), 8);
        assert!(pool_images(&imgs, 3).is_err());
    }

    #[test]
    fn idx_rejects_bad_headers() {
        let mut bytes = idx_images(1, 2, 2, &[0; 4]);
        assert!(parse_idx_images(&bytes[..10]).is_err());
        bytes[3] = 0;
        assert!(parse_idx_images(&bytes).is_err());
        let short = idx_images(2, 2, 2, &[0; 4]);
        assert!(parse_idx_images(&short).is_err());
        let mut labels = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[1, 2, 3]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 2, 3]);
        assert!(parse_idx_labels(&labels[..10]).is_err());
    }

    #[test]
    fn bundled_mnist_subset() {
        let (train, test) = load_mnist(&default_data_dir().join("mnist-subset"), 2).unwrap();
        assert_eq!(train.len(), 2000);
        assert_eq!(test.len(), 500);
        assert_eq!(train.dim(), 196);
        assert_eq!(train.class_counts(), vec![200; 10]);
        assert_eq!(test.class_counts(), vec![50; 10]);
        assert!(train.samples().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(2, 2, vec![0.0; 3], vec![0, 1]).is_err());
        assert!(Dataset::new(1, 2, vec![0.0, 1.0], vec![0, 2]).is_err());
        assert!(Dataset::new(1, 2, vec![0.0, f64::NAN], vec![0, 1]).is_err());
    }

    #[test]
    fn dataset_kind_parsing() {
        assert_eq!("iris".parse::<DatasetKind>().unwrap(), DatasetKind::Iris);
        assert_eq!(
            "mnist-subset".parse::<DatasetKind>().unwrap(),
            DatasetKind::MnistSubset
        );
        assert!("cifar".parse::<DatasetKind>().is_err());
    }
}
