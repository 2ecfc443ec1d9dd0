//! Dataset handling: IDX-format readers and a synthetic Gaussian-blob
//! classification set for desk-scale experiments.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Features are row vectors; labels are class indices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train_x: Array2<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.train_x.ncols()
    }
}

fn read_be_u32<R: Read>(r: &mut R, path: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::BadIdxFile {
        path: path.to_string(),
        reason: format!("truncated header: {e}"),
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads an IDX image file (magic 0x00000803) into a samples x pixels
/// matrix with values scaled to [0, 1].
pub fn read_idx_images(path: &Path) -> Result<Array2<f64>> {
    let display = path.display().to_string();
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::DatasetIo { path: display.clone(), source: e })?;
    let magic = read_be_u32(&mut file, &display)?;
    if magic != 0x0000_0803 {
        return Err(Error::BadIdxFile {
            path: display,
            reason: format!("expected image magic 0x803, got {magic:#x}"),
        });
    }
    let count = read_be_u32(&mut file, &display)? as usize;
    let rows = read_be_u32(&mut file, &display)? as usize;
    let cols = read_be_u32(&mut file, &display)? as usize;
    let mut raw = vec![0u8; count * rows * cols];
    file.read_exact(&mut raw).map_err(|e| Error::BadIdxFile {
        path: display,
        reason: format!("truncated pixel data: {e}"),
    })?;
    let data: Vec<f64> = raw.into_iter().map(|b| b as f64 / 255.0).collect();
    Array2::from_shape_vec((count, rows * cols), data)
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Reads an IDX label file (magic 0x00000801).
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let display = path.display().to_string();
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::DatasetIo { path: display.clone(), source: e })?;
    let magic = read_be_u32(&mut file, &display)?;
    if magic != 0x0000_0801 {
        return Err(Error::BadIdxFile {
            path: display,
            reason: format!("expected label magic 0x801, got {magic:#x}"),
        });
    }
    let count = read_be_u32(&mut file, &display)? as usize;
    let mut raw = vec![0u8; count];
    file.read_exact(&mut raw).map_err(|e| Error::BadIdxFile {
        path: display,
        reason: format!("truncated label data: {e}"),
    })?;
    Ok(raw.into_iter().map(|b| b as usize).collect())
}

/// Loads the four standard IDX files (train/test images and labels) from
/// a directory.
pub fn load_idx_dir(dir: &Path) -> Result<Dataset> {
    let train_x = read_idx_images(&dir.join("train-images-idx3-ubyte"))?;
    let train_y = read_idx_labels(&dir.join("train-labels-idx1-ubyte"))?;
    let test_x = read_idx_images(&dir.join("t10k-images-idx3-ubyte"))?;
    let test_y = read_idx_labels(&dir.join("t10k-labels-idx1-ubyte"))?;
    let classes = train_y.iter().chain(&test_y).max().map_or(0, |&m| m + 1);
    if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() {
        return Err(Error::InvalidConfig("image/label count mismatch".into()));
    }
    Ok(Dataset { train_x, train_y, test_x, test_y, classes })
}

/// Synthetic Gaussian-blob classification set: one random unit-direction
/// center per class at radius 3, unit isotropic noise around it.
pub fn synthetic_blobs(
    n_train: usize,
    n_test: usize,
    dim: usize,
    classes: usize,
    seed: u64,
) -> Dataset {
    synthetic_blobs_with_radius(n_train, n_test, dim, classes, seed, 3.0)
}

/// Gaussian blobs with an explicit center radius, controlling how
/// separable the classes are against the unit noise.
pub fn synthetic_blobs_with_radius(
    n_train: usize,
    n_test: usize,
    dim: usize,
    classes: usize,
    seed: u64,
    radius: f64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let raw: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            raw.into_iter().map(|v| radius * v / norm).collect()
        })
        .collect();
    let mut sample = |count: usize| {
        let mut x = Array2::zeros((count, dim));
        let mut y = Vec::with_capacity(count);
        for s in 0..count {
            let class = s % classes;
            for d in 0..dim {
                x[[s, d]] = centers[class][d] + normal.sample(&mut rng);
            }
            y.push(class);
        }
        (x, y)
    };
    let (train_x, train_y) = sample(n_train);
    let (test_x, test_y) = sample(n_test);
    Dataset { train_x, train_y, test_x, test_y, classes }
}

/// Image-like blobs: nonnegative features where each class lights up a
/// small random subset of dimensions and everything else stays at zero,
/// mimicking the constant background pixels of digit images. Dimensions
/// outside every class support carry no signal at all, so the input
/// layer has genuinely dead rows and hidden units attached mostly to
/// them see almost no gradient.
pub fn synthetic_image_blobs(
    n_train: usize,
    n_test: usize,
    dim: usize,
    classes: usize,
    informative: usize,
    seed: u64,
    radius: f64,
) -> Dataset {
    let informative = informative.min(dim).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let level = radius / (informative as f64).sqrt();
    let supports: Vec<Vec<usize>> = (0..classes)
        .map(|_| rand::seq::index::sample(&mut rng, dim, informative).into_vec())
        .collect();
    let mut sample = |count: usize| {
        let mut x = Array2::zeros((count, dim));
        let mut y = Vec::with_capacity(count);
        for s in 0..count {
            let class = s % classes;
            for &d in &supports[class] {
                x[[s, d]] = (level + normal.sample(&mut rng)).max(0.0);
            }
            y.push(class);
        }
        (x, y)
    };
    let (train_x, train_y) = sample(n_train);
    let (test_x, test_y) = sample(n_test);
    Dataset { train_x, train_y, test_x, test_y, classes }
}
