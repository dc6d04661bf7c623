//! Dataset loading (IDX format) and a seeded synthetic classification
//! generator used for desk-scale experiments.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::DatasetError;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled feature matrix, row-major `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub features: Vec<f64>,
    pub dims: usize,
    pub labels: Vec<u32>,
}

impl SampleStore {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    /// Number of classes, taken as `max(label) + 1`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }
}

/// Labels plus a per-class index into a [`SampleStore`].
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub n: usize,
    pub l: usize,
    pub labels: Vec<u32>,
    pub by_class: Vec<Vec<usize>>,
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32, DatasetError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DatasetError::TruncatedFile {
            path: path.to_string(),
            needed: end,
            have: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Load an MNIST-style IDX image/label file pair.
///
/// Pixels come back scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<SampleStore, DatasetError> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let img = fs::read(images_path)?;
    let lbl = fs::read(labels_path)?;

    let magic = read_be_u32(&img, 0, &img_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DatasetError::BadMagic {
            path: img_name,
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let magic = read_be_u32(&lbl, 0, &lbl_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DatasetError::BadMagic {
            path: lbl_name,
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }

    let n_img = read_be_u32(&img, 4, &img_name)? as usize;
    let rows = read_be_u32(&img, 8, &img_name)? as usize;
    let cols = read_be_u32(&img, 12, &img_name)? as usize;
    let n_lbl = read_be_u32(&lbl, 4, &lbl_name)? as usize;
    if n_img != n_lbl {
        return Err(DatasetError::CountMismatch {
            images: n_img,
            labels: n_lbl,
        });
    }

    let d = rows * cols;
    let needed = 16 + n_img * d;
    if img.len() < needed {
        return Err(DatasetError::TruncatedFile {
            path: img_name,
            needed,
            have: img.len(),
        });
    }
    let lbl_needed = 8 + n_lbl;
    if lbl.len() < lbl_needed {
        return Err(DatasetError::TruncatedFile {
            path: lbl_name,
            needed: lbl_needed,
            have: lbl.len(),
        });
    }

    let features = img[16..needed].iter().map(|&b| b as f64 / 255.0).collect();
    let labels = lbl[8..lbl_needed].iter().map(|&b| b as u32).collect();
    Ok(SampleStore {
        features,
        dims: d,
        labels,
    })
}

/// Deterministic Gaussian-blob classification dataset.
///
/// Class `c` is centered at `separation * u_c` for a seeded random unit
/// direction `u_c`, with unit isotropic noise around it. Identical
/// arguments give bit-identical stores.
pub fn synth_classification(
    l: usize,
    n_per_class: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> SampleStore {
    assert!(l >= 2 && n_per_class >= 1 && d >= 1 && separation >= 0.0);
    // Class centers depend only on (l, d, separation), not on the seed:
    // stores drawn with different seeds share the same class geometry, so
    // one can serve as a held-out test set for another.
    let mut center_rng = ChaCha8Rng::seed_from_u64(0x6665_6473_796d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = Vec::with_capacity(l);
    for _ in 0..l {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut center_rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x *= separation / norm);
        centers.push(v);
    }

    let n = l * n_per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    // Samples are interleaved across classes so any prefix is roughly
    // class-balanced.
    for i in 0..n_per_class {
        for (c, center) in centers.iter().enumerate() {
            let _ = i;
            for &mu in center {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(mu + noise);
            }
            labels.push(c as u32);
        }
    }
    SampleStore {
        features,
        dims: d,
        labels,
    }
}

/// Build the class-index lookup for a store.
pub fn index_of(store: &SampleStore) -> DatasetIndex {
    let l = store.num_classes().max(2);
    let mut by_class = vec![Vec::new(); l];
    for (i, &label) in store.labels.iter().enumerate() {
        by_class[label as usize].push(i);
    }
    DatasetIndex {
        n: store.len(),
        l,
        labels: store.labels.clone(),
        by_class,
    }
}

impl DatasetIndex {
    /// Build an index directly from labels, without features. Used by
    /// partitioners that only need counts.
    pub fn from_labels(labels: &[u32]) -> Self {
        let l = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(2);
        let mut by_class = vec![Vec::new(); l];
        for (i, &label) in labels.iter().enumerate() {
            by_class[label as usize].push(i);
        }
        DatasetIndex {
            n: labels.len(),
            l,
            labels: labels.to_vec(),
            by_class,
        }
    }
}
