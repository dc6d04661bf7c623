//! Linear Centered Kernel Alignment over model output matrices.

use std::io::Write;

use crate::dataset::SampleStore;
use crate::error::CkaError;
use crate::flsim::{forward, ModelParams};

/// An `n x c` matrix of model outputs on a shared evaluation set.
#[derive(Debug, Clone)]
pub struct OutputMatrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl OutputMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        OutputMatrix { data, rows, cols }
    }

    /// Forward-pass logits of a model over a full store.
    pub fn from_model(params: &ModelParams, testset: &SampleStore) -> Self {
        let n = testset.len();
        let data = forward(params, &testset.features, n);
        OutputMatrix {
            data,
            rows: n,
            cols: params.shape.l,
        }
    }

    fn centered(&self) -> Vec<f64> {
        let mut out = self.data.clone();
        for c in 0..self.cols {
            let mean: f64 =
                (0..self.rows).map(|r| self.data[r * self.cols + c]).sum::<f64>() / self.rows as f64;
            for r in 0..self.rows {
                out[r * self.cols + c] -= mean;
            }
        }
        out
    }
}

/// Pairwise similarity matrix with unit diagonal, labeled by each model's
/// heterogeneity index.
#[derive(Debug, Clone)]
pub struct CkaMatrix {
    pub labels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

// Frobenius norm of A^T B for column-centered matrices, computed through
// the small c x c cross-product.
fn cross_norm_sq(a: &[f64], a_cols: usize, b: &[f64], b_cols: usize, rows: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..a_cols {
        for j in 0..b_cols {
            let mut dot = 0.0;
            for r in 0..rows {
                dot += a[r * a_cols + i] * b[r * b_cols + j];
            }
            acc += dot * dot;
        }
    }
    acc
}

/// Linear CKA between two output matrices:
/// `||Y^T X||_F^2 / (||X^T X||_F * ||Y^T Y||_F)` after column centering.
pub fn linear_cka(x: &OutputMatrix, y: &OutputMatrix) -> Result<f64, CkaError> {
    if x.rows != y.rows {
        return Err(CkaError::RowMismatch(x.rows, y.rows));
    }
    let xc = x.centered();
    let yc = y.centered();
    let xx = cross_norm_sq(&xc, x.cols, &xc, x.cols, x.rows).sqrt();
    let yy = cross_norm_sq(&yc, y.cols, &yc, y.cols, y.rows).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(CkaError::DegenerateInput);
    }
    let xy = cross_norm_sq(&yc, y.cols, &xc, x.cols, x.rows);
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

/// Pairwise linear CKA of model logits on the full test set.
pub fn cka_matrix(
    models: &[(f64, ModelParams)],
    testset: &SampleStore,
) -> Result<CkaMatrix, CkaError> {
    if models.len() < 2 {
        return Err(CkaError::TooFewModels(models.len()));
    }
    let outputs: Vec<OutputMatrix> = models
        .iter()
        .map(|(_, m)| OutputMatrix::from_model(m, testset))
        .collect();
    let m = models.len();
    let mut values = vec![vec![0.0; m]; m];
    for i in 0..m {
        values[i][i] = 1.0;
        for j in i + 1..m {
            let v = linear_cka(&outputs[i], &outputs[j])?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(CkaMatrix {
        labels: models.iter().map(|(label, _)| *label).collect(),
        values,
    })
}

impl CkaMatrix {
    /// Mean of the strictly off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let m = self.values.len();
        let mut sum = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    sum += self.values[i][j];
                }
            }
        }
        sum / (m * (m - 1)) as f64
    }

    /// CSV with a label header row and a leading label column, 6-decimal
    /// fixed formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "label")?;
        for label in &self.labels {
            write!(out, ",{label:.6}")?;
        }
        writeln!(out)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            write!(out, "{label:.6}")?;
            for v in row {
                write!(out, ",{v:.6}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
