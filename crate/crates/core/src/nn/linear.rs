use crate::error::{Error, Result};

use super::tensor::Matrix;

/// Affine map `features · W + b`, with `W` stored `[feature_dim][num_classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LinearClassifier {
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        LinearClassifier {
            feature_dim,
            num_classes,
            weights: vec![0.0; feature_dim * num_classes],
            bias: vec![0.0; num_classes],
        }
    }

    /// Logits for a single feature row, written into `out`.
    pub fn logits_into(&self, row: &[f32], out: &mut [f32]) {
        out.copy_from_slice(&self.bias);
        for (f, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wr = &self.weights[f * self.num_classes..(f + 1) * self.num_classes];
            out.iter_mut().zip(wr).for_each(|(o, &w)| *o += x * w);
        }
    }
}

/// Logits for every row of `features`; no activation.
pub fn linear_forward(features: &Matrix, clf: &LinearClassifier) -> Result<Matrix> {
    if features.cols != clf.feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, classifier expects {}",
            features.cols, clf.feature_dim
        )));
    }
    let mut out = Matrix::zeros(features.rows, clf.num_classes);
    for r in 0..features.rows {
        let (row, dst) = (
            features.row(r),
            &mut out.data[r * clf.num_classes..(r + 1) * clf.num_classes],
        );
        clf.logits_into(row, dst);
    }
    Ok(out)
}
