use ndarray::Array1;

use crate::error::{MemoryError, Result};

/// Recall counts as correct when its MSE against the truth is below this.
pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 0.01;

/// Mean over all entries of squared differences.
pub fn mse(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MemoryError::Shape(format!("mse of lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(MemoryError::InvalidArgument("mse of empty vectors".into()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Fraction of `(truth, recall)` pairs whose MSE is below `threshold`.
pub fn recall_accuracy(pairs: &[(Array1<f64>, Array1<f64>)], threshold: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MemoryError::InvalidArgument("accuracy of no pairs".into()));
    }
    let mut hits = 0usize;
    for (truth, recall) in pairs {
        if mse(truth, recall)? < threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}
