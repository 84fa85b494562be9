//! Cholesky factorization of correlation matrices.

use crate::error::{CoveringError, Result};

/// Pivots at or below this are treated as loss of positive definiteness.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

/// Lower-triangular L with L * L^T equal to the input.
///
/// The input must be symmetric with unit diagonal; rows are checked before
/// factoring so the error names the offending entry.
#[allow(clippy::needless_range_loop)]
pub fn cholesky(correlation: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = correlation.len();
    for (i, row) in correlation.iter().enumerate() {
        if row.len() != n {
            return Err(CoveringError::DimensionMismatch {
                expected: n,
                actual: row.len(),
                context: format!("correlation row {i}"),
            });
        }
        if (row[i] - 1.0).abs() > 1e-12 {
            return Err(CoveringError::InvalidScenario(format!(
                "correlation diagonal entry [{i}][{i}] must be 1, got {}",
                row[i]
            )));
        }
        for j in 0..n {
            if (row[j] - correlation[j][i]).abs() > 1e-12 {
                return Err(CoveringError::InvalidScenario(format!(
                    "correlation matrix is not symmetric at [{i}][{j}]"
                )));
            }
        }
    }

    let mut factor = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = correlation[i][j];
            for k in 0..j {
                sum -= factor[i][k] * factor[j][k];
            }
            if i == j {
                if sum <= PIVOT_THRESHOLD {
                    return Err(CoveringError::NotPositiveDefinite { row: i, pivot: sum });
                }
                factor[i][j] = sum.sqrt();
            } else {
                factor[i][j] = sum / factor[j][j];
            }
        }
    }
    Ok(factor)
}

/// Builds the exchangeable correlation matrix (1 on the diagonal, `rho`
/// everywhere else).
pub fn exchangeable(n: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}
