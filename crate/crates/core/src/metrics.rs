//! Evaluation quantities for simulation replications.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ArisError, Result};
use crate::model::Dataset;
use crate::seed::{rng_for, BOOTSTRAP_STREAM};

pub const DEFAULT_BOOTSTRAP: usize = 500;

/// Outcome of one estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub mse: f64,
    /// True predictors selected.
    pub c_count: usize,
    /// Null predictors selected.
    pub i_count: usize,
    pub correct_model: bool,
}

/// Mean squared prediction error on raw-scale test data.
pub fn test_mse(beta_raw: &DVector<f64>, intercept: f64, test: &Dataset) -> Result<f64> {
    if beta_raw.len() != test.p() {
        return Err(ArisError::DimensionMismatch(format!(
            "{} coefficients for {} test columns",
            beta_raw.len(),
            test.p()
        )));
    }
    let resid = test.y.add_scalar(-intercept) - &test.x * beta_raw;
    Ok(resid.norm_squared() / test.n() as f64)
}

/// `(C, I, CM)` for an active mask against the true support.
pub fn support_metrics(active: &[bool], support_true: &[bool]) -> Result<(usize, usize, bool)> {
    if active.len() != support_true.len() {
        return Err(ArisError::DimensionMismatch(format!(
            "mask of length {} against support of length {}",
            active.len(),
            support_true.len()
        )));
    }
    let c = active.iter().zip(support_true).filter(|(a, t)| **a && **t).count();
    let i = active.iter().zip(support_true).filter(|(a, t)| **a && !**t).count();
    let size = support_true.iter().filter(|t| **t).count();
    Ok((c, i, c == size && i == 0))
}

/// Whether any mask along a solution path equals the true support.
pub fn path_contains_truth(masks: &[Vec<bool>], support_true: &[bool]) -> bool {
    masks.iter().any(|m| m.as_slice() == support_true)
}

/// Sample median, averaging the two central order statistics for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(ArisError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted_median(&v))
}

fn sorted_median(v: &[f64]) -> f64 {
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Median and the standard deviation of `n_boot` bootstrap medians.
pub fn median_and_bootstrap_se(values: &[f64], n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    let med = median(values)?;
    if n_boot < 2 {
        return Err(ArisError::InvalidOption(format!("n_boot must be >= 2, got {n_boot}")));
    }
    let mut rng = rng_for(seed, &[BOOTSTRAP_STREAM]);
    let m = values.len();
    let mut sample = vec![0.0; m];
    let mut medians = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        for s in sample.iter_mut() {
            *s = values[rng.random_range(0..m)];
        }
        sample.sort_by(|a, b| a.total_cmp(b));
        medians.push(sorted_median(&sample));
    }
    // Shifted by the first median so identical replicates give exactly zero.
    let shift = medians[0];
    let mean = medians.iter().map(|x| x - shift).sum::<f64>() / n_boot as f64;
    let var = medians.iter().map(|x| (x - shift - mean).powi(2)).sum::<f64>() / (n_boot - 1) as f64;
    Ok((med, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
        let (m, se) = median_and_bootstrap_se(&[1.5; 10], 500, 3).unwrap();
        assert_eq!((m, se), (1.5, 0.0));
    }

    #[test]
    fn support_counts() {
        let truth = [true, true, false, false, true, false, false, false];
        assert_eq!(support_metrics(&truth, &truth).unwrap(), (3, 0, true));
        assert_eq!(support_metrics(&[true; 8], &truth).unwrap(), (3, 5, false));
        assert_eq!(support_metrics(&[false; 8], &truth).unwrap(), (0, 0, false));
        assert_eq!(support_metrics(&[false; 2], &[false; 2]).unwrap(), (0, 0, true));
        assert!(support_metrics(&[true], &truth).is_err());
    }

    #[test]
    fn paths() {
        let truth = vec![true, false];
        assert!(path_contains_truth(&[truth.clone()], &truth));
        assert!(!path_contains_truth(&[vec![true, true], vec![false, false]], &truth));
    }

    #[test]
    fn perfect_predictor() {
        let d = Dataset::new(dmatrix![1.0, 2.0; 3.0, -1.0], dvector![1.5 + 5.0, 1.5 + 1.0]).unwrap();
        assert_eq!(test_mse(&dvector![1.0, 2.0], 1.5, &d).unwrap(), 0.0);
        assert!(test_mse(&dvector![1.0], 0.0, &d).is_err());
    }
}
