//! Simulation designs: Gaussian predictors with a fixed correlation structure
//! and linear responses with Gaussian noise.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ArisError, Result};
use crate::linalg::spd_factor;
use crate::model::Dataset;
use crate::seed::{rng_for, TEST_STREAM, TRAIN_STREAM};

pub const DEFAULT_TEST_SIZE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub model_id: u8,
    pub n: usize,
    /// Noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.model_id > 3 {
            return Err(ArisError::Config(format!("unknown model {}", self.model_id)));
        }
        if self.n == 0 {
            return Err(ArisError::Config("n must be >= 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ArisError::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub beta_true: DVector<f64>,
    pub support_true: Vec<bool>,
    pub covariance: DMatrix<f64>,
}

impl TruthRecord {
    pub fn for_model(model_id: u8) -> Result<Self> {
        let beta_true = true_beta(model_id)?;
        let support_true = beta_true.iter().map(|b| *b != 0.0).collect();
        Ok(TruthRecord {
            beta_true,
            support_true,
            covariance: make_covariance(model_id)?,
        })
    }
}

pub fn true_beta(model_id: u8) -> Result<DVector<f64>> {
    Ok(match model_id {
        0 => DVector::from_vec(vec![5.6, 5.6, 5.6, 0.0]),
        1 => DVector::from_vec(vec![3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]),
        2 => DVector::from_element(8, 0.85),
        3 => {
            let mut b = DVector::zeros(8);
            b[0] = 5.0;
            b
        }
        m => return Err(ArisError::Config(format!("unknown model {m}"))),
    })
}

/// Model 0: unit diagonal, `−0.39` within predictors 1–3, `0.23` between each
/// of them and predictor 4. Models 1–3: `C[j,k] = 0.5^{|j−k|}` on 8 predictors.
pub fn make_covariance(model_id: u8) -> Result<DMatrix<f64>> {
    let c = match model_id {
        0 => DMatrix::from_fn(4, 4, |j, k| match (j, k) {
            _ if j == k => 1.0,
            (3, _) | (_, 3) => 0.23,
            _ => -0.39,
        }),
        1..=3 => DMatrix::from_fn(8, 8, |j, k| 0.5f64.powi((j as i32 - k as i32).abs())),
        m => return Err(ArisError::Config(format!("unknown model {m}"))),
    };
    spd_factor(c.clone()).map_err(|_| ArisError::NotPositiveDefinite)?;
    Ok(c)
}

fn draw_rows(truth: &TruthRecord, m: usize, sigma: f64, master: u64, stream: u64) -> Result<Dataset> {
    let p = truth.beta_true.len();
    let l = spd_factor(truth.covariance.clone())
        .map_err(|_| ArisError::NotPositiveDefinite)?
        .l();
    let mut rng = rng_for(master, &[stream]);
    // Row-major draw order: predictors of row i, then its noise.
    let mut z = DMatrix::<f64>::zeros(m, p);
    let mut e = DVector::<f64>::zeros(m);
    for i in 0..m {
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
        e[i] = StandardNormal.sample(&mut rng);
    }
    let x = z * l.transpose();
    let y = &x * &truth.beta_true + e * sigma;
    Dataset::new(x, y)
}

/// Training data of size `spec.n`, fully determined by `spec.seed`.
pub fn draw_dataset(spec: &DgpSpec) -> Result<(Dataset, TruthRecord)> {
    spec.validate()?;
    let truth = TruthRecord::for_model(spec.model_id)?;
    let data = draw_rows(&truth, spec.n, spec.sigma, spec.seed, TRAIN_STREAM)?;
    Ok((data, truth))
}

/// `m` fresh rows from the same design on a stream disjoint from training.
pub fn draw_test_set(spec: &DgpSpec, truth: &TruthRecord, m: usize) -> Result<Dataset> {
    spec.validate()?;
    if m == 0 {
        return Err(ArisError::Config("test size must be >= 1".into()));
    }
    draw_rows(truth, m, spec.sigma, spec.seed, TEST_STREAM)
}

/// CSV with header `x1,…,xp,y`. Values use the shortest round-trip form.
pub fn write_csv<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    let p = data.p();
    let header: Vec<String> = (1..=p).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n() {
        let row: Vec<String> = (0..p)
            .map(|j| data.x[(i, j)].to_string())
            .chain([data.y[i].to_string()])
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariances() {
        let c1 = make_covariance(1).unwrap();
        assert_eq!(c1[(0, 2)], 0.25);
        for m in 0..=3 {
            let c = make_covariance(m).unwrap();
            assert!(c.diagonal().iter().all(|d| *d == 1.0));
            assert_eq!(c, c.transpose());
        }
        let c0 = make_covariance(0).unwrap();
        assert_eq!(c0[(0, 1)], -0.39);
        assert_eq!(c0[(2, 3)], 0.23);
        assert!(make_covariance(4).is_err());
    }

    #[test]
    fn supports() {
        let t = TruthRecord::for_model(1).unwrap();
        assert_eq!(t.support_true, vec![true, true, false, false, true, false, false, false]);
        assert_eq!(TruthRecord::for_model(2).unwrap().support_true, vec![true; 8]);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = DgpSpec { model_id: 1, n: 20, sigma: 3.0, seed: 7 };
        let (a, _) = draw_dataset(&spec).unwrap();
        let (b, _) = draw_dataset(&spec).unwrap();
        assert_eq!(a, b);
        let (c, _) = draw_dataset(&DgpSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_header() {
        let spec = DgpSpec { model_id: 0, n: 3, sigma: 1.0, seed: 1 };
        let (d, _) = draw_dataset(&spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,y\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
