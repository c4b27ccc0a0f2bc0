use serde::{Deserialize, Serialize};

use super::linalg::{cholesky_solve, dot, Matrix, Standardizer};
use crate::error::{Error, Result};

/// Ridge regression on standardized features with an unpenalized intercept,
/// solved through the normal equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinReg {
    pub scaler: Standardizer,
    /// coefficients in standardized feature space
    pub beta: Vec<f64>,
    pub intercept: f64,
}

impl LinReg {
    pub fn fit(x: &Matrix, y: &[f64], ridge: f64) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n == 0 || y.len() != n {
            return Err(Error::invalid("linear regression needs at least one row and one target per row"));
        }
        if !(ridge >= 0.0) {
            return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
        }
        let scaler = Standardizer::fit(x);
        let z = scaler.transform(x);
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let mut gram = Matrix::zeros(d, d);
        let mut rhs = vec![0.0; d];
        for (row, &yi) in z.iter_rows().zip(y) {
            let r = yi - y_mean;
            for a in 0..d {
                if row[a] == 0.0 {
                    continue;
                }
                rhs[a] += row[a] * r;
                for b in a..d {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
            gram[(a, a)] += ridge;
        }
        let beta = if d == 0 {
            Vec::new()
        } else {
            cholesky_solve(&gram, &rhs).map_err(|e| match e {
                Error::Singular(_) if ridge == 0.0 => Error::Singular(
                    "design matrix is rank deficient; set ridge > 0".into(),
                ),
                other => other,
            })?
        };
        Ok(Self {
            scaler,
            beta,
            intercept: y_mean,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut z = x.to_vec();
        self.scaler.apply_in_place(&mut z);
        self.intercept + dot(&z, &self.beta)
    }

    /// Intercept and slopes in the original feature units.
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        let slopes: Vec<f64> = self
            .beta
            .iter()
            .zip(&self.scaler.scale)
            .map(|(b, s)| b / s)
            .collect();
        let intercept = self.intercept - dot(&slopes, &self.scaler.mean);
        (intercept, slopes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_fit() {
        let x = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let m = LinReg::fit(&x, &[1.0, 3.0], 0.0).unwrap();
        let (b0, b) = m.raw_coefficients();
        assert!((b0 - 1.0).abs() < 1e-12 && (b[0] - 2.0).abs() < 1e-12);
        assert!((m.predict(&[2.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn constant_target() {
        let x = Matrix::from_rows(&[vec![1.0, 4.0], vec![2.0, -1.0], vec![5.0, 0.5]]).unwrap();
        let m = LinReg::fit(&x, &[7.0, 7.0, 7.0], 0.0).unwrap();
        let (b0, b) = m.raw_coefficients();
        assert!((b0 - 7.0).abs() < 1e-12);
        assert!(b.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn duplicated_column_needs_ridge() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![4.0, 4.0]]).unwrap();
        let y = [1.0, 2.0, 5.0];
        assert!(matches!(LinReg::fit(&x, &y, 0.0), Err(Error::Singular(_))));
        let m = LinReg::fit(&x, &y, 1e-6).unwrap();
        assert!(m.beta.iter().all(|b| b.is_finite()));
    }
}
