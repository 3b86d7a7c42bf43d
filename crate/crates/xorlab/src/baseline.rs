//! A rotation-invariant learner that sees data only through inner products: kernel ridge
//! regression with the infinite-width ReLU arc-cosine kernel `k(x, x') = φ(⟨x, x'⟩/d)`.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::zero_one;
use crate::rng::{self, Purpose};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// Default ridge values, scaled by `n` inside the solve.
pub const LAMBDAS: [f64; 3] = [1e-4, 1e-2, 1.0];

/// `φ(u) = (√(1 − u²) + (π − arccos u)u)/π`.
pub fn arccos_kernel(u: f64) -> f64 {
    let u = u.clamp(-1.0, 1.0);
    ((1.0 - u * u).sqrt() + (PI - u.acos()) * u) / PI
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaResult {
    pub lambda: f64,
    pub test_error: f64,
    /// Times the ridge was multiplied by 10 before the factorization succeeded.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub d: usize,
    pub n: usize,
    pub n_test: usize,
    pub per_lambda: Vec<LambdaResult>,
    pub best_lambda: f64,
    pub best_error: f64,
}

fn gram(a: &Batch, b: &Batch) -> Vec<f64> {
    let d = a.d as f64;
    let mut k = linalg::xw_t(&a.x, &b.x, a.len(), a.d, b.len());
    k.iter_mut().for_each(|v| *v = arccos_kernel(*v / d));
    k
}

/// Trains on `n` samples and reports held-out 0-1 error on `n_test` fresh samples per ridge
/// value; `n = 0` predicts 0 everywhere.
pub fn gram_baseline(d: usize, n: usize, n_test: usize, lambdas: &[f64], seed: u64) -> Result<BaselineReport> {
    if d < 3 {
        return Err(Error::InvalidDimension(d));
    }
    if n_test == 0 {
        return Err(Error::InvalidArgument("test sample count must be positive".into()));
    }
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("ridge values must be positive".into()));
    }
    let test = Batch::sample(d, n_test, &mut rng::stream(seed, Purpose::Eval, 0))?;
    let mut per_lambda = Vec::with_capacity(lambdas.len());
    if n == 0 {
        let err = test.y.iter().map(|&y| zero_one(0.0, y)).sum::<f64>() / n_test as f64;
        per_lambda.extend(lambdas.iter().map(|&lambda| LambdaResult { lambda, test_error: err, retries: 0 }));
    } else {
        let train = Batch::sample(d, n, &mut rng::stream(seed, Purpose::Aux, 0))?;
        let k = gram(&train, &train);
        let cross = gram(&test, &train);
        let y = DVector::from_column_slice(&train.y);
        for &lambda in lambdas {
            let mut ridge = lambda;
            let mut retries = 0;
            let alpha = loop {
                let mut mat = DMatrix::from_row_slice(n, n, &k);
                for i in 0..n {
                    mat[(i, i)] += ridge * n as f64;
                }
                match mat.cholesky() {
                    Some(ch) => break ch.solve(&y),
                    None if retries < 12 => {
                        ridge *= 10.0;
                        retries += 1;
                    }
                    None => return Err(Error::InvalidArgument(format!("kernel system singular at ridge {ridge}"))),
                }
            };
            let mut err = 0.0;
            for i in 0..n_test {
                let row = &cross[i * n..(i + 1) * n];
                let f = linalg::dot(row, alpha.as_slice());
                err += zero_one(f, test.y[i]);
            }
            per_lambda.push(LambdaResult { lambda, test_error: err / n_test as f64, retries });
        }
    }
    let best = per_lambda
        .iter()
        .min_by(|a, b| a.test_error.total_cmp(&b.test_error))
        .cloned()
        .expect("at least one ridge value");
    Ok(BaselineReport { d, n, n_test, per_lambda, best_lambda: best.lambda, best_error: best.test_error })
}

/// Best error for each training-set size.
pub fn gram_curve(d: usize, ns: &[usize], n_test: usize, lambdas: &[f64], seed: u64) -> Result<Vec<BaselineReport>> {
    ns.iter().map(|&n| gram_baseline(d, n, n_test, lambdas, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert!((arccos_kernel(1.0) - 1.0).abs() < 1e-15);
        assert!((arccos_kernel(0.0) - 1.0 / PI).abs() < 1e-15);
        assert_eq!(arccos_kernel(-1.0), 0.0);
        let mut prev = 0.0;
        for k in -10..=10 {
            let v = arccos_kernel(k as f64 / 10.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn empty_training_set_is_chance() {
        let r = gram_baseline(16, 0, 1000, &LAMBDAS, 1).unwrap();
        assert_eq!(r.best_error, 0.5);
    }

    #[test]
    fn learns_low_dimensional_xor_with_many_samples() {
        let r = gram_baseline(6, 400, 2000, &LAMBDAS, 2).unwrap();
        assert!(r.best_error < 0.05, "{r:?}");
    }

    #[test]
    fn deterministic() {
        let a = gram_baseline(10, 50, 500, &LAMBDAS, 3).unwrap();
        let b = gram_baseline(10, 50, 500, &LAMBDAS, 3).unwrap();
        assert_eq!(a, b);
    }
}
