//! The mean-field two-layer ReLU network, the factor-2 logistic loss and checkpoints.

use crate::data::{self, Batch, Cluster};
use crate::error::{Error, Result};
use crate::linalg::{self, relu};
use crate::rng::{self, Purpose};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One hidden unit: first-layer weight `w` and output weight `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub w: Vec<f64>,
    pub a: f64,
}

/// `f(x) = (1/p) Σ_j a_j relu(w_jᵀx)` with weights stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub d: usize,
    pub p: usize,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
}

/// `ℓ = 2·log(1 + exp(-y f))`, stable for large `|f|`.
pub fn logistic_loss(f: f64, y: f64) -> f64 {
    2.0 * softplus(-y * f)
}

/// `ℓ' = -2y·exp(-y f)/(1 + exp(-y f))`.
pub fn loss_deriv(f: f64, y: f64) -> f64 {
    -2.0 * y * sigmoid(-y * f)
}

pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// 0-1 loss of `sign(f)` against `y`; `f = 0` counts one half.
pub fn zero_one(f: f64, y: f64) -> f64 {
    let m = f * y;
    if m > 0.0 {
        0.0
    } else if m < 0.0 {
        1.0
    } else {
        0.5
    }
}

/// Draws `w_j` uniformly on the sphere of radius `theta_init` and sets `a_j = ±‖w_j‖`.
pub fn init_network(d: usize, p: usize, theta_init: f64, seed: u64) -> Result<Network> {
    if d < 3 {
        return Err(Error::InvalidDimension(d));
    }
    if p == 0 {
        return Err(Error::config("p", "width must be at least 1"));
    }
    if !(theta_init > 0.0) || !theta_init.is_finite() {
        return Err(Error::config("theta_init", "must be positive and finite"));
    }
    let mut rng = rng::stream(seed, Purpose::Init, 0);
    let mut w = vec![0.0; p * d];
    let mut a = vec![0.0; p];
    for j in 0..p {
        let row = &mut w[j * d..(j + 1) * d];
        loop {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let n = linalg::norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v *= theta_init / n);
                break;
            }
        }
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        a[j] = sign * linalg::norm(row);
    }
    Ok(Network { d, p, w, a })
}

/// Outcome of a population evaluation; standard errors are present in Monte Carlo mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationEval {
    pub loss: f64,
    pub loss_se: Option<f64>,
    pub error: f64,
    pub error_se: Option<f64>,
    /// Margins `f(μ)y(μ)` in the order μ1, −μ1, μ2, −μ2.
    pub b: [f64; 4],
}

/// How population expectations are taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Enumerate,
    MonteCarlo { n: usize, seed: u64 },
}

const EVAL_CHUNK: u64 = 4096;

impl Network {
    pub fn from_neurons(d: usize, neurons: &[Neuron]) -> Result<Network> {
        if d < 3 {
            return Err(Error::InvalidDimension(d));
        }
        let mut w = Vec::with_capacity(neurons.len() * d);
        let mut a = Vec::with_capacity(neurons.len());
        for n in neurons {
            if n.w.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: n.w.len() });
            }
            w.extend_from_slice(&n.w);
            a.push(n.a);
        }
        Ok(Network { d, p: neurons.len(), w, a })
    }

    pub fn w_row(&self, j: usize) -> &[f64] {
        &self.w[j * self.d..(j + 1) * self.d]
    }

    pub fn w_row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.w[j * self.d..(j + 1) * self.d]
    }

    pub fn neuron(&self, j: usize) -> Neuron {
        Neuron { w: self.w_row(j).to_vec(), a: self.a[j] }
    }

    pub fn neurons(&self) -> Vec<Neuron> {
        (0..self.p).map(|j| self.neuron(j)).collect()
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    /// `f(x)` with neuron contributions summed in index order.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let s: f64 = (0..self.p).map(|j| self.a[j] * relu(linalg::dot(self.w_row(j), x))).sum();
        s / self.p as f64
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(logistic_loss(self.forward(x)?, data::label(x)))
    }

    pub fn loss_deriv(&self, x: &[f64]) -> Result<f64> {
        Ok(loss_deriv(self.forward(x)?, data::label(x)))
    }

    /// Pre-activations `Z = X Wᵀ` (m×p) for a batch.
    pub fn preactivations(&self, batch: &Batch) -> Vec<f64> {
        linalg::xw_t(&batch.x, &self.w, batch.len(), self.d, self.p)
    }

    /// Outputs for every row given its pre-activations.
    pub fn outputs_from(&self, z: &[f64], m: usize) -> Vec<f64> {
        let p = self.p;
        (0..m)
            .map(|i| {
                let zi = &z[i * p..(i + 1) * p];
                let s: f64 = zi.iter().zip(&self.a).map(|(&u, &a)| a * relu(u)).sum();
                s / p as f64
            })
            .collect()
    }

    pub fn forward_batch(&self, batch: &Batch) -> Vec<f64> {
        self.outputs_from(&self.preactivations(batch), batch.len())
    }

    /// `f(μ)` at the four cluster centers, in [`Cluster::ALL`] order.
    pub fn center_outputs(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for c in Cluster::ALL {
            let s = c.signal();
            let v: f64 = (0..self.p)
                .map(|j| {
                    let w = self.w_row(j);
                    self.a[j] * relu(w[0] * s[0] + w[1] * s[1])
                })
                .sum();
            out[c.index()] = v / self.p as f64;
        }
        out
    }

    /// Margins `b_μ = f(μ)y(μ)`.
    pub fn center_margins(&self) -> [f64; 4] {
        let f = self.center_outputs();
        let mut b = [0.0; 4];
        for c in Cluster::ALL {
            b[c.index()] = f[c.index()] * c.label();
        }
        b
    }

    /// Population loss, 0-1 error and center margins.
    pub fn population_eval(&self, mode: EvalMode) -> Result<PopulationEval> {
        let b = self.center_margins();
        match mode {
            EvalMode::Enumerate => {
                let total = data::enumeration_size(self.d)?;
                let (mut loss, mut err) = (0.0, 0.0);
                for batch in data::enumerate_batches(self.d, EVAL_CHUNK)? {
                    let f = self.forward_batch(&batch);
                    for (i, fi) in f.iter().enumerate() {
                        loss += logistic_loss(*fi, batch.y[i]);
                        err += zero_one(*fi, batch.y[i]);
                    }
                }
                let n = total as f64;
                Ok(PopulationEval { loss: loss / n, loss_se: None, error: err / n, error_se: None, b })
            }
            EvalMode::MonteCarlo { n, seed } => {
                if n == 0 {
                    return Err(Error::InvalidArgument("Monte Carlo sample count must be positive".into()));
                }
                let (mut s1, mut s2, mut e1, mut e2) = (0.0, 0.0, 0.0, 0.0);
                let chunk = EVAL_CHUNK as usize;
                for c in 0..n.div_ceil(chunk) {
                    let rows = chunk.min(n - c * chunk);
                    let mut rng = rng::stream(seed, Purpose::Eval, c as u64);
                    let batch = Batch::sample(self.d, rows, &mut rng)?;
                    let f = self.forward_batch(&batch);
                    for (i, fi) in f.iter().enumerate() {
                        let l = logistic_loss(*fi, batch.y[i]);
                        let e = zero_one(*fi, batch.y[i]);
                        s1 += l;
                        s2 += l * l;
                        e1 += e;
                        e2 += e * e;
                    }
                }
                let nf = n as f64;
                let se = |m1: f64, m2: f64| {
                    let mean = m1 / nf;
                    let var = (m2 / nf - mean * mean).max(0.0);
                    (var / nf).sqrt()
                };
                Ok(PopulationEval {
                    loss: s1 / nf,
                    loss_se: Some(se(s1, s2)),
                    error: e1 / nf,
                    error_se: Some(se(e1, e2)),
                    b,
                })
            }
        }
    }

    /// `E_ρ[|a_w|·‖w‖]`.
    pub fn mass(&self) -> f64 {
        (0..self.p).map(|j| self.a[j].abs() * linalg::norm(self.w_row(j))).sum::<f64>() / self.p as f64
    }

    pub fn to_checkpoint(&self, theta_init: f64, seed: u64, step: u64) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            d: self.d,
            p: self.p,
            theta_init,
            seed,
            step,
            rows: self.neurons(),
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "xorlab-checkpoint-v1";

/// Serialized network state; floats round-trip exactly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub d: usize,
    pub p: usize,
    pub theta_init: f64,
    pub seed: u64,
    pub step: u64,
    pub rows: Vec<Neuron>,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        if self.rows.len() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, got: self.rows.len() });
        }
        Network::from_neurons(self.d, &self.rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Schema { path: "checkpoint".into(), reason: format!("unknown format {}", c.format) });
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::decompose;

    fn single(d: usize, w: Vec<f64>, a: f64) -> Network {
        Network::from_neurons(d, &[Neuron { w, a }]).unwrap()
    }

    #[test]
    fn init_norms_and_output_weights() {
        let net = init_network(20, 1, 0.1, 3).unwrap();
        assert!((linalg::norm(net.w_row(0)) - 0.1).abs() < 1e-13);
        assert_eq!(net.a[0].abs(), linalg::norm(net.w_row(0)));
        assert!(init_network(20, 3, 0.0, 3).is_err());
        assert!(init_network(20, 3, -1.0, 3).is_err());
    }

    #[test]
    fn init_signs_balanced_and_signal_fraction() {
        let (d, p) = (100, 10_000);
        let net = init_network(d, p, 1.0, 9).unwrap();
        let mean_sign = net.a.iter().map(|a| a.signum()).sum::<f64>() / p as f64;
        assert!(mean_sign.abs() < 5.0 / (p as f64).sqrt());
        let frac = (0..p)
            .map(|j| {
                let dec = decompose(&net.neuron(j));
                let n2 = linalg::norm_sq(net.w_row(j));
                [linalg::norm_sq(&dec.w_sig) / n2, (linalg::norm_sq(&dec.w_sig) + linalg::norm_sq(&dec.w_opp)) / n2]
            })
            .fold([0.0; 2], |acc, v| [acc[0] + v[0] / p as f64, acc[1] + v[1] / p as f64]);
        // w_sig spans one direction, w_sig + w_opp spans two.
        let target = 1.0 / d as f64;
        assert!((frac[0] - target).abs() < 0.2 * target, "{frac:?}");
        assert!((frac[1] - 2.0 * target).abs() < 0.2 * 2.0 * target, "{frac:?}");
    }

    #[test]
    fn forward_examples() {
        let mut w = vec![0.0; 4];
        w[0] = 1.0;
        let net = single(4, w.clone(), 1.0);
        assert_eq!(net.forward(&[1.0, -1.0, 1.0, 1.0]).unwrap(), 1.0);
        let zero = single(4, w.clone(), 0.0);
        assert_eq!(zero.forward(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        let pair = Network::from_neurons(4, &[Neuron { w: w.clone(), a: 0.7 }, Neuron { w, a: -0.7 }]).unwrap();
        for x in data::enumerate_batches(4, 16).unwrap().flat_map(|b| b.samples()) {
            assert_eq!(pair.forward(&x.x).unwrap(), 0.0);
        }
        assert!(net.forward(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn loss_examples() {
        assert!((logistic_loss(0.0, 1.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((logistic_loss(0.0, 1.0) - 1.386294).abs() < 1e-6);
        assert_eq!(loss_deriv(0.0, 1.0), -1.0);
        assert_eq!(loss_deriv(0.0, -1.0), 1.0);
        assert!(logistic_loss(800.0, 1.0) < 1e-300);
        assert!(loss_deriv(800.0, 1.0).abs() < 1e-300);
        assert!((logistic_loss(-700.0, 1.0) - 1400.0).abs() < 1e-9);
        assert!(loss_deriv(-700.0, 1.0).abs() <= 2.0);
        assert!(loss_deriv(-30.0, 1.0).abs() < 2.0);
    }

    #[test]
    fn population_eval_examples() {
        let zero = single(5, vec![0.0; 5], 0.0);
        let e = zero.population_eval(EvalMode::Enumerate).unwrap();
        assert!((e.loss - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(e.error, 0.5);

        // One neuron along μ1 at d = 3; enumerate the 8 inputs by hand.
        let net = single(3, vec![1.0, -1.0, 0.0], 1.0);
        let mut expect = 0.0;
        for k in 0..8u64 {
            let x: Vec<f64> = data::enumerated_point(3, k).collect();
            let f = relu(x[0] - x[1]);
            expect += 2.0 * (1.0 + (-data::label(&x) * f).exp()).ln() / 8.0;
        }
        let e = net.population_eval(EvalMode::Enumerate).unwrap();
        assert!((e.loss - expect).abs() < 1e-15);
        assert_eq!(e.b, [2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn montecarlo_agrees_with_enumeration() {
        let net = init_network(10, 16, 1.5, 4).unwrap();
        let exact = net.population_eval(EvalMode::Enumerate).unwrap();
        let mc = net.population_eval(EvalMode::MonteCarlo { n: 200_000, seed: 1 }).unwrap();
        assert!((mc.loss - exact.loss).abs() <= 4.0 * mc.loss_se.unwrap());
        assert!((mc.error - exact.error).abs() <= 4.0 * mc.error_se.unwrap().max(1e-12));
    }

    #[test]
    fn batch_forward_matches_scalar() {
        let net = init_network(9, 37, 0.8, 2).unwrap();
        let batch = Batch::enumerated(9, 0, 512).unwrap();
        let f = net.forward_batch(&batch);
        for i in 0..batch.len() {
            assert!((f[i] - net.forward(batch.row(i)).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = init_network(11, 7, 0.3, 8).unwrap();
        let ck = net.to_checkpoint(0.3, 8, 12);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.network().unwrap(), net);
    }
}
