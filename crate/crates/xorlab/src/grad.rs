//! Analytic `p`-scaled gradients for the empirical loss, the `ℓ0` surrogate and the clean
//! surrogate, in minibatch and population form, plus a kink-guarded finite-difference check.

use crate::data::{self, Batch, Cluster};
use crate::error::{Error, Result};
use crate::linalg::{self, relu};
use crate::network::{self, EvalMode, Network, Neuron};
use crate::rng::{self, Purpose};

/// Gradient of one neuron: `gw = ∇_w`, `ga = ∇_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronGrad {
    pub gw: Vec<f64>,
    pub ga: f64,
}

/// Gradients of every neuron, `gw` row-major (p×d).
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub d: usize,
    pub p: usize,
    pub gw: Vec<f64>,
    pub ga: Vec<f64>,
}

impl Grads {
    pub fn gw_row(&self, j: usize) -> &[f64] {
        &self.gw[j * self.d..(j + 1) * self.d]
    }

    pub fn neuron(&self, j: usize) -> NeuronGrad {
        NeuronGrad { gw: self.gw_row(j).to_vec(), ga: self.ga[j] }
    }

    pub fn to_vec(&self) -> Vec<NeuronGrad> {
        (0..self.p).map(|j| self.neuron(j)).collect()
    }
}

/// Which loss derivative multiplies each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `ℓ'(f(x))`.
    Full,
    /// `-y(x)`.
    L0,
    /// `ℓ'(f(z))` at the sample's cluster center.
    Clean,
}

fn sample_coeffs(net: &Network, batch: &Batch, z: &[f64], variant: Variant) -> Vec<f64> {
    match variant {
        Variant::L0 => batch.y.iter().map(|y| -y).collect(),
        Variant::Full => {
            let f = net.outputs_from(z, batch.len());
            f.iter().zip(&batch.y).map(|(&f, &y)| network::loss_deriv(f, y)).collect()
        }
        Variant::Clean => {
            let fc = net.center_outputs();
            let lc: Vec<f64> = Cluster::ALL.iter().map(|c| network::loss_deriv(fc[c.index()], c.label())).collect();
            batch.cluster.iter().map(|c| lc[c.index()]).collect()
        }
    }
}

/// Unscaled sums `Σ_i c_i σ'(z_ij) x_i` and `Σ_i c_i σ(z_ij)`.
fn accumulate(net: &Network, batch: &Batch, variant: Variant) -> (Vec<f64>, Vec<f64>) {
    let (m, p, d) = (batch.len(), net.p, net.d);
    let z = net.preactivations(batch);
    let c = sample_coeffs(net, batch, &z, variant);
    let mut dm = vec![0.0; m * p];
    for i in 0..m {
        let zi = &z[i * p..(i + 1) * p];
        let di = &mut dm[i * p..(i + 1) * p];
        for j in 0..p {
            di[j] = if zi[j] > 0.0 { c[i] } else { 0.0 };
        }
    }
    let g = linalg::dt_x(&dm, &batch.x, m, d, p);
    let mut ga = vec![0.0; p];
    for i in 0..m {
        let ci = c[i];
        for (slot, &zij) in ga.iter_mut().zip(&z[i * p..(i + 1) * p]) {
            *slot += ci * relu(zij);
        }
    }
    (g, ga)
}

fn finish(net: &Network, mut g: Vec<f64>, mut ga: Vec<f64>, n: f64) -> Grads {
    let d = net.d;
    for j in 0..net.p {
        let s = net.a[j] / n;
        g[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= s);
        ga[j] /= n;
    }
    Grads { d, p: net.p, gw: g, ga }
}

/// Minibatch gradients of every neuron for the chosen variant.
pub fn batch_grads(net: &Network, batch: &Batch, variant: Variant) -> Result<Grads> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.d != net.d {
        return Err(Error::DimensionMismatch { expected: net.d, got: batch.d });
    }
    let (g, ga) = accumulate(net, batch, variant);
    Ok(finish(net, g, ga, batch.len() as f64))
}

const POP_CHUNK: u64 = 8192;

/// Population gradients, exact by enumeration or estimated from fresh samples.
pub fn population_grads(net: &Network, variant: Variant, mode: EvalMode) -> Result<Grads> {
    let (d, p) = (net.d, net.p);
    let mut g = vec![0.0; p * d];
    let mut ga = vec![0.0; p];
    let mut add = |batch: &Batch| {
        let (gc, gac) = accumulate(net, batch, variant);
        g.iter_mut().zip(&gc).for_each(|(s, v)| *s += v);
        ga.iter_mut().zip(&gac).for_each(|(s, v)| *s += v);
    };
    let n = match mode {
        EvalMode::Enumerate => {
            for batch in data::enumerate_batches(d, POP_CHUNK)? {
                add(&batch);
            }
            data::enumeration_size(d)? as f64
        }
        EvalMode::MonteCarlo { n, seed } => {
            if n == 0 {
                return Err(Error::EmptyBatch);
            }
            let chunk = POP_CHUNK as usize;
            for c in 0..n.div_ceil(chunk) {
                let rows = chunk.min(n - c * chunk);
                let mut r = rng::stream(seed, Purpose::Oracle, c as u64);
                add(&Batch::sample(d, rows, &mut r)?);
            }
            n as f64
        }
    };
    Ok(finish(net, g, ga, n))
}

/// `gw = (1/m) Σ a ℓ'(x_i) σ'(wᵀx_i) x_i`, `ga = (1/m) Σ ℓ'(x_i) σ(wᵀx_i)` for every neuron.
pub fn empirical_grad(net: &Network, batch: &Batch) -> Result<Vec<NeuronGrad>> {
    Ok(batch_grads(net, batch, Variant::Full)?.to_vec())
}

fn l0_over(neuron: &Neuron, rows: impl Iterator<Item = (Vec<f64>, f64)>) -> (Vec<f64>, f64, f64) {
    let d = neuron.w.len();
    let mut gw = vec![0.0; d];
    let mut ga = 0.0;
    let mut n = 0.0;
    for (x, y) in rows {
        let u = linalg::dot(&neuron.w, &x);
        if u > 0.0 {
            for k in 0..d {
                gw[k] -= y * x[k];
            }
            ga -= y * u;
        }
        n += 1.0;
    }
    (gw, ga, n)
}

fn l0_finish(neuron: &Neuron, (mut gw, ga, n): (Vec<f64>, f64, f64)) -> NeuronGrad {
    gw.iter_mut().for_each(|v| *v *= neuron.a / n);
    NeuronGrad { gw, ga: ga / n }
}

/// `ℓ0` gradient of a single neuron on a batch; independent of the rest of the network.
pub fn l0_grad(neuron: &Neuron, batch: &Batch) -> Result<NeuronGrad> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.d != neuron.w.len() {
        return Err(Error::DimensionMismatch { expected: neuron.w.len(), got: batch.d });
    }
    let rows = (0..batch.len()).map(|i| (batch.row(i).to_vec(), batch.y[i]));
    Ok(l0_finish(neuron, l0_over(neuron, rows)))
}

/// Exact population `ℓ0` gradient by direct enumeration of all `2^d` inputs.
pub fn l0_grad_population(neuron: &Neuron) -> Result<NeuronGrad> {
    let d = neuron.w.len();
    let total = data::enumeration_size(d)?;
    let rows = (0..total).map(|k| {
        let x: Vec<f64> = data::enumerated_point(d, k).collect();
        let y = data::label(&x);
        (x, y)
    });
    Ok(l0_finish(neuron, l0_over(neuron, rows)))
}

fn single(net: &Network, j: usize, g: Grads) -> Result<NeuronGrad> {
    if j >= net.p {
        return Err(Error::InvalidArgument(format!("neuron {j} out of range")));
    }
    Ok(g.neuron(j))
}

/// Clean gradient of neuron `j` on a batch.
pub fn clean_grad(net: &Network, j: usize, batch: &Batch) -> Result<NeuronGrad> {
    single(net, j, batch_grads(net, batch, Variant::Clean)?)
}

/// Exact population clean gradient of neuron `j`.
pub fn clean_grad_population(net: &Network, j: usize) -> Result<NeuronGrad> {
    single(net, j, population_grads(net, Variant::Clean, EvalMode::Enumerate)?)
}

/// A single parameter of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    W { neuron: usize, k: usize },
    A { neuron: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub excluded: usize,
}

/// Compares the analytic gradient with a central difference of the batch loss.
///
/// Samples with `|w_jᵀx| < kink_guard` for the perturbed neuron are dropped from both sides;
/// the default guard is `1e-4·‖w_j‖`.
pub fn finite_diff_check(
    net: &Network,
    batch: &Batch,
    coord: Coordinate,
    h: f64,
    kink_guard: Option<f64>,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("h must be positive".into()));
    }
    let j = match coord {
        Coordinate::W { neuron, k } => {
            if k >= net.d {
                return Err(Error::InvalidArgument(format!("coordinate {k} out of range")));
            }
            neuron
        }
        Coordinate::A { neuron } => neuron,
    };
    if j >= net.p {
        return Err(Error::InvalidArgument(format!("neuron {j} out of range")));
    }
    let wj = net.w_row(j);
    let guard = kink_guard.unwrap_or(1e-4 * linalg::norm(wj));
    let mut kept = Vec::new();
    let mut excluded = 0;
    for i in 0..batch.len() {
        if linalg::dot(wj, batch.row(i)).abs() < guard {
            excluded += 1;
        } else {
            kept.extend_from_slice(batch.row(i));
        }
    }
    if kept.is_empty() {
        return Ok(FdReport { analytic: 0.0, numeric: 0.0, rel_err: 0.0, excluded });
    }
    let sub = Batch::from_rows(net.d, kept)?;
    let g = batch_grads(net, &sub, Variant::Full)?;
    let analytic = match coord {
        Coordinate::W { k, .. } => g.gw[j * net.d + k],
        Coordinate::A { .. } => g.ga[j],
    };

    let p = net.p as f64;
    let a = net.a[j];
    let mut total = 0.0;
    for i in 0..sub.len() {
        let x = sub.row(i);
        let y = sub.y[i];
        let rest: f64 = (0..net.p).filter(|&k| k != j).map(|k| net.a[k] * relu(linalg::dot(net.w_row(k), x))).sum();
        let u = linalg::dot(wj, x);
        let (cp, cm) = match coord {
            Coordinate::W { k, .. } => (a * relu(u + h * x[k]), a * relu(u - h * x[k])),
            Coordinate::A { .. } => ((a + h) * relu(u), (a - h) * relu(u)),
        };
        let um = -y * (rest + cm) / p;
        let t = -y * (cp - cm) / p;
        total += 2.0 * (network::sigmoid(um) * t.exp_m1()).ln_1p();
    }
    let numeric = p * (total / sub.len() as f64) / (2.0 * h);
    let rel_err = (analytic - numeric).abs() / analytic.abs().max(1e-12);
    Ok(FdReport { analytic, numeric, rel_err, excluded })
}

/// Both sides of the `ℓ0`-versus-full gap bounds for one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct GradDiff {
    /// `|∇_a L0 − ∇_a L|` against `2‖w‖·E_ρ‖a w‖`.
    pub ga_gap: f64,
    pub ga_bound: f64,
    /// `‖∇_w L0 − ∇_w L‖` against `2|a|·E_ρ‖a w‖`.
    pub gw_gap: f64,
    pub gw_bound: f64,
}

/// Evaluates the `ℓ0`-versus-full bounds for every neuron from population gradients.
pub fn grad_diff(net: &Network, mode: EvalMode) -> Result<Vec<GradDiff>> {
    let full = population_grads(net, Variant::Full, mode)?;
    let l0 = population_grads(net, Variant::L0, mode)?;
    let mass = net.mass();
    Ok((0..net.p)
        .map(|j| {
            let diff: Vec<f64> = full.gw_row(j).iter().zip(l0.gw_row(j)).map(|(a, b)| a - b).collect();
            GradDiff {
                ga_gap: (full.ga[j] - l0.ga[j]).abs(),
                ga_bound: 2.0 * linalg::norm(net.w_row(j)) * mass,
                gw_gap: linalg::norm(&diff),
                gw_bound: 2.0 * net.a[j].abs() * mass,
            }
        })
        .collect())
}

/// Per-coordinate refinement of the `ℓ0` gap for neuron `j`: returns `(gap_i, bound_i)` for
/// every coordinate, with the vanishing additive term dropped.
///
/// `bound_i = |a|(4·E_ρ[|a_w w_i|] + 2 log d·E_ρ‖a w‖·P_x[|x_{-i}ᵀw| ≤ |w_i|])`.
pub fn coord_diff(net: &Network, j: usize) -> Result<Vec<(f64, f64)>> {
    let d = net.d;
    let full = population_grads(net, Variant::Full, EvalMode::Enumerate)?;
    let l0 = population_grads(net, Variant::L0, EvalMode::Enumerate)?;
    let mass = net.mass();
    let w = net.w_row(j);
    let a = net.a[j].abs();
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let coord_mass = (0..net.p).map(|k| (net.a[k] * net.w[k * d + i]).abs()).sum::<f64>() / net.p as f64;
        let rest: Vec<f64> = w.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &v)| v).collect();
        let proj = data::sign_projections(&rest)?;
        let wi = w[i].abs();
        let prob = proj.iter().filter(|v| v.abs() <= wi).count() as f64 / proj.len() as f64;
        let gap = (full.gw[j * d + i] - l0.gw[j * d + i]).abs();
        let bound = a * (4.0 * coord_mass + 2.0 * (d as f64).ln() * mass * prob);
        out.push((gap, bound));
    }
    Ok(out)
}
