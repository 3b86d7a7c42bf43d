//! Closed-form `ℓ0` population gradients and probability evaluators over the noise `ξ`.
//!
//! Every probability is over `ξ ~ Uniform{±1}^(d-2)` acting on the noise coordinates of a
//! weight vector. Four interchangeable backends are offered: exact enumeration, Monte Carlo,
//! the Gaussian limit, and the Gaussian limit with its Berry–Esseen error bound.

use crate::data::{self, PROJECTION_CAP};
use crate::error::{Error, Result};
use crate::grad;
use crate::linalg;
use crate::network::Neuron;
use crate::phase::decompose;
use crate::rng::{self, Purpose};
use std::f64::consts::{PI, SQRT_2};

/// Berry–Esseen constant.
pub const C_BE: f64 = 0.56;

/// Default Monte Carlo sample count.
pub const MC_DEFAULT_N: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Enumerate,
    MonteCarlo { n: usize, seed: u64 },
    Gaussian,
    BerryEsseen,
}

/// Closed interval for a scalar projection `X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interval {
    /// `|X| ≤ hi`.
    Abs { hi: f64 },
    /// `lo ≤ |X| ≤ hi`.
    AbsBetween { lo: f64, hi: f64 },
    /// `lo ≤ X ≤ hi`.
    Signed { lo: f64, hi: f64 },
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Interval::Abs { hi } => x.abs() <= hi,
            Interval::AbsBetween { lo, hi } => lo <= x.abs() && x.abs() <= hi,
            Interval::Signed { lo, hi } => lo <= x && x <= hi,
        }
    }
}

/// Probability that `Σ_{k≥3, k≠exclude} w_k ξ_k` lies in `interval`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorProbQuery {
    pub w: Vec<f64>,
    /// A 0-indexed noise coordinate dropped from the sum.
    pub exclude: Option<usize>,
    pub interval: Interval,
    pub backend: Backend,
}

/// An estimate with its Monte Carlo standard error or Berry–Esseen bound when applicable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_err: Option<f64>,
    pub bound: Option<f64>,
}

impl Estimate {
    fn exact(value: f64) -> Self {
        Estimate { value, std_err: None, bound: None }
    }

    fn scaled(self, s: f64) -> Self {
        Estimate {
            value: self.value * s,
            std_err: self.std_err.map(|e| e * s.abs()),
            bound: self.bound.map(|b| b * s.abs()),
        }
    }
}

fn noise_weights(w: &[f64], exclude: Option<usize>) -> Result<Vec<f64>> {
    if w.len() < 3 {
        return Err(Error::InvalidDimension(w.len()));
    }
    if let Some(i) = exclude {
        if i < 2 || i >= w.len() {
            return Err(Error::InvalidCoordinate(i));
        }
    }
    Ok(w.iter().enumerate().skip(2).filter(|&(k, _)| Some(k) != exclude).map(|(_, &v)| v).collect())
}

fn enumerate_capacity(u: &[f64]) -> Result<()> {
    if u.len() > data::ENUM_CAP {
        return Err(Error::EnumerationTooLarge { noise_dims: u.len(), cap: data::ENUM_CAP });
    }
    Ok(())
}

fn montecarlo_projections(u: &[f64], n: usize, seed: u64, mut visit: impl FnMut(f64)) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("Monte Carlo sample count must be positive".into()));
    }
    const CHUNK: usize = 1 << 14;
    let l = u.len();
    let mut xi = vec![0.0; CHUNK * l.max(1)];
    for c in 0..n.div_ceil(CHUNK) {
        let rows = CHUNK.min(n - c * CHUNK);
        let mut r = rng::stream(seed, Purpose::Oracle, c as u64);
        rng::fill_signs(&mut r, &mut xi[..rows * l]);
        for i in 0..rows {
            visit(linalg::dot(u, &xi[i * l..(i + 1) * l]));
        }
    }
    Ok(())
}

/// `Φ(x)` for the standard normal.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `P[|G| ≤ c]` for `G ~ N(0, 1)`.
pub fn gaussian_interval(c: f64) -> Result<f64> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::InvalidArgument(format!("interval half-width must be nonnegative, got {c}")));
    }
    if c.is_infinite() {
        return Ok(1.0);
    }
    Ok(libm::erf(c / SQRT_2))
}

/// Mass of `interval` under `N(0, s²)`.
fn gaussian_mass(s: f64, interval: Interval) -> f64 {
    if s == 0.0 {
        return if interval.contains(0.0) { 1.0 } else { 0.0 };
    }
    let abs_le = |h: f64| if h < 0.0 { 0.0 } else if h.is_infinite() { 1.0 } else { libm::erf(h / (s * SQRT_2)) };
    match interval {
        Interval::Abs { hi } => abs_le(hi),
        Interval::AbsBetween { lo, hi } => {
            if hi < lo {
                0.0
            } else {
                // lo ≤ |X| ≤ hi, with the point |X| = lo carrying no mass.
                (abs_le(hi) - abs_le(lo)).max(0.0)
            }
        }
        Interval::Signed { lo, hi } => {
            if hi < lo {
                0.0
            } else {
                (normal_cdf(hi / s) - normal_cdf(lo / s)).max(0.0)
            }
        }
    }
}

/// `c_be·‖u‖₃³/‖u‖₂³`.
pub fn berry_esseen_bound(u: &[f64]) -> f64 {
    let n2 = linalg::norm(u);
    if n2 == 0.0 {
        return f64::INFINITY;
    }
    C_BE * linalg::norm3_cubed(u) / (n2 * n2 * n2)
}

fn prob_over(u: &[f64], interval: Interval, backend: Backend) -> Result<Estimate> {
    match backend {
        Backend::Enumerate => {
            enumerate_capacity(u)?;
            let proj = data::sign_projections(u)?;
            let hits = proj.iter().filter(|&&v| interval.contains(v)).count();
            Ok(Estimate::exact(hits as f64 / proj.len() as f64))
        }
        Backend::MonteCarlo { n, seed } => {
            let mut hits = 0usize;
            montecarlo_projections(u, n, seed, |v| {
                if interval.contains(v) {
                    hits += 1
                }
            })?;
            let pr = hits as f64 / n as f64;
            Ok(Estimate { value: pr, std_err: Some((pr * (1.0 - pr) / n as f64).sqrt()), bound: None })
        }
        Backend::Gaussian => Ok(Estimate::exact(gaussian_mass(linalg::norm(u), interval))),
        Backend::BerryEsseen => Ok(Estimate {
            value: gaussian_mass(linalg::norm(u), interval),
            std_err: None,
            bound: Some(berry_esseen_bound(u)),
        }),
    }
}

/// Probability of the interval event under the query's backend.
pub fn indicator_prob(query: &IndicatorProbQuery) -> Result<Estimate> {
    let u = noise_weights(&query.w, query.exclude)?;
    prob_over(&u, query.interval, query.backend)
}

/// `E[1(lo ≤ |X| ≤ hi)·|X|]` for `X = Σ_{k≥3} w_k ξ_k`.
pub fn truncated_abs_mean(w: &[f64], lo: f64, hi: f64, backend: Backend) -> Result<Estimate> {
    let u = noise_weights(w, None)?;
    let inside = |v: f64| lo <= v.abs() && v.abs() <= hi;
    match backend {
        Backend::Enumerate => {
            enumerate_capacity(&u)?;
            let proj = data::sign_projections(&u)?;
            let s: f64 = proj.iter().filter(|&&v| inside(v)).map(|v| v.abs()).sum();
            Ok(Estimate::exact(s / proj.len() as f64))
        }
        Backend::MonteCarlo { n, seed } => {
            let (mut s1, mut s2) = (0.0, 0.0);
            montecarlo_projections(&u, n, seed, |v| {
                if inside(v) {
                    s1 += v.abs();
                    s2 += v * v;
                }
            })?;
            let nf = n as f64;
            let mean = s1 / nf;
            let var = (s2 / nf - mean * mean).max(0.0);
            Ok(Estimate { value: mean, std_err: Some((var / nf).sqrt()), bound: None })
        }
        Backend::Gaussian | Backend::BerryEsseen => {
            let s = linalg::norm(&u);
            if s == 0.0 || hi < lo {
                return Ok(Estimate::exact(0.0));
            }
            let tail = |t: f64| if t.is_infinite() { 0.0 } else { (-(t * t) / (2.0 * s * s)).exp() };
            Ok(Estimate::exact(s * (2.0 / PI).sqrt() * (tail(lo.max(0.0)) - tail(hi))))
        }
    }
}

/// `-w_sigᵀ∇_w L0 = (√2/4)|a|·P[|wᵀξ| ≤ √2‖w_sig‖]·‖w_sig‖`.
pub fn pop_grad_sig(neuron: &Neuron, backend: Backend) -> Result<Estimate> {
    let dec = decompose(neuron);
    let s = linalg::norm(&dec.w_sig);
    let pr = indicator_prob(&IndicatorProbQuery {
        w: neuron.w.clone(),
        exclude: None,
        interval: Interval::Abs { hi: SQRT_2 * s },
        backend,
    })?;
    Ok(pr.scaled(SQRT_2 / 4.0 * neuron.a.abs() * s))
}

/// `-w_oppᵀ∇_w L0 = -(√2/4)|a|·P[|wᵀξ| ≤ √2‖w_opp‖]·‖w_opp‖`.
pub fn pop_grad_opp(neuron: &Neuron, backend: Backend) -> Result<Estimate> {
    let dec = decompose(neuron);
    let o = linalg::norm(&dec.w_opp);
    let pr = indicator_prob(&IndicatorProbQuery {
        w: neuron.w.clone(),
        exclude: None,
        interval: Interval::Abs { hi: SQRT_2 * o },
        backend,
    })?;
    Ok(pr.scaled(-SQRT_2 / 4.0 * neuron.a.abs() * o))
}

/// Which of `‖w_sig‖`, `‖w_opp‖` is larger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerpCase {
    OppLarger,
    SigLarger,
    Equal,
}

/// Exact noise-direction gradient against its case bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PerpReport {
    /// `-w_perpᵀ∇_w L0` by enumeration of all inputs.
    pub value: f64,
    pub bound: Estimate,
    pub case: PerpCase,
    pub respects: bool,
}

/// `-w_perpᵀ∇_w L0` and its bound: `+(|a|/4)E[1(|u| ∈ [√2s, √2o])|u|]` when `o > s`,
/// `-(|a|/4)E[1(|u| ∈ [√2o, √2s])|u|]` otherwise, with `u = wᵀξ`.
pub fn pop_grad_perp(neuron: &Neuron, backend: Backend) -> Result<PerpReport> {
    let dec = decompose(neuron);
    let s = linalg::norm(&dec.w_sig);
    let o = linalg::norm(&dec.w_opp);
    let g = grad::l0_grad_population(neuron)?;
    let value = -linalg::dot(&dec.w_perp, &g.gw);
    let a = neuron.a.abs();
    let (case, bound) = if o > s {
        (PerpCase::OppLarger, truncated_abs_mean(&neuron.w, SQRT_2 * s, SQRT_2 * o, backend)?.scaled(a / 4.0))
    } else {
        let case = if o == s { PerpCase::Equal } else { PerpCase::SigLarger };
        (case, truncated_abs_mean(&neuron.w, SQRT_2 * o, SQRT_2 * s, backend)?.scaled(-a / 4.0))
    };
    let slack = 1e-10 * a * linalg::norm_sq(&neuron.w)
        + bound.std_err.map_or(0.0, |e| 4.0 * e)
        + bound.bound.unwrap_or(0.0);
    let respects = value <= bound.value + slack;
    Ok(PerpReport { value, bound, case, respects })
}

/// `-w_i ∂_{w_i} L0 = (|a||w_i|/4)·(P[X ∈ I_sig] - P[X ∈ I_opp])` for a noise coordinate `i`
/// (0-indexed, `i ≥ 2`), with `X = wᵀξ - w_iξ_i` and `I = [√2‖·‖ - |w_i|, √2‖·‖ + |w_i|]`.
pub fn pop_grad_coord(neuron: &Neuron, i: usize, backend: Backend) -> Result<Estimate> {
    if i < 2 || i >= neuron.w.len() {
        return Err(Error::InvalidCoordinate(i));
    }
    let dec = decompose(neuron);
    let s = linalg::norm(&dec.w_sig);
    let o = linalg::norm(&dec.w_opp);
    let wi = neuron.w[i].abs();
    let prob = |c: f64| {
        indicator_prob(&IndicatorProbQuery {
            w: neuron.w.clone(),
            exclude: Some(i),
            interval: Interval::Signed { lo: SQRT_2 * c - wi, hi: SQRT_2 * c + wi },
            backend,
        })
    };
    let ps = prob(s)?;
    let po = prob(o)?;
    let combine = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) => Some(x + y),
        _ => None,
    };
    let diff = Estimate {
        value: ps.value - po.value,
        std_err: combine(ps.std_err, po.std_err),
        bound: combine(ps.bound, po.bound),
    };
    Ok(diff.scaled(neuron.a.abs() * wi / 4.0))
}

/// One measured inequality `lhs ≤ rhs` (or `≥` where stated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(lhs: f64, rhs: f64) -> Self {
        Check { lhs, rhs, pass: lhs <= rhs }
    }

    pub fn ge(lhs: f64, rhs: f64) -> Self {
        Check { lhs, rhs, pass: lhs >= rhs }
    }
}

/// Measured values behind the well-spread conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct WellSpreadReport {
    pub c: f64,
    /// `‖v‖₃³ ≤ 20‖v‖₂³d^(-1/2)`.
    pub l3: Check,
    /// `‖v‖∞ ≤ (log d/√d)‖v‖₂`.
    pub linf: Check,
    /// `Σ_{i∈S}|v_i| ≥ ‖v‖√d/c⁵`.
    pub small_mass: Check,
    /// `max_{i∈S}|v_i| ≤ ‖v‖/(c√d)`.
    pub small_max: Check,
    pub small_set: Vec<usize>,
    pub pass: bool,
}

/// Evaluates both well-spread conditions; `S` holds the `⌊d/c²⌋` (at least one) smallest
/// `|v_i|`, ties broken toward the lower index.
pub fn well_spread_check(v: &[f64], c: f64) -> Result<WellSpreadReport> {
    let n2 = linalg::norm(v);
    if n2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !(c >= 1.0) {
        return Err(Error::InvalidArgument(format!("spread constant must be at least 1, got {c}")));
    }
    let d = v.len() as f64;
    let l3 = Check::le(linalg::norm3_cubed(v), 20.0 * n2.powi(3) / d.sqrt());
    let linf = Check::le(linalg::norm_inf(v), d.ln() / d.sqrt() * n2);
    let k = ((d / (c * c)).floor() as usize).max(1);
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()).then(i.cmp(&j)));
    idx.truncate(k);
    let mass: f64 = idx.iter().map(|&i| v[i].abs()).sum();
    let max = idx.iter().map(|&i| v[i].abs()).fold(0.0, f64::max);
    let small_mass = Check::ge(mass, n2 * d.sqrt() / c.powi(5));
    let small_max = Check::le(max, n2 / (c * d.sqrt()));
    let pass = l3.pass && linf.pass && small_mass.pass && small_max.pass;
    Ok(WellSpreadReport { c, l3, linf, small_mass, small_max, small_set: idx, pass })
}

/// Random-walk anti-concentration: `P[|ξᵀu| ≤ C]` against `1/(C√ℓ)` for `‖u‖∞ ≤ 1`.
pub fn rw_check(u: &[f64], c: f64) -> Result<Check> {
    if linalg::norm_inf(u) > 1.0 {
        return Err(Error::InvalidArgument("random-walk check needs ‖u‖∞ ≤ 1".into()));
    }
    if u.is_empty() {
        return Err(Error::ZeroVector);
    }
    enumerate_capacity(u)?;
    let proj = data::sign_projections(u)?;
    let pr = proj.iter().filter(|v| v.abs() <= c).count() as f64 / proj.len() as f64;
    Ok(Check::ge(pr, 1.0 / (c * (u.len() as f64).sqrt())))
}

/// Boolean-versus-Gaussian interval comparison for `v + Δ` over `[a‖v‖, b‖v‖]`:
/// `lhs = |P_ξ[ξᵀ(v+Δ) ∈ I] - P_{|b-a|/2}|`,
/// `rhs = 2P_{|b-a|/2}(√ζ + max(|a|,|b|)²) + 200·c_be·n^(-1/2)` with `ζ = ‖Δ‖/‖v‖`.
pub fn boolean2_check(v: &[f64], delta: &[f64], a: f64, b: f64) -> Result<Check> {
    if v.len() != delta.len() {
        return Err(Error::DimensionMismatch { expected: v.len(), got: delta.len() });
    }
    let nv = linalg::norm(v);
    if nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    if v.len() > PROJECTION_CAP {
        return Err(Error::EnumerationTooLarge { noise_dims: v.len(), cap: PROJECTION_CAP });
    }
    let u: Vec<f64> = v.iter().zip(delta).map(|(x, y)| x + y).collect();
    let proj = data::sign_projections(&u)?;
    let (lo, hi) = (a.min(b) * nv, a.max(b) * nv);
    let pr = proj.iter().filter(|&&x| lo <= x && x <= hi).count() as f64 / proj.len() as f64;
    let pc = gaussian_interval((b - a).abs() / 2.0)?;
    let zeta = linalg::norm(delta) / nv;
    let rhs = 2.0 * pc * (zeta.sqrt() + a.abs().max(b.abs()).powi(2)) + 200.0 * C_BE / (v.len() as f64).sqrt();
    Ok(Check::le((pr - pc).abs(), rhs))
}

/// Small-ball lower bound: `P_ξ[|ξᵀ(v+Δ)| ≤ ‖v‖/√n]` against `½exp(-100C⁸)/√n`.
pub fn infinity_check(v: &[f64], delta: &[f64], c: f64) -> Result<Check> {
    if v.len() != delta.len() {
        return Err(Error::DimensionMismatch { expected: v.len(), got: delta.len() });
    }
    let nv = linalg::norm(v);
    if nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let u: Vec<f64> = v.iter().zip(delta).map(|(x, y)| x + y).collect();
    let proj = data::sign_projections(&u)?;
    let n = v.len() as f64;
    let pr = proj.iter().filter(|x| x.abs() <= nv / n.sqrt()).count() as f64 / proj.len() as f64;
    Ok(Check::ge(pr, 0.5 * (-100.0 * c.powi(8)).exp() / n.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn neuron_with(d: usize, sig: [f64; 2], perp: &[f64], a: f64) -> Neuron {
        let mut w = vec![0.0; d];
        w[0] = sig[0];
        w[1] = sig[1];
        w[2..2 + perp.len()].copy_from_slice(perp);
        Neuron { w, a }
    }

    #[test]
    fn sig_and_opp_closed_forms_without_noise() {
        // a > 0: w_sig is the μ1 part, w_opp the μ2 part.
        let n = neuron_with(6, [0.7, -0.1], &[], 0.4);
        let s = (0.8f64) / SQRT_2;
        let o = (0.6f64) / SQRT_2;
        let v = pop_grad_sig(&n, Backend::Enumerate).unwrap().value;
        assert!((v - SQRT_2 / 4.0 * 0.4 * s).abs() < 1e-15);
        let v = pop_grad_opp(&n, Backend::Enumerate).unwrap().value;
        assert!((v + SQRT_2 / 4.0 * 0.4 * o).abs() < 1e-15);
        let none = neuron_with(6, [0.0, 0.0], &[0.3, 0.2], 1.0);
        assert_eq!(pop_grad_sig(&none, Backend::Enumerate).unwrap().value, 0.0);
        assert_eq!(pop_grad_opp(&none, Backend::Enumerate).unwrap().value, 0.0);
    }

    #[test]
    fn closed_forms_match_enumeration_at_d8() {
        let mut r = rng::stream(3, Purpose::Aux, 0);
        for _ in 0..20 {
            let w: Vec<f64> = (0..8).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let a: f64 = r.sample(StandardNormal);
            let n = Neuron { w: w.clone(), a };
            let dec = decompose(&n);
            let g = grad::l0_grad_population(&n).unwrap();
            let scale = a.abs() * linalg::norm_sq(&w) / 64.0;
            let sig = -linalg::dot(&dec.w_sig, &g.gw);
            assert!((pop_grad_sig(&n, Backend::Enumerate).unwrap().value - sig).abs() <= 1e-10 * sig.abs().max(scale));
            let opp = -linalg::dot(&dec.w_opp, &g.gw);
            assert!((pop_grad_opp(&n, Backend::Enumerate).unwrap().value - opp).abs() <= 1e-10 * opp.abs().max(scale));
            for i in 2..8 {
                let c = -w[i] * g.gw[i];
                let v = pop_grad_coord(&n, i, Backend::Enumerate).unwrap().value;
                assert!((v - c).abs() <= 1e-10 * c.abs().max(scale), "{v} {c}");
            }
            assert!(pop_grad_perp(&n, Backend::Enumerate).unwrap().respects);
        }
    }

    #[test]
    fn perp_examples() {
        let n = neuron_with(10, [0.5, 0.0], &[0.2, -0.1, 0.3], 1.0);
        let r = pop_grad_perp(&n, Backend::Enumerate).unwrap();
        assert_eq!(r.case, PerpCase::Equal);
        assert_eq!(r.bound.value, 0.0);
        assert!(r.value <= 1e-15);
        let flat = neuron_with(10, [0.5, 0.2], &[], 1.0);
        assert_eq!(pop_grad_perp(&flat, Backend::Enumerate).unwrap().value, 0.0);
        let opp = neuron_with(10, [0.5, 0.4], &[0.3, -0.2, 0.25, 0.1, 0.4, -0.35, 0.2, 0.15], -0.8);
        let r = pop_grad_perp(&opp, Backend::Enumerate).unwrap();
        assert!(r.respects, "{r:?}");
    }

    #[test]
    fn coord_examples() {
        let n = neuron_with(8, [0.5, 0.1], &[0.0, 0.3, -0.2], 0.9);
        assert_eq!(pop_grad_coord(&n, 2, Backend::Enumerate).unwrap().value, 0.0);
        let eq = neuron_with(8, [0.5, 0.0], &[0.4, 0.3, -0.2], 0.9);
        assert!(pop_grad_coord(&eq, 3, Backend::Enumerate).unwrap().value.abs() < 1e-15);
        assert!(matches!(pop_grad_coord(&n, 1, Backend::Enumerate), Err(Error::InvalidCoordinate(1))));
    }

    #[test]
    fn indicator_examples() {
        let mut w = vec![0.0; 12];
        w[2..].copy_from_slice(&[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0]);
        let q = |interval, backend| IndicatorProbQuery { w: w.clone(), exclude: None, interval, backend };
        assert_eq!(indicator_prob(&q(Interval::Abs { hi: 0.0 }, Backend::Enumerate)).unwrap().value, 0.0);
        assert_eq!(indicator_prob(&q(Interval::Abs { hi: f64::INFINITY }, Backend::Enumerate)).unwrap().value, 1.0);

        let mut ones = vec![0.0; 12];
        ones[2..].iter_mut().for_each(|v| *v = 1.0 / 10f64.sqrt());
        let hi = SQRT_2;
        let ex = indicator_prob(&IndicatorProbQuery {
            w: ones.clone(),
            exclude: None,
            interval: Interval::Abs { hi },
            backend: Backend::Enumerate,
        })
        .unwrap();
        let be = indicator_prob(&IndicatorProbQuery {
            w: ones,
            exclude: None,
            interval: Interval::Abs { hi },
            backend: Backend::BerryEsseen,
        })
        .unwrap();
        assert!((ex.value - be.value).abs() <= be.bound.unwrap());
    }

    #[test]
    fn indicator_symmetry_under_flips_and_permutations() {
        let w = vec![0.0, 0.0, 0.3113, -0.7071, 1.1397, 0.2531, -0.4519, 0.9042];
        let mut v = w.clone();
        v[3] = -v[3];
        v.swap(2, 6);
        for interval in [Interval::Abs { hi: 0.8 }, Interval::AbsBetween { lo: 0.3, hi: 1.7 }, Interval::Signed { lo: -0.2, hi: 1.3 }] {
            let p = |w: &Vec<f64>| {
                indicator_prob(&IndicatorProbQuery { w: w.clone(), exclude: None, interval, backend: Backend::Enumerate })
                    .unwrap()
                    .value
            };
            assert_eq!(p(&w), p(&v));
        }
    }

    #[test]
    fn montecarlo_backend_tracks_enumeration() {
        let w = vec![0.0, 0.0, 0.3113, -0.7071, 1.1397, 0.2531, -0.4519, 0.9042, 0.6173, -0.2237];
        let interval = Interval::Abs { hi: 0.9 };
        let ex = indicator_prob(&IndicatorProbQuery { w: w.clone(), exclude: None, interval, backend: Backend::Enumerate }).unwrap();
        let mc = indicator_prob(&IndicatorProbQuery {
            w,
            exclude: None,
            interval,
            backend: Backend::MonteCarlo { n: MC_DEFAULT_N, seed: 4 },
        })
        .unwrap();
        assert!((ex.value - mc.value).abs() <= 4.0 * mc.std_err.unwrap());
    }

    #[test]
    fn gaussian_interval_examples() {
        assert_eq!(gaussian_interval(0.0).unwrap(), 0.0);
        assert_eq!(gaussian_interval(f64::INFINITY).unwrap(), 1.0);
        assert!((gaussian_interval(1.959964).unwrap() - 0.95).abs() < 1e-6);
        assert!((gaussian_interval(40.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(gaussian_interval(-1.0).is_err());
    }

    #[test]
    fn well_spread_examples() {
        let mut e1 = vec![0.0; 100];
        e1[0] = 1.0;
        let r = well_spread_check(&e1, 2.0).unwrap();
        assert!(!r.linf.pass && !r.pass);

        let n = 10_000;
        let flat = vec![1.0 / (n as f64).sqrt(); n];
        let r = well_spread_check(&flat, 2.0).unwrap();
        assert!(r.l3.pass && r.linf.pass && r.small_mass.pass);
        // |v_i| = 1/√d exceeds ‖v‖/(c√d) = 1/(2√d), so the small-coordinate cap fails.
        assert!(!r.small_max.pass && !r.pass);

        let mut passes = 0;
        for seed in 0..100 {
            let mut r = rng::stream(seed, Purpose::Aux, 1);
            let v: Vec<f64> = (0..4096).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            if well_spread_check(&v, 40.0).unwrap().pass {
                passes += 1;
            }
        }
        assert!(passes >= 99, "{passes}");
        assert!(matches!(well_spread_check(&[0.0, 0.0], 2.0), Err(Error::ZeroVector)));
    }

    #[test]
    fn rw_and_bound_evaluators() {
        let u = vec![1.0; 9];
        let r = rw_check(&u, 32.0).unwrap();
        assert!(r.pass && r.lhs == 1.0);
        assert!(rw_check(&[2.0], 32.0).is_err());

        let mut r = rng::stream(2, Purpose::Aux, 2);
        let v: Vec<f64> = (0..18).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let delta = vec![0.0; 18];
        let b = boolean2_check(&v, &delta, -0.5, 0.5).unwrap();
        assert!(b.lhs.is_finite() && b.rhs > 0.0);
        let inf = infinity_check(&v, &delta, 1.0).unwrap();
        assert!(inf.pass);
    }
}
