//! Per-step inequality monitors over a recorded SGD step, serialized as JSONL rows.
//!
//! Monitors whose statement carries a `(1 ± o(1))` factor substitute the slack for `o(1)`;
//! the others multiply their bound by the slack (upper bounds) or relax it by `(slack − 1)·|rhs|`
//! (lower bounds). The reported `rhs` is the bound before any multiplicative slack.

use crate::data::Cluster;
use crate::error::{Error, Result};
use crate::grad::{self, Grads, Variant};
use crate::linalg;
use crate::network::{EvalMode, Network};
use crate::oracle::{self, Backend, IndicatorProbQuery, Interval};
use crate::phase::{self, NeuronStats};
use crate::schedule::TAU2;
use serde::Serialize;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Monitor {
    LayerBalanceS3,
    LayerBalanceS4,
    LayerBalanceMean,
    ApproxError,
    CleanAll,
    AllNeuron,
    SmallStep,
    SmallStepH,
    HeavyGrowth,
    BmaxGrowth,
    CleanNsPerp,
    CleanNsOpp,
    CleanCor,
    CleanSignal,
    GradDiffG1,
    GradDiffG2,
}

impl Monitor {
    pub const ALL: [Monitor; 16] = [
        Monitor::LayerBalanceS3,
        Monitor::LayerBalanceS4,
        Monitor::LayerBalanceMean,
        Monitor::ApproxError,
        Monitor::CleanAll,
        Monitor::AllNeuron,
        Monitor::SmallStep,
        Monitor::SmallStepH,
        Monitor::HeavyGrowth,
        Monitor::BmaxGrowth,
        Monitor::CleanNsPerp,
        Monitor::CleanNsOpp,
        Monitor::CleanCor,
        Monitor::CleanSignal,
        Monitor::GradDiffG1,
        Monitor::GradDiffG2,
    ];

    /// Monitors that need only the two network states.
    pub const CHEAP: [Monitor; 7] = [
        Monitor::LayerBalanceS3,
        Monitor::LayerBalanceS4,
        Monitor::LayerBalanceMean,
        Monitor::SmallStep,
        Monitor::SmallStepH,
        Monitor::HeavyGrowth,
        Monitor::BmaxGrowth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Monitor::LayerBalanceS3 => "layer_balance_s3",
            Monitor::LayerBalanceS4 => "layer_balance_s4",
            Monitor::LayerBalanceMean => "layer_balance_mean",
            Monitor::ApproxError => "approx_error",
            Monitor::CleanAll => "clean_all",
            Monitor::AllNeuron => "all_neuron",
            Monitor::SmallStep => "small_step",
            Monitor::SmallStepH => "small_step_h",
            Monitor::HeavyGrowth => "heavy_growth",
            Monitor::BmaxGrowth => "bmax_growth",
            Monitor::CleanNsPerp => "clean_ns_perp",
            Monitor::CleanNsOpp => "clean_ns_opp",
            Monitor::CleanCor => "clean_cor",
            Monitor::CleanSignal => "clean_signal",
            Monitor::GradDiffG1 => "graddiff_g1",
            Monitor::GradDiffG2 => "graddiff_g2",
        }
    }

    pub fn parse(s: &str) -> Option<Monitor> {
        Monitor::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Whether the slack stands in for an `o(1)` term.
    pub fn is_asymptotic(self) -> bool {
        matches!(self, Monitor::HeavyGrowth | Monitor::BmaxGrowth | Monitor::CleanSignal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub monitors: Vec<Monitor>,
    /// Slack replacing `o(1)`.
    pub slack_o1: f64,
    /// Multiplier on plain inequalities.
    pub slack: f64,
    pub overrides: Vec<(Monitor, f64)>,
    /// Backend for population gradients.
    pub grad_mode: EvalMode,
    /// Backend for indicator probabilities.
    pub prob_backend: Backend,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            monitors: Monitor::ALL.to_vec(),
            slack_o1: 0.5,
            slack: 1.0,
            overrides: Vec::new(),
            grad_mode: EvalMode::MonteCarlo { n: 1 << 14, seed: 0 },
            prob_backend: Backend::MonteCarlo { n: 1 << 12, seed: 0 },
        }
    }
}

impl AuditConfig {
    pub fn slack_for(&self, m: Monitor) -> f64 {
        if let Some(&(_, s)) = self.overrides.iter().find(|(k, _)| *k == m) {
            return s;
        }
        if m.is_asymptotic() {
            self.slack_o1
        } else {
            self.slack
        }
    }
}

/// One recorded SGD step with the Phase-2 parameters in force.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<'a> {
    pub step: u64,
    pub before: Option<&'a Network>,
    pub after: Option<&'a Network>,
    pub eta: f64,
    pub zeta: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorResult {
    pub step: u64,
    pub monitor: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

fn upper(step: u64, m: Monitor, lhs: f64, rhs: f64, slack: f64) -> MonitorResult {
    MonitorResult { step, monitor: m.name(), lhs, rhs, slack, pass: lhs <= slack * rhs }
}

fn raw(step: u64, m: Monitor, lhs: f64, rhs: f64, slack: f64, pass: bool) -> MonitorResult {
    MonitorResult { step, monitor: m.name(), lhs, rhs, slack, pass }
}

/// Keeps the neuron with the smallest `rhs − lhs` (upper bounds) or `lhs − rhs` (lower bounds).
struct Worst {
    lhs: f64,
    rhs: f64,
    margin: f64,
}

impl Worst {
    fn new() -> Self {
        Worst { lhs: f64::NAN, rhs: f64::NAN, margin: f64::INFINITY }
    }

    fn push(&mut self, lhs: f64, rhs: f64, margin: f64) {
        if margin < self.margin || self.lhs.is_nan() {
            *self = Worst { lhs, rhs, margin };
        }
    }

    fn or_vacuous(self) -> (f64, f64) {
        if self.lhs.is_nan() {
            (0.0, 0.0)
        } else {
            (self.lhs, self.rhs)
        }
    }
}

struct Ctx<'a> {
    rec: StepRecord<'a>,
    cfg: &'a AuditConfig,
    clean: Option<Grads>,
    full: Option<Grads>,
}

impl<'a> Ctx<'a> {
    fn before(&self) -> Result<&'a Network> {
        self.rec.before.ok_or(Error::MissingField("before"))
    }

    fn after(&self) -> Result<&'a Network> {
        self.rec.after.ok_or(Error::MissingField("after"))
    }

    fn clean(&mut self) -> Result<&Grads> {
        if self.clean.is_none() {
            self.clean = Some(grad::population_grads(self.before()?, Variant::Clean, self.cfg.grad_mode)?);
        }
        Ok(self.clean.as_ref().unwrap())
    }

    fn full(&mut self) -> Result<&Grads> {
        if self.full.is_none() {
            self.full = Some(grad::population_grads(self.before()?, Variant::Full, self.cfg.grad_mode)?);
        }
        Ok(self.full.as_ref().unwrap())
    }
}

/// `h_μ` of `net` over a fixed heavy index set.
fn heavy_margins(net: &Network, heavy: &[bool]) -> [f64; 4] {
    phase::margins(net, heavy).h
}

/// `P_ξ[|w_perpᵀξ| ≥ √2‖w_opp‖]`.
fn prob_perp_exceeds(w: &[f64], opp: f64, backend: Backend) -> Result<f64> {
    Ok(oracle::indicator_prob(&IndicatorProbQuery {
        w: w.to_vec(),
        exclude: None,
        interval: Interval::AbsBetween { lo: std::f64::consts::SQRT_2 * opp, hi: f64::INFINITY },
        backend,
    })?
    .value)
}

/// Evaluates the configured monitors on one step record.
pub fn lemma_audit(rec: StepRecord<'_>, cfg: &AuditConfig) -> Result<Vec<MonitorResult>> {
    let mut ctx = Ctx { rec, cfg, clean: None, full: None };
    let mut out = Vec::with_capacity(cfg.monitors.len());
    for &m in &cfg.monitors {
        out.push(evaluate(&mut ctx, m)?);
    }
    Ok(out)
}

fn evaluate(ctx: &mut Ctx<'_>, m: Monitor) -> Result<MonitorResult> {
    let step = ctx.rec.step;
    let slack = ctx.cfg.slack_for(m);
    let (eta, zeta, h) = (ctx.rec.eta, ctx.rec.zeta, ctx.rec.h);
    match m {
        Monitor::LayerBalanceS3 => {
            let after = ctx.after()?;
            let excess = (0..after.p)
                .map(|j| after.a[j].abs() - linalg::norm(after.w_row(j)))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(upper(step, m, excess, 1e-10, 1.0))
        }
        Monitor::LayerBalanceS4 => {
            let (b, a) = (ctx.before()?, ctx.after()?);
            let mut worst = Worst::new();
            for j in 0..b.p {
                let g0 = linalg::norm_sq(b.w_row(j)) - b.a[j] * b.a[j];
                let g1 = linalg::norm_sq(a.w_row(j)) - a.a[j] * a.a[j];
                let rhs = 4.0 * eta * eta * b.a[j] * b.a[j];
                worst.push(g1 - g0, rhs, slack * rhs - (g1 - g0));
            }
            let (l, r) = worst.or_vacuous();
            Ok(upper(step, m, l, r, slack))
        }
        Monitor::LayerBalanceMean => {
            let (b, a) = (ctx.before()?, ctx.after()?);
            let gap = |n: &Network| {
                (0..n.p).map(|j| linalg::norm_sq(n.w_row(j)) - n.a[j] * n.a[j]).sum::<f64>() / n.p as f64
            };
            let a2 = b.a.iter().map(|x| x * x).sum::<f64>() / b.p as f64;
            Ok(upper(step, m, gap(a) - gap(b), 4.0 * eta * eta * a2, slack))
        }
        Monitor::ApproxError => {
            let b = ctx.before()?;
            let noise_mass = (0..b.p).map(|j| b.a[j].abs() * linalg::norm(&b.w_row(j)[2..])).sum::<f64>() / b.p as f64;
            let rhs = 4.0 * noise_mass;
            ctx.clean()?;
            ctx.full()?;
            let (clean, full) = (ctx.clean.as_ref().unwrap(), ctx.full.as_ref().unwrap());
            let mut worst = Worst::new();
            for j in 0..b.p {
                let aj = b.a[j].abs();
                if aj == 0.0 {
                    continue;
                }
                let diff: Vec<f64> = clean.gw_row(j).iter().zip(full.gw_row(j)).map(|(x, y)| x - y).collect();
                let l = linalg::norm(&diff) / aj;
                worst.push(l, rhs, slack * rhs - l);
            }
            let (l, _) = worst.or_vacuous();
            Ok(upper(step, m, l, rhs, slack))
        }
        Monitor::CleanAll => {
            let b = ctx.before()?;
            let g_max = phase::margins(b, &vec![false; b.p]).g_max;
            let clean = ctx.clean()?;
            let mut worst = Worst::new();
            for j in 0..b.p {
                let n = linalg::norm(b.w_row(j));
                if n == 0.0 {
                    continue;
                }
                let l = clean.ga[j].abs() / n;
                let r = TAU2 * g_max;
                worst.push(l, r, slack * r - l);
            }
            let (l, r) = worst.or_vacuous();
            Ok(upper(step, m, l, r, slack))
        }
        Monitor::AllNeuron => {
            let (b, a) = (ctx.before()?, ctx.after()?);
            let g_max = phase::margins(b, &vec![false; b.p]).g_max;
            let r = 1.0 + 2.0 * eta * (1.0 + 2.0 * zeta * h) * TAU2 * g_max;
            let mut l = f64::NEG_INFINITY;
            for j in 0..b.p {
                let n0 = linalg::norm_sq(b.w_row(j));
                if n0 > 0.0 {
                    l = l.max(linalg::norm_sq(a.w_row(j)) / n0);
                }
            }
            Ok(upper(step, m, l, r, slack))
        }
        Monitor::SmallStep => {
            let b = ctx.before()?;
            let heavy = phase::heavy_set(b, zeta, h);
            let ms = phase::margins(b, &heavy);
            let l = (0..4).map(|k| (ms.b[k] - ms.h[k]).abs()).fold(0.0, f64::max);
            Ok(upper(step, m, l, 2.0 * zeta * h, slack))
        }
        Monitor::SmallStepH => {
            let (b, a) = (ctx.before()?, ctx.after()?);
            let heavy = phase::heavy_set(b, zeta, h);
            let (h0, h1) = (heavy_margins(b, &heavy), heavy_margins(a, &heavy));
            let l = (0..4).map(|k| (h1[k] - h0[k]).abs()).fold(0.0, f64::max);
            Ok(upper(step, m, l, eta.sqrt(), slack))
        }
        Monitor::HeavyGrowth => {
            let (b, a) = (ctx.before()?, ctx.after()?);
            let heavy = phase::heavy_set(b, zeta, h);
            let ms = phase::margins(b, &heavy);
            let h1 = heavy_margins(a, &heavy);
            let h1_min = h1.iter().copied().fold(f64::INFINITY, f64::min);
            let r = (1.0 + 2.0 * eta * TAU2 * (1.0 - slack) * ms.g_max) * ms.h_min;
            Ok(raw(step, m, h1_min, r, slack, h1_min >= r))
        }
        Monitor::BmaxGrowth => {
            let (b, a) = (ctx.before()?, ctx.after()?);
            let heavy = phase::heavy_set(b, zeta, h);
            let ms = phase::margins(b, &heavy);
            let h1 = heavy_margins(a, &heavy);
            let h1_max = h1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let r = (1.0 + 2.0 * eta * TAU2 * (1.0 + slack) * ms.g_min) * ms.h_max;
            Ok(raw(step, m, h1_max, r, slack, h1_max <= r))
        }
        Monitor::CleanNsPerp | Monitor::CleanNsOpp | Monitor::CleanCor => {
            let b = ctx.before()?;
            let heavy = phase::heavy_set(b, zeta, h);
            let ms = phase::margins(b, &heavy);
            let backend = ctx.cfg.prob_backend;
            let clean = ctx.clean()?;
            let e6h = (6.0 * h).exp();
            let mut worst = Worst::new();
            for j in (0..b.p).filter(|&j| heavy[j]) {
                let w = b.w_row(j);
                let aj = b.a[j].abs();
                if aj == 0.0 {
                    continue;
                }
                let st = NeuronStats::of(w, b.a[j]);
                let dec = phase::decompose(&b.neuron(j));
                let g = clean.gw_row(j);
                let perp_dot = linalg::dot(&dec.w_perp, g);
                let opp_dot = linalg::dot(&dec.w_opp, g);
                match m {
                    Monitor::CleanNsPerp => {
                        let x = prob_perp_exceeds(w, st.opp, backend)?;
                        let l = perp_dot / aj;
                        let r = ms.g_min * x * st.perp / 8.0 - zeta * st.perp;
                        worst.push(l, r, l - (r - (slack - 1.0) * r.abs()));
                    }
                    Monitor::CleanNsOpp => {
                        let x = prob_perp_exceeds(w, st.opp, backend)?;
                        let s2 = std::f64::consts::SQRT_2;
                        let l = opp_dot / aj;
                        let r = ms.g_min * s2 * st.opp / 8.0 - ms.g_max * s2 / 4.0 * x * st.opp;
                        worst.push(l, r, l - (r - (slack - 1.0) * r.abs()));
                    }
                    _ => {
                        let l = -opp_dot - e6h * perp_dot;
                        let r = -zeta.powf(2.0 / 3.0) * (st.opp + e6h * st.perp) * aj;
                        worst.push(l, r, r + (slack - 1.0) * r.abs() - l);
                    }
                }
            }
            let (l, r) = worst.or_vacuous();
            let pass = match m {
                Monitor::CleanCor => l <= r + (slack - 1.0) * r.abs(),
                _ => l >= r - (slack - 1.0) * r.abs(),
            };
            Ok(raw(step, m, l, r, slack, pass))
        }
        Monitor::CleanSignal => {
            let b = ctx.before()?;
            let heavy = phase::heavy_set(b, zeta, h);
            let ms = phase::margins(b, &heavy);
            let clean = ctx.clean()?;
            let mut dev: f64 = 0.0;
            for j in (0..b.p).filter(|&j| heavy[j]) {
                let st = NeuronStats::of(b.w_row(j), b.a[j]);
                let aj = b.a[j].abs();
                for c in Cluster::ALL {
                    let mu = c.signal();
                    if st.sig_vec[0] * mu[0] + st.sig_vec[1] * mu[1] <= 0.0 {
                        continue;
                    }
                    let g_mu = ms.g[c.index()];
                    let gw = clean.gw_row(j);
                    let along = gw[0] * mu[0] + gw[1] * mu[1];
                    if aj > 0.0 {
                        dev = dev.max((along / (-aj * TAU2 * g_mu) - 1.0).abs());
                    }
                    if st.sig > 0.0 {
                        dev = dev.max((-c.label() * clean.ga[j] / (st.sig * TAU2 * g_mu) - 1.0).abs());
                    }
                }
            }
            Ok(raw(step, m, dev, slack, slack, dev <= slack))
        }
        Monitor::GradDiffG1 | Monitor::GradDiffG2 => {
            let b = ctx.before()?;
            let diffs = grad::grad_diff(b, ctx.cfg.grad_mode)?;
            let mut worst = Worst::new();
            for gd in &diffs {
                let (l, r) = if m == Monitor::GradDiffG1 { (gd.ga_gap, gd.ga_bound) } else { (gd.gw_gap, gd.gw_bound) };
                worst.push(l, r, slack * r - l);
            }
            let (l, r) = worst.or_vacuous();
            Ok(upper(step, m, l, r, slack))
        }
    }
}

/// Writes one JSON object per row.
pub fn write_jsonl<W: Write>(out: &mut W, rows: &[MonitorResult]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
