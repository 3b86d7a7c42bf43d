//! Experiment orchestration: training runs with on-disk artifacts, lemma audits, oracle
//! cross-checks, the randomized Boolean–Gaussian suites and dimension sweeps.

use crate::audit::{self, AuditConfig, Monitor};
use crate::config::{parse_val, TrainConfig};
use crate::data;
use crate::error::{Error, Result};
use crate::grad;
use crate::linalg;
use crate::network::{EvalMode, Network, Neuron, PopulationEval};
use crate::oracle::{self, Backend, IndicatorProbQuery, Interval};
use crate::phase::{self, decompose};
use crate::rng::{self, Purpose};
use crate::schedule::Phase2Params;
use crate::trainer::{self, StepEvent, StopReason, TrainOutput, TrajectoryRecord};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::f64::consts::SQRT_2;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MONITOR_FILE: &str = "monitors.jsonl";
pub const CONFIG_FILE: &str = "config.txt";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";
pub const ABORT_CHECKPOINT: &str = "abort_checkpoint.json";
pub const EVAL_FILE: &str = "eval.json";
pub const AUDIT_SUMMARY_FILE: &str = "audit_summary.csv";

/// Noise dimension up to which monitors and evaluation enumerate the cube.
const EXACT_NOISE_DIMS: usize = 16;

fn is_step_checkpoint(name: &str) -> bool {
    name.starts_with("checkpoint_") && name.ends_with(".json") && name != FINAL_CHECKPOINT
}

/// Creates `dir` and refuses to replace any of `names` unless `overwrite`.
pub fn prepare_output(dir: &Path, names: &[&str], overwrite: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if !overwrite {
        for n in names {
            let p = dir.join(n);
            if p.exists() {
                return Err(Error::WouldClobber(p.display().to_string()));
            }
        }
    }
    Ok(())
}

/// Writes serializable rows as an RFC-4180 CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Population evaluation used for run summaries: exact up to 16 noise coordinates.
pub fn eval_mode(d: usize, samples: usize, seed: u64) -> EvalMode {
    if d - 2 <= EXACT_NOISE_DIMS {
        EvalMode::Enumerate
    } else {
        EvalMode::MonteCarlo { n: samples, seed }
    }
}

/// Monitor settings derived from a training config.
pub fn audit_config(config: &TrainConfig) -> AuditConfig {
    let exact = config.d - 2 <= EXACT_NOISE_DIMS;
    AuditConfig {
        monitors: config.monitors.clone(),
        slack_o1: config.monitor_slack,
        slack: config.monitor_ineq_slack,
        overrides: Vec::new(),
        grad_mode: if exact {
            EvalMode::Enumerate
        } else {
            EvalMode::MonteCarlo { n: config.monitor_samples, seed: config.seed }
        },
        prob_backend: if exact {
            Backend::Enumerate
        } else {
            Backend::MonteCarlo { n: 1 << 12, seed: config.seed }
        },
    }
}

/// Detects the end of Phase 1 and then inflates `ζ` by `ζ ← ζ(1 + 10ηζH)` per step.
#[derive(Debug, Clone)]
pub struct Phase2Clock {
    pub params: Phase2Params,
    end: Option<u64>,
    zeta: f64,
}

impl Phase2Clock {
    pub fn new(params: Phase2Params) -> Self {
        Phase2Clock { params, end: None, zeta: params.zeta_t1 }
    }

    /// Feeds the state at step `t`; must be called once per consecutive step. Returns the `ζ`
    /// in force at `t`.
    pub fn observe(&mut self, t: u64, net: &Network) -> f64 {
        match self.end {
            Some(_) => {
                let p = &self.params;
                self.zeta *= 1.0 + 10.0 * p.eta * self.zeta * p.h;
            }
            None => {
                if phase::phase1_complete(net, self.params.zeta_t1, self.params.h) {
                    self.end = Some(t);
                }
            }
        }
        self.zeta
    }

    pub fn end(&self) -> Option<u64> {
        self.end
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }
}

/// Contents of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub stop: String,
    pub phase1_end: Option<u64>,
    pub loss: f64,
    pub loss_se: Option<f64>,
    pub error: f64,
    pub error_se: Option<f64>,
    pub b: [f64; 4],
    pub b_min: f64,
    pub monitor_rows: usize,
    pub monitor_failures: usize,
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::MarginTarget => "margin_target",
        StopReason::StepCap => "step_cap",
        StopReason::Observer => "observer",
    }
}

struct RunObserver<'a> {
    dir: &'a Path,
    config: &'a TrainConfig,
    csv: BufWriter<File>,
    jsonl: Option<BufWriter<File>>,
    audit: AuditConfig,
    clock: Phase2Clock,
    monitor_rows: usize,
    monitor_failures: usize,
}

impl trainer::Observer for RunObserver<'_> {
    fn on_step(&mut self, e: &StepEvent<'_>) -> Result<()> {
        let zeta = self.clock.observe(e.step, e.before);
        if let Some(out) = self.jsonl.as_mut() {
            if e.step % self.config.monitor_every == 0 {
                let rows = audit::lemma_audit(
                    audit::StepRecord {
                        step: e.step,
                        before: Some(e.before),
                        after: Some(e.after),
                        eta: self.config.eta,
                        zeta,
                        h: self.clock.params.h,
                    },
                    &self.audit,
                )?;
                self.monitor_rows += rows.len();
                self.monitor_failures += rows.iter().filter(|r| !r.pass).count();
                audit::write_jsonl(out, &rows)?;
            }
        }
        let every = self.config.checkpoint_every;
        if every > 0 && (e.step + 1) % every == 0 {
            let t = e.step + 1;
            e.after
                .to_checkpoint(self.config.init_radius(), self.config.seed, t)
                .save(&self.dir.join(format!("checkpoint_{t}.json")))?;
        }
        Ok(())
    }

    fn on_record(&mut self, r: &TrajectoryRecord, _net: &Network) -> Result<()> {
        writeln!(self.csv, "{}", r.csv_row())?;
        self.csv.flush()?;
        if let Some(j) = self.jsonl.as_mut() {
            j.flush()?;
        }
        Ok(())
    }

    fn on_abort(&mut self, step: u64, net: &Network, _error: &Error) {
        let _ = net.to_checkpoint(self.config.init_radius(), self.config.seed, step).save(&self.dir.join(ABORT_CHECKPOINT));
        let _ = self.csv.flush();
        if let Some(j) = self.jsonl.as_mut() {
            let _ = j.flush();
        }
    }
}

/// Runs training and writes `config.txt`, `trajectory.csv`, `monitors.jsonl` (when monitors
/// are configured), `checkpoint_final.json` and `eval.json` into `dir`.
pub fn run_train(config: &TrainConfig, dir: &Path, overwrite: bool) -> Result<(TrainOutput, RunSummary)> {
    config.validate()?;
    prepare_output(dir, &[CONFIG_FILE, TRAJECTORY_FILE, MONITOR_FILE, FINAL_CHECKPOINT, EVAL_FILE, ABORT_CHECKPOINT], overwrite)?;
    let stale: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_str().is_some_and(is_step_checkpoint))
        .map(|e| e.path())
        .collect();
    if let Some(p) = stale.first() {
        if !overwrite {
            return Err(Error::WouldClobber(p.display().to_string()));
        }
    }
    for p in stale.iter().chain([dir.join(ABORT_CHECKPOINT), dir.join(MONITOR_FILE)].iter()) {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    std::fs::write(dir.join(CONFIG_FILE), config.to_text())?;
    let mut csv = BufWriter::new(File::create(dir.join(TRAJECTORY_FILE))?);
    writeln!(csv, "{}", trainer::trajectory_columns().join(","))?;
    let jsonl = if config.monitors.is_empty() {
        None
    } else {
        Some(BufWriter::new(File::create(dir.join(MONITOR_FILE))?))
    };
    let mut obs = RunObserver {
        dir,
        config,
        csv,
        jsonl,
        audit: audit_config(config),
        clock: Phase2Clock::new(config.phase2()),
        monitor_rows: 0,
        monitor_failures: 0,
    };
    let out = trainer::train(config, &mut obs)?;
    obs.csv.flush()?;
    if let Some(j) = obs.jsonl.as_mut() {
        j.flush()?;
    }
    out.net.to_checkpoint(config.init_radius(), config.seed, out.steps).save(&dir.join(FINAL_CHECKPOINT))?;
    let ev = out.net.population_eval(eval_mode(config.d, config.eval_samples, config.seed))?;
    let summary = RunSummary {
        steps: out.steps,
        stop: stop_name(out.stop).into(),
        phase1_end: obs.clock.end(),
        loss: ev.loss,
        loss_se: ev.loss_se,
        error: ev.error,
        error_se: ev.error_se,
        b: ev.b,
        b_min: ev.b.iter().copied().fold(f64::INFINITY, f64::min),
        monitor_rows: obs.monitor_rows,
        monitor_failures: obs.monitor_failures,
    };
    std::fs::write(dir.join(EVAL_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok((out, summary))
}

/// A monitor row read back from `monitors.jsonl`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MonitorRow {
    pub step: u64,
    pub monitor: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

pub fn read_monitors(path: &Path) -> Result<Vec<MonitorRow>> {
    let f = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: MonitorRow = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorSummary {
    pub monitor: String,
    pub rows: usize,
    pub passes: usize,
    pub first_failure: Option<u64>,
}

/// Per-monitor pass counts in `Monitor::ALL` order; monitors without rows are omitted.
pub fn summarize_monitors(rows: &[MonitorRow]) -> Vec<MonitorSummary> {
    Monitor::ALL
        .iter()
        .filter_map(|m| {
            let mine: Vec<&MonitorRow> = rows.iter().filter(|r| r.monitor == m.name()).collect();
            if mine.is_empty() {
                return None;
            }
            Some(MonitorSummary {
                monitor: m.name().into(),
                rows: mine.len(),
                passes: mine.iter().filter(|r| r.pass).count(),
                first_failure: mine.iter().find(|r| !r.pass).map(|r| r.step),
            })
        })
        .collect()
}

/// Training run with every monitor enabled (unless the config names some) plus
/// `audit_summary.csv`.
pub fn run_lemma_audit(config: &TrainConfig, dir: &Path, overwrite: bool) -> Result<Vec<MonitorSummary>> {
    prepare_output(dir, &[AUDIT_SUMMARY_FILE], overwrite)?;
    let mut config = config.clone();
    if config.monitors.is_empty() {
        config.monitors = Monitor::ALL.to_vec();
    }
    run_train(&config, dir, overwrite)?;
    let summary = summarize_monitors(&read_monitors(&dir.join(MONITOR_FILE))?);
    write_csv(&dir.join(AUDIT_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// One row of the oracle cross-check table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub d: usize,
    pub trials: usize,
    /// Closed form vs enumerated `∇L0` contraction, relative to `max(|exact|, floor)`.
    pub sig_max_rel: f64,
    pub opp_max_rel: f64,
    pub coord_max_rel: f64,
    pub perp_violations: usize,
    /// Largest `|MC − exact|/se` for the signal indicator probability.
    pub mc_max_z: f64,
    /// Largest `|Gaussian − exact|` for the signal indicator probability.
    pub gauss_max_abs: f64,
    /// Fraction of trials with `|Gaussian − exact|` inside the Berry–Esseen bound.
    pub be_within_frac: f64,
}

/// Random neuron with Gaussian weights and output weight.
pub fn random_neuron<R: Rng>(d: usize, r: &mut R) -> Neuron {
    let w: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    Neuron { w, a: r.sample(StandardNormal) }
}

/// Smallest nonzero scale at which contractions are compared: `|a|‖w‖²2^(-(d-2))/4`.
pub fn oracle_floor(n: &Neuron) -> f64 {
    n.a.abs() * linalg::norm_sq(&n.w) * 2f64.powi(-(n.w.len() as i32 - 2)) / 4.0
}

fn rel(x: f64, exact: f64, floor: f64) -> f64 {
    (x - exact).abs() / exact.abs().max(floor)
}

const ORACLE_MC_N: usize = 1 << 14;

/// Compares closed forms, enumeration, Monte Carlo and the Gaussian approximation on
/// `trials` random neurons per dimension.
pub fn oracle_check(ds: &[usize], trials: usize, seed: u64) -> Result<Vec<OracleRow>> {
    for &d in ds {
        if d < 3 {
            return Err(Error::InvalidDimension(d));
        }
        if d - 2 > data::ENUM_CAP {
            return Err(Error::EnumerationTooLarge { noise_dims: d - 2, cap: data::ENUM_CAP });
        }
    }
    if trials == 0 {
        return Ok(Vec::new());
    }
    let mut rows = Vec::with_capacity(ds.len());
    for &d in ds {
        let mut r = rng::stream(seed, Purpose::Aux, d as u64);
        let mut row = OracleRow {
            d,
            trials,
            sig_max_rel: 0.0,
            opp_max_rel: 0.0,
            coord_max_rel: 0.0,
            perp_violations: 0,
            mc_max_z: 0.0,
            gauss_max_abs: 0.0,
            be_within_frac: 0.0,
        };
        let mut within = 0usize;
        for k in 0..trials {
            let n = random_neuron(d, &mut r);
            let dec = decompose(&n);
            let g = grad::l0_grad_population(&n)?;
            let floor = oracle_floor(&n);
            let sig = -linalg::dot(&dec.w_sig, &g.gw);
            row.sig_max_rel = row.sig_max_rel.max(rel(oracle::pop_grad_sig(&n, Backend::Enumerate)?.value, sig, floor));
            let opp = -linalg::dot(&dec.w_opp, &g.gw);
            row.opp_max_rel = row.opp_max_rel.max(rel(oracle::pop_grad_opp(&n, Backend::Enumerate)?.value, opp, floor));
            for i in 2..d {
                let c = -n.w[i] * g.gw[i];
                row.coord_max_rel = row.coord_max_rel.max(rel(oracle::pop_grad_coord(&n, i, Backend::Enumerate)?.value, c, floor));
            }
            if !oracle::pop_grad_perp(&n, Backend::Enumerate)?.respects {
                row.perp_violations += 1;
            }
            let q = |backend| IndicatorProbQuery {
                w: n.w.clone(),
                exclude: None,
                interval: Interval::Abs { hi: SQRT_2 * linalg::norm(&dec.w_sig) },
                backend,
            };
            let exact = oracle::indicator_prob(&q(Backend::Enumerate))?.value;
            let mc = oracle::indicator_prob(&q(Backend::MonteCarlo { n: ORACLE_MC_N, seed: seed ^ k as u64 }))?;
            let se = mc.std_err.unwrap_or(0.0).max(1.0 / ORACLE_MC_N as f64);
            row.mc_max_z = row.mc_max_z.max((mc.value - exact).abs() / se);
            let be = oracle::indicator_prob(&q(Backend::BerryEsseen))?;
            let err = (be.value - exact).abs();
            row.gauss_max_abs = row.gauss_max_abs.max(err);
            if err <= be.bound.unwrap_or(f64::INFINITY) {
                within += 1;
            }
        }
        row.be_within_frac = within as f64 / trials as f64;
        rows.push(row);
    }
    Ok(rows)
}

/// Outcome of a randomized bound suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub trials: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` (upper bounds) or `lhs − rhs` (lower bounds) seen.
    pub worst_margin: f64,
}

/// Berry–Esseen containment `|enumerate − Gaussian| ≤ c_be‖u‖₃³/‖u‖₂³` for random noise
/// weights and random interval events at dimension `d`.
pub fn berry_esseen_suite(d: usize, trials: usize, seed: u64) -> Result<SuiteReport> {
    if d < 3 {
        return Err(Error::InvalidDimension(d));
    }
    let mut r = rng::stream(seed, Purpose::Aux, 1_000 + d as u64);
    let mut rep = SuiteReport { trials, violations: 0, worst_margin: f64::INFINITY };
    for _ in 0..trials {
        let mut w = vec![0.0; d];
        for v in &mut w[2..] {
            // Log-uniform scales spread the Lyapunov ratio.
            let s = (r.random_range(-1.5..1.5f64)).exp();
            *v = s * r.sample::<f64, _>(StandardNormal);
        }
        let s = linalg::norm(&w[2..]);
        let (x, y) = (r.random_range(0.0..3.0) * s, r.random_range(0.0..3.0) * s);
        let interval = match r.random_range(0..3) {
            0 => Interval::Abs { hi: x },
            1 => Interval::AbsBetween { lo: x.min(y), hi: x.max(y) },
            _ => Interval::Signed { lo: x.min(y) - 1.5 * s, hi: x.max(y) - 1.5 * s },
        };
        let q = |backend| IndicatorProbQuery { w: w.clone(), exclude: None, interval, backend };
        let exact = oracle::indicator_prob(&q(Backend::Enumerate))?.value;
        let be = oracle::indicator_prob(&q(Backend::BerryEsseen))?;
        let margin = be.bound.unwrap_or(f64::INFINITY) - (exact - be.value).abs();
        if margin < 0.0 {
            rep.violations += 1;
        }
        rep.worst_margin = rep.worst_margin.min(margin);
    }
    Ok(rep)
}

/// Random-walk anti-concentration `P[|ξᵀu| ≤ C] ≥ 1/(C√ℓ)` for random `u ∈ [-1, 1]^ℓ`,
/// `1 ≤ ℓ ≤ max_len`.
pub fn rw_suite(c: f64, max_len: usize, trials: usize, seed: u64) -> Result<SuiteReport> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("random-walk length must be positive".into()));
    }
    let mut r = rng::stream(seed, Purpose::Aux, 2_000);
    let mut rep = SuiteReport { trials, violations: 0, worst_margin: f64::INFINITY };
    for _ in 0..trials {
        let len = r.random_range(1..=max_len);
        let mut u: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..=1.0)).collect();
        if u.iter().all(|&v| v == 0.0) {
            u[0] = 1.0;
        }
        let chk = oracle::rw_check(&u, c)?;
        if !chk.pass {
            rep.violations += 1;
        }
        rep.worst_margin = rep.worst_margin.min(chk.lhs - chk.rhs);
    }
    Ok(rep)
}

/// Dimension sweep: for each `d`, SGD runs until the population 0-1 error reaches
/// `target_error` or the sample budget `n(d) = budget_factor·d·ln(d)^budget_log_power` is spent.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub ds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub p: usize,
    pub theta: f64,
    pub eta: f64,
    /// Batch size `m = ceil(batch_factor·d)`.
    pub batch_factor: f64,
    pub budget_factor: f64,
    pub budget_log_power: f64,
    pub target_error: f64,
    pub check_every: u64,
    pub eval_samples: usize,
    pub workers: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            ds: vec![64, 128, 256],
            seeds: vec![0],
            p: 256,
            theta: 0.1,
            eta: 0.5,
            batch_factor: 0.25,
            budget_factor: 8.0,
            budget_log_power: 1.0,
            target_error: 0.05,
            check_every: 5,
            eval_samples: 20_000,
            workers: 1,
        }
    }
}

fn parse_list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_val(s.trim(), key)).collect()
}

impl SweepSpec {
    /// Parses `key = value` text; list keys (`ds`, `seeds`) are comma separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = SweepSpec::default();
        let mut seen: Vec<String> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(&format!("line {}", n + 1), "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.iter().any(|e| e == k) {
                return Err(Error::config(k, "given more than once"));
            }
            seen.push(k.to_string());
            match k {
                "ds" => s.ds = parse_list(v, k)?,
                "seeds" => s.seeds = parse_list(v, k)?,
                "p" => s.p = parse_val(v, k)?,
                "theta" => s.theta = parse_val(v, k)?,
                "eta" => s.eta = parse_val(v, k)?,
                "batch_factor" => s.batch_factor = parse_val(v, k)?,
                "budget_factor" => s.budget_factor = parse_val(v, k)?,
                "budget_log_power" => s.budget_log_power = parse_val(v, k)?,
                "target_error" => s.target_error = parse_val(v, k)?,
                "check_every" => s.check_every = parse_val(v, k)?,
                "eval_samples" => s.eval_samples = parse_val(v, k)?,
                "workers" => s.workers = parse_val(v, k)?,
                other => return Err(Error::config(other, "unknown key")),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&d) = self.ds.iter().find(|&&d| d < 3) {
            return Err(Error::config("ds", format!("dimension {d} is below 3")));
        }
        if self.check_every == 0 {
            return Err(Error::config("check_every", "must be at least 1"));
        }
        if !(self.batch_factor > 0.0) {
            return Err(Error::config("batch_factor", "must be positive"));
        }
        if !(self.budget_factor > 0.0) {
            return Err(Error::config("budget_factor", "must be positive"));
        }
        if !(self.target_error >= 0.0) {
            return Err(Error::config("target_error", "must be nonnegative"));
        }
        if self.eval_samples == 0 {
            return Err(Error::config("eval_samples", "must be positive"));
        }
        Ok(())
    }

    pub fn budget(&self, d: usize) -> u64 {
        let df = d as f64;
        (self.budget_factor * df * df.ln().powf(self.budget_log_power)).ceil() as u64
    }

    pub fn batch(&self, d: usize) -> usize {
        (self.batch_factor * d as f64).ceil().max(1.0) as usize
    }

    /// Training config of one grid point.
    pub fn train_config(&self, d: usize, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(d, self.p, self.theta);
        c.eta = self.eta;
        c.m = self.batch(d);
        c.t_max = self.budget(d).div_ceil(c.m as u64);
        c.seed = seed;
        c.stop_b_min = None;
        c.log_every = c.t_max.max(1);
        c.workers = self.workers;
        c.eval_samples = self.eval_samples;
        c
    }
}

/// One `(d, seed)` grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub d: usize,
    pub seed: u64,
    pub m: usize,
    pub budget: u64,
    /// Samples drawn when the target was first met, else the samples drawn in total.
    pub n_total: u64,
    pub steps: u64,
    pub error: f64,
    pub loss: f64,
    pub reached: bool,
    pub wall_secs: f64,
    pub failure: String,
}

struct TargetObserver {
    every: u64,
    target: f64,
    mode: EvalMode,
    hit: Option<(u64, PopulationEval)>,
}

impl trainer::Observer for TargetObserver {
    fn on_step(&mut self, e: &StepEvent<'_>) -> Result<()> {
        let t = e.step + 1;
        if self.hit.is_none() && t % self.every == 0 {
            let ev = e.after.population_eval(self.mode)?;
            if ev.error <= self.target {
                self.hit = Some((t, ev));
            }
        }
        Ok(())
    }

    fn should_stop(&self) -> bool {
        self.hit.is_some()
    }
}

/// Trains one grid point; errors are recorded in the row.
pub fn sweep_point(spec: &SweepSpec, d: usize, seed: u64) -> SweepRow {
    let start = Instant::now();
    let config = spec.train_config(d, seed);
    let mode = EvalMode::MonteCarlo { n: spec.eval_samples, seed };
    let mut row = SweepRow {
        d,
        seed,
        m: config.m,
        budget: spec.budget(d),
        n_total: 0,
        steps: 0,
        error: f64::NAN,
        loss: f64::NAN,
        reached: false,
        wall_secs: 0.0,
        failure: String::new(),
    };
    let mut obs = TargetObserver { every: spec.check_every, target: spec.target_error, mode, hit: None };
    let result = trainer::train(&config, &mut obs).and_then(|out| match obs.hit.take() {
        Some((t, ev)) => Ok((t, ev, true)),
        None => out.net.population_eval(mode).map(|ev| {
            let reached = ev.error <= spec.target_error;
            (out.steps, ev, reached)
        }),
    });
    match result {
        Ok((t, ev, reached)) => {
            row.steps = t;
            row.n_total = t * config.m as u64;
            row.error = ev.error;
            row.loss = ev.loss;
            row.reached = reached;
        }
        Err(e) => row.failure = e.to_string(),
    }
    row.wall_secs = start.elapsed().as_secs_f64();
    row
}

/// Runs every `(d, seed)` grid point in order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &d in &spec.ds {
        for &seed in &spec.seeds {
            rows.push(sweep_point(spec, d, seed));
        }
    }
    Ok(rows)
}

/// Least-squares fit of `ln n = intercept + slope·ln d` with a two-sided 95% band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; NaN with two points.
    pub slope_se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fits the successful rows of a sweep; `None` with fewer than two distinct dimensions.
pub fn fit_slope(rows: &[SweepRow]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.reached && r.failure.is_empty() && r.n_total > 0)
        .map(|r| ((r.d as f64).ln(), (r.n_total as f64).ln()))
        .collect();
    fit_line(&pts)
}

pub fn fit_line(pts: &[(f64, f64)]) -> Option<SlopeFit> {
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_se, half) = if n > 2 {
        let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        let se = (rss / (nf - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, nf - 2.0).ok()?.inverse_cdf(0.975);
        (se, t * se)
    } else {
        (f64::NAN, f64::NAN)
    };
    Some(SlopeFit { points: n, slope, intercept, slope_se, ci_low: slope - half, ci_high: slope + half })
}

/// One row of the Gram-baseline table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramRow {
    pub d: usize,
    pub n: usize,
    pub n_test: usize,
    pub lambda: f64,
    pub test_error: f64,
    pub retries: u32,
    pub best: bool,
}

/// Flattens baseline reports into table rows.
pub fn gram_rows(reports: &[crate::baseline::BaselineReport]) -> Vec<GramRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.per_lambda.iter().map(move |l| GramRow {
                d: r.d,
                n: r.n,
                n_test: r.n_test,
                lambda: l.lambda,
                test_error: l.test_error,
                retries: l.retries,
                best: l.lambda == r.best_lambda,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prepare_refuses_to_clobber() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x").unwrap();
        assert!(matches!(prepare_output(dir.path(), &["a.csv"], false), Err(Error::WouldClobber(_))));
        prepare_output(dir.path(), &["a.csv"], true).unwrap();
        prepare_output(&dir.path().join("new"), &["a.csv"], false).unwrap();
    }

    #[test]
    fn oracle_check_small() {
        assert!(oracle_check(&[6, 8], 0, 1).unwrap().is_empty());
        let rows = oracle_check(&[6, 8], 5, 1).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.sig_max_rel <= 1e-10 && r.opp_max_rel <= 1e-10 && r.coord_max_rel <= 1e-10, "{r:?}");
            assert_eq!(r.perp_violations, 0);
        }
        assert!(matches!(oracle_check(&[40], 1, 1), Err(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn suites_small() {
        let be = berry_esseen_suite(12, 20, 3).unwrap();
        assert_eq!(be.violations, 0);
        let rw = rw_suite(32.0, 10, 20, 3).unwrap();
        assert_eq!(rw.violations, 0);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x| (x, 0.5 + 1.5 * x)).collect();
        let f = fit_line(&pts).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12 && (f.intercept - 0.5).abs() < 1e-12);
        assert!(f.slope_se < 1e-12);
        let noisy = [(0.0, 0.1), (1.0, 0.9), (2.0, 2.2), (3.0, 2.9)];
        let f = fit_line(&noisy).unwrap();
        assert!(f.ci_low < f.slope && f.slope < f.ci_high);
        assert!(fit_line(&[(1.0, 1.0)]).is_none());
        let two = fit_line(&[(1.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(two.slope, 2.0);
        assert!(two.slope_se.is_nan());
    }

    #[test]
    fn sweep_spec_parse() {
        let s = SweepSpec::parse("ds = 16, 32\nseeds = 4\ntarget_error = 0.1\n").unwrap();
        assert_eq!(s.ds, vec![16, 32]);
        assert_eq!(s.seeds, vec![4]);
        assert!(SweepSpec::parse("ds =\n").unwrap().ds.is_empty());
        assert!(matches!(SweepSpec::parse("nope = 1"), Err(Error::InvalidConfig { .. })));
        assert!(sweep(&SweepSpec { ds: vec![], ..SweepSpec::default() }).unwrap().is_empty());
    }

    #[test]
    fn phase2_clock_inflates_after_end() {
        let p = Phase2Params { zeta_t1: 0.1, h: 0.5, eta: 0.2 };
        let mut c = Phase2Clock::new(p);
        let zero = Network::from_neurons(8, &[Neuron { w: vec![0.0; 8], a: 0.0 }]).unwrap();
        assert_eq!(c.observe(0, &zero), 0.1);
        assert_eq!(c.end(), None);
        c.end = Some(1);
        let z = c.observe(2, &zero);
        assert_eq!(z, p.zeta_after(1));
    }

    #[test]
    fn run_train_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = TrainConfig::new(10, 16, 0.5);
        c.m = 64;
        c.t_max = 12;
        c.log_every = 5;
        c.monitors = Monitor::CHEAP.to_vec();
        c.monitor_every = 4;
        c.checkpoint_every = 6;
        let (out, s) = run_train(&c, dir.path(), false).unwrap();
        assert_eq!(s.steps, out.steps);
        for f in [CONFIG_FILE, TRAJECTORY_FILE, MONITOR_FILE, FINAL_CHECKPOINT, EVAL_FILE, "checkpoint_6.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = std::fs::read_to_string(dir.path().join(TRAJECTORY_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 1 + out.records.len());
        let mons = read_monitors(&dir.path().join(MONITOR_FILE)).unwrap();
        assert_eq!(mons.len(), 3 * Monitor::CHEAP.len());
        assert!(matches!(run_train(&c, dir.path(), false), Err(Error::WouldClobber(_))));
        run_train(&c, dir.path(), true).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join(TRAJECTORY_FILE)).unwrap(), csv);
    }
}
