//! Online minibatch SGD with trajectory records and per-step observer hooks.

use crate::config::TrainConfig;
use crate::data::{Batch, Cluster, DataStream};
use crate::error::{Error, Result};
use crate::grad::{self, Variant};
use crate::network::{init_network, Network};
use crate::phase::{self, ClassCounts, MarginStats, NeuronStats, ReferenceState};
use crate::schedule::ControlSchedule;

/// One simultaneous update `w ← w − η∇_w L̂`, `a ← a − η∇_a L̂` from the pre-step network.
pub fn sgd_step(net: &Network, batch: &Batch, eta: f64, step: u64) -> Result<Network> {
    let g = grad::batch_grads(net, batch, Variant::Full)?;
    for j in 0..net.p {
        if !g.ga[j].is_finite() || g.gw_row(j).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step, neuron: j });
        }
    }
    let mut next = net.clone();
    for (w, gw) in next.w.iter_mut().zip(&g.gw) {
        *w -= eta * gw;
    }
    for (a, ga) in next.a.iter_mut().zip(&g.ga) {
        *a -= eta * ga;
    }
    Ok(next)
}

/// State handed to observers after each step.
pub struct StepEvent<'a> {
    /// Index of the pre-step state.
    pub step: u64,
    pub before: &'a Network,
    pub after: &'a Network,
    pub batch: &'a Batch,
}

pub trait Observer {
    fn on_step(&mut self, _event: &StepEvent<'_>) -> Result<()> {
        Ok(())
    }

    fn on_record(&mut self, _record: &TrajectoryRecord, _net: &Network) -> Result<()> {
        Ok(())
    }

    /// Called with the pre-step network when a step fails.
    fn on_abort(&mut self, _step: u64, _net: &Network, _error: &Error) {}

    /// Checked after every step; `true` ends the run.
    fn should_stop(&self) -> bool {
        false
    }
}

impl Observer for () {}

/// Summary of the network at one logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub neurons: Vec<NeuronStats>,
    /// Margins over the heavy set for `(ζ_T1, H)`.
    pub margins: MarginStats,
    pub heavy_count: usize,
    pub counts: ClassCounts,
    pub mean_w2: f64,
    pub mean_a2: f64,
    /// `max_j (|a_j| − ‖w_j‖)`.
    pub max_a_excess: f64,
    /// 10%, 50% and 90% quantiles of `ln(‖w_sig‖/‖w_perp‖)`.
    pub log_ratio_q: [f64; 3],
}

/// CSV columns of the trajectory file, in order.
pub fn trajectory_columns() -> Vec<String> {
    let mut cols: Vec<String> = vec!["step".into()];
    for prefix in ["b", "h", "g"] {
        for c in Cluster::ALL {
            cols.push(format!("{prefix}_{}", c.name()));
        }
    }
    for c in [
        "b_min",
        "b_max",
        "h_min",
        "h_max",
        "g_min",
        "g_max",
        "h_rho",
        "heavy_count",
        "controlled",
        "weakly_controlled",
        "strong",
        "mean_w2",
        "mean_a2",
        "max_a_excess",
        "log_ratio_q10",
        "log_ratio_q50",
        "log_ratio_q90",
    ] {
        cols.push(c.into());
    }
    cols
}

impl TrajectoryRecord {
    pub fn csv_row(&self) -> String {
        let m = &self.margins;
        let mut v: Vec<String> = vec![self.step.to_string()];
        for arr in [&m.b, &m.h, &m.g] {
            v.extend(arr.iter().map(|x| x.to_string()));
        }
        for x in [m.b_min, m.b_max, m.h_min, m.h_max, m.g_min, m.g_max, m.h_rho] {
            v.push(x.to_string());
        }
        for n in [self.heavy_count, self.counts.controlled, self.counts.weakly_controlled, self.counts.strong] {
            v.push(n.to_string());
        }
        for x in [self.mean_w2, self.mean_a2, self.max_a_excess] {
            v.push(x.to_string());
        }
        v.extend(self.log_ratio_q.iter().map(|x| x.to_string()));
        v.join(",")
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted[((sorted.len() - 1) as f64 * q).floor() as usize]
}

/// Context needed to summarize a network into a [`TrajectoryRecord`].
pub struct Recorder {
    pub schedule: ControlSchedule,
    pub reference: ReferenceState,
    pub zeta: f64,
    pub h: f64,
}

impl Recorder {
    pub fn new(config: &TrainConfig, initial: &Network) -> Result<Self> {
        let schedule = ControlSchedule::new(config.schedule_params())?;
        let reference = ReferenceState::capture(initial, config.c_ws);
        let p2 = config.phase2();
        Ok(Recorder { schedule, reference, zeta: p2.zeta_t1, h: p2.h })
    }

    pub fn record(&mut self, step: u64, net: &Network) -> TrajectoryRecord {
        let neurons = phase::network_stats(net);
        let heavy = phase::heavy_set(net, self.zeta, self.h);
        let margins = phase::margins(net, &heavy);
        let v = self.schedule.at(step);
        let classes = phase::classify_network(net, &self.schedule, &v, &self.reference);
        let pf = net.p as f64;
        let mean_w2 = neurons.iter().map(|s| s.norm * s.norm).sum::<f64>() / pf;
        let mean_a2 = neurons.iter().map(|s| s.a * s.a).sum::<f64>() / pf;
        let max_a_excess = neurons.iter().map(|s| s.a.abs() - s.norm).fold(f64::NEG_INFINITY, f64::max);
        let mut ratios: Vec<f64> = neurons.iter().map(|s| (s.sig / s.perp).ln()).filter(|x| !x.is_nan()).collect();
        ratios.sort_by(f64::total_cmp);
        TrajectoryRecord {
            step,
            heavy_count: heavy.iter().filter(|&&x| x).count(),
            margins,
            counts: phase::count_classes(&classes),
            mean_w2,
            mean_a2,
            max_a_excess,
            log_ratio_q: [quantile(&ratios, 0.1), quantile(&ratios, 0.5), quantile(&ratios, 0.9)],
            neurons,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MarginTarget,
    StepCap,
    Observer,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: Network,
    pub records: Vec<TrajectoryRecord>,
    pub steps: u64,
    pub stop: StopReason,
}

fn reached(net: &Network, target: Option<f64>) -> bool {
    target.is_some_and(|b| net.center_margins().iter().all(|&x| x >= b))
}

/// Runs online SGD inside a pool of `config.workers` threads.
pub fn train(config: &TrainConfig, observer: &mut (dyn Observer + Send)) -> Result<TrainOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| train_in_pool(config, observer))
}

fn train_in_pool(config: &TrainConfig, observer: &mut (dyn Observer + Send)) -> Result<TrainOutput> {
    let mut net = init_network(config.d, config.p, config.init_radius(), config.seed)?;
    let mut recorder = Recorder::new(config, &net)?;
    let mut stream = DataStream::new(config.seed, config.d, config.m)?;
    let mut records = Vec::new();
    let first = recorder.record(0, &net);
    observer.on_record(&first, &net)?;
    records.push(first);
    let mut t = 0u64;
    let mut stop = StopReason::StepCap;
    while t < config.t_max {
        if reached(&net, config.stop_b_min) {
            stop = StopReason::MarginTarget;
            break;
        }
        let batch = stream.next_batch();
        let next = match sgd_step(&net, &batch, config.eta, t) {
            Ok(n) => n,
            Err(e) => {
                observer.on_abort(t, &net, &e);
                return Err(e);
            }
        };
        observer.on_step(&StepEvent { step: t, before: &net, after: &next, batch: &batch })?;
        net = next;
        t += 1;
        if t % config.log_every == 0 {
            let r = recorder.record(t, &net);
            observer.on_record(&r, &net)?;
            records.push(r);
        }
        if observer.should_stop() {
            stop = StopReason::Observer;
            break;
        }
    }
    if stop == StopReason::StepCap && reached(&net, config.stop_b_min) {
        stop = StopReason::MarginTarget;
    }
    if records.last().map(|r| r.step) != Some(t) {
        let r = recorder.record(t, &net);
        observer.on_record(&r, &net)?;
        records.push(r);
    }
    Ok(TrainOutput { net, records, steps: t, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Neuron;

    fn small() -> TrainConfig {
        let mut c = TrainConfig::new(16, 24, 0.5);
        c.m = 128;
        c.t_max = 25;
        c.log_every = 10;
        c.seed = 3;
        c
    }

    #[test]
    fn zero_step_size_is_identity() {
        let net = init_network(12, 8, 0.4, 1).unwrap();
        let mut r = crate::rng::stream(1, crate::rng::Purpose::Data, 0);
        let batch = Batch::sample(12, 64, &mut r).unwrap();
        assert_eq!(sgd_step(&net, &batch, 0.0, 0).unwrap(), net);
    }

    #[test]
    fn inactive_batch_leaves_network_unchanged() {
        let mut w = vec![0.0; 4];
        w[2] = -1.0;
        let net = Network::from_neurons(4, &[Neuron { w, a: 0.3 }]).unwrap();
        let rows: Vec<f64> = [[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 1.0, -1.0]].concat();
        let batch = Batch::from_rows(4, rows).unwrap();
        assert_eq!(sgd_step(&net, &batch, 0.5, 0).unwrap(), net);
    }

    #[test]
    fn mirror_pair_moves_symmetrically() {
        let w = vec![0.3, -0.2, 0.5, 0.1, -0.4];
        let net = Network::from_neurons(5, &[Neuron { w: w.clone(), a: 0.6 }, Neuron { w: w.clone(), a: -0.6 }]).unwrap();
        let mut r = crate::rng::stream(4, crate::rng::Purpose::Data, 0);
        let batch = Batch::sample(5, 64, &mut r).unwrap();
        for i in 0..batch.len() {
            assert_eq!(net.forward(batch.row(i)).unwrap(), 0.0);
        }
        let full = grad::batch_grads(&net, &batch, Variant::Full).unwrap();
        let l0 = grad::batch_grads(&net, &batch, Variant::L0).unwrap();
        assert_eq!(full, l0);
        let next = sgd_step(&net, &batch, 0.1, 0).unwrap();
        for k in 0..5 {
            assert!((next.w_row(0)[k] + next.w_row(1)[k] - 2.0 * w[k]).abs() < 1e-15);
        }
        assert!((next.a[0] - next.a[1] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let net = Network::from_neurons(3, &[Neuron { w: vec![f64::INFINITY, 0.0, 0.0], a: 1.0 }]).unwrap();
        let batch = Batch::from_rows(3, vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(sgd_step(&net, &batch, 0.1, 7), Err(Error::NonFinite { step: 7, .. })));
    }

    #[test]
    fn zero_step_cap_returns_initial_network() {
        let mut c = small();
        c.t_max = 0;
        let out = train(&c, &mut ()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.net, init_network(c.d, c.p, c.theta_init, c.seed).unwrap());
    }

    #[test]
    fn records_every_log_step_and_final() {
        let c = small();
        let out = train(&c, &mut ()).unwrap();
        let steps: Vec<u64> = out.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(out.records[0].csv_row().split(',').count(), trajectory_columns().len());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut c = small();
        let a = train(&c, &mut ()).unwrap();
        c.workers = 3;
        let b = train(&c, &mut ()).unwrap();
        assert_eq!(a.net, b.net);
    }

    struct Balance(Vec<f64>);

    impl Observer for Balance {
        fn on_step(&mut self, e: &StepEvent<'_>) -> Result<()> {
            for j in 0..e.after.p {
                self.0.push(e.after.a[j].abs() - crate::linalg::norm(e.after.w_row(j)));
            }
            Ok(())
        }
    }

    #[test]
    fn output_weights_stay_below_first_layer_norms() {
        let mut obs = Balance(Vec::new());
        train(&small(), &mut obs).unwrap();
        assert!(obs.0.iter().all(|&x| x <= 1e-10));
    }
}
