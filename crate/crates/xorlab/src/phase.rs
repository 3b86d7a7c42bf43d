//! Neuron decomposition, Phase-1 classification, heavy-set margins and the signal-heavy
//! certificate.

use crate::data::Cluster;
use crate::error::Result;
use crate::linalg::{self, relu};
use crate::network::{self, Network, Neuron};
use crate::oracle::{self, Check};
use crate::schedule::{ControlSchedule, ScheduleValues};

/// `w = w_sig + w_opp + w_perp`, each embedded in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub w_sig: Vec<f64>,
    pub w_opp: Vec<f64>,
    pub w_perp: Vec<f64>,
}

fn signal_parts(w0: f64, w1: f64, a: f64) -> ([f64; 2], [f64; 2]) {
    let along1 = 0.5 * (w0 - w1);
    let along2 = 0.5 * (w0 + w1);
    let p1 = [along1, -along1];
    let p2 = [along2, along2];
    if a >= 0.0 {
        (p1, p2)
    } else {
        (p2, p1)
    }
}

/// `w_sig = ½μ1μ1ᵀw` when `a ≥ 0` and `½μ2μ2ᵀw` otherwise.
pub fn decompose(neuron: &Neuron) -> Decomposition {
    let w = &neuron.w;
    let d = w.len();
    let (sig, opp) = signal_parts(w[0], w[1], neuron.a);
    let mut w_sig = vec![0.0; d];
    let mut w_opp = vec![0.0; d];
    let mut w_perp = w.clone();
    w_sig[..2].copy_from_slice(&sig);
    w_opp[..2].copy_from_slice(&opp);
    w_perp[0] = 0.0;
    w_perp[1] = 0.0;
    Decomposition { w_sig, w_opp, w_perp }
}

/// Norm summary of one neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronStats {
    pub sig: f64,
    pub opp: f64,
    pub perp: f64,
    pub perp_inf: f64,
    pub norm: f64,
    pub a: f64,
    pub sig_vec: [f64; 2],
}

impl NeuronStats {
    pub fn of(w: &[f64], a: f64) -> Self {
        let (sig, opp) = signal_parts(w[0], w[1], a);
        let perp2 = linalg::norm_sq(&w[2..]);
        NeuronStats {
            sig: (sig[0] * sig[0] + sig[1] * sig[1]).sqrt(),
            opp: (opp[0] * opp[0] + opp[1] * opp[1]).sqrt(),
            perp: perp2.sqrt(),
            perp_inf: linalg::norm_inf(&w[2..]),
            norm: linalg::norm(w),
            a,
            sig_vec: sig,
        }
    }
}

pub fn network_stats(net: &Network) -> Vec<NeuronStats> {
    (0..net.p).map(|j| NeuronStats::of(net.w_row(j), net.a[j])).collect()
}

/// Step-0 state used by C4 and the strong-neuron sign test.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronReference {
    pub w_perp0: Vec<f64>,
    pub sig0: [f64; 2],
    pub well_spread: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceState {
    pub neurons: Vec<NeuronReference>,
}

impl ReferenceState {
    /// Captures `w_perp⁰`, `w_sig⁰` and whether `w_perp⁰` is `c_ws`-well-spread on the noise
    /// coordinates.
    pub fn capture(net: &Network, c_ws: f64) -> Self {
        let neurons = (0..net.p)
            .map(|j| {
                let w = net.w_row(j);
                let perp = w[2..].to_vec();
                let well_spread = oracle::well_spread_check(&perp, c_ws).map(|r| r.pass).unwrap_or(false);
                NeuronReference { w_perp0: perp, sig0: signal_parts(w[0], w[1], net.a[j]).0, well_spread }
            })
            .collect();
        ReferenceState { neurons }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NeuronClass {
    pub c: [bool; 5],
    pub w: [bool; 5],
    pub controlled: bool,
    pub weakly_controlled: bool,
    pub strong: bool,
}

/// Relative widening of the C3 band so that `|a| = ‖w‖ = θ` at step 0 survives rounding.
pub const A_ROUNDING: f64 = 1e-12;

/// Evaluates C1-C5, W1-W5 and the strong condition with closed inequalities.
pub fn classify(
    w: &[f64],
    a: f64,
    schedule: &ControlSchedule,
    v: &ScheduleValues,
    reference: &NeuronReference,
) -> NeuronClass {
    let st = NeuronStats::of(w, a);
    let p = &schedule.params;
    let (theta, eta) = (p.theta, p.eta);
    let ln_zeta = schedule.ln_zeta;
    let zeta = schedule.zeta;
    let t = v.t;
    let tf = t as f64;
    let ln_theta = theta.ln();
    let b2 = v.b2();
    let q2 = v.q2();
    let sig2 = st.sig * st.sig;
    let opp2 = st.opp * st.opp;
    let perp2 = st.perp * st.perp;
    let ln = |x: f64| x.ln();

    let mut c = [false; 5];
    c[0] = ln(sig2) <= v.ln_b2.min(2.0 * (ln_theta + ln_zeta));
    c[1] = opp2 <= q2 + theta * b2;
    let spread = tf * eta * zeta + A_ROUNDING;
    c[2] = theta * (1.0 - spread) <= a.abs() && a.abs() <= theta * (1.0 + spread) && a.abs() <= st.norm;
    let drift: f64 = w[2..].iter().zip(&reference.w_perp0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    c[3] = drift <= theta * zeta.powf(0.25) * eta * tf && reference.well_spread;
    c[4] = st.perp_inf * st.perp_inf <= q2 + theta * b2;
    let controlled = t <= schedule.t1b && c.iter().all(|&x| x);

    let mut wk = [false; 5];
    wk[0] = 2.0 * (ln_theta + ln_zeta) <= ln(sig2) && ln(sig2) <= v.ln_b2 && v.ln_b2 <= 2.0 * ln_theta - 600.0 * ln_zeta;
    let grow = tf * (3.0 * eta * zeta).ln_1p();
    let ln_w2_rhs = 2f64.ln() + ln_theta + v.ln_b2 + grow;
    wk[1] = ln(opp2) <= ln_w2_rhs && ln_w2_rhs <= 4f64.ln() + 2.0 * (ln_theta + ln_zeta);
    let a2 = a * a;
    let w2 = st.norm * st.norm;
    let tail = if t <= schedule.t1a {
        0.0
    } else {
        ((8.0 * eta * eta * (t - schedule.t1a) as f64).ln() + 2.0 * ln_theta - 600.0 * ln_zeta).exp()
    };
    wk[2] = w2 >= a2 && a2 >= w2 - zeta.sqrt() * theta * theta - tail;
    let ln_w4_rhs = 2f64.ln() + 2.0 * ln_theta + grow;
    wk[3] = ln(perp2) <= ln_w4_rhs && ln_w4_rhs <= 3f64.ln() + 2.0 * ln_theta;
    wk[4] = st.perp <= st.sig || (ln(st.perp_inf) <= v.ln_m && v.ln_m <= 1000.0 * ln_zeta + ln(st.perp));
    let weakly_controlled = schedule.t1a <= t && t <= schedule.t1b && wk.iter().all(|&x| x);

    let aligned = st.sig_vec[0] * reference.sig0[0] + st.sig_vec[1] * reference.sig0[1] > 0.0;
    let strong = (controlled || weakly_controlled) && aligned && ln(sig2) >= v.ln_s2;
    NeuronClass { c, w: wk, controlled, weakly_controlled, strong }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub controlled: usize,
    pub weakly_controlled: usize,
    pub strong: usize,
}

pub fn classify_network(
    net: &Network,
    schedule: &ControlSchedule,
    v: &ScheduleValues,
    reference: &ReferenceState,
) -> Vec<NeuronClass> {
    (0..net.p).map(|j| classify(net.w_row(j), net.a[j], schedule, v, &reference.neurons[j])).collect()
}

pub fn count_classes(classes: &[NeuronClass]) -> ClassCounts {
    let mut out = ClassCounts::default();
    for c in classes {
        out.controlled += c.controlled as usize;
        out.weakly_controlled += c.weakly_controlled as usize;
        out.strong += c.strong as usize;
    }
    out
}

/// Heavy margins `h_μ`, center margins `b_μ`, loss-derivative magnitudes `g_μ` and `H_ρ`,
/// all in [`Cluster::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginStats {
    pub h: [f64; 4],
    pub h_min: f64,
    pub h_max: f64,
    pub b: [f64; 4],
    pub b_min: f64,
    pub b_max: f64,
    pub g: [f64; 4],
    pub g_min: f64,
    pub g_max: f64,
    pub h_rho: f64,
}

fn min4(v: &[f64; 4]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max4(v: &[f64; 4]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `g = |ℓ'| = 2·exp(-b)/(1 + exp(-b))`.
pub fn loss_slope(b: f64) -> f64 {
    2.0 * network::sigmoid(-b)
}

/// `h_μ = y(μ)·(1/p)Σ_{j∈S_μ} a_j σ(w_jᵀμ)` with `S_μ = S ∩ {w_sigᵀμ > 0}`.
pub fn margins(net: &Network, heavy: &[bool]) -> MarginStats {
    let mut h = [0.0; 4];
    for c in Cluster::ALL {
        let mu = c.signal();
        let mut acc = 0.0;
        for j in 0..net.p {
            if !heavy[j] {
                continue;
            }
            let w = net.w_row(j);
            let (sig, _) = signal_parts(w[0], w[1], net.a[j]);
            if sig[0] * mu[0] + sig[1] * mu[1] > 0.0 {
                acc += net.a[j] * relu(w[0] * mu[0] + w[1] * mu[1]);
            }
        }
        h[c.index()] = c.label() * acc / net.p as f64;
    }
    let b = net.center_margins();
    let g = b.map(loss_slope);
    MarginStats {
        h,
        h_min: min4(&h),
        h_max: max4(&h),
        b,
        b_min: min4(&b),
        b_max: max4(&b),
        g,
        g_min: min4(&g),
        g_max: max4(&g),
        h_rho: net.mass(),
    }
}

/// Result of testing the `(ζ, H)` signal-heavy conditions against the maximal heavy set.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeavyCert {
    pub zeta: f64,
    pub h: f64,
    pub slack: f64,
    pub heavy: Vec<bool>,
    pub heavy_count: usize,
    pub margins: MarginStats,
    /// `E[1(w∉S)‖w‖²] ≤ ζ·h_min`.
    pub outside: Check,
    /// `E‖w‖² ≤ E a² + ζH`.
    pub energy: Check,
    /// `E a² + ζH ≤ 2H`.
    pub budget: Check,
    /// `max_j (|a_j| - ‖w_j‖) ≤ 1e-10`.
    pub balance: Check,
    pub mean_w2: f64,
    pub mean_a2: f64,
    /// `ζ ∈ (0, 1)`, `H > 1` and `ζ ≤ exp(-10H)`.
    pub params_valid: bool,
    pub pass: bool,
}

/// `S = {w : exp(6H)‖w_perp‖ + ‖w_opp‖ ≤ ζ‖w_sig‖}`.
pub fn heavy_set(net: &Network, zeta: f64, h: f64) -> Vec<bool> {
    let e = (6.0 * h).exp();
    (0..net.p)
        .map(|j| {
            let st = NeuronStats::of(net.w_row(j), net.a[j]);
            e * st.perp + st.opp <= zeta * st.sig
        })
        .collect()
}

/// The signal-heavy certificate; `slack` multiplies the right-hand side of each inequality.
pub fn signal_heavy_check(net: &Network, zeta: f64, h: f64, slack: f64) -> Result<SignalHeavyCert> {
    if !(slack > 0.0) {
        return Err(crate::Error::InvalidArgument(format!("slack must be positive, got {slack}")));
    }
    let heavy = heavy_set(net, zeta, h);
    let margins = margins(net, &heavy);
    let pf = net.p as f64;
    let mut outside = 0.0;
    let mut w2 = 0.0;
    let mut a2 = 0.0;
    let mut excess = f64::NEG_INFINITY;
    for j in 0..net.p {
        let n2 = linalg::norm_sq(net.w_row(j));
        if !heavy[j] {
            outside += n2;
        }
        w2 += n2;
        a2 += net.a[j] * net.a[j];
        excess = excess.max(net.a[j].abs() - n2.sqrt());
    }
    let (outside, mean_w2, mean_a2) = (outside / pf, w2 / pf, a2 / pf);
    let outside = Check::le(outside, slack * zeta * margins.h_min);
    let energy = Check::le(mean_w2, slack * (mean_a2 + zeta * h));
    let budget = Check::le(mean_a2 + zeta * h, slack * 2.0 * h);
    let balance = Check::le(excess, 1e-10);
    let params_valid = zeta > 0.0 && zeta < 1.0 && h > 1.0 && zeta <= (-10.0 * h).exp();
    let pass = outside.pass && energy.pass && budget.pass && balance.pass;
    Ok(SignalHeavyCert {
        zeta,
        h,
        slack,
        heavy_count: heavy.iter().filter(|&&x| x).count(),
        heavy,
        margins,
        outside,
        energy,
        budget,
        balance,
        mean_w2,
        mean_a2,
        params_valid,
        pass,
    })
}

/// End-of-Phase-1 test: every `S_μ` is nonempty and `E[1(w∉S)‖w‖²] ≤ ζ·h_min`.
pub fn phase1_complete(net: &Network, zeta: f64, h: f64) -> bool {
    let heavy = heavy_set(net, zeta, h);
    let m = margins(net, &heavy);
    if m.h.iter().any(|&x| x <= 0.0) {
        return false;
    }
    let outside = (0..net.p).filter(|&j| !heavy[j]).map(|j| linalg::norm_sq(net.w_row(j))).sum::<f64>() / net.p as f64;
    outside <= zeta * m.h_min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_network;
    use crate::schedule::ScheduleParams;

    fn n(w: Vec<f64>, a: f64) -> Neuron {
        Neuron { w, a }
    }

    #[test]
    fn decompose_examples() {
        let d = decompose(&n(vec![1.0, -1.0, 0.0, 0.0], 0.5));
        assert_eq!(d.w_sig, vec![1.0, -1.0, 0.0, 0.0]);
        assert_eq!(d.w_opp, vec![0.0; 4]);
        assert_eq!(d.w_perp, vec![0.0; 4]);
        let d = decompose(&n(vec![1.0, 0.0, 0.0], 1.0));
        assert_eq!(d.w_sig, vec![0.5, -0.5, 0.0]);
        assert_eq!(d.w_opp, vec![0.5, 0.5, 0.0]);
        for a in [-1.0, 0.0, 2.0] {
            let d = decompose(&n(vec![0.0, 0.0, 1.0], a));
            assert_eq!(d.w_sig, vec![0.0; 3]);
            assert_eq!(d.w_opp, vec![0.0; 3]);
            assert_eq!(d.w_perp, vec![0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn sign_flip_swaps_sig_and_opp() {
        let w = vec![0.3, -0.8, 0.1, 0.2];
        let p = decompose(&n(w.clone(), 0.4));
        let q = decompose(&n(w, -0.4));
        assert_eq!(p.w_sig, q.w_opp);
        assert_eq!(p.w_opp, q.w_sig);
    }

    #[test]
    fn margin_examples() {
        let net = Network::from_neurons(3, &[n(vec![1.0, -1.0, 0.0], 1.0)]).unwrap();
        let m = margins(&net, &[true]);
        assert_eq!(m.h, [2.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.b[0], 2.0);
        assert!((loss_slope(2.0) - 2.0 * (-2f64).exp() / (1.0 + (-2f64).exp())).abs() < 1e-15);
        assert!((loss_slope(2.0) - 0.2384).abs() < 1e-4);
        let zero = Network::from_neurons(3, &[n(vec![0.0; 3], 0.0)]).unwrap();
        let m = margins(&zero, &[true]);
        assert_eq!(m.b, [0.0; 4]);
        assert_eq!(m.g, [1.0; 4]);
    }

    #[test]
    fn negative_output_weight_gives_positive_heavy_margin() {
        let net = Network::from_neurons(3, &[n(vec![1.0, 1.0, 0.0], -1.0)]).unwrap();
        let m = margins(&net, &[true]);
        assert_eq!(m.h, [0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn slope_identity() {
        for b in [-3.0, 0.0, 0.7, 5.0] {
            let g = loss_slope(b);
            assert!((g * (1.0 + (-b as f64).exp()) - 2.0 * (-b as f64).exp()).abs() < 1e-12);
        }
    }

    fn cluster_net(scale: f64) -> Network {
        let d = 5;
        let rows = [([1.0, -1.0], 1.0), ([-1.0, 1.0], 1.0), ([1.0, 1.0], -1.0), ([-1.0, -1.0], -1.0)];
        let neurons: Vec<Neuron> = rows
            .iter()
            .map(|(s, sign)| {
                let mut w = vec![0.0; d];
                w[0] = s[0] * scale;
                w[1] = s[1] * scale;
                n(w, sign * scale * 2f64.sqrt())
            })
            .collect();
        Network::from_neurons(d, &neurons).unwrap()
    }

    #[test]
    fn certificate_examples() {
        let net = cluster_net(0.1);
        let zeta = (-25.0f64).exp();
        let cert = signal_heavy_check(&net, zeta, 2.0, 1.0).unwrap();
        assert!(cert.params_valid);
        assert_eq!(cert.heavy_count, 4);
        assert!(cert.pass, "{cert:?}");

        let mut neurons = Vec::new();
        for j in 0..4 {
            let mut w = vec![0.0; 5];
            w[2 + j % 3] = 0.2;
            neurons.push(n(w, 0.1));
        }
        let net = Network::from_neurons(5, &neurons).unwrap();
        let cert = signal_heavy_check(&net, zeta, 2.0, 1.0).unwrap();
        assert_eq!(cert.heavy_count, 0);
        assert_eq!(cert.margins.h_min, 0.0);
        assert!(!cert.pass);
    }

    #[test]
    fn fresh_neurons_are_controlled_at_step_zero() {
        let d = 1024;
        let theta = 0.05;
        let net = init_network(d, 64, theta, 5).unwrap();
        let params = ScheduleParams { c: 0.25, ..ScheduleParams::new(d, theta, 0.05) };
        let mut s = ControlSchedule::new(params).unwrap();
        let v = s.at(0);
        let r = ReferenceState::capture(&net, params.c_ws);
        let bound = (d as f64).ln().powf(1.5) * theta / (d as f64).sqrt();
        for j in 0..net.p {
            let st = NeuronStats::of(net.w_row(j), net.a[j]);
            let class = classify(net.w_row(j), net.a[j], &s, &v, &r.neurons[j]);
            if st.sig <= bound && st.opp <= bound && st.perp_inf <= bound {
                let spread = oracle::well_spread_check(&net.w_row(j)[2..], params.c_ws).unwrap();
                assert!(class.controlled, "{j} {class:?} {spread:?}");
            }
        }
    }

    #[test]
    fn uncontrolled_before_t1a() {
        let d = 1024;
        let params = ScheduleParams { c: 0.25, ..ScheduleParams::new(d, 0.05, 0.05) };
        let mut s = ControlSchedule::new(params).unwrap();
        assert!(s.t1a > 2);
        let v = s.at(1);
        let mut w = vec![0.0; d];
        w[0] = 1.0;
        w[1] = -1.0;
        let r = NeuronReference { w_perp0: vec![0.0; d - 2], sig0: [1.0, -1.0], well_spread: true };
        let c = classify(&w, 0.05, &s, &v, &r);
        assert!(!c.controlled && !c.weakly_controlled && !c.strong);
    }

    #[test]
    fn reversed_signal_is_never_strong() {
        let d = 1024;
        let theta = 0.05;
        let net = init_network(d, 16, theta, 9).unwrap();
        let params = ScheduleParams { c: 0.25, ..ScheduleParams::new(d, theta, 0.05) };
        let mut s = ControlSchedule::new(params).unwrap();
        let v = s.at(0);
        let mut r = ReferenceState::capture(&net, params.c_ws);
        for nr in &mut r.neurons {
            nr.sig0 = [-nr.sig0[0], -nr.sig0[1]];
        }
        for c in classify_network(&net, &s, &v, &r) {
            assert!(!c.strong);
        }
    }
}
