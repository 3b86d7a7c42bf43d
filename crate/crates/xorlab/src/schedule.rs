//! Time-indexed control bounds `B_t`, `Q_t`, `S_t`, `M_t`, phase lengths, and Phase-2 parameters.
//!
//! Quantities are kept as natural logs of squared norms so that literal constants such as
//! `ζ^(-600)` or `exp(100 c_ws⁸)` stay representable.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Phase-1 rate `1/√(2π)`.
pub const TAU1: f64 = 0.398_942_280_401_432_7;
/// Phase-2 rate `√2/4`.
pub const TAU2: f64 = std::f64::consts::SQRT_2 / 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub d: usize,
    pub theta: f64,
    pub eta: f64,
    /// Exponent `c` in `ζ = log^(-c)(d)`.
    pub c: f64,
    pub c_ws: f64,
    pub c_be: f64,
}

impl ScheduleParams {
    pub fn new(d: usize, theta: f64, eta: f64) -> Self {
        ScheduleParams { d, theta, eta, c: 4.0, c_ws: 4.0, c_be: crate::oracle::C_BE }
    }
}

/// `θ = log^(-C)(d)`.
pub fn theta_from_exponent(d: usize, big_c: f64) -> f64 {
    (d as f64).ln().powf(-big_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    OneA,
    OneB,
    Two,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::OneA => "1a",
            Phase::OneB => "1b",
            Phase::Two => "2",
        }
    }
}

/// Schedule values at one step, with squared bounds stored as logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub t: u64,
    pub ln_b2: f64,
    pub ln_q2: f64,
    pub ln_s2: f64,
    pub ln_m: f64,
    pub phase: Phase,
}

impl ScheduleValues {
    pub fn b2(&self) -> f64 {
        self.ln_b2.exp()
    }

    pub fn q2(&self) -> f64 {
        self.ln_q2.exp()
    }

    pub fn s2(&self) -> f64 {
        self.ln_s2.exp()
    }

    pub fn m(&self) -> f64 {
        self.ln_m.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    pub params: ScheduleParams,
    pub zeta: f64,
    pub ln_zeta: f64,
    pub t1a: u64,
    /// The unclamped `T_1a` formula was negative.
    pub t1a_clamped: bool,
    pub t1b: u64,
    pub ln_c_s: f64,
    pub t_s: f64,
    ln_b0_2: f64,
    ln_g1: f64,
    ln_s2_prefix: Vec<f64>,
}

impl ControlSchedule {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams { d, theta, eta, c, c_ws, c_be } = params;
        if d < 3 {
            return Err(Error::InvalidDimension(d));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::config("theta", "must be positive and finite"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::config("eta", "must be positive and finite"));
        }
        if !(c > 0.0) {
            return Err(Error::config("zeta_exponent", "must be positive"));
        }
        let ld = (d as f64).ln();
        let ln_zeta = -c * ld.ln();
        let zeta = ln_zeta.exp();
        let ln_b0_2 = 3.0 * ld.ln() + 2.0 * theta.ln() - ld;
        let ln_g1 = (2.0 * eta * TAU1 * (1.0 + 1.0 / ld)).ln_1p();
        let raw = ((ld + 2.0 * ln_zeta - 3.0 * ld.ln()) / ln_g1).floor();
        let t1a_clamped = raw < 0.0;
        let t1a = raw.max(0.0) as u64;
        let ln_b2_t1a = ln_b0_2 + t1a as f64 * ln_g1;
        let extra = ((2.0 * theta.ln() - 598.0 * ln_zeta - ln_b2_t1a) / (4.0 * eta).ln_1p()).floor();
        let t1b = t1a + extra.max(0.0) as u64;
        let ln_c_s = (6400.0 / PI.sqrt()).ln() + 100.0 * c_ws.powi(8);
        let t_s = ln_c_s.exp() * (800.0 * c_be).ln() / (TAU1 * eta);
        Ok(ControlSchedule {
            params,
            zeta,
            ln_zeta,
            t1a,
            t1a_clamped,
            t1b,
            ln_c_s,
            t_s,
            ln_b0_2,
            ln_g1,
            ln_s2_prefix: vec![2.0 * theta.ln() - ld],
        })
    }

    fn epsilon(&self, s: u64) -> f64 {
        let inv_c_s = (-self.ln_c_s).exp();
        let sf = s as f64;
        if sf <= self.t_s {
            1.0 - inv_c_s
        } else if s <= self.t1a {
            let eta = self.params.eta;
            5.0 * (0.1 * self.ln_zeta).exp()
                + 200.0 * self.params.c_be * PI.sqrt() / (sf / 2.0 * (2.0 * eta * TAU1 * inv_c_s).ln_1p()).exp()
        } else {
            1.0 - 1.0 / 20.0
        }
    }

    fn ln_s2(&mut self, t: u64) -> f64 {
        while (self.ln_s2_prefix.len() as u64) <= t {
            let s = self.ln_s2_prefix.len() as u64;
            let factor = 1.0 + 2.0 * self.params.eta * TAU1 * (1.0 - self.epsilon(s));
            let step = if factor > 0.0 { factor.ln() } else { f64::NEG_INFINITY };
            let last = *self.ln_s2_prefix.last().unwrap();
            self.ln_s2_prefix.push(last + step);
        }
        self.ln_s2_prefix[t as usize]
    }

    /// `ln B_t²`.
    pub fn ln_b2(&self, t: u64) -> f64 {
        if t <= self.t1a {
            self.ln_b0_2 + t as f64 * self.ln_g1
        } else {
            self.ln_b0_2 + self.t1a as f64 * self.ln_g1 + (t - self.t1a) as f64 * (4.0 * self.params.eta).ln_1p()
                - 2.0 * self.ln_zeta
        }
    }

    /// `ln Q_t²`.
    pub fn ln_q2(&self, t: u64) -> f64 {
        let ld = (self.params.d as f64).ln();
        self.ln_b0_2 + t as f64 * (50.0 * self.params.eta / ld).ln_1p()
    }

    /// `ln M_t`.
    pub fn ln_m(&self, t: u64) -> f64 {
        let p = &self.params;
        p.c_be * 10000.0 * self.ln_zeta + p.theta.ln() + (t as f64 - self.t1a as f64) * (21.0 * p.c_be * p.eta).ln_1p()
    }

    pub fn phase(&self, t: u64) -> Phase {
        if t <= self.t1a {
            Phase::OneA
        } else if t <= self.t1b {
            Phase::OneB
        } else {
            Phase::Two
        }
    }

    pub fn at(&mut self, t: u64) -> ScheduleValues {
        ScheduleValues {
            t,
            ln_b2: self.ln_b2(t),
            ln_q2: self.ln_q2(t),
            ln_s2: self.ln_s2(t),
            ln_m: self.ln_m(t),
            phase: self.phase(t),
        }
    }
}

/// Phase-2 parameters `ζ_T1 = log^(-c/3)(d)` and `H = -log(ζ_T1)/20`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase2Params {
    pub zeta_t1: f64,
    pub h: f64,
    pub eta: f64,
}

impl Phase2Params {
    pub fn new(d: usize, c: f64, eta: f64) -> Self {
        let zeta_t1 = (d as f64).ln().powf(-c / 3.0);
        Phase2Params { zeta_t1, h: -zeta_t1.ln() / 20.0, eta }
    }

    /// `⌊ζ_T1^(-1/160)/η⌋`.
    pub fn length(&self) -> u64 {
        (self.zeta_t1.powf(-1.0 / 160.0) / self.eta).floor() as u64
    }

    /// `ζ` after `k` Phase-2 steps of `ζ ← ζ(1 + 10ηζH)`.
    pub fn zeta_after(&self, k: u64) -> f64 {
        (0..k).fold(self.zeta_t1, |z, _| z * (1.0 + 10.0 * self.eta * z * self.h))
    }

    /// The step-size premise `η ≤ ζ³`.
    pub fn step_premise(&self) -> bool {
        self.eta <= self.zeta_t1.powi(3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ControlSchedule {
        ControlSchedule::new(ScheduleParams::new(256, 0.1, 0.05)).unwrap()
    }

    #[test]
    fn initial_values() {
        let mut s = desk();
        let v = s.at(0);
        let ld = 256f64.ln();
        let b0 = ld.powi(3) * 0.01 / 256.0;
        assert!((v.b2() / b0 - 1.0).abs() < 1e-12);
        assert!((v.q2() / b0 - 1.0).abs() < 1e-12);
        assert!((v.s2() / (0.01 / 256.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_through_t1b() {
        let mut s = ControlSchedule::new(ScheduleParams { c: 0.25, ..ScheduleParams::new(1024, 0.05, 0.05) }).unwrap();
        assert!(s.t1a > 0 && s.t1b > s.t1a);
        let mut prev = s.at(0);
        for t in 1..=s.t1b + 5 {
            let v = s.at(t);
            assert!(v.ln_b2 >= prev.ln_b2 && v.ln_q2 >= prev.ln_q2 && v.ln_s2 >= prev.ln_s2, "t={t}");
            prev = v;
        }
    }

    #[test]
    fn t1a_is_last_step_under_cap() {
        let mut s = ControlSchedule::new(ScheduleParams { c: 0.25, ..ScheduleParams::new(1024, 0.05, 0.05) }).unwrap();
        let cap = 2.0 * (0.05f64.ln() + s.ln_zeta);
        assert!(s.at(s.t1a).ln_b2 <= cap);
        let ln_b0 = s.ln_b0_2;
        assert!(ln_b0 + (s.t1a + 1) as f64 * s.ln_g1 > cap);
        let jump = s.at(s.t1a + 1).ln_b2 - s.at(s.t1a).ln_b2;
        assert!(jump > -2.0 * s.ln_zeta);
    }

    #[test]
    fn t1b_is_last_step_under_outer_cap() {
        let mut s = ControlSchedule::new(ScheduleParams { c: 0.25, ..ScheduleParams::new(1024, 0.05, 0.05) }).unwrap();
        let cap = 2.0 * 0.05f64.ln() - 600.0 * s.ln_zeta;
        assert!(s.at(s.t1b).ln_b2 <= cap + 1e-9);
        assert!(s.at(s.t1b + 1).ln_b2 > cap);
    }

    #[test]
    fn literal_defaults_clamp_t1a_at_desk_scale() {
        let s = desk();
        assert!(s.t1a_clamped && s.t1a == 0);
    }

    #[test]
    fn strong_floor_dominates_b_over_log4_at_t1a() {
        let mut s = desk();
        let t = s.t1a;
        let v = s.at(t);
        assert!(v.ln_s2 >= v.ln_b2 - 4.0 * 256f64.ln().ln());
    }

    #[test]
    fn phase2_parameters() {
        let p = Phase2Params::new(256, 4.0, 0.05);
        assert!((p.zeta_t1 - 256f64.ln().powf(-4.0 / 3.0)).abs() < 1e-15);
        assert!((p.h + p.zeta_t1.ln() / 20.0).abs() < 1e-15);
        assert_eq!(p.length(), (p.zeta_t1.powf(-1.0 / 160.0) / 0.05).floor() as u64);
        assert!(p.zeta_after(3) > p.zeta_t1);
        assert!(!p.step_premise());
    }
}
