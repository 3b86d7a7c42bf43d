//! Plain-text `key = value` configuration for training runs.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are rejected.
//!
//! | key | default |
//! |---|---|
//! | `d` | 256 |
//! | `p` | 512 |
//! | `theta_init` | 0.1 |
//! | `init_divide_sqrt_p` | false |
//! | `eta` | `theta_init` |
//! | `m` | `ceil(d / theta_init)` |
//! | `t_max` | 4000 |
//! | `seed` | 0 |
//! | `log_every` | 10 |
//! | `stop_b_min` | 3.0 (`none` disables) |
//! | `workers` | 1 |
//! | `zeta_exponent` | 4.0 |
//! | `theta_exponent` | 13.0 |
//! | `c_ws` | 4.0 |
//! | `phase2_len` | `floor(zeta_T1^(-1/160) / eta)` |
//! | `monitors` | `none`, `cheap`, `all` or a comma list of monitor names |
//! | `monitor_every` | 10 |
//! | `monitor_slack` | 0.5 |
//! | `monitor_ineq_slack` | 1.0 |
//! | `monitor_samples` | 16384 |
//! | `eval_samples` | 100000 |
//! | `checkpoint_every` | 0 (final only) |

use crate::audit::Monitor;
use crate::error::{Error, Result};
use crate::schedule::{Phase2Params, ScheduleParams};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d: usize,
    pub p: usize,
    pub theta_init: f64,
    pub init_divide_sqrt_p: bool,
    pub eta: f64,
    pub m: usize,
    pub t_max: u64,
    pub seed: u64,
    pub log_every: u64,
    pub stop_b_min: Option<f64>,
    pub workers: usize,
    pub zeta_exponent: f64,
    pub theta_exponent: f64,
    pub c_ws: f64,
    pub phase2_len: Option<u64>,
    pub monitors: Vec<Monitor>,
    pub monitor_every: u64,
    pub monitor_slack: f64,
    pub monitor_ineq_slack: f64,
    pub monitor_samples: usize,
    pub eval_samples: usize,
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Defaults for dimension `d`, width `p` and init scale `theta_init`.
    pub fn new(d: usize, p: usize, theta_init: f64) -> Self {
        TrainConfig {
            d,
            p,
            theta_init,
            init_divide_sqrt_p: false,
            eta: theta_init,
            m: (d as f64 / theta_init).ceil() as usize,
            t_max: 4000,
            seed: 0,
            log_every: 10,
            stop_b_min: Some(3.0),
            workers: 1,
            zeta_exponent: 4.0,
            theta_exponent: 13.0,
            c_ws: 4.0,
            phase2_len: None,
            monitors: Vec::new(),
            monitor_every: 10,
            monitor_slack: 0.5,
            monitor_ineq_slack: 1.0,
            monitor_samples: 1 << 14,
            eval_samples: 100_000,
            checkpoint_every: 0,
        }
    }

    /// Init radius actually used.
    pub fn init_radius(&self) -> f64 {
        if self.init_divide_sqrt_p {
            self.theta_init / (self.p as f64).sqrt()
        } else {
            self.theta_init
        }
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            c: self.zeta_exponent,
            c_ws: self.c_ws,
            ..ScheduleParams::new(self.d, self.init_radius(), self.eta)
        }
    }

    pub fn phase2(&self) -> Phase2Params {
        Phase2Params::new(self.d, self.zeta_exponent, self.eta)
    }

    pub fn phase2_length(&self) -> u64 {
        self.phase2_len.unwrap_or_else(|| self.phase2().length())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::config("d", format!("must be at least 3, got {}", self.d)));
        }
        if self.p == 0 {
            return Err(Error::config("p", "must be at least 1"));
        }
        if !(self.theta_init > 0.0 && self.theta_init.is_finite()) {
            return Err(Error::config("theta_init", format!("must be positive, got {}", self.theta_init)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", format!("must be positive, got {}", self.eta)));
        }
        if self.m == 0 {
            return Err(Error::config("m", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        if self.monitor_every == 0 {
            return Err(Error::config("monitor_every", "must be at least 1"));
        }
        if !(self.zeta_exponent > 0.0) {
            return Err(Error::config("zeta_exponent", "must be positive"));
        }
        if !(self.c_ws >= 1.0) {
            return Err(Error::config("c_ws", "must be at least 1"));
        }
        if !(self.monitor_slack >= 0.0) || !(self.monitor_ineq_slack > 0.0) {
            return Err(Error::config("monitor_slack", "must be nonnegative (ineq slack positive)"));
        }
        if self.monitor_samples == 0 || self.eval_samples == 0 {
            return Err(Error::config("eval_samples", "sample counts must be positive"));
        }
        Ok(())
    }

    /// Parses `key = value` text; keys not present take their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(&format!("line {}", n + 1), "expected `key = value`"))?;
            let k = k.trim().to_string();
            if pairs.iter().any(|(e, _)| *e == k) {
                return Err(Error::config(&k, "given more than once"));
            }
            pairs.push((k, v.trim().to_string()));
        }
        let get = |k: &str| pairs.iter().find(|(e, _)| e == k).map(|(_, v)| v.as_str());
        let d = parse_or(get("d"), "d", 256usize)?;
        let p = parse_or(get("p"), "p", 512usize)?;
        let theta = parse_or(get("theta_init"), "theta_init", 0.1f64)?;
        let mut c = TrainConfig::new(d, p, theta);
        for (k, v) in &pairs {
            let v = v.as_str();
            match k.as_str() {
                "d" | "p" | "theta_init" => {}
                "init_divide_sqrt_p" => c.init_divide_sqrt_p = parse_val(v, k)?,
                "eta" => c.eta = parse_val(v, k)?,
                "m" => c.m = parse_val(v, k)?,
                "t_max" => c.t_max = parse_val(v, k)?,
                "seed" => c.seed = parse_val(v, k)?,
                "log_every" => c.log_every = parse_val(v, k)?,
                "stop_b_min" => c.stop_b_min = if v == "none" { None } else { Some(parse_val(v, k)?) },
                "workers" => c.workers = parse_val(v, k)?,
                "zeta_exponent" => c.zeta_exponent = parse_val(v, k)?,
                "theta_exponent" => c.theta_exponent = parse_val(v, k)?,
                "c_ws" => c.c_ws = parse_val(v, k)?,
                "phase2_len" => c.phase2_len = Some(parse_val(v, k)?),
                "monitors" => c.monitors = parse_monitors(v)?,
                "monitor_every" => c.monitor_every = parse_val(v, k)?,
                "monitor_slack" => c.monitor_slack = parse_val(v, k)?,
                "monitor_ineq_slack" => c.monitor_ineq_slack = parse_val(v, k)?,
                "monitor_samples" => c.monitor_samples = parse_val(v, k)?,
                "eval_samples" => c.eval_samples = parse_val(v, k)?,
                "checkpoint_every" => c.checkpoint_every = parse_val(v, k)?,
                other => return Err(Error::config(other, "unknown key")),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Serializes every key so that `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let monitors = if self.monitors.is_empty() {
            "none".to_string()
        } else {
            self.monitors.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("d", self.d.to_string());
        put("p", self.p.to_string());
        put("theta_init", self.theta_init.to_string());
        put("init_divide_sqrt_p", self.init_divide_sqrt_p.to_string());
        put("eta", self.eta.to_string());
        put("m", self.m.to_string());
        put("t_max", self.t_max.to_string());
        put("seed", self.seed.to_string());
        put("log_every", self.log_every.to_string());
        put("stop_b_min", self.stop_b_min.map_or("none".to_string(), |b| b.to_string()));
        put("workers", self.workers.to_string());
        put("zeta_exponent", self.zeta_exponent.to_string());
        put("theta_exponent", self.theta_exponent.to_string());
        put("c_ws", self.c_ws.to_string());
        if let Some(l) = self.phase2_len {
            put("phase2_len", l.to_string());
        }
        put("monitors", monitors);
        put("monitor_every", self.monitor_every.to_string());
        put("monitor_slack", self.monitor_slack.to_string());
        put("monitor_ineq_slack", self.monitor_ineq_slack.to_string());
        put("monitor_samples", self.monitor_samples.to_string());
        put("eval_samples", self.eval_samples.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}

pub(crate) fn parse_val<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn parse_or<T: std::str::FromStr>(v: Option<&str>, key: &str, default: T) -> Result<T> {
    v.map_or(Ok(default), |v| parse_val(v, key))
}

fn parse_monitors(v: &str) -> Result<Vec<Monitor>> {
    match v {
        "none" | "" => Ok(Vec::new()),
        "all" => Ok(Monitor::ALL.to_vec()),
        "cheap" => Ok(Monitor::CHEAP.to_vec()),
        list => list
            .split(',')
            .map(|s| Monitor::parse(s.trim()).ok_or_else(|| Error::config("monitors", format!("unknown monitor `{}`", s.trim()))))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_theta() {
        let c = TrainConfig::parse("d = 100\ntheta_init = 0.2\n").unwrap();
        assert_eq!(c.eta, 0.2);
        assert_eq!(c.m, 500);
        assert_eq!(c.init_radius(), 0.2);
        assert_eq!(c.stop_b_min, Some(3.0));
    }

    #[test]
    fn round_trip() {
        let mut c = TrainConfig::new(64, 32, 0.3);
        c.monitors = Monitor::CHEAP.to_vec();
        c.stop_b_min = None;
        c.phase2_len = Some(7);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        for (text, field) in [
            ("eta = 0", "eta"),
            ("eta = -0.5", "eta"),
            ("m = 0", "m"),
            ("bogus = 1", "bogus"),
            ("d = two", "d"),
            ("monitors = nope", "monitors"),
        ] {
            match TrainConfig::parse(text) {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainConfig::parse("# run\n\n  p = 8  \n").unwrap();
        assert_eq!(c.p, 8);
    }
}
