//! Flat key-value experiment configuration.
//!
//! One `key = value` pair per line, `#` comments. Structural keys (`n`, `L`,
//! `k`, `k_g`, `C`) are required; every tunable carries the standard default
//! and may be omitted. `auto` keeps a derived default: `d_star = k`,
//! `S = d_star*(gamma-1)*(upsilon-1)+1` (the tight admissible choice),
//! `q_prime = n/2`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::GeneratorSpec;
use crate::harness::HarnessError;
use crate::learner::{AlphaMode, LearnParams, PStop};
use crate::persist;
use crate::recall::RecallParams;

/// Recall iteration budget as configured: either a fixed count or a multiple
/// of the injected noise weight (harness runs know the weight; library recall
/// falls back to the same multiple of the pattern length).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigTMax {
    NoiseMultiple(usize),
    Fixed(usize),
}

impl ConfigTMax {
    fn to_config_value(self) -> String {
        match self {
            ConfigTMax::NoiseMultiple(c) => format!("{c}z"),
            ConfigTMax::Fixed(t) => format!("{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    /// Training-set size.
    pub c: usize,
    pub learn: LearnParams,
    pub phi: f64,
    pub eps_recall: f64,
    pub t_max: ConfigTMax,
    /// Error weights to sweep.
    pub sweep: Vec<usize>,
    /// Trials per sweep entry.
    pub trials: usize,
    /// Master seed; every stage derives children from it.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn recall_params(&self) -> RecallParams {
        RecallParams {
            phi: self.phi,
            eps_zero: self.eps_recall,
            t_max: match self.t_max {
                ConfigTMax::Fixed(t) => crate::recall::TMaxRule::Explicit(t),
                ConfigTMax::NoiseMultiple(c) => crate::recall::TMaxRule::PerLength(c),
            },
            s: self.generator.s,
        }
    }

    /// Local constraint count `m = n/L - k`.
    pub fn m_local(&self) -> usize {
        self.generator.block_len() - self.generator.k
    }

    /// Global constraint count `m_g = n - k_g`.
    pub fn m_global(&self) -> usize {
        self.generator.n - self.generator.k_g
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.generator.validate().map_err(HarnessError::Dataset)?;
        self.learn.validate().map_err(HarnessError::Learn)?;
        if self.c == 0 {
            return Err(HarnessError::Config("C must be positive".into()));
        }
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        if self.sweep.is_empty() {
            return Err(HarnessError::Config("sweep must be nonempty".into()));
        }
        if !(self.phi > 0.0) {
            return Err(HarnessError::Config(format!("phi={} must be > 0", self.phi)));
        }
        if !(self.eps_recall > 0.0) {
            return Err(HarnessError::Config(format!("eps_recall={} must be > 0", self.eps_recall)));
        }
        if matches!(self.t_max, ConfigTMax::Fixed(0) | ConfigTMax::NoiseMultiple(0)) {
            return Err(HarnessError::Config("t_max must be >= 1".into()));
        }
        if self.m_local() == 0 {
            return Err(HarnessError::Config("n/L - k local constraints must be >= 1".into()));
        }
        if self.m_global() == 0 {
            return Err(HarnessError::Config("n - k_g global constraints must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical resolved form: every key present, fixed order, exact floats.
    /// This is what lands in `config.echo` and what replays parse.
    pub fn canonical_echo(&self) -> String {
        let g = &self.generator;
        let mut out = String::new();
        let p = match self.learn.p_stop {
            PStop::OverNormX(c) => format!("{}/normX", persist::fmt_f64(c)),
            PStop::Fixed(v) => persist::fmt_f64(v),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("n", g.n.to_string()),
            ("L", g.l.to_string()),
            ("k", g.k.to_string()),
            ("k_g", g.k_g.to_string()),
            ("gamma", g.gamma.to_string()),
            ("upsilon", g.upsilon.to_string()),
            ("S", g.s.to_string()),
            ("d_star", g.d_star_cap.to_string()),
            ("C", self.c.to_string()),
            ("seed", self.seed.to_string()),
            ("delta", persist::fmt_f64(self.learn.delta)),
            ("theta_c", persist::fmt_f64(self.learn.theta_c)),
            ("epsilon", persist::fmt_f64(self.learn.epsilon)),
            ("p", p),
            ("alpha_mode", self.learn.alpha_mode.as_str().into()),
            ("alpha_fixed", persist::fmt_f64(self.learn.alpha_fixed)),
            ("sigma", persist::fmt_f64(self.learn.sigma)),
            ("q_prime", self.learn.q_prime.map_or("auto".into(), persist::fmt_f64)),
            ("max_iters", self.learn.max_iters.to_string()),
            ("phi", persist::fmt_f64(self.phi)),
            ("eps_recall", persist::fmt_f64(self.eps_recall)),
            ("t_max", self.t_max.to_config_value()),
            ("sweep", self.sweep.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")),
            ("trials", self.trials.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize, HarnessError> {
    v.parse::<usize>().map_err(|e| HarnessError::Config(format!("{key}: {e}")))
}

fn parse_i64(key: &str, v: &str) -> Result<i64, HarnessError> {
    v.parse::<i64>().map_err(|e| HarnessError::Config(format!("{key}: {e}")))
}

fn parse_f64_key(key: &str, v: &str) -> Result<f64, HarnessError> {
    persist::parse_f64(v).map_err(|e| HarnessError::Config(format!("{key}: {e}")))
}

/// Parse a config from text. Unknown keys are rejected so typos fail loudly.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    const KNOWN: &[&str] = &[
        "n", "L", "k", "k_g", "gamma", "upsilon", "S", "d_star", "C", "seed", "delta", "theta_c",
        "epsilon", "p", "alpha_mode", "alpha_fixed", "sigma", "q_prime", "max_iters", "phi",
        "eps_recall", "t_max", "sweep", "trials",
    ];
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let k = k.trim();
        if !KNOWN.contains(&k) {
            return Err(HarnessError::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
        }
        kv.insert(k.to_string(), v.trim().to_string());
    }

    let require = |key: &str| -> Result<String, HarnessError> {
        kv.get(key).cloned().ok_or_else(|| HarnessError::Config(format!("missing required key `{key}`")))
    };
    let n = parse_usize("n", &require("n")?)?;
    let l = parse_usize("L", &require("L")?)?;
    let k = parse_usize("k", &require("k")?)?;
    let k_g = parse_usize("k_g", &require("k_g")?)?;
    let c = parse_usize("C", &require("C")?)?;
    let gamma = kv.get("gamma").map_or(Ok(2), |v| parse_i64("gamma", v))?;
    let upsilon = kv.get("upsilon").map_or(Ok(2), |v| parse_i64("upsilon", v))?;
    let d_star_cap = match kv.get("d_star").map(String::as_str) {
        None | Some("auto") => k,
        Some(v) => parse_usize("d_star", v)?,
    };
    let s = match kv.get("S").map(String::as_str) {
        None | Some("auto") => (d_star_cap as i64) * (gamma - 1) * (upsilon - 1) + 1,
        Some(v) => parse_i64("S", v)?,
    };
    let seed = kv
        .get("seed")
        .map_or(Ok(1u64), |v| v.parse::<u64>().map_err(|e| HarnessError::Config(format!("seed: {e}"))))?;

    let p_stop = match kv.get("p").map(String::as_str) {
        None => PStop::OverNormX(0.01),
        Some(v) => {
            if let Some(coeff) = v.strip_suffix("/normX") {
                PStop::OverNormX(parse_f64_key("p", coeff)?)
            } else {
                PStop::Fixed(parse_f64_key("p", v)?)
            }
        }
    };
    let alpha_mode = match kv.get("alpha_mode").map(String::as_str) {
        None => AlphaMode::PaperTable,
        Some(v) => v.parse::<AlphaMode>().map_err(HarnessError::Config)?,
    };
    let q_prime = match kv.get("q_prime").map(String::as_str) {
        None | Some("auto") => None,
        Some(v) => Some(parse_f64_key("q_prime", v)?),
    };
    let learn = LearnParams {
        epsilon: kv.get("epsilon").map_or(Ok(0.01), |v| parse_f64_key("epsilon", v))?,
        q: None,
        q_prime,
        delta: kv.get("delta").map_or(Ok(10.0), |v| parse_f64_key("delta", v))?,
        theta_c: kv.get("theta_c").map_or(Ok(0.25), |v| parse_f64_key("theta_c", v))?,
        alpha_mode,
        alpha_fixed: kv.get("alpha_fixed").map_or(Ok(0.49), |v| parse_f64_key("alpha_fixed", v))?,
        p_stop,
        sigma: kv.get("sigma").map_or(Ok(1.0), |v| parse_f64_key("sigma", v))?,
        max_iters: kv.get("max_iters").map_or(Ok(50_000), |v| parse_usize("max_iters", v))?,
        seed,
    };

    let t_max = match kv.get("t_max").map(String::as_str) {
        None => ConfigTMax::NoiseMultiple(20),
        Some(v) => {
            if let Some(mult) = v.strip_suffix('z') {
                ConfigTMax::NoiseMultiple(parse_usize("t_max", mult.trim())?)
            } else {
                ConfigTMax::Fixed(parse_usize("t_max", v)?)
            }
        }
    };
    let sweep = match kv.get("sweep").map(String::as_str) {
        None => vec![1, 2, 3, 4, 5],
        Some(v) => v
            .split(',')
            .map(|t| parse_usize("sweep", t.trim()))
            .collect::<Result<Vec<_>, _>>()?,
    };

    let cfg = ExperimentConfig {
        generator: GeneratorSpec { n, l, k, k_g, gamma, upsilon, s, d_star_cap, seed },
        c,
        learn,
        phi: kv.get("phi").map_or(Ok(0.8), |v| parse_f64_key("phi", v))?,
        eps_recall: kv.get("eps_recall").map_or(Ok(0.01), |v| parse_f64_key("eps_recall", v))?,
        t_max,
        sweep,
        trials: kv.get("trials").map_or(Ok(2000), |v| parse_usize("trials", v))?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = "\
# desk-scale profile
n = 100
L = 4
k = 15
k_g = 40
C = 1000
trials = 200
sweep = 1,2,3
seed = 7
";

    #[test]
    fn defaults_fill_in_the_reported_values() {
        let cfg = parse_config(DESK).unwrap();
        assert_eq!(cfg.generator.n, 100);
        assert_eq!(cfg.generator.d_star_cap, 15);
        // Tight admissible S: d*(gamma-1)(upsilon-1)+1.
        assert_eq!(cfg.generator.s, 16);
        assert_eq!(cfg.learn.delta, 10.0);
        assert_eq!(cfg.learn.theta_c, 0.25);
        assert_eq!(cfg.learn.epsilon, 0.01);
        assert_eq!(cfg.learn.p_stop, PStop::OverNormX(0.01));
        assert_eq!(cfg.learn.alpha_fixed, 0.49);
        assert_eq!(cfg.phi, 0.8);
        assert_eq!(cfg.eps_recall, 0.01);
        assert_eq!(cfg.t_max, ConfigTMax::NoiseMultiple(20));
        assert_eq!(cfg.m_local(), 10);
        assert_eq!(cfg.m_global(), 60);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config(DESK).unwrap();
        let echo = cfg.canonical_echo();
        let cfg2 = parse_config(&echo).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(echo, cfg2.canonical_echo());
    }

    #[test]
    fn explicit_overrides_parse() {
        let text = format!("{DESK}\np = 0.005\nt_max = 300\nalpha_mode = theorem-safe\nS = 9\n");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.learn.p_stop, PStop::Fixed(0.005));
        assert_eq!(cfg.t_max, ConfigTMax::Fixed(300));
        assert_eq!(cfg.learn.alpha_mode, AlphaMode::TheoremSafe);
        assert_eq!(cfg.generator.s, 9);
    }

    #[test]
    fn unknown_and_missing_keys_fail() {
        assert!(parse_config("n = 4\nbogus = 1").is_err());
        assert!(parse_config("n = 100\nL = 4\nk = 15\nk_g = 40").is_err()); // C missing
    }

    #[test]
    fn structural_validation_fires() {
        let bad = "n = 100\nL = 3\nk = 15\nk_g = 40\nC = 10\n"; // L does not divide n
        assert!(parse_config(bad).is_err());
        let bad = "n = 100\nL = 4\nk = 25\nk_g = 40\nC = 10\n"; // k = n/L
        assert!(parse_config(bad).is_err());
    }
}
