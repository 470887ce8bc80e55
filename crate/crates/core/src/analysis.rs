//! Degree profiles, the single-error correction bound, and error-rate gains.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::learner::ConstraintGraph;
use crate::persist;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("pattern node {col} has degree 0; the correction bound is void")]
    ZeroColumn { col: usize },
    #[error("bound is vacuous: average degree {d_bar} >= m = {m}")]
    VacuousBound { d_bar: f64, m: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pattern-node degree distribution of a constraint graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeProfile {
    /// `(degree, fraction of pattern nodes)`, ascending, fractions sum to 1.
    pub fractions: Vec<(usize, f64)>,
    pub d_bar: f64,
    pub d_min: usize,
    /// Number of constraint nodes.
    pub m: usize,
}

impl DegreeProfile {
    pub fn from_degrees(degrees: &[usize], m: usize) -> Result<Self, AnalysisError> {
        if degrees.is_empty() {
            return Err(AnalysisError::EmptyInput("no pattern nodes".into()));
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &d in degrees {
            *counts.entry(d).or_insert(0) += 1;
        }
        let n = degrees.len() as f64;
        let fractions: Vec<(usize, f64)> =
            counts.into_iter().map(|(d, c)| (d, c as f64 / n)).collect();
        let d_bar = fractions.iter().map(|&(d, f)| d as f64 * f).sum();
        let d_min = *degrees.iter().min().unwrap();
        Ok(Self { fractions, d_bar, d_min, m })
    }

    /// The generating polynomial `lambda(x) = sum_i lambda_i x^i`.
    pub fn poly_eval(&self, x: f64) -> f64 {
        self.fractions.iter().map(|&(d, f)| f * x.powi(d as i32)).sum()
    }
}

/// Degree profile of the pattern side of a graph. A degree-0 pattern node is
/// an error: it voids the correction bound and must not pass silently.
pub fn degree_profile(w: &ConstraintGraph) -> Result<DegreeProfile, AnalysisError> {
    let degrees = w.column_degrees();
    if let Some(col) = degrees.iter().position(|&d| d == 0) {
        return Err(AnalysisError::ZeroColumn { col });
    }
    DegreeProfile::from_degrees(&degrees, w.m())
}

/// Lower bounds on the probability of correcting a single noisy node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBounds {
    /// `1 - lambda(d_bar / m)`.
    pub exact: f64,
    /// `1 - (d_bar / m)^{d_min}`, the looser closed form.
    pub loose: f64,
    /// `d_min = 0` makes the loose bound identically 0.
    pub loose_vacuous: bool,
}

/// Evaluate both single-error bounds; errors when `d_bar >= m` (the argument
/// of the generating polynomial leaves `[0,1)` and the bound says nothing).
pub fn single_error_bound(profile: &DegreeProfile) -> Result<ErrorBounds, AnalysisError> {
    if profile.d_bar >= profile.m as f64 {
        return Err(AnalysisError::VacuousBound { d_bar: profile.d_bar, m: profile.m });
    }
    let x = profile.d_bar / profile.m as f64;
    let exact = (1.0 - profile.poly_eval(x)).clamp(0.0, 1.0);
    let loose = (1.0 - x.powi(profile.d_min as i32)).clamp(0.0, 1.0);
    Ok(ErrorBounds { exact, loose, loose_vacuous: profile.d_min == 0 })
}

/// Fraction of nonzero entries.
pub fn sparsity_ratio(v: &[f64]) -> f64 {
    assert!(!v.is_empty(), "sparsity ratio of an empty vector");
    v.iter().filter(|&&x| x != 0.0).count() as f64 / v.len() as f64
}

/// One row of the gain table.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GainRow {
    pub errors: usize,
    pub trials: usize,
    pub l1_failures: usize,
    pub l2_failures: usize,
    pub per1: f64,
    pub per2: f64,
    pub per1_ci: (f64, f64),
    pub per2_ci: (f64, f64),
    /// `per1 / per2`; when no level-2 failures were seen this is the lower
    /// bound `per1 * trials` instead and the flag below is set.
    pub gain: f64,
    pub gain_is_lower_bound: bool,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct GainTable {
    pub rows: Vec<GainRow>,
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(failures: usize, trials: usize, z: f64) -> (f64, f64) {
    assert!(trials > 0);
    let n = trials as f64;
    let p = failures as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Pattern error rates and their ratio for one error weight. Failure counts
/// come straight from trial logs; every estimate carries its 95% interval.
pub fn per_gain(
    errors: usize,
    l1_failures: usize,
    l2_failures: usize,
    trials: usize,
) -> Result<GainRow, AnalysisError> {
    if trials == 0 {
        return Err(AnalysisError::EmptyInput("trials must be positive".into()));
    }
    let per1 = l1_failures as f64 / trials as f64;
    let per2 = l2_failures as f64 / trials as f64;
    let (gain, lower_bound) = if l2_failures > 0 {
        (per1 / per2, false)
    } else {
        (per1 * trials as f64, true)
    };
    Ok(GainRow {
        errors,
        trials,
        l1_failures,
        l2_failures,
        per1,
        per2,
        per1_ci: wilson_interval(l1_failures, trials, 1.96),
        per2_ci: wilson_interval(l2_failures, trials, 1.96),
        gain,
        gain_is_lower_bound: lower_bound,
    })
}

impl GainTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "errors,trials,l1_failures,l2_failures,per1,per1_lo,per1_hi,per2,per2_lo,per2_hi,gain,gain_is_lower_bound\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.errors,
                r.trials,
                r.l1_failures,
                r.l2_failures,
                persist::fmt_f64(r.per1),
                persist::fmt_f64(r.per1_ci.0),
                persist::fmt_f64(r.per1_ci.1),
                persist::fmt_f64(r.per2),
                persist::fmt_f64(r.per2_ci.0),
                persist::fmt_f64(r.per2_ci.1),
                persist::fmt_f64(r.gain),
                r.gain_is_lower_bound as u8,
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), AnalysisError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
