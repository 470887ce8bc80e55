//! Sparse null-space constraint learning.
//!
//! `learn_constraint` runs the simplified iteration: normalize the residual
//! `y = X w / ||X||`, take a gradient-like step `(1+2*lambda) w - 2*alpha X^T y / ||X||`,
//! hard-threshold small entries to zero, and project the dual `lambda` that
//! enforces the norm floor `||w||^2 >= epsilon`. `learn_constraint_reference`
//! keeps the un-simplified form with the second dual and the explicit sparsity
//! gradient; it exists as a cross-check, not a default path.
//!
//! A note on stopping: the loop exits once the residual is below `p` *and*
//! the norm floor holds. Stopping on the residual alone can return an
//! infeasible near-zero vector when the threshold wipes most coordinates in
//! one step, and every consumer of a learned row relies on the floor.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{dot, linf, norm2_sq, Dense};
use crate::persist;
use crate::rng::{child_seed, rng_from, stage};

const DEGENERATE_RETRIES: usize = 10;
const NETWORK_BUDGET_FACTOR: usize = 5;
const COSINE_DIVERSITY_MAX: f64 = 0.95;
const CONVERGED_FRACTION_MIN: f64 = 0.99;
/// Residual improvements smaller than this (relative) do not reset the
/// stagnation window; a run that makes no progress for a whole window is cut
/// short instead of burning the full iteration cap.
const STAGNATION_WINDOW: usize = 2000;
const SPECTRAL_TOL: f64 = 1e-10;
const SPECTRAL_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("matrix is all zero")]
    ZeroMatrix,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("thresholding drove w to zero in every restart")]
    DegenerateZero,
    #[error("lambda {lambda:e} exceeds the safe-schedule bound {bound:e}")]
    LambdaOutOfRange { lambda: f64, bound: f64 },
    #[error("accepted only {accepted} of {wanted} rows after {attempts} attempts")]
    InsufficientRows { accepted: usize, wanted: usize, attempts: usize },
    #[error("invalid learn params: {0}")]
    InvalidParams(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// How the step size `alpha` is chosen when the norm dual is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    /// `min(lambda/a_min, 1 + lambda)`, the reported simulation schedule.
    PaperTable,
    /// Midpoint of the open interval `(lambda/a_min, min(1, 1+lambda))`
    /// that makes every entry of the iteration matrix strictly contractive;
    /// errors if `lambda` leaves the admissible range.
    TheoremSafe,
}

impl AlphaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlphaMode::PaperTable => "paper-table",
            AlphaMode::TheoremSafe => "theorem-safe",
        }
    }
}

impl std::str::FromStr for AlphaMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper-table" => Ok(AlphaMode::PaperTable),
            "theorem-safe" => Ok(AlphaMode::TheoremSafe),
            other => Err(format!("unknown alpha mode `{other}` (paper-table|theorem-safe)")),
        }
    }
}

/// Residual stopping threshold; the standard setting scales with the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PStop {
    /// `p = coeff / ||X||_2`.
    OverNormX(f64),
    Fixed(f64),
}

impl PStop {
    pub fn resolve(&self, norm_x: f64) -> f64 {
        match *self {
            PStop::OverNormX(c) => c / norm_x,
            PStop::Fixed(v) => v,
        }
    }
}

/// Learner knobs. `Default` is the reported simulation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnParams {
    /// Norm floor `epsilon` on `||w||^2`.
    pub epsilon: f64,
    /// Target l0 bound `q` (informational).
    pub q: Option<usize>,
    /// Relaxed sparsity target `q'` for the reference learner; `None` means
    /// `n/2` at run time.
    pub q_prime: Option<f64>,
    /// Dual step size `delta`.
    pub delta: f64,
    /// Threshold schedule coefficient: `theta_t = theta_c / t`.
    pub theta_c: f64,
    pub alpha_mode: AlphaMode,
    /// `alpha` used whenever `lambda = 0`.
    pub alpha_fixed: f64,
    pub p_stop: PStop,
    /// Sharpness of the sparsity penalty.
    pub sigma: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            q: None,
            q_prime: None,
            delta: 10.0,
            theta_c: 0.25,
            alpha_mode: AlphaMode::PaperTable,
            alpha_fixed: 0.49,
            p_stop: PStop::OverNormX(0.01),
            sigma: 1.0,
            max_iters: 50_000,
            seed: 0,
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let fail = |m: String| Err(LearnError::InvalidParams(m));
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon={} must be > 0", self.epsilon));
        }
        if !(self.delta > 0.0) {
            return fail(format!("delta={} must be > 0", self.delta));
        }
        if !(self.theta_c > 0.0) {
            return fail(format!("theta_c={} must be > 0", self.theta_c));
        }
        if !(self.alpha_fixed > 0.0 && self.alpha_fixed < 1.0) {
            return fail(format!("alpha_fixed={} must be in (0,1)", self.alpha_fixed));
        }
        let p = match self.p_stop {
            PStop::OverNormX(c) => c,
            PStop::Fixed(v) => v,
        };
        if !(p > 0.0) {
            return fail(format!("p={p} must be > 0"));
        }
        if !(self.sigma > 0.0) {
            return fail(format!("sigma={} must be > 0", self.sigma));
        }
        if self.max_iters == 0 {
            return fail("max_iters must be >= 1".into());
        }
        Ok(())
    }

    /// Canonical form used for the persisted params hash (seed excluded; the
    /// per-row seeds are recorded next to the rows).
    pub fn canonical_string(&self) -> String {
        let p = match self.p_stop {
            PStop::OverNormX(c) => format!("{}/normX", persist::fmt_f64(c)),
            PStop::Fixed(v) => persist::fmt_f64(v),
        };
        format!(
            "epsilon={},delta={},theta_c={},alpha_mode={},alpha_fixed={},p={},sigma={},max_iters={},q={},q_prime={}",
            persist::fmt_f64(self.epsilon),
            persist::fmt_f64(self.delta),
            persist::fmt_f64(self.theta_c),
            self.alpha_mode.as_str(),
            persist::fmt_f64(self.alpha_fixed),
            p,
            persist::fmt_f64(self.sigma),
            self.max_iters,
            self.q.map_or("auto".into(), |v| v.to_string()),
            self.q_prime.map_or("auto".into(), persist::fmt_f64),
        )
    }

    pub fn params_hash(&self) -> u64 {
        persist::fnv1a64(&self.canonical_string())
    }
}

/// Per-iteration record of a learner run. Entry `t` of `residuals`/`lambdas`
/// describes the state *before* update `t`; `alphas`/`thetas`/`gammas` hold
/// the values used *by* update `t`, so they are one shorter when the run
/// stops at a residual check.
#[derive(Debug, Clone, Default)]
pub struct LearnTrace {
    pub residuals: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LearnRun {
    pub w: Vec<f64>,
    pub trace: LearnTrace,
    pub converged: bool,
    /// Number of `w` updates performed.
    pub iterations: usize,
    pub norm_x: f64,
}

/// Largest singular value by power iteration on the Gram operator,
/// relative tolerance 1e-10, iteration cap 10000.
pub fn spectral_norm(x: &Dense) -> Result<f64, LearnError> {
    if x.is_zero() {
        return Err(LearnError::ZeroMatrix);
    }
    let (r, c) = (x.rows(), x.cols());
    // Iterate on the smaller side; both Gram operators share the top
    // eigenvalue sigma^2.
    let col_side = c <= r;
    let dim = if col_side { c } else { r };
    let other = if col_side { r } else { c };
    let mut rng = rng_from(0x5EED_5EED);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut u = vec![0.0; other];
    let mut w = vec![0.0; dim];
    let mut prev = 0.0_f64;
    for _ in 0..SPECTRAL_CAP {
        if col_side {
            x.matvec(&v, &mut u);
            x.matvec_t(&u, &mut w);
        } else {
            x.matvec_t(&v, &mut u);
            x.matvec(&u, &mut w);
        }
        let s2 = norm2_sq(&u);
        let sigma = s2.sqrt();
        if sigma == 0.0 || norm2_sq(&w) == 0.0 {
            // Start vector fell in the null space; redraw.
            for vi in v.iter_mut() {
                *vi = rng.random_range(-1.0..1.0);
            }
            normalize(&mut v);
            prev = 0.0;
            continue;
        }
        if prev > 0.0 && (sigma - prev).abs() <= SPECTRAL_TOL * sigma {
            return Ok(sigma);
        }
        prev = sigma;
        v.copy_from_slice(&w);
        normalize(&mut v);
    }
    Ok(prev)
}

fn normalize(v: &mut [f64]) {
    let n = norm2_sq(v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Point-wise threshold: passes values strictly beyond `theta` through
/// unchanged and zeroes the rest (value-preserving, no shrinkage).
pub fn soft_threshold(u: f64, theta: f64) -> f64 {
    if u > theta || u < -theta {
        u
    } else {
        0.0
    }
}

/// `g(w) = sum tanh(sigma w_i^2)`, a smooth stand-in for the l0 count.
pub fn sparsity_penalty(w: &[f64], sigma: f64) -> f64 {
    w.iter().map(|&v| (sigma * v * v).tanh()).sum()
}

/// Gradient of [`sparsity_penalty`]: `2 sigma w_i (1 - tanh(sigma w_i^2)^2)`.
pub fn sparsity_grad(w: &[f64], sigma: f64) -> Vec<f64> {
    w.iter()
        .map(|&v| {
            let t = (sigma * v * v).tanh();
            2.0 * sigma * v * (1.0 - t * t)
        })
        .collect()
}

/// Step size for the `w` update given the active dual.
///
/// `a_min`/`a_max` are the extreme normalized row energies
/// `||x_mu||^2 / ||X||_2^2`.
pub fn alpha_schedule(
    lambda: f64,
    a_min: f64,
    a_max: f64,
    mode: AlphaMode,
    alpha_fixed: f64,
) -> Result<f64, LearnError> {
    if lambda == 0.0 {
        return Ok(alpha_fixed);
    }
    match mode {
        AlphaMode::PaperTable => Ok((lambda / a_min).min(1.0 + lambda)),
        AlphaMode::TheoremSafe => {
            let spread = a_max - a_min;
            let bound = if spread > 0.0 { a_min / spread } else { f64::INFINITY };
            if lambda > bound {
                return Err(LearnError::LambdaOutOfRange { lambda, bound });
            }
            Ok((lambda / a_min + (1.0 + lambda).min(1.0)) / 2.0)
        }
    }
}

struct Prepared {
    x: Dense,
    norm_x: f64,
    a_min: f64,
    a_max: f64,
    p: f64,
}

/// Drop all-zero rows (they carry no constraint and would zero `a_min`),
/// compute the spectral norm and the normalized row energies.
fn prepare(x: &Dense, params: &LearnParams) -> Result<Prepared, LearnError> {
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .map(|i| x.row(i).to_vec())
        .filter(|r| r.iter().any(|&v| v != 0.0))
        .collect();
    if rows.is_empty() {
        return Err(LearnError::ZeroMatrix);
    }
    let x = Dense::from_rows(rows);
    let norm_x = spectral_norm(&x)?;
    let n2 = norm_x * norm_x;
    let mut a_min = f64::INFINITY;
    let mut a_max = 0.0_f64;
    for i in 0..x.rows() {
        let a = norm2_sq(x.row(i)) / n2;
        a_min = a_min.min(a);
        a_max = a_max.max(a);
    }
    let p = params.p_stop.resolve(norm_x);
    Ok(Prepared { x, norm_x, a_min, a_max, p })
}

enum IterationEnd {
    Finished(LearnRun),
    Degenerate,
}

fn init_w(n: usize, epsilon: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale = (2.0 * epsilon / norm2_sq(&w)).sqrt();
    for v in w.iter_mut() {
        *v *= scale;
    }
    w
}

fn run_iteration(
    prep: &Prepared,
    params: &LearnParams,
    theta_c: f64,
    seed: u64,
    reference: bool,
) -> Result<IterationEnd, LearnError> {
    let x = &prep.x;
    let n = x.cols();
    let c = x.rows();
    let q_prime = params.q_prime.unwrap_or(n as f64 / 2.0);

    let mut w = init_w(n, params.epsilon, seed);
    let mut lambda = 0.0_f64;
    let mut gamma = 0.0_f64;
    let mut y = vec![0.0; c];
    let mut xty = vec![0.0; n];
    let mut trace = LearnTrace::default();
    let mut best_e = f64::INFINITY;
    let mut best_t = 0usize;

    for t in 1..=params.max_iters {
        x.matvec(&w, &mut y);
        for v in y.iter_mut() {
            *v /= prep.norm_x;
        }
        let e = linf(&y);
        trace.residuals.push(e);
        trace.lambdas.push(lambda);
        trace.gammas.push(gamma);
        if e <= prep.p && norm2_sq(&w) >= params.epsilon {
            return Ok(IterationEnd::Finished(LearnRun {
                w,
                iterations: trace.alphas.len(),
                trace,
                converged: true,
                norm_x: prep.norm_x,
            }));
        }
        if e < best_e * (1.0 - 1e-9) {
            best_e = e;
            best_t = t;
        } else if t - best_t > STAGNATION_WINDOW {
            break;
        }

        let alpha =
            alpha_schedule(lambda, prep.a_min, prep.a_max, params.alpha_mode, params.alpha_fixed)?;
        let theta = theta_c / t as f64;
        trace.alphas.push(alpha);
        trace.thetas.push(theta);

        x.matvec_t(&y, &mut xty);
        let scale = 1.0 + 2.0 * lambda;
        if reference {
            let g = sparsity_grad(&w, params.sigma);
            for i in 0..n {
                w[i] = scale * w[i] - 2.0 * alpha * xty[i] / prep.norm_x - gamma * g[i];
            }
        } else {
            for i in 0..n {
                w[i] = soft_threshold(scale * w[i] - 2.0 * alpha * xty[i] / prep.norm_x, theta);
            }
            if w.iter().all(|&v| v == 0.0) {
                return Ok(IterationEnd::Degenerate);
            }
        }
        let nw = norm2_sq(&w);
        lambda = (lambda + params.delta * (params.epsilon - nw)).max(0.0);
        if reference {
            gamma = (gamma + params.delta * (sparsity_penalty(&w, params.sigma) - q_prime)).max(0.0);
        }
    }

    // Cap or stagnation: report the final state honestly.
    x.matvec(&w, &mut y);
    for v in y.iter_mut() {
        *v /= prep.norm_x;
    }
    let e = linf(&y);
    trace.residuals.push(e);
    trace.lambdas.push(lambda);
    trace.gammas.push(gamma);
    let converged = e <= prep.p && norm2_sq(&w) >= params.epsilon;
    Ok(IterationEnd::Finished(LearnRun {
        w,
        iterations: trace.alphas.len(),
        trace,
        converged,
        norm_x: prep.norm_x,
    }))
}

fn run_with_restarts(x: &Dense, params: &LearnParams, reference: bool) -> Result<LearnRun, LearnError> {
    params.validate()?;
    let prep = prepare(x, params)?;
    let mut theta_c = params.theta_c;
    for retry in 0..DEGENERATE_RETRIES {
        let seed = child_seed(params.seed, stage::LEARN_RETRY, retry as u64);
        match run_iteration(&prep, params, theta_c, seed, reference)? {
            IterationEnd::Finished(run) => return Ok(run),
            IterationEnd::Degenerate => theta_c /= 2.0,
        }
    }
    Err(LearnError::DegenerateZero)
}

/// Full-trace learner run; non-convergence is reported in the result rather
/// than as an error.
pub fn learn_constraint_full(x: &Dense, params: &LearnParams) -> Result<LearnRun, LearnError> {
    run_with_restarts(x, params, false)
}

/// Learn one constraint vector. Returns the vector and the residual trace.
pub fn learn_constraint(x: &Dense, params: &LearnParams) -> Result<(Vec<f64>, Vec<f64>), LearnError> {
    let run = learn_constraint_full(x, params)?;
    if !run.converged {
        return Err(LearnError::NoConvergence {
            iterations: run.iterations,
            residual: *run.trace.residuals.last().unwrap(),
        });
    }
    Ok((run.w, run.trace.residuals))
}

/// Un-simplified primal-dual iteration with the second dual and the explicit
/// sparsity gradient; cross-check path.
pub fn learn_constraint_reference(x: &Dense, params: &LearnParams) -> Result<Vec<f64>, LearnError> {
    let run = learn_constraint_reference_full(x, params)?;
    if !run.converged {
        return Err(LearnError::NoConvergence {
            iterations: run.iterations,
            residual: *run.trace.residuals.last().unwrap(),
        });
    }
    Ok(run.w)
}

pub fn learn_constraint_reference_full(x: &Dense, params: &LearnParams) -> Result<LearnRun, LearnError> {
    run_with_restarts(x, params, true)
}

/// One learned row stored sparsely; thresholding produces exact zeros, so
/// "nonzero" needs no epsilon.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn from_dense(w: &[f64]) -> Self {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, &v) in w.iter().enumerate() {
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn dot_int(&self, x: &[i64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * x[i] as f64).sum()
    }

    pub fn dot_f64(&self, x: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * x[i]).sum()
    }

    pub fn norm2_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

fn sparse_cosine(a: &SparseRow, b: &SparseRow, n: usize) -> f64 {
    let bd = b.to_dense(n);
    let num: f64 = a.indices.iter().zip(&a.values).map(|(&i, &v)| v * bd[i]).sum();
    let den = (a.norm2_sq() * b.norm2_sq()).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// A learned constraint graph: `m` sparse rows over `n` pattern nodes, plus
/// the acceptance-time evidence for each row.
#[derive(Debug, Clone)]
pub struct ConstraintGraph {
    pub n: usize,
    pub rows: Vec<SparseRow>,
    /// `max_mu |x_mu . w| / ||X||_2` at acceptance.
    pub residuals: Vec<f64>,
    /// Fraction of training patterns within the per-pattern threshold.
    pub converged_fraction: Vec<f64>,
    pub iterations: Vec<usize>,
    pub seeds: Vec<u64>,
    pub norm_x: f64,
    pub params_hash: u64,
}

impl ConstraintGraph {
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn column_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n];
        for row in &self.rows {
            for &j in &row.indices {
                deg[j] += 1;
            }
        }
        deg
    }

    pub fn mean_sparsity(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.nnz() as f64 / self.n as f64).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let join_f64 = |v: &[f64]| v.iter().map(|x| persist::fmt_f64(*x)).collect::<Vec<_>>().join(";");
        let mut out = format!(
            "m={},n={},norm_x={},params_hash={:016x},seeds={},residuals={},converged={},iters={}",
            self.m(),
            self.n,
            persist::fmt_f64(self.norm_x),
            self.params_hash,
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
            join_f64(&self.residuals),
            join_f64(&self.converged_fraction),
            self.iterations.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
        );
        out.push('\n');
        out.push_str("row,col,value\n");
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, &v) in row.indices.iter().zip(&row.values) {
                let _ = writeln!(out, "{},{},{}", i, j, persist::fmt_f64(v));
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| LearnError::Parse("empty graph file".into()))?;
        let kv = persist::parse_kv_line(header).map_err(LearnError::Parse)?;
        let get = |k: &str| kv.get(k).ok_or_else(|| LearnError::Parse(format!("header missing `{k}`")));
        let m: usize = get("m")?.parse().map_err(|e| LearnError::Parse(format!("m: {e}")))?;
        let n: usize = get("n")?.parse().map_err(|e| LearnError::Parse(format!("n: {e}")))?;
        let norm_x = persist::parse_f64(get("norm_x")?).map_err(LearnError::Parse)?;
        let params_hash = u64::from_str_radix(get("params_hash")?, 16)
            .map_err(|e| LearnError::Parse(format!("params_hash: {e}")))?;
        let list_u64 = |s: &str| -> Result<Vec<u64>, LearnError> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(';').map(|t| t.parse::<u64>().map_err(|e| LearnError::Parse(format!("{e}")))).collect()
        };
        let list_f64 = |s: &str| -> Result<Vec<f64>, LearnError> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(';').map(|t| persist::parse_f64(t).map_err(LearnError::Parse)).collect()
        };
        let seeds = list_u64(get("seeds")?)?;
        let residuals = list_f64(get("residuals")?)?;
        let converged_fraction = list_f64(get("converged")?)?;
        let iterations = list_u64(get("iters")?)?.into_iter().map(|v| v as usize).collect();

        let mut rows: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); m];
        for line in lines {
            let line = line.trim();
            if line.is_empty() || line == "row,col,value" {
                continue;
            }
            let mut it = line.split(',');
            let (r, c, v) = (it.next(), it.next(), it.next());
            let (r, c, v) = match (r, c, v) {
                (Some(r), Some(c), Some(v)) => (r, c, v),
                _ => return Err(LearnError::Parse(format!("bad triplet line `{line}`"))),
            };
            let r: usize = r.parse().map_err(|e| LearnError::Parse(format!("row: {e}")))?;
            let c: usize = c.parse().map_err(|e| LearnError::Parse(format!("col: {e}")))?;
            let v = persist::parse_f64(v).map_err(LearnError::Parse)?;
            if r >= m || c >= n {
                return Err(LearnError::Parse(format!("triplet ({r},{c}) out of bounds {m}x{n}")));
            }
            rows[r].0.push(c);
            rows[r].1.push(v);
        }
        if rows.iter().any(|(idx, _)| idx.is_empty()) {
            return Err(LearnError::Parse("graph has an all-zero row".into()));
        }
        Ok(Self {
            n,
            rows: rows.into_iter().map(|(indices, values)| SparseRow { indices, values }).collect(),
            residuals,
            converged_fraction,
            iterations,
            seeds,
            norm_x,
            params_hash,
        })
    }
}

/// Learn `m` diverse constraint rows by independent restarts.
///
/// A candidate is accepted when at least 99% of the training patterns sit
/// within the per-pattern residual threshold, the norm floor holds, and its
/// absolute cosine to every already-accepted row is at most 0.95. Candidates
/// are produced in parallel but accepted in seed-index order, so the result
/// is independent of thread scheduling.
pub fn learn_network(x: &Dense, m: usize, params: &LearnParams) -> Result<ConstraintGraph, LearnError> {
    if m == 0 {
        return Err(LearnError::InvalidParams("m must be >= 1".into()));
    }
    params.validate()?;
    let prep = prepare(x, params)?;
    let budget = NETWORK_BUDGET_FACTOR * m;
    let per_pattern_threshold = prep.p * prep.norm_x;

    let mut rows: Vec<SparseRow> = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    let mut converged_fraction = Vec::with_capacity(m);
    let mut iterations = Vec::with_capacity(m);
    let mut seeds = Vec::with_capacity(m);
    let mut attempt = 0usize;

    while rows.len() < m && attempt < budget {
        let batch_end = (attempt + (m - rows.len())).min(budget);
        let batch: Vec<usize> = (attempt..batch_end).collect();
        attempt = batch_end;
        let runs: Vec<(u64, Result<LearnRun, LearnError>)> = batch
            .par_iter()
            .map(|&i| {
                let seed = child_seed(params.seed, stage::NETWORK_ROW, i as u64);
                let p = LearnParams { seed, ..params.clone() };
                (seed, run_with_restarts_prepared(&prep, &p, false))
            })
            .collect();
        for (seed, res) in runs {
            if rows.len() >= m {
                break;
            }
            let run = match res {
                Ok(run) => run,
                Err(LearnError::DegenerateZero) => continue,
                Err(e) => return Err(e),
            };
            if norm2_sq(&run.w) < params.epsilon {
                continue;
            }
            let mut within = 0usize;
            let mut max_abs = 0.0_f64;
            for i in 0..prep.x.rows() {
                let r = dot(prep.x.row(i), &run.w).abs();
                max_abs = max_abs.max(r);
                if r <= per_pattern_threshold {
                    within += 1;
                }
            }
            let fraction = within as f64 / prep.x.rows() as f64;
            if fraction < CONVERGED_FRACTION_MIN {
                continue;
            }
            let cand = SparseRow::from_dense(&run.w);
            if rows.iter().any(|r| sparse_cosine(r, &cand, prep.x.cols()).abs() > COSINE_DIVERSITY_MAX) {
                continue;
            }
            rows.push(cand);
            residuals.push(max_abs / prep.norm_x);
            converged_fraction.push(fraction);
            iterations.push(run.iterations);
            seeds.push(seed);
        }
    }

    if rows.len() < m {
        return Err(LearnError::InsufficientRows { accepted: rows.len(), wanted: m, attempts: attempt });
    }
    Ok(ConstraintGraph {
        n: prep.x.cols(),
        rows,
        residuals,
        converged_fraction,
        iterations,
        seeds,
        norm_x: prep.norm_x,
        params_hash: params.params_hash(),
    })
}

fn run_with_restarts_prepared(
    prep: &Prepared,
    params: &LearnParams,
    reference: bool,
) -> Result<LearnRun, LearnError> {
    let mut theta_c = params.theta_c;
    for retry in 0..DEGENERATE_RETRIES {
        let seed = child_seed(params.seed, stage::LEARN_RETRY, retry as u64);
        match run_iteration(prep, params, theta_c, seed, reference)? {
            IterationEnd::Finished(run) => return Ok(run),
            IterationEnd::Degenerate => theta_c /= 2.0,
        }
    }
    Err(LearnError::DegenerateZero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Dense;

    fn axes_instance() -> Dense {
        Dense::from_rows(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]])
    }

    #[test]
    fn threshold_passes_big_values_and_zeroes_the_band() {
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(2.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-2.0, 1.0), -2.0);
        // Boundary is not strict-greater.
        assert_eq!(soft_threshold(1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
    }

    #[test]
    fn sparsity_penalty_at_zero_and_saturation() {
        let zero = vec![0.0; 5];
        assert_eq!(sparsity_penalty(&zero, 1.0), 0.0);
        assert!(sparsity_grad(&zero, 1.0).iter().all(|&v| v == 0.0));
        // Large entries saturate: the gradient falls off to ~0.
        let big = vec![50.0];
        assert!(sparsity_grad(&big, 1.0)[0].abs() < 1e-12);
        let w = vec![0.3, -0.7];
        let g = sparsity_penalty(&w, 2.0);
        assert!(g > 0.0 && g < 2.0);
    }

    #[test]
    fn sparsity_grad_matches_central_differences() {
        let mut rng = rng_from(77);
        let h = 1e-6;
        for _ in 0..20 {
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = sparsity_grad(&w, 1.0);
            for i in 0..w.len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let num = (sparsity_penalty(&wp, 1.0) - sparsity_penalty(&wm, 1.0)) / (2.0 * h);
                let denom = g[i].abs().max(num.abs()).max(1e-12);
                assert!((num - g[i]).abs() / denom < 1e-6, "i={i} num={num} ana={}", g[i]);
            }
        }
    }

    #[test]
    fn spectral_norm_of_simple_matrices() {
        let id = Dense::from_rows(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        assert!((spectral_norm(&id).unwrap() - 1.0).abs() < 1e-9);
        let diag = Dense::from_rows(vec![vec![3.0, 0.0], vec![0.0, 4.0]]);
        assert!((spectral_norm(&diag).unwrap() - 4.0).abs() < 1e-9);
        assert!(matches!(spectral_norm(&Dense::zeros(3, 3)), Err(LearnError::ZeroMatrix)));
    }

    #[test]
    fn alpha_schedule_examples() {
        assert_eq!(alpha_schedule(0.0, 0.5, 0.9, AlphaMode::PaperTable, 0.49).unwrap(), 0.49);
        assert_eq!(alpha_schedule(0.0, 0.5, 0.9, AlphaMode::TheoremSafe, 0.49).unwrap(), 0.49);
        let a = alpha_schedule(0.1, 0.5, 0.9, AlphaMode::PaperTable, 0.49).unwrap();
        assert!((a - 0.2).abs() < 1e-15);
        let a = alpha_schedule(0.1, 0.5, 0.9, AlphaMode::TheoremSafe, 0.49).unwrap();
        assert!((a - 0.6).abs() < 1e-15);
        // lambda above a_min/(a_max - a_min) is rejected in safe mode.
        assert!(matches!(
            alpha_schedule(2.0, 0.5, 0.9, AlphaMode::TheoremSafe, 0.49),
            Err(LearnError::LambdaOutOfRange { .. })
        ));
    }

    #[test]
    fn learns_the_missing_axis() {
        let x = axes_instance();
        let params = LearnParams { seed: 5, ..Default::default() };
        let (w, trace) = learn_constraint(&x, &params).unwrap();
        let p = 0.01; // p_stop resolves to 0.01 / ||X|| with ||X|| = 1
        assert!(w[0].abs() <= p && w[1].abs() <= p, "w = {w:?}");
        assert!(w[2].abs() >= 0.1, "|w3| = {} below sqrt(eps)", w[2].abs());
        assert!(!trace.is_empty());
        assert!(trace.last().unwrap() <= &p);
    }

    #[test]
    fn full_rank_square_matrix_cannot_converge() {
        let x = Dense::from_rows(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let params = LearnParams { seed: 1, max_iters: 5000, ..Default::default() };
        match learn_constraint(&x, &params) {
            Err(LearnError::NoConvergence { .. }) | Err(LearnError::DegenerateZero) => {}
            other => panic!("expected failure on trivial null space, got {other:?}"),
        }
    }

    #[test]
    fn learner_is_deterministic_in_seed() {
        let x = axes_instance();
        let params = LearnParams { seed: 9, ..Default::default() };
        let (w1, _) = learn_constraint(&x, &params).unwrap();
        let (w2, _) = learn_constraint(&x, &params).unwrap();
        assert_eq!(w1, w2);
    }

    #[test]
    fn reference_learner_reaches_the_null_space_too() {
        let x = axes_instance();
        let params = LearnParams { seed: 5, ..Default::default() };
        let w = learn_constraint_reference(&x, &params).unwrap();
        assert!(w[0].abs() <= 0.01 && w[1].abs() <= 0.01, "w = {w:?}");
        assert!(w[2].abs() >= 0.1);
    }

    #[test]
    fn slack_duals_stay_at_zero_under_projection() {
        let x = axes_instance();
        // Huge q' keeps the sparsity constraint slack; the norm starts at
        // 2*eps so lambda starts slack as well.
        let params = LearnParams { seed: 5, q_prime: Some(1e6), ..Default::default() };
        let run = learn_constraint_reference_full(&x, &params).unwrap();
        assert!(run.trace.gammas.iter().all(|&g| g == 0.0));
        assert_eq!(run.trace.lambdas[0], 0.0);
        assert!(run.trace.lambdas.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn reference_with_slack_gamma_matches_thresholdless_run() {
        let x = axes_instance();
        // theta ~ 0 makes the threshold a no-op, gamma pinned at zero makes
        // the reference update identical; trajectories must agree bitwise.
        let base = LearnParams { seed: 21, q_prime: Some(1e9), ..Default::default() };
        let reference = learn_constraint_reference_full(&x, &base).unwrap();
        let thresholdless =
            learn_constraint_full(&x, &LearnParams { theta_c: f64::MIN_POSITIVE, ..base.clone() })
                .unwrap();
        assert_eq!(reference.trace.residuals, thresholdless.trace.residuals);
        assert_eq!(reference.w, thresholdless.w);
    }

    #[test]
    fn network_of_one_row_spans_the_null_axis() {
        let x = axes_instance();
        let params = LearnParams { seed: 3, ..Default::default() };
        let g = learn_network(&x, 1, &params).unwrap();
        assert_eq!(g.m(), 1);
        let w = g.rows[0].to_dense(3);
        assert!(w[0].abs() <= 0.01 && w[1].abs() <= 0.01);
        assert!(w[2].abs() >= 0.1);
        assert!(g.converged_fraction[0] >= 0.99);
        assert!(g.residuals[0] <= 0.01 + 1e-12);
    }

    #[test]
    fn diversity_filter_caps_rows_at_the_null_space_dimension() {
        let x = axes_instance();
        let params = LearnParams { seed: 3, ..Default::default() };
        match learn_network(&x, 2, &params) {
            Err(LearnError::InsufficientRows { accepted, wanted: 2, .. }) => assert!(accepted <= 1),
            other => panic!("expected InsufficientRows, got {other:?}"),
        }
    }

    #[test]
    fn graph_round_trips_through_csv() {
        let x = axes_instance();
        let params = LearnParams { seed: 3, ..Default::default() };
        let g = learn_network(&x, 1, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        g.save(&path).unwrap();
        let g2 = ConstraintGraph::load(&path).unwrap();
        assert_eq!(g2.m(), g.m());
        assert_eq!(g2.n, g.n);
        assert_eq!(g2.rows, g.rows);
        assert_eq!(g2.norm_x.to_bits(), g.norm_x.to_bits());
        assert_eq!(g2.residuals, g.residuals);
        assert_eq!(g2.params_hash, g.params_hash);
        assert_eq!(g2.seeds, g.seeds);
    }

    #[test]
    fn params_hash_tracks_content_not_seed() {
        let a = LearnParams { seed: 1, ..Default::default() };
        let b = LearnParams { seed: 2, ..Default::default() };
        assert_eq!(a.params_hash(), b.params_hash());
        let c = LearnParams { delta: 11.0, ..Default::default() };
        assert_ne!(a.params_hash(), c.params_hash());
    }
}
