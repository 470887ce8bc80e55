//! Bit-flipping error correction over constraint graphs.
//!
//! Constraint neurons report the sign of their violated weighted sum
//! (within an epsilon band around zero); pattern neurons move one state step
//! against the consensus feedback `g_j` when its confidence clears `phi`.
//! Updates are synchronous: every `g_j` is computed from a frozen snapshot,
//! then all moves apply at once. The two-level network first lets each block's
//! local graph clean its sub-pattern, then hands the whole pattern to the
//! global graph if anything is still violated.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{ConstraintGraph, LearnError, SparseRow};

#[derive(Debug, Error)]
pub enum RecallError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("column {col} of the graph has no nonzero entry")]
    ZeroColumn { col: usize },
    #[error("invalid recall params: {0}")]
    InvalidParams(String),
    #[error("graph error: {0}")]
    Graph(#[from] LearnError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Iteration budget rule for [`correct`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TMaxRule {
    Explicit(usize),
    /// `t_max = c * pattern_length`; the fallback when the true noise weight
    /// is unknown (it is unobservable outside a harness).
    PerLength(usize),
}

impl TMaxRule {
    pub fn resolve(&self, pattern_len: usize) -> usize {
        match *self {
            TMaxRule::Explicit(t) => t.max(1),
            TMaxRule::PerLength(c) => (c * pattern_len).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallParams {
    /// Update confidence threshold `phi`; a neuron moves only if `|g_j| > phi`
    /// strictly.
    pub phi: f64,
    /// Band half-width for treating a constraint sum as zero.
    pub eps_zero: f64,
    pub t_max: TMaxRule,
    /// State alphabet size; states clip into `0..s`.
    pub s: i64,
}

impl RecallParams {
    /// The reported recall settings for a given state alphabet.
    pub fn table_defaults(s: i64) -> Self {
        Self { phi: 0.8, eps_zero: 0.01, t_max: TMaxRule::PerLength(20), s }
    }

    pub fn validate(&self) -> Result<(), RecallError> {
        if !(self.phi > 0.0) {
            return Err(RecallError::InvalidParams(format!("phi={} must be > 0", self.phi)));
        }
        if !(self.eps_zero > 0.0) {
            return Err(RecallError::InvalidParams(format!("eps_zero={} must be > 0", self.eps_zero)));
        }
        if self.s < 2 {
            return Err(RecallError::InvalidParams(format!("S={} must be >= 2", self.s)));
        }
        Ok(())
    }
}

/// Result of running [`correct`] on one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecallOutcome {
    pub pattern: Vec<i64>,
    pub iterations: usize,
    /// All constraint sums inside the epsilon band at exit.
    pub satisfied: bool,
}

/// Result of a two-level pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultilevelOutcome {
    /// Final pattern (after the global stage when it ran).
    pub pattern: Vec<i64>,
    /// Concatenated output of the local stage.
    pub level1_pattern: Vec<i64>,
    /// 1 if the locals settled everything, 2 if the global stage ran.
    pub level: u8,
    pub local_iterations: Vec<usize>,
    pub global_iterations: usize,
    /// Every local and global constraint satisfied on the final pattern.
    pub satisfied: bool,
}

/// Constraint-neuron states: `+1` if the weighted sum is below `-eps`, `0`
/// inside the band, `-1` above `+eps`.
pub fn forward_pass(w: &ConstraintGraph, x: &[i64], eps_zero: f64) -> Result<Vec<i8>, RecallError> {
    if x.len() != w.n {
        return Err(RecallError::DimensionMismatch { expected: w.n, got: x.len() });
    }
    Ok(w.rows
        .iter()
        .map(|row| {
            let h = row.dot_int(x);
            if h < -eps_zero {
                1
            } else if h > eps_zero {
                -1
            } else {
                0
            }
        })
        .collect())
}

/// Normalized feedback `g_j = sum_i W_ij y_i / sum_i |W_ij|`.
pub fn backward_pass(w: &ConstraintGraph, y: &[i8]) -> Result<Vec<f64>, RecallError> {
    if y.len() != w.m() {
        return Err(RecallError::DimensionMismatch { expected: w.m(), got: y.len() });
    }
    let (num, den) = feedback_sums(w, y);
    if let Some(col) = den.iter().position(|&d| d == 0.0) {
        return Err(RecallError::ZeroColumn { col });
    }
    Ok(num.iter().zip(&den).map(|(&n, &d)| n / d).collect())
}

fn feedback_sums(w: &ConstraintGraph, y: &[i8]) -> (Vec<f64>, Vec<f64>) {
    let mut num = vec![0.0; w.n];
    let mut den = vec![0.0; w.n];
    for (row, &yi) in w.rows.iter().zip(y) {
        for (&j, &v) in row.indices.iter().zip(&row.values) {
            num[j] += v * yi as f64;
            den[j] += v.abs();
        }
    }
    (num, den)
}

/// True iff the forward pass yields the all-zero vector.
pub fn constraints_satisfied(w: &ConstraintGraph, x: &[i64], eps_zero: f64) -> Result<bool, RecallError> {
    Ok(forward_pass(w, x, eps_zero)?.iter().all(|&y| y == 0))
}

/// Iterate forward/backward passes, moving each pattern neuron by
/// `sgn(g_j)` (clipped into the state range) whenever `|g_j| > phi`.
/// Exits early once all constraints are satisfied; a sweep that moves nothing
/// can never move anything later, so it exits then too. Non-convergence is
/// reported in the outcome, not as an error.
pub fn correct(w: &ConstraintGraph, x_noisy: &[i64], params: &RecallParams) -> RecallOutcome {
    assert_eq!(x_noisy.len(), w.n, "query length {} vs graph width {}", x_noisy.len(), w.n);
    let t_max = params.t_max.resolve(w.n);
    let mut x = x_noisy.to_vec();
    for t in 1..=t_max {
        let y = forward_pass(w, &x, params.eps_zero).expect("dims checked above");
        if y.iter().all(|&v| v == 0) {
            return RecallOutcome { pattern: x, iterations: t, satisfied: true };
        }
        let (num, den) = feedback_sums(w, &y);
        let mut moved = false;
        for j in 0..w.n {
            // A pattern node no constraint watches never updates.
            if den[j] == 0.0 {
                continue;
            }
            let g = num[j] / den[j];
            if g.abs() > params.phi {
                let step = if g > 0.0 { 1 } else { -1 };
                let next = (x[j] + step).clamp(0, params.s - 1);
                moved |= next != x[j];
                x[j] = next;
            }
        }
        if !moved {
            return RecallOutcome { pattern: x, iterations: t, satisfied: false };
        }
    }
    let satisfied = forward_pass(w, &x, params.eps_zero)
        .map(|y| y.iter().all(|&v| v == 0))
        .unwrap_or(false);
    RecallOutcome { pattern: x, iterations: t_max, satisfied }
}

/// Local graphs over the column blocks plus one global graph over the whole
/// pattern.
#[derive(Debug, Clone)]
pub struct MultiLevelNetwork {
    pub locals: Vec<ConstraintGraph>,
    pub global: ConstraintGraph,
    /// Half-open column ranges, one per local graph; they tile `0..n`.
    pub blocks: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct NetworkManifest {
    n: usize,
    local_files: Vec<String>,
    global_file: String,
    blocks: Vec<(usize, usize)>,
}

impl MultiLevelNetwork {
    pub fn n(&self) -> usize {
        self.global.n
    }

    pub fn validate(&self) -> Result<(), RecallError> {
        if self.locals.len() != self.blocks.len() {
            return Err(RecallError::Manifest(format!(
                "{} local graphs but {} blocks",
                self.locals.len(),
                self.blocks.len()
            )));
        }
        let mut cursor = 0usize;
        for (g, &(lo, hi)) in self.locals.iter().zip(&self.blocks) {
            if lo != cursor || hi <= lo {
                return Err(RecallError::Manifest(format!("blocks must tile 0..n, got ({lo},{hi})")));
            }
            if g.n != hi - lo {
                return Err(RecallError::Manifest(format!(
                    "local graph width {} vs block width {}",
                    g.n,
                    hi - lo
                )));
            }
            cursor = hi;
        }
        if cursor != self.global.n {
            return Err(RecallError::Manifest(format!(
                "blocks cover 0..{cursor} but the global graph has n={}",
                self.global.n
            )));
        }
        Ok(())
    }

    /// Write the graphs and a manifest into `dir` using the standard file
    /// names (`W_local_<i>.csv`, `W_global.csv`, `network.json`).
    pub fn save(&self, dir: &Path) -> Result<(), RecallError> {
        std::fs::create_dir_all(dir)?;
        let mut local_files = Vec::new();
        for (i, g) in self.locals.iter().enumerate() {
            let name = format!("W_local_{i}.csv");
            g.save(&dir.join(&name))?;
            local_files.push(name);
        }
        self.global.save(&dir.join("W_global.csv"))?;
        let manifest = NetworkManifest {
            n: self.n(),
            local_files,
            global_file: "W_global.csv".into(),
            blocks: self.blocks.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| RecallError::Manifest(e.to_string()))?;
        std::fs::write(dir.join("network.json"), text + "\n")?;
        Ok(())
    }

    pub fn load(manifest_path: &Path) -> Result<Self, RecallError> {
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let text = std::fs::read_to_string(manifest_path)?;
        let manifest: NetworkManifest =
            serde_json::from_str(&text).map_err(|e| RecallError::Manifest(e.to_string()))?;
        let locals = manifest
            .local_files
            .iter()
            .map(|f| ConstraintGraph::load(&dir.join(f)))
            .collect::<Result<Vec<_>, _>>()?;
        let global = ConstraintGraph::load(&dir.join(&manifest.global_file))?;
        let net = Self { locals, global, blocks: manifest.blocks };
        net.validate()?;
        Ok(net)
    }
}

/// Two-phase correction: local graphs on each sub-pattern, then the global
/// graph on the concatenated result if any constraint anywhere is still
/// unsatisfied.
pub fn multilevel_correct(
    net: &MultiLevelNetwork,
    x_noisy: &[i64],
    params: &RecallParams,
) -> MultilevelOutcome {
    assert_eq!(x_noisy.len(), net.n(), "query length {} vs network n {}", x_noisy.len(), net.n());
    let mut level1 = x_noisy.to_vec();
    let mut local_iterations = Vec::with_capacity(net.locals.len());
    let mut locals_ok = true;
    for (g, &(lo, hi)) in net.locals.iter().zip(&net.blocks) {
        let out = correct(g, &x_noisy[lo..hi], params);
        level1[lo..hi].copy_from_slice(&out.pattern);
        local_iterations.push(out.iterations);
        locals_ok &= out.satisfied;
    }
    let global_ok = constraints_satisfied(&net.global, &level1, params.eps_zero).expect("dims");
    if locals_ok && global_ok {
        return MultilevelOutcome {
            pattern: level1.clone(),
            level1_pattern: level1,
            level: 1,
            local_iterations,
            global_iterations: 0,
            satisfied: true,
        };
    }
    let out = correct(&net.global, &level1, params);
    let satisfied = all_satisfied(net, &out.pattern, params.eps_zero);
    MultilevelOutcome {
        pattern: out.pattern,
        level1_pattern: level1,
        level: 2,
        local_iterations,
        global_iterations: out.iterations,
        satisfied,
    }
}

fn all_satisfied(net: &MultiLevelNetwork, x: &[i64], eps_zero: f64) -> bool {
    let global = constraints_satisfied(&net.global, x, eps_zero).unwrap_or(false);
    let locals = net
        .locals
        .iter()
        .zip(&net.blocks)
        .all(|(g, &(lo, hi))| constraints_satisfied(g, &x[lo..hi], eps_zero).unwrap_or(false));
    global && locals
}

/// Test/bindings helper: a graph from dense rows with empty provenance.
pub fn graph_from_dense_rows(n: usize, rows: Vec<Vec<f64>>) -> Result<ConstraintGraph, RecallError> {
    let m = rows.len();
    let sparse: Vec<SparseRow> = rows
        .iter()
        .map(|r| {
            if r.len() != n {
                return Err(RecallError::DimensionMismatch { expected: n, got: r.len() });
            }
            Ok(SparseRow::from_dense(r))
        })
        .collect::<Result<_, _>>()?;
    if let Some(i) = sparse.iter().position(|r| r.nnz() == 0) {
        return Err(RecallError::Manifest(format!("row {i} is all zero")));
    }
    Ok(ConstraintGraph {
        n,
        rows: sparse,
        residuals: vec![0.0; m],
        converged_fraction: vec![1.0; m],
        iterations: vec![0; m],
        seeds: vec![0; m],
        norm_x: 0.0,
        params_hash: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    /// 3x4 chain graph with distinct column neighborhoods; (2,2,2,2) is a
    /// stored pattern (every row sums to zero).
    fn chain_graph() -> ConstraintGraph {
        graph_from_dense_rows(
            4,
            vec![
                vec![1.0, -1.0, 0.0, 0.0],
                vec![0.0, 1.0, -1.0, 0.0],
                vec![0.0, 0.0, 1.0, -1.0],
            ],
        )
        .unwrap()
    }

    fn chain_params() -> RecallParams {
        RecallParams { phi: 0.8, eps_zero: 0.01, t_max: TMaxRule::Explicit(20), s: 5 }
    }

    #[test]
    fn forward_is_zero_on_a_stored_pattern() {
        let w = chain_graph();
        let y = forward_pass(&w, &[2, 2, 2, 2], 0.01).unwrap();
        assert!(y.iter().all(|&v| v == 0));
    }

    #[test]
    fn forward_sign_map() {
        let w = graph_from_dense_rows(2, vec![vec![1.0, 0.0]]).unwrap();
        assert_eq!(forward_pass(&w, &[2, 5], 0.01).unwrap(), vec![-1]);
        let wneg = graph_from_dense_rows(2, vec![vec![-1.0, 0.0]]).unwrap();
        assert_eq!(forward_pass(&wneg, &[2, 5], 0.01).unwrap(), vec![1]);
        assert!(matches!(
            forward_pass(&w, &[1, 2, 3], 0.01),
            Err(RecallError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn forward_matches_naive_double_loop() {
        let mut rng = rng_from(31);
        for _ in 0..50 {
            let m = rng.random_range(1..6);
            let n = rng.random_range(1..8);
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            if rng.random_bool(0.3) {
                                0.0
                            } else {
                                rng.random_range(-2.0..2.0)
                            }
                        })
                        .collect()
                })
                .collect();
            if rows.iter().any(|r| r.iter().all(|&v| v == 0.0)) {
                continue;
            }
            let x: Vec<i64> = (0..n).map(|_| rng.random_range(0..5)).collect();
            let w = graph_from_dense_rows(n, rows.clone()).unwrap();
            let y = forward_pass(&w, &x, 0.01).unwrap();
            for i in 0..m {
                let mut h = 0.0;
                for j in 0..n {
                    h += rows[i][j] * x[j] as f64;
                }
                let expect = if h < -0.01 {
                    1
                } else if h > 0.01 {
                    -1
                } else {
                    0
                };
                assert_eq!(y[i], expect);
            }
        }
    }

    #[test]
    fn backward_basics() {
        let w = chain_graph();
        assert!(backward_pass(&w, &[0, 0, 0]).unwrap().iter().all(|&g| g == 0.0));
        // Column with entries (1,-1) and y=(1,-1) gives g = (1+1)/2 = 1.
        let w2 = graph_from_dense_rows(1, vec![vec![1.0], vec![-1.0]]).unwrap();
        let g = backward_pass(&w2, &[1, -1]).unwrap();
        assert_eq!(g, vec![1.0]);
    }

    #[test]
    fn backward_rejects_zero_columns() {
        let w = graph_from_dense_rows(2, vec![vec![1.0, 1.0]]).unwrap();
        let mut broken = w.clone();
        broken.rows[0] = SparseRow { indices: vec![0], values: vec![1.0] };
        assert!(matches!(backward_pass(&broken, &[1]), Err(RecallError::ZeroColumn { col: 1 })));
    }

    #[test]
    fn backward_feedback_is_normalized() {
        let mut rng = rng_from(77);
        for _ in 0..1000 {
            let m = rng.random_range(1..5);
            let n = rng.random_range(1..6);
            let rows: Vec<Vec<f64>> =
                (0..m).map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let w = match graph_from_dense_rows(n, rows) {
                Ok(w) => w,
                Err(_) => continue,
            };
            if w.column_degrees().iter().any(|&d| d == 0) {
                continue;
            }
            let y: Vec<i8> = (0..m).map(|_| rng.random_range(-1..2) as i8).collect();
            let g = backward_pass(&w, &y).unwrap();
            assert!(g.iter().all(|&v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_noise_exits_at_first_iteration() {
        let w = chain_graph();
        let out = correct(&w, &[2, 2, 2, 2], &chain_params());
        assert_eq!(out.pattern, vec![2, 2, 2, 2]);
        assert_eq!(out.iterations, 1);
        assert!(out.satisfied);
    }

    #[test]
    fn every_single_error_is_corrected_exhaustively() {
        let w = chain_graph();
        let params = chain_params();
        let stored = [2i64, 2, 2, 2];
        for pos in 0..4 {
            for delta in [-1i64, 1] {
                let mut x = stored;
                x[pos] += delta;
                let out = correct(&w, &x, &params);
                assert_eq!(out.pattern, stored.to_vec(), "pos={pos} delta={delta}");
                assert!(out.satisfied);
                assert!(out.pattern.iter().all(|&v| (0..5).contains(&v)));
            }
        }
    }

    #[test]
    fn stalled_dynamics_report_unsatisfied() {
        // Two +1 errors in the chain make every |g| <= 0.5: nothing moves.
        let w = chain_graph();
        let out = correct(&w, &[3, 3, 2, 2], &chain_params());
        assert!(!out.satisfied);
        assert_eq!(out.pattern, vec![3, 3, 2, 2]);
        assert!(out.iterations <= 20);
    }

    #[test]
    fn satisfaction_matches_norm_oracle() {
        let w = chain_graph();
        let mut rng = rng_from(5);
        for _ in 0..200 {
            let x: Vec<i64> = (0..4).map(|_| rng.random_range(0..5)).collect();
            let fast = constraints_satisfied(&w, &x, 0.01).unwrap();
            let mut hmax = 0.0_f64;
            for row in &w.rows {
                hmax = hmax.max(row.dot_int(&x).abs());
            }
            assert_eq!(fast, hmax <= 0.01);
        }
    }

    fn two_block_net() -> MultiLevelNetwork {
        let local = chain_graph;
        let global = graph_from_dense_rows(
            8,
            vec![
                vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0],
            ],
        )
        .unwrap();
        MultiLevelNetwork { locals: vec![local(), local()], global, blocks: vec![(0, 4), (4, 8)] }
    }

    #[test]
    fn separated_errors_resolve_at_level_one() {
        let net = two_block_net();
        net.validate().unwrap();
        let stored = vec![2i64; 8];
        let mut x = stored.clone();
        x[0] += 1;
        x[5] -= 1;
        let out = multilevel_correct(&net, &x, &chain_params());
        assert_eq!(out.level, 1);
        assert_eq!(out.pattern, stored);
        assert_eq!(out.level1_pattern, stored);
        assert!(out.satisfied);
        assert_eq!(out.global_iterations, 0);
    }

    #[test]
    fn local_failure_escalates_to_level_two() {
        let net = two_block_net();
        let mut x = vec![2i64; 8];
        x[0] += 1;
        x[1] += 1; // two errors in one block stall the local chain graph
        let out = multilevel_correct(&net, &x, &chain_params());
        assert_eq!(out.level, 2);
        assert!(out.global_iterations >= 1);
    }

    #[test]
    fn satisfying_pattern_is_never_degraded() {
        let net = two_block_net();
        let stored = vec![2i64; 8];
        let out = multilevel_correct(&net, &stored, &chain_params());
        assert_eq!(out.level, 1);
        assert_eq!(out.pattern, stored);
        assert!(out.satisfied);
    }

    #[test]
    fn network_round_trips_through_manifest() {
        let net = two_block_net();
        let dir = tempfile::tempdir().unwrap();
        net.save(dir.path()).unwrap();
        let loaded = MultiLevelNetwork::load(&dir.path().join("network.json")).unwrap();
        assert_eq!(loaded.blocks, net.blocks);
        assert_eq!(loaded.locals.len(), 2);
        assert_eq!(loaded.global.rows, net.global.rows);
        // Loaded network behaves identically.
        let mut x = vec![2i64; 8];
        x[3] += 1;
        let a = multilevel_correct(&net, &x, &chain_params());
        let b = multilevel_correct(&loaded, &x, &chain_params());
        assert_eq!(a, b);
    }
}
