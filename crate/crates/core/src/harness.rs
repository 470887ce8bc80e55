//! End-to-end experiment runner.
//!
//! `run_experiment` wires generate -> learn -> recall sweeps -> reports into
//! one seeded pipeline. Every artifact lands in the output directory:
//! `dataset.csv`, `generator.csv`, `W_local_<i>.csv`, `W_global.csv`,
//! `network.json`, `trials.log` (one line per trial), `report.json`,
//! `per_curve.csv`, `gains.csv` and `run_meta.txt`. Artifacts already present
//! are reused, so `generate`, `learn` and `experiment` compose. Everything in
//! `report.json` is a pure function of `config.echo`, the graph files and
//! `trials.log`; `rerender_report` rebuilds it byte-identically from those.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{per_gain, AnalysisError, GainRow, GainTable};
use crate::config::{ConfigTMax, ExperimentConfig};
use crate::dataset::{
    build_generator, inject_noise, load_patterns, save_generator, save_patterns,
    synthesize_patterns, DatasetError, PatternCount, PatternMatrix,
};
use crate::learner::{learn_network, ConstraintGraph, LearnError, LearnParams};
use crate::persist;
use crate::recall::{multilevel_correct, MultiLevelNetwork, RecallError, RecallParams, TMaxRule};
use crate::rng::{child_seed, rng_from, stage};

use rand::{Rng, RngCore};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Recall(#[from] RecallError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log error: {0}")]
    Log(String),
}

impl HarnessError {
    /// CLI exit code: 1 for things the user got wrong, 2 for runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Dataset(
                DatasetError::InvalidSpec(_)
                | DatasetError::InfeasibleSpec(_)
                | DatasetError::CountExceedsCapacity { .. }
                | DatasetError::EnumerationTooLarge { .. }
                | DatasetError::WeightTooLarge { .. },
            ) => 1,
            HarnessError::Learn(LearnError::InvalidParams(_)) => 1,
            HarnessError::Recall(RecallError::InvalidParams(_)) => 1,
            _ => 2,
        }
    }
}

/// One recall trial, exactly what `trials.log` stores per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    pub seed: u64,
    pub weight: usize,
    pub positions: Vec<usize>,
    /// Level-1 output matched the uncorrupted pattern.
    pub l1_ok: bool,
    /// Final output matched the uncorrupted pattern.
    pub l2_ok: bool,
    pub level: u8,
    pub iters_local: Vec<usize>,
    pub iters_global: usize,
}

impl TrialRecord {
    pub fn to_log_line(&self) -> String {
        let join = |v: &[usize]| {
            if v.is_empty() {
                "-".to_string()
            } else {
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
            }
        };
        format!(
            "seed={} weight={} positions={} l1_ok={} l2_ok={} level={} iters_local={} iters_global={}",
            self.seed,
            self.weight,
            join(&self.positions),
            self.l1_ok as u8,
            self.l2_ok as u8,
            self.level,
            join(&self.iters_local),
            self.iters_global,
        )
    }

    pub fn from_log_line(line: &str) -> Result<Self, HarnessError> {
        let mut kv = std::collections::BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) =
                tok.split_once('=').ok_or_else(|| HarnessError::Log(format!("bad token `{tok}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| HarnessError::Log(format!("missing `{k}`")));
        let list = |s: &str| -> Result<Vec<usize>, HarnessError> {
            if s == "-" {
                return Ok(Vec::new());
            }
            s.split(';')
                .map(|t| t.parse::<usize>().map_err(|e| HarnessError::Log(e.to_string())))
                .collect()
        };
        Ok(TrialRecord {
            seed: get("seed")?.parse().map_err(|e| HarnessError::Log(format!("seed: {e}")))?,
            weight: get("weight")?.parse().map_err(|e| HarnessError::Log(format!("weight: {e}")))?,
            positions: list(get("positions")?)?,
            l1_ok: *get("l1_ok")? == "1",
            l2_ok: *get("l2_ok")? == "1",
            level: get("level")?.parse().map_err(|e| HarnessError::Log(format!("level: {e}")))?,
            iters_local: list(get("iters_local")?)?,
            iters_global: get("iters_global")?
                .parse()
                .map_err(|e| HarnessError::Log(format!("iters_global: {e}")))?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphStats {
    pub label: String,
    pub rows: usize,
    pub n: usize,
    pub mean_iterations: f64,
    pub mean_sparsity: f64,
    pub norm_x: f64,
}

impl GraphStats {
    fn from_graph(label: &str, g: &ConstraintGraph) -> Self {
        Self {
            label: label.to_string(),
            rows: g.m(),
            n: g.n,
            mean_iterations: g.mean_iterations(),
            mean_sparsity: g.mean_sparsity(),
            norm_x: g.norm_x,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: String,
    pub master_seed: u64,
    pub patterns: usize,
    pub learning: Vec<GraphStats>,
    pub per_weight: Vec<GainRow>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Learn the L local graphs (one per column block) and the global graph.
/// Constraint counts follow the architecture: `m = n/L - k` per block and
/// `m_g = n - k_g` globally.
pub fn learn_multilevel(
    pm: &PatternMatrix,
    learn: &LearnParams,
    master_seed: u64,
) -> Result<MultiLevelNetwork, HarnessError> {
    let spec = &pm.spec;
    let m_local = spec.block_len() - spec.k;
    let m_global = spec.n - spec.k_g;
    let mut locals = Vec::with_capacity(spec.l);
    let mut blocks = Vec::with_capacity(spec.l);
    for b in 0..spec.l {
        let x = pm.block_patterns(b).to_dense();
        let params = LearnParams {
            seed: child_seed(master_seed, stage::LOCAL_GRAPH + b as u64, 0),
            ..learn.clone()
        };
        locals.push(learn_network(&x, m_local, &params)?);
        blocks.push((b * spec.block_len(), (b + 1) * spec.block_len()));
    }
    let params =
        LearnParams { seed: child_seed(master_seed, stage::GLOBAL_GRAPH, 0), ..learn.clone() };
    let global = learn_network(&pm.patterns.to_dense(), m_global, &params)?;
    let net = MultiLevelNetwork { locals, global, blocks };
    net.validate()?;
    Ok(net)
}

fn dataset_matches(pm: &PatternMatrix, cfg: &ExperimentConfig) -> bool {
    let a = &pm.spec;
    let b = &cfg.generator;
    a.n == b.n && a.l == b.l && a.k == b.k && a.k_g == b.k_g && a.s == b.s && a.gamma == b.gamma
        && a.upsilon == b.upsilon
}

/// Load the dataset from `out` or generate and persist it.
pub fn ensure_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<PatternMatrix, HarnessError> {
    let dataset_path = out.join("dataset.csv");
    if dataset_path.exists() {
        let pm = load_patterns(&dataset_path)?;
        if !dataset_matches(&pm, cfg) {
            return Err(HarnessError::Config(format!(
                "existing {} does not match the configured generator spec",
                dataset_path.display()
            )));
        }
        return Ok(pm);
    }
    let mut spec = cfg.generator;
    spec.seed = child_seed(cfg.seed, stage::GENERATOR, 0);
    let gen = build_generator(&spec)?;
    let pm = synthesize_patterns(
        &gen,
        PatternCount::Count(cfg.c),
        spec.upsilon,
        spec.s,
        child_seed(cfg.seed, stage::MESSAGES, 0),
    )?;
    save_generator(&gen, &out.join("generator.csv"))?;
    save_patterns(&pm, &dataset_path)?;
    Ok(pm)
}

/// Load the network from `out` or learn and persist it.
pub fn ensure_network(
    cfg: &ExperimentConfig,
    pm: &PatternMatrix,
    out: &Path,
) -> Result<MultiLevelNetwork, HarnessError> {
    let manifest = out.join("network.json");
    if manifest.exists() {
        return Ok(MultiLevelNetwork::load(&manifest)?);
    }
    let net = learn_multilevel(pm, &cfg.learn, cfg.seed)?;
    net.save(out)?;
    Ok(net)
}

fn run_trial(
    cfg: &ExperimentConfig,
    pm: &PatternMatrix,
    net: &MultiLevelNetwork,
    weight: usize,
    trial: usize,
) -> Result<TrialRecord, HarnessError> {
    let trial_seed =
        child_seed(cfg.seed, stage::TRIAL, ((weight as u64) << 32) | trial as u64);
    let mut rng = rng_from(trial_seed);
    let idx = rng.random_range(0..pm.count());
    let noise_seed = rng.next_u64();
    let original = pm.row(idx);
    let (noisy, z) = inject_noise(original, weight, cfg.generator.s, noise_seed)?;
    let t_max = match cfg.t_max {
        ConfigTMax::NoiseMultiple(c) => TMaxRule::Explicit((c * weight).max(1)),
        ConfigTMax::Fixed(t) => TMaxRule::Explicit(t),
    };
    let params = RecallParams {
        phi: cfg.phi,
        eps_zero: cfg.eps_recall,
        t_max,
        s: cfg.generator.s,
    };
    let out = multilevel_correct(net, &noisy, &params);
    Ok(TrialRecord {
        seed: trial_seed,
        weight,
        positions: z.positions(),
        l1_ok: out.level1_pattern == original,
        l2_ok: out.pattern == original,
        level: out.level,
        iters_local: out.local_iterations,
        iters_global: out.global_iterations,
    })
}

/// Aggregate raw trial records into per-weight gain rows, in sweep order.
///
/// Accounting: a level-1 error is `level-1 output != original`; a level-2
/// error is counted only when the final output *and* the level-1 output both
/// mismatch, so the second stage is only ever credited or ignored, never
/// blamed for queries the first stage already solved.
pub fn aggregate(sweep: &[usize], records: &[TrialRecord]) -> Result<Vec<GainRow>, HarnessError> {
    let mut rows = Vec::with_capacity(sweep.len());
    for &w in sweep {
        let of_weight: Vec<&TrialRecord> = records.iter().filter(|r| r.weight == w).collect();
        if of_weight.is_empty() {
            return Err(HarnessError::Log(format!("no trials for weight {w}")));
        }
        let l1 = of_weight.iter().filter(|r| !r.l1_ok).count();
        let l2 = of_weight.iter().filter(|r| !r.l1_ok && !r.l2_ok).count();
        rows.push(per_gain(w, l1, l2, of_weight.len())?);
    }
    Ok(rows)
}

fn build_report(
    cfg: &ExperimentConfig,
    patterns: usize,
    net: &MultiLevelNetwork,
    records: &[TrialRecord],
) -> Result<ExperimentReport, HarnessError> {
    let mut learning: Vec<GraphStats> = net
        .locals
        .iter()
        .enumerate()
        .map(|(i, g)| GraphStats::from_graph(&format!("local_{i}"), g))
        .collect();
    learning.push(GraphStats::from_graph("global", &net.global));
    Ok(ExperimentReport {
        config: cfg.canonical_echo(),
        master_seed: cfg.seed,
        patterns,
        learning,
        per_weight: aggregate(&cfg.sweep, records)?,
        wall_clock_secs: 0.0,
    })
}

fn per_curve_csv(rows: &[GainRow]) -> String {
    let mut out =
        String::from("weight,trials,per1,per1_lo,per1_hi,per2,per2_lo,per2_hi\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.errors,
            r.trials,
            persist::fmt_f64(r.per1),
            persist::fmt_f64(r.per1_ci.0),
            persist::fmt_f64(r.per1_ci.1),
            persist::fmt_f64(r.per2),
            persist::fmt_f64(r.per2_ci.0),
            persist::fmt_f64(r.per2_ci.1),
        );
    }
    out
}

fn write_report_files(report: &ExperimentReport, out: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| HarnessError::Log(format!("report serialization: {e}")))?;
    std::fs::write(out.join("report.json"), json + "\n")?;
    std::fs::write(out.join("per_curve.csv"), per_curve_csv(&report.per_weight))?;
    GainTable { rows: report.per_weight.clone() }.save(&out.join("gains.csv"))?;
    Ok(())
}

/// Full pipeline into `out`. Existing artifacts in `out` are reused; pass a
/// fresh directory for a from-scratch run.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.echo"), cfg.canonical_echo())?;

    let pm = ensure_dataset(cfg, out)?;
    let net = ensure_network(cfg, &pm, out)?;

    let mut records: Vec<TrialRecord> = Vec::with_capacity(cfg.sweep.len() * cfg.trials);
    for &weight in &cfg.sweep {
        let batch: Result<Vec<TrialRecord>, HarnessError> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, &pm, &net, weight, t))
            .collect();
        records.extend(batch?);
    }

    let mut log = String::with_capacity(records.len() * 64);
    for r in &records {
        log.push_str(&r.to_log_line());
        log.push('\n');
    }
    std::fs::write(out.join("trials.log"), log)?;

    let mut report = build_report(cfg, pm.count(), &net, &records)?;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    write_report_files(&report, out)?;
    std::fs::write(
        out.join("run_meta.txt"),
        format!("wall_clock_secs={}\n", persist::fmt_f64(report.wall_clock_secs)),
    )?;
    Ok(report)
}

/// Rebuild `report.json`, `per_curve.csv` and `gains.csv` from the persisted
/// `config.echo`, graph files and `trials.log`. Produces byte-identical
/// outputs for unchanged inputs.
pub fn rerender_report(out: &Path) -> Result<ExperimentReport, HarnessError> {
    let cfg = crate::config::load_config(&out.join("config.echo"))?;
    let net = MultiLevelNetwork::load(&out.join("network.json"))?;
    let pm = load_patterns(&out.join("dataset.csv"))?;
    let text = std::fs::read_to_string(out.join("trials.log"))?;
    let records: Vec<TrialRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(TrialRecord::from_log_line)
        .collect::<Result<_, _>>()?;
    let report = build_report(&cfg, pm.count(), &net, &records)?;
    write_report_files(&report, out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const TINY: &str = "\
n = 16
L = 4
k = 3
k_g = 8
C = 40
trials = 15
sweep = 0,1
seed = 11
";

    fn tiny_cfg() -> ExperimentConfig {
        parse_config(TINY).unwrap()
    }

    #[test]
    fn trial_record_log_line_round_trips() {
        let r = TrialRecord {
            seed: 123456789,
            weight: 2,
            positions: vec![3, 9],
            l1_ok: false,
            l2_ok: true,
            level: 2,
            iters_local: vec![1, 4, 1, 1],
            iters_global: 7,
        };
        let line = r.to_log_line();
        assert_eq!(TrialRecord::from_log_line(&line).unwrap(), r);

        let zero = TrialRecord { positions: vec![], ..r };
        assert_eq!(TrialRecord::from_log_line(&zero.to_log_line()).unwrap(), zero);
    }

    #[test]
    fn zero_weight_sweep_has_zero_error_rate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.sweep = vec![0];
        cfg.trials = 10;
        let report = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(report.per_weight.len(), 1);
        assert_eq!(report.per_weight[0].per1, 0.0);
        assert_eq!(report.per_weight[0].per2, 0.0);
    }

    #[test]
    fn identical_seed_gives_byte_identical_logs() {
        let cfg = tiny_cfg();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_experiment(&cfg, d1.path()).unwrap();
        run_experiment(&cfg, d2.path()).unwrap();
        let a = std::fs::read(d1.path().join("trials.log")).unwrap();
        let b = std::fs::read(d2.path().join("trials.log")).unwrap();
        assert_eq!(a, b);
        let ra = std::fs::read(d1.path().join("report.json")).unwrap();
        let rb = std::fs::read(d2.path().join("report.json")).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn rerender_reproduces_the_report_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        run_experiment(&cfg, dir.path()).unwrap();
        let before = std::fs::read(dir.path().join("report.json")).unwrap();
        let curve_before = std::fs::read(dir.path().join("per_curve.csv")).unwrap();
        rerender_report(dir.path()).unwrap();
        let after = std::fs::read(dir.path().join("report.json")).unwrap();
        let curve_after = std::fs::read(dir.path().join("per_curve.csv")).unwrap();
        assert_eq!(before, after);
        assert_eq!(curve_before, curve_after);
    }

    #[test]
    fn artifacts_are_reused_on_a_second_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        run_experiment(&cfg, dir.path()).unwrap();
        let dataset = std::fs::read(dir.path().join("dataset.csv")).unwrap();
        let graph = std::fs::read(dir.path().join("W_global.csv")).unwrap();
        // Second run must load, not regenerate: artifacts stay identical.
        run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(dataset, std::fs::read(dir.path().join("dataset.csv")).unwrap());
        assert_eq!(graph, std::fs::read(dir.path().join("W_global.csv")).unwrap());
    }

    #[test]
    fn mismatched_artifacts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&tiny_cfg(), dir.path()).unwrap();
        let mut other = tiny_cfg();
        other.generator.s = 9;
        match run_experiment(&other, dir.path()) {
            Err(HarnessError::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn level2_accounting_never_exceeds_level1() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.sweep = vec![1, 2, 3];
        cfg.trials = 30;
        let report = run_experiment(&cfg, dir.path()).unwrap();
        for row in &report.per_weight {
            assert!(row.per2 <= row.per1, "weight {}: {} > {}", row.errors, row.per2, row.per1);
        }
    }
}
