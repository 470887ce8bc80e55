use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nullnet::analysis::{degree_profile, single_error_bound};
use nullnet::config::{load_config, ExperimentConfig};
use nullnet::harness::{ensure_dataset, ensure_network, rerender_report, run_experiment, HarnessError};
use nullnet::learner::{AlphaMode, ConstraintGraph};
use nullnet::recall::{multilevel_correct, MultiLevelNetwork};
use nullnet::verify_subspace;

/// Subspace-structured associative memory: learn sparse constraint graphs,
/// correct noisy queries, run seeded experiments.
#[derive(Parser)]
#[command(name = "nullnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output/artifact directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the config master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the alpha schedule mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<AlphaMode>,
}

fn parse_mode(s: &str) -> Result<AlphaMode, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Build the generator and training patterns; writes generator.csv and
    /// dataset.csv.
    Generate(CommonArgs),
    /// Learn the local and global constraint graphs from dataset.csv.
    Learn(CommonArgs),
    /// Correct a single query pattern with a learned network.
    Recall {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated integer query of length n.
        #[arg(long, conflicts_with = "query_file")]
        query: Option<String>,
        /// File holding the comma-separated query.
        #[arg(long)]
        query_file: Option<PathBuf>,
    },
    /// Print the single-error correction bounds of a saved graph.
    Bound {
        /// Artifact directory (default graph: W_global.csv inside it).
        #[arg(long)]
        out: PathBuf,
        /// Specific graph file instead of the global one.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Full pipeline: generate (or load), learn (or load), sweep, report.
    Experiment(CommonArgs),
    /// Re-render report.json, per_curve.csv and gains.csv from trials.log.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_effective_config(common: &CommonArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.generator.seed = seed;
        cfg.learn.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.learn.alpha_mode = mode;
    }
    Ok(cfg)
}

fn cmd_generate(common: &CommonArgs) -> Result<(), HarnessError> {
    let cfg = load_effective_config(common)?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("config.echo"), cfg.canonical_echo())?;
    let pm = ensure_dataset(&cfg, &common.out)?;
    let report = verify_subspace(&pm);
    println!(
        "dataset: {} patterns kept, {} rejected, global rank {} (target {}), block ranks {:?}",
        pm.kept, pm.rejected, report.global_rank, report.k_g, report.block_ranks
    );
    Ok(())
}

fn cmd_learn(common: &CommonArgs) -> Result<(), HarnessError> {
    let cfg = load_effective_config(common)?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("config.echo"), cfg.canonical_echo())?;
    let pm = ensure_dataset(&cfg, &common.out)?;
    let net = ensure_network(&cfg, &pm, &common.out)?;
    for (i, g) in net.locals.iter().enumerate() {
        println!(
            "local_{i}: {} rows over {} nodes, mean iterations {:.1}, mean sparsity {:.3}",
            g.m(),
            g.n,
            g.mean_iterations(),
            g.mean_sparsity()
        );
    }
    let g = &net.global;
    println!(
        "global: {} rows over {} nodes, mean iterations {:.1}, mean sparsity {:.3}",
        g.m(),
        g.n,
        g.mean_iterations(),
        g.mean_sparsity()
    );
    Ok(())
}

fn parse_query(text: &str, n: usize) -> Result<Vec<i64>, HarnessError> {
    let vals: Result<Vec<i64>, _> = text.trim().split(',').map(|t| t.trim().parse::<i64>()).collect();
    let vals = vals.map_err(|e| HarnessError::Config(format!("query: {e}")))?;
    if vals.len() != n {
        return Err(HarnessError::Config(format!("query has {} entries, expected {n}", vals.len())));
    }
    Ok(vals)
}

fn cmd_recall(
    common: &CommonArgs,
    query: Option<&String>,
    query_file: Option<&Path>,
) -> Result<(), HarnessError> {
    let cfg = load_effective_config(common)?;
    let net = MultiLevelNetwork::load(&common.out.join("network.json"))?;
    let text = match (query, query_file) {
        (Some(q), _) => q.clone(),
        (None, Some(path)) => std::fs::read_to_string(path)?,
        (None, None) => return Err(HarnessError::Config("provide --query or --query-file".into())),
    };
    let x = parse_query(&text, net.n())?;
    let out = multilevel_correct(&net, &x, &cfg.recall_params());
    println!(
        "{}",
        out.pattern.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    );
    eprintln!(
        "level {} | local iterations {:?} | global iterations {} | constraints satisfied: {}",
        out.level, out.local_iterations, out.global_iterations, out.satisfied
    );
    Ok(())
}

fn cmd_bound(out: &Path, graph: Option<&Path>) -> Result<(), HarnessError> {
    let path = graph.map(Path::to_path_buf).unwrap_or_else(|| out.join("W_global.csv"));
    let g = ConstraintGraph::load(&path)?;
    let profile = degree_profile(&g)?;
    let bounds = single_error_bound(&profile)?;
    println!(
        "graph {}: m={} n={} d_bar={:.4} d_min={}",
        path.display(),
        profile.m,
        g.n,
        profile.d_bar,
        profile.d_min
    );
    println!("single-error correction bound (exact):  {:.6}", bounds.exact);
    println!("single-error correction bound (loose):  {:.6}", bounds.loose);
    if bounds.loose_vacuous {
        println!("warning: d_min = 0 makes the loose bound vacuous");
    }
    Ok(())
}

fn cmd_experiment(common: &CommonArgs) -> Result<(), HarnessError> {
    let cfg = load_effective_config(common)?;
    let report = run_experiment(&cfg, &common.out)?;
    for row in &report.per_weight {
        let gain = if row.gain_is_lower_bound {
            format!(">= {:.2}", row.gain)
        } else {
            format!("{:.2}", row.gain)
        };
        println!(
            "e={}: PER1 {:.4} [{:.4},{:.4}]  PER2 {:.4} [{:.4},{:.4}]  gain {}  ({} trials)",
            row.errors,
            row.per1,
            row.per1_ci.0,
            row.per1_ci.1,
            row.per2,
            row.per2_ci.0,
            row.per2_ci.1,
            gain,
            row.trials
        );
    }
    println!(
        "report written to {} ({:.1}s)",
        common.out.join("report.json").display(),
        report.wall_clock_secs
    );
    Ok(())
}

fn cmd_report(out: &Path) -> Result<(), HarnessError> {
    rerender_report(out)?;
    println!("re-rendered {}", out.join("report.json").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Learn(c) => cmd_learn(c),
        Command::Recall { common, query, query_file } => {
            cmd_recall(common, query.as_ref(), query_file.as_deref())
        }
        Command::Bound { out, graph } => cmd_bound(out, graph.as_deref()),
        Command::Experiment(c) => cmd_experiment(c),
        Command::Report { out } => cmd_report(out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
