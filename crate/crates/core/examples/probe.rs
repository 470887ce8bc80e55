// Temporary calibration probe; removed before release.
use std::time::Instant;

use nullnet::config::parse_config;
use nullnet::dataset::{build_generator, synthesize_patterns, PatternCount};
use nullnet::harness::{learn_multilevel, run_experiment};
use nullnet::learner::{learn_constraint_full, AlphaMode, LearnParams};
use nullnet::linalg::Dense;
use nullnet::rng::{child_seed, rng_from};
use rand::Rng;

fn desk_cfg(k_g: usize, seed: u64, trials: usize) -> nullnet::ExperimentConfig {
    let text = format!(
        "n = 100\nL = 4\nk = 15\nk_g = {k_g}\nC = 1000\ntrials = {trials}\nsweep = 1,2,3,4,5\nseed = {seed}\n"
    );
    parse_config(&text).unwrap()
}

fn main() {
    let probe: String = std::env::args().nth(1).unwrap_or_else(|| "desk".into());
    match probe.as_str() {
        "desk" => probe_desk(),
        "descent" => probe_descent(),
        "descent2" => probe_descent2(),
        "axes" => probe_axes(),
        "block" => probe_block(),
        _ => eprintln!("unknown probe"),
    }
}

/// Tuned-regime probe: args = theta_c p delta cmax
fn probe_descent2() {
    let theta_c: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let p: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let delta: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let cmax: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(40);
    let epsilon: f64 = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let mut violations = 0usize;
    let mut dmax_ge1 = 0usize;
    let mut lambda_oor = 0usize;
    let mut not_converged = 0usize;
    let mut total_pairs = 0usize;
    let mut max_iters_seen = 0usize;
    let t0 = Instant::now();
    for i in 0..100u64 {
        let (n, l, k, k_g) = match i % 4 {
            0 => (16, 4, 3, 4),
            1 => (24, 4, 4, 6),
            2 => (32, 4, 6, 8),
            _ => (20, 2, 4, 5),
        };
        let spec = nullnet::GeneratorSpec {
            n, l, k, k_g,
            gamma: 2, upsilon: 2,
            s: (k as i64) + 1,
            d_star_cap: k,
            seed: 9000 + i,
        };
        let gen = build_generator(&spec).unwrap();
        let c = 10 + (i as usize * 7) % (cmax - 9);
        let pm = synthesize_patterns(&gen, PatternCount::Count(c.min(1 << k_g)), 2, spec.s, 100 + i).unwrap();
        let x = pm.patterns.to_dense();
        let params = LearnParams {
            alpha_mode: AlphaMode::TheoremSafe,
            seed: 5000 + i,
            max_iters: 3000,
            delta,
            theta_c,
            epsilon,
            p_stop: nullnet::PStop::Fixed(p),
            ..Default::default()
        };
        let run = match learn_constraint_full(&x, &params) {
            Ok(r) => r,
            Err(_) => {
                lambda_oor += 1;
                continue;
            }
        };
        if !run.converged {
            not_converged += 1;
        }
        max_iters_seen = max_iters_seen.max(run.iterations);
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .map(|r| x.row(r).to_vec())
            .filter(|r| r.iter().any(|&v| v != 0.0))
            .collect();
        let eff = Dense::from_rows(rows);
        let n2 = run.norm_x * run.norm_x;
        let cc = eff.rows();
        let gram: Vec<Vec<f64>> = (0..cc)
            .map(|a| (0..cc).map(|b| eff.row(a).iter().zip(eff.row(b)).map(|(p, q)| p * q).sum::<f64>()).collect())
            .collect();
        let tr = &run.trace;
        for t in 0..tr.alphas.len() {
            let (lam, alpha) = (tr.lambdas[t], tr.alphas[t]);
            let mut dmax = 0.0_f64;
            for a in 0..cc {
                for b in 0..cc {
                    let mut v = -2.0 * alpha * gram[a][b] / n2;
                    if a == b {
                        v += 1.0 + 2.0 * lam;
                    }
                    dmax = dmax.max(v.abs());
                }
            }
            if dmax >= 1.0 {
                dmax_ge1 += 1;
            }
            total_pairs += 1;
            if tr.residuals[t + 1] > dmax * tr.residuals[t] + tr.thetas[t] + 1e-12 {
                violations += 1;
                if violations <= 5 {
                    println!(
                        "i={i} t={t} lam={lam:.4} dmax={dmax:.4}: {} > {}",
                        tr.residuals[t + 1],
                        dmax * tr.residuals[t] + tr.thetas[t]
                    );
                }
            }
        }
    }
    println!(
        "theta_c={theta_c} p={p} delta={delta} cmax={cmax} eps={epsilon}: pairs {total_pairs}, violations {violations}, dmax>=1 {dmax_ge1}, lambdaOOR {lambda_oor}, not_converged {not_converged}, max_iters {max_iters_seen}, in {:?}",
        t0.elapsed()
    );
}

fn probe_axes() {
    // Verify the e1,e2 instance values in detail.
    let x = Dense::from_rows(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    for seed in 0..20 {
        let params = LearnParams { seed, ..Default::default() };
        match learn_constraint_full(&x, &params) {
            Ok(run) => println!(
                "seed {seed}: w = {:?} |w3| = {:.6} iters = {}",
                run.w,
                run.w[2].abs(),
                run.iterations
            ),
            Err(e) => println!("seed {seed}: {e}"),
        }
    }
}

/// Learn one block-scale graph at a given theta_c; args: theta_c [m] [c]
fn probe_block() {
    let theta_c: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let m: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let c: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let d_star: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(15);
    let cfg = desk_cfg(40, 42, 100);
    let spec = {
        let mut s = cfg.generator;
        s.seed = child_seed(cfg.seed, 0x01, 0);
        s.d_star_cap = d_star;
        s.s = (d_star as i64) * (s.gamma - 1) * (s.upsilon - 1) + 1;
        s
    };
    let gen = build_generator(&spec).unwrap();
    let pm = synthesize_patterns(&gen, PatternCount::Count(c), spec.upsilon, spec.s, child_seed(cfg.seed, 0x02, 0)).unwrap();
    let x = pm.block_patterns(0).to_dense();
    let params = LearnParams { theta_c, seed: 1234, ..Default::default() };
    let t0 = Instant::now();
    let g = match nullnet::learn_network(&x, m, &params) {
        Ok(g) => g,
        Err(e) => {
            println!("theta_c={theta_c}: learn failed: {e}");
            return;
        }
    };
    let deg = g.column_degrees();
    let elapsed = t0.elapsed();
    let mut rng = rng_from(7);
    let mut ok = 0;
    let trials = 2000;
    let rp = nullnet::RecallParams { phi: 0.8, eps_zero: 0.01, t_max: nullnet::TMaxRule::Explicit(20), s: spec.s };
    for _ in 0..trials {
        let idx = rng.random_range(0..pm.count());
        let sub = &pm.row(idx)[0..25];
        let (noisy, _) = nullnet::inject_noise(sub, 1, spec.s, rng.random_range(0..u64::MAX)).unwrap();
        if nullnet::correct(&g, &noisy, &rp).pattern == sub {
            ok += 1;
        }
    }
    let bound = nullnet::degree_profile(&g)
        .ok()
        .and_then(|p| nullnet::single_error_bound(&p).ok())
        .map(|b| (b.exact, b.loose));
    println!(
        "theta_c={theta_c} m={m} C={c}: sparsity {:.3} iters mean {:.0} min_deg {} zero {} d_bar {:.2} rate {:.4} bound {:?} in {:?}",
        g.mean_sparsity(),
        g.mean_iterations(),
        deg.iter().min().unwrap(),
        deg.iter().filter(|&&d| d == 0).count(),
        deg.iter().sum::<usize>() as f64 / deg.len() as f64,
        ok as f64 / trials as f64,
        bound,
        elapsed
    );
}

fn probe_desk() {
    let t0 = Instant::now();
    let cfg = desk_cfg(40, 42, 300);
    let spec = {
        let mut s = cfg.generator;
        s.seed = child_seed(cfg.seed, 0x01, 0);
        s
    };
    let gen = build_generator(&spec).unwrap();
    println!("generator ok in {:?}", t0.elapsed());
    let pm = synthesize_patterns(&gen, PatternCount::Count(cfg.c), spec.upsilon, spec.s, child_seed(cfg.seed, 0x02, 0)).unwrap();
    println!("patterns kept {} rejected {} in {:?}", pm.kept, pm.rejected, t0.elapsed());

    let t1 = Instant::now();
    let net = learn_multilevel(&pm, &cfg.learn, cfg.seed).unwrap();
    println!("learned L+1 graphs in {:?}", t1.elapsed());
    for (i, g) in net.locals.iter().enumerate() {
        let deg = g.column_degrees();
        println!(
            "local_{i}: m={} iters mean {:.0} sparsity {:.3} min_deg {} zero_cols {} min_frac {:.4}",
            g.m(),
            g.mean_iterations(),
            g.mean_sparsity(),
            deg.iter().min().unwrap(),
            deg.iter().filter(|&&d| d == 0).count(),
            g.converged_fraction.iter().cloned().fold(f64::INFINITY, f64::min),
        );
    }
    let deg = net.global.column_degrees();
    println!(
        "global: m={} iters mean {:.0} sparsity {:.3} min_deg {} zero_cols {} min_frac {:.4}",
        net.global.m(),
        net.global.mean_iterations(),
        net.global.mean_sparsity(),
        deg.iter().min().unwrap(),
        deg.iter().filter(|&&d| d == 0).count(),
        net.global.converged_fraction.iter().cloned().fold(f64::INFINITY, f64::min),
    );

    // Single-error recall on block 0.
    let g0 = &net.locals[0];
    let params = nullnet::RecallParams { phi: 0.8, eps_zero: 0.01, t_max: nullnet::TMaxRule::Explicit(20), s: spec.s };
    let mut rng = rng_from(7);
    let mut ok = 0;
    let trials = 2000;
    let t2 = Instant::now();
    for _ in 0..trials {
        let idx = rng.random_range(0..pm.count());
        let sub = &pm.row(idx)[0..25];
        let (noisy, _) = nullnet::inject_noise(sub, 1, spec.s, rng.random_range(0..u64::MAX)).unwrap();
        let out = nullnet::correct(g0, &noisy, &params);
        if out.pattern == sub {
            ok += 1;
        }
    }
    println!("single-error local correction: {}/{} = {:.4} in {:?}", ok, trials, ok as f64 / trials as f64, t2.elapsed());
    match nullnet::degree_profile(g0) {
        Ok(p) => {
            let b = nullnet::single_error_bound(&p).unwrap();
            println!("bound exact {:.4} loose {:.4} d_bar {:.3} d_min {}", b.exact, b.loose, p.d_bar, p.d_min);
        }
        Err(e) => println!("degree profile: {e}"),
    }

    // Mini experiment.
    let t3 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&cfg, dir.path()).unwrap();
    for row in &report.per_weight {
        println!(
            "e={}: per1 {:.4} per2 {:.4} gain {:.2}{}",
            row.errors,
            row.per1,
            row.per2,
            row.gain,
            if row.gain_is_lower_bound { " (lb)" } else { "" }
        );
    }
    println!("experiment ({} trials/weight) in {:?}; total {:?}", cfg.trials, t3.elapsed(), t0.elapsed());
}

fn probe_descent() {
    let delta: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let cmax: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut total_pairs = 0usize;
    let mut violations = 0usize;
    let mut viol_lambda0 = 0usize;
    let mut viol_dok = 0usize;
    let mut dmax_violations = 0usize;
    let mut lambda_active = 0usize;
    let mut max_lambda = 0.0f64;
    let mut min_amin = f64::INFINITY;
    let t0 = Instant::now();
    for i in 0..100u64 {
        // Vary structure across instances.
        let (n, l, k, k_g) = match i % 4 {
            0 => (16, 4, 3, 8),
            1 => (24, 4, 4, 12),
            2 => (32, 4, 6, 16),
            _ => (20, 2, 7, 10),
        };
        let spec = nullnet::GeneratorSpec {
            n,
            l,
            k,
            k_g,
            gamma: 2,
            upsilon: 2,
            s: (k as i64) + 1,
            d_star_cap: k,
            seed: 9000 + i,
        };
        let gen = build_generator(&spec).unwrap();
        let c = 10 + (i as usize * 7) % (cmax - 9);
        let pm = synthesize_patterns(&gen, PatternCount::Count(c.min(1 << k_g)), 2, spec.s, 100 + i).unwrap();
        let x = pm.patterns.to_dense();
        let params = LearnParams {
            alpha_mode: AlphaMode::TheoremSafe,
            seed: 5000 + i,
            max_iters: 4000,
            delta,
            ..Default::default()
        };
        let run = match learn_constraint_full(&x, &params) {
            Ok(r) => r,
            Err(e) => {
                println!("instance {i}: learner error {e}");
                continue;
            }
        };
        // Rebuild the effective (nonzero-row) matrix exactly as the learner does.
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .map(|r| x.row(r).to_vec())
            .filter(|r| r.iter().any(|&v| v != 0.0))
            .collect();
        let eff = Dense::from_rows(rows);
        let norm = run.norm_x;
        let cc = eff.rows();
        let n2 = norm * norm;
        let mut amin = f64::INFINITY;
        for a in 0..cc {
            let e: f64 = eff.row(a).iter().map(|v| v * v).sum();
            amin = amin.min(e / n2);
        }
        min_amin = min_amin.min(amin);
        let tr = &run.trace;
        for t in 0..tr.alphas.len() {
            let lam = tr.lambdas[t];
            let alpha = tr.alphas[t];
            if lam > 0.0 {
                lambda_active += 1;
            }
            max_lambda = max_lambda.max(lam);
            // D = (1+2l)I - 2a XX^T / ||X||^2, max |entry|.
            let mut dmax = 0.0_f64;
            for a in 0..cc {
                for b in 0..cc {
                    let gram: f64 = eff.row(a).iter().zip(eff.row(b)).map(|(p, q)| p * q).sum();
                    let mut v = -2.0 * alpha * gram / n2;
                    if a == b {
                        v += 1.0 + 2.0 * lam;
                    }
                    dmax = dmax.max(v.abs());
                }
            }
            if dmax >= 1.0 {
                dmax_violations += 1;
            }
            total_pairs += 1;
            if tr.residuals[t + 1] > dmax * tr.residuals[t] + tr.thetas[t] + 1e-12 {
                violations += 1;
                if lam == 0.0 {
                    viol_lambda0 += 1;
                }
                if dmax < 1.0 {
                    viol_dok += 1;
                }
                if violations < 6 {
                    println!(
                        "instance {i} t={t}: lam={lam:.4} dmax={dmax:.4} E+ {} > {} * {} + {}",
                        tr.residuals[t + 1],
                        dmax,
                        tr.residuals[t],
                        tr.thetas[t]
                    );
                }
            }
        }
        if i % 20 == 0 {
            println!("instance {i}: iters {} converged {}", run.iterations, run.converged);
        }
    }
    println!(
        "pairs {total_pairs}, violations {violations} (lambda0 {viol_lambda0}, dmax<1 {viol_dok}), |D|>=1 at {dmax_violations}, lambda-active {lambda_active}, max_lambda {max_lambda:.4}, min a_min {min_amin:.4}, in {:?}",
        t0.elapsed()
    );
}
