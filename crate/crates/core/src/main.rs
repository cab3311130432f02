//! Command-line front end: train policies, deploy them against targets,
//! run figure-of-merit optimization, compare against search baselines, and
//! inspect circuit descriptions.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use circuit_sizer::baselines::{genetic_search, random_search, SearchOutcome};
use circuit_sizer::config::{resolve_output_root, RunConfig};
use circuit_sizer::env::{fom_value, reward, Env, SpecDef};
use circuit_sizer::metrics::{
    compare_csv, deploy_csv, fom_curve_csv, fom_summary_csv, train_csv, train_rows, CompareRow,
    FomCurveRow, FomSummaryRow,
};
use circuit_sizer::netlist::{build_graph, parse_netlist, CircuitGraph, NODE_FEATURE_WIDTH};
use circuit_sizer::plot::{compose, write_svg, Chart, Series};
use circuit_sizer::policy::PolicyNet;
use circuit_sizer::ppo::{greedy_rollout, train, train_fom, DeployTrace, TrainResult};
use circuit_sizer::rng::stream_rng;

#[derive(Parser)]
#[command(
    name = "circuit-sizer",
    version,
    about = "Learned sizing of analog circuit parameters toward performance targets"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides the config file and CIRCUIT_SIZER_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use this single seed instead of the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy per configured seed.
    Train {
        /// Episode budget override.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Greedily roll out a trained policy toward one or more targets.
    Deploy {
        /// Checkpoint to load; defaults to the first seed's training output.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Target as name=value, once per metric (or comma-separated).
        #[arg(long, value_delimiter = ',')]
        goal: Vec<String>,
        /// Deploy against this many sampled targets instead.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Figure-of-merit optimization: policy training versus genetic and
    /// random search under one shared evaluation budget.
    Fom {
        /// Evaluation budget override.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Success-rate and cost comparison of the trained policy against
    /// genetic and random search on sampled targets.
    Compare {
        /// Checkpoint to load; defaults to the first seed's training output.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of sampled targets.
        #[arg(long, default_value_t = 30)]
        goals: usize,
    },
    /// Describe a circuit: nodes, connectivity, tunable parameters, metrics.
    Inspect {
        /// Netlist file; defaults to the configured circuit.
        #[arg(long)]
        netlist: Option<PathBuf>,
        /// Emit Graphviz DOT instead of tables.
        #[arg(long)]
        dot: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train { episodes } => cmd_train(&cli, *episodes),
        Command::Deploy { checkpoint, goal, sample } => {
            cmd_deploy(&cli, checkpoint.as_deref(), goal, *sample)
        }
        Command::Fom { budget } => cmd_fom(&cli, *budget),
        Command::Compare { checkpoint, goals } => {
            cmd_compare(&cli, checkpoint.as_deref(), *goals)
        }
        Command::Inspect { netlist, dot } => cmd_inspect(&cli, netlist.as_deref(), *dot),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let path = cli
        .config
        .as_ref()
        .ok_or("--config is required for this command")?;
    let mut cfg = RunConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn out_root(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    let env_root = std::env::var_os("CIRCUIT_SIZER_OUT").map(PathBuf::from);
    resolve_output_root(cli.out.as_deref(), cfg, env_root.as_deref())
}

fn ensure_dir(path: &Path) -> Result<(), String> {
    std::fs::create_dir_all(path).map_err(|e| format!("cannot create {}: {e}", path.display()))
}

// ------------------------------------------------------------------ train

fn cmd_train(cli: &Cli, episodes: Option<usize>) -> Result<(), String> {
    let mut cfg = load_config(cli)?;
    if let Some(e) = episodes {
        cfg.episodes = Some(e);
    }
    let root = out_root(cli, &cfg);
    ensure_dir(&root)?;

    let mut results: Vec<TrainResult> = Vec::new();
    for &seed in &cfg.seeds {
        let env = cfg.build_env().map_err(|e| e.to_string())?;
        let net = cfg.build_policy(&env, seed);
        let eval_goals = sample_goals(&env, seed, "eval-goals", cfg.ppo.to_config().eval_goals);
        let dir = root.join(format!("seed_{seed}"));
        ensure_dir(&dir)?;
        let checkpoint = dir.join("checkpoint.json");
        log::info!(
            "seed {seed}: training {} ({}) for {} episodes",
            cfg.circuit.as_str(),
            cfg.policy_variant.as_str(),
            cfg.episodes()
        );
        let mut rollout_rng = stream_rng(seed, "sampler");
        let mut shuffle_rng = stream_rng(seed, "shuffle");
        let fingerprint = cfg.fingerprint();
        let result = train(
            &env,
            net,
            &cfg.ppo.to_config(),
            cfg.episodes(),
            &mut rollout_rng,
            &mut shuffle_rng,
            &eval_goals,
            Some((&checkpoint, &fingerprint)),
        )?;
        let rows = train_rows(&result, cfg.record_wall_time);
        train_csv(&rows)
            .and_then(|t| t.write(&dir.join("metrics.csv")))
            .map_err(|e| e.to_string())?;
        if let Some(eval) = result.evals.last() {
            println!(
                "seed {seed}: {} episodes, final accuracy {:.1}% (mean {:.1} steps), checkpoint {}",
                result.episodes.len(),
                eval.accuracy * 100.0,
                eval.mean_steps,
                checkpoint.display()
            );
        } else {
            println!(
                "seed {seed}: {} episodes, no evaluation point reached, checkpoint {}",
                result.episodes.len(),
                checkpoint.display()
            );
        }
        results.push(result);
    }
    write_train_charts(&root, &results)?;
    println!("wrote training metrics and charts under {}", root.display());
    Ok(())
}

fn sample_goals(env: &Env, seed: u64, stream: &str, count: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, stream);
    (0..count).map(|_| env.sample_goal(&mut rng)).collect()
}

/// Mean line with a min-to-max band across seeds, per batch row.
fn seed_band(
    label: &str,
    xs: &[f64],
    per_seed: &[Vec<f64>],
) -> Series {
    let n = xs.len();
    let mut points = Vec::with_capacity(n);
    let mut band = Vec::with_capacity(n);
    for i in 0..n {
        let vals: Vec<f64> = per_seed.iter().filter_map(|s| s.get(i).copied()).collect();
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        points.push((xs[i], mean));
        band.push((xs[i], lo, hi));
    }
    Series {
        label: label.to_string(),
        points,
        band: Some(band),
        dashed: false,
        color: None,
    }
}

fn write_train_charts(root: &Path, results: &[TrainResult]) -> Result<(), String> {
    if results.is_empty() || results[0].batches.is_empty() {
        return Ok(());
    }
    let batches = results.iter().map(|r| r.batches.len()).min().unwrap();
    let xs: Vec<f64> = results[0].batches[..batches]
        .iter()
        .map(|b| b.episodes_done as f64)
        .collect();
    let collect = |f: &dyn Fn(usize, &TrainResult) -> f64| -> Vec<Vec<f64>> {
        results
            .iter()
            .map(|r| (0..batches).map(|i| f(i, r)).collect())
            .collect()
    };

    let mut chart = Chart::new("episode reward during training", "episode", "mean episode reward");
    chart.series.push(seed_band(
        "mean over seeds",
        &xs,
        &collect(&|i, r| r.batches[i].mean_reward),
    ));
    chart.write(&root.join("reward.svg")).map_err(|e| e.to_string())?;

    let mut chart = Chart::new("episode length during training", "episode", "mean episode steps");
    chart.series.push(seed_band(
        "mean over seeds",
        &xs,
        &collect(&|i, r| r.batches[i].mean_len),
    ));
    chart.write(&root.join("length.svg")).map_err(|e| e.to_string())?;

    let evals = results.iter().map(|r| r.evals.len()).min().unwrap();
    if evals > 0 {
        let xs: Vec<f64> = results[0].evals[..evals]
            .iter()
            .map(|e| e.after_episode as f64)
            .collect();
        let per_seed: Vec<Vec<f64>> = results
            .iter()
            .map(|r| (0..evals).map(|i| r.evals[i].accuracy).collect())
            .collect();
        let mut chart =
            Chart::new("greedy success rate during training", "episode", "success rate");
        chart.series.push(seed_band("mean over seeds", &xs, &per_seed));
        chart.write(&root.join("accuracy.svg")).map_err(|e| e.to_string())?;
    }
    Ok(())
}

// ----------------------------------------------------------------- deploy

fn default_checkpoint(root: &Path, cfg: &RunConfig) -> PathBuf {
    root.join(format!("seed_{}", cfg.seeds[0])).join("checkpoint.json")
}

fn load_policy(path: &Path, cfg: &RunConfig, env: &Env) -> Result<PolicyNet, String> {
    let (net, fingerprint) = PolicyNet::load(path)
        .map_err(|e| format!("cannot load checkpoint {}: {e}", path.display()))?;
    let arch = net.arch();
    if arch.action_rows != env.param_count()
        || arch.spec_count != env.spec_count()
        || arch.node_feature_width != NODE_FEATURE_WIDTH
    {
        return Err(format!(
            "checkpoint {} does not fit the configured circuit: policy acts on {} parameters \
             and {} metrics, circuit has {} and {}",
            path.display(),
            arch.action_rows,
            arch.spec_count,
            env.param_count(),
            env.spec_count()
        ));
    }
    if fingerprint != cfg.fingerprint() {
        log::warn!(
            "checkpoint {} was written under a different configuration",
            path.display()
        );
    }
    Ok(net)
}

/// Parses name=value target arguments. Metric names match case-insensitively,
/// by full name or unique prefix; every metric must be assigned exactly once.
fn parse_goal_args(args: &[String], defs: &[SpecDef]) -> Result<Vec<f64>, String> {
    let mut values: Vec<Option<f64>> = vec![None; defs.len()];
    for arg in args {
        let (name, value) = arg
            .split_once('=')
            .ok_or_else(|| format!("target `{arg}` is not name=value"))?;
        let value: f64 = value
            .parse()
            .map_err(|_| format!("target `{arg}` has a non-numeric value"))?;
        let needle = name.to_ascii_lowercase();
        let exact: Vec<usize> = defs
            .iter()
            .enumerate()
            .filter(|(_, d)| d.name.to_ascii_lowercase() == needle)
            .map(|(i, _)| i)
            .collect();
        let idx = if let Some(&i) = exact.first() {
            i
        } else {
            let prefixed: Vec<usize> = defs
                .iter()
                .enumerate()
                .filter(|(_, d)| d.name.to_ascii_lowercase().starts_with(&needle))
                .map(|(i, _)| i)
                .collect();
            match prefixed.as_slice() {
                [i] => *i,
                [] => {
                    return Err(format!(
                        "unknown metric `{name}`; available: {}",
                        spec_names(defs)
                    ))
                }
                _ => {
                    return Err(format!(
                        "metric `{name}` is ambiguous; available: {}",
                        spec_names(defs)
                    ))
                }
            }
        };
        if values[idx].replace(value).is_some() {
            return Err(format!("metric `{}` is set twice", defs[idx].name));
        }
    }
    let missing: Vec<&str> = defs
        .iter()
        .zip(&values)
        .filter(|(_, v)| v.is_none())
        .map(|(d, _)| d.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(format!(
            "target must set every metric; missing: {}",
            missing.join(", ")
        ));
    }
    Ok(values.into_iter().map(Option::unwrap).collect())
}

fn spec_names(defs: &[SpecDef]) -> String {
    defs.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join(", ")
}

fn outside_training_range<'a>(goal: &[f64], defs: &'a [SpecDef]) -> Vec<&'a str> {
    defs.iter()
        .zip(goal)
        .filter(|(d, &v)| v < d.sample_lo || v > d.sample_hi)
        .map(|(d, _)| d.name.as_str())
        .collect()
}

fn cmd_deploy(
    cli: &Cli,
    checkpoint: Option<&Path>,
    goal_args: &[String],
    sample: Option<usize>,
) -> Result<(), String> {
    let cfg = load_config(cli)?;
    let root = out_root(cli, &cfg);
    let dir = root.join("deploy");
    ensure_dir(&dir)?;
    let env = cfg.build_env().map_err(|e| e.to_string())?;
    let checkpoint = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_checkpoint(&root, &cfg));
    let net = load_policy(&checkpoint, &cfg, &env)?;

    let goals: Vec<Vec<f64>> = if !goal_args.is_empty() {
        if sample.is_some() {
            return Err("--goal and --sample are mutually exclusive".into());
        }
        vec![parse_goal_args(goal_args, env.spec_defs())?]
    } else {
        let n = sample.unwrap_or(1);
        if n == 0 {
            return Err("--sample must be nonzero".into());
        }
        sample_goals(&env, cfg.seeds[0], "deploy-goals", n)
    };

    let mut successes = 0usize;
    let mut steps_on_success = 0usize;
    for (i, goal) in goals.iter().enumerate() {
        let unseen = outside_training_range(goal, env.spec_defs());
        let trace = if unseen.is_empty() {
            greedy_rollout(&env, &net, goal.clone()).map_err(|e| e.to_string())?
        } else {
            let raised = 4 * cfg.max_episode_len();
            log::warn!(
                "target {i} sets unseen specification values ({}); allowing {raised} steps",
                unseen.join(", ")
            );
            let wide = cfg.build_env_with_len(raised).map_err(|e| e.to_string())?;
            greedy_rollout(&wide, &net, goal.clone()).map_err(|e| e.to_string())?
        };
        deploy_csv(env.param_space(), env.spec_defs(), &trace)
            .and_then(|t| t.write(&dir.join(format!("goal_{i}.csv"))))
            .map_err(|e| e.to_string())?;
        write_svg(
            &dir.join(format!("goal_{i}.svg")),
            &deploy_chart(env.spec_defs(), &trace),
        )
        .map_err(|e| e.to_string())?;
        let verdict = if trace.reached_goal {
            successes += 1;
            steps_on_success += trace.steps.len();
            format!("met in {} steps", trace.steps.len())
        } else {
            format!("not met within {} steps", trace.steps.len())
        };
        println!("target {i}: {verdict}");
        for (def, (&g, &a)) in env
            .spec_defs()
            .iter()
            .zip(goal.iter().zip(&trace.final_achieved))
        {
            println!("  {:<14} target {:<12} reached {}", def.name, trim(g), trim(a));
        }
    }
    if goals.len() > 1 {
        let acc = successes as f64 / goals.len() as f64 * 100.0;
        let mean = if successes > 0 {
            format!("{:.1}", steps_on_success as f64 / successes as f64)
        } else {
            "-".into()
        };
        println!(
            "{successes}/{} targets met ({acc:.1}%), mean steps on success {mean}",
            goals.len()
        );
    }
    println!("wrote step traces under {}", dir.display());
    Ok(())
}

/// One panel per metric: its trajectory against the dashed target level.
fn deploy_chart(defs: &[SpecDef], trace: &DeployTrace) -> String {
    let charts: Vec<Chart> = defs
        .iter()
        .enumerate()
        .map(|(j, def)| {
            let mut points = vec![(0.0, trace.initial_achieved[j])];
            points.extend(
                trace
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(k, s)| ((k + 1) as f64, s.achieved[j])),
            );
            let mut chart = Chart::new(
                format!("{} ({})", def.name, def.unit),
                "step",
                def.unit.clone(),
            );
            chart.series.push(Series::line(def.name.clone(), points));
            chart.y_guides.push(("target".to_string(), trace.goal[j]));
            chart
        })
        .collect();
    compose(&charts, 2)
}

fn trim(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e5 || a < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

// ---------------------------------------------------------------- compare

/// Maximum evaluator calls one genetic run can spend.
fn ga_budget(cfg: &RunConfig) -> u64 {
    let ga = cfg.ga.to_config();
    let per_run = ga.population as u64 + (ga.population as u64 - 1) * ga.generations as u64;
    per_run.min(ga.eval_budget)
}

fn cmd_compare(cli: &Cli, checkpoint: Option<&Path>, goals_n: usize) -> Result<(), String> {
    if goals_n == 0 {
        return Err("--goals must be nonzero".into());
    }
    let cfg = load_config(cli)?;
    let root = out_root(cli, &cfg);
    ensure_dir(&root)?;
    let env = cfg.build_env().map_err(|e| e.to_string())?;
    let checkpoint = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_checkpoint(&root, &cfg));
    let net = load_policy(&checkpoint, &cfg, &env)?;
    let seed = cfg.seeds[0];
    let goals = sample_goals(&env, seed, "compare-goals", goals_n);
    let budget = ga_budget(&cfg);

    let mut rows: Vec<CompareRow> = Vec::new();
    for (i, goal) in goals.iter().enumerate() {
        let trace = greedy_rollout(&env, &net, goal.clone()).map_err(|e| e.to_string())?;
        // Best reward on the shared scale: shortfall sum without the bonus.
        let mut best_r = shortfall(&env, &trace.initial_achieved, goal)?;
        for s in &trace.steps {
            best_r = best_r.max(shortfall(&env, &s.achieved, goal)?);
        }
        rows.push(CompareRow {
            method: "policy".into(),
            goal: goal.clone(),
            success: trace.reached_goal,
            evals_used: trace.env_evals,
            best_r,
            wall_secs: None,
        });

        let mut objective = |params: &[f64]| {
            let achieved = env.evaluator().evaluate(params)?;
            reward(&achieved, goal, env.spec_defs(), 0.0)
        };
        let mut ga_rng = stream_rng(seed, &format!("ga-goal-{i}"));
        let ga_out = genetic_search(
            env.param_space(),
            &mut objective,
            Some(0.0),
            &cfg.ga.to_config(),
            &mut ga_rng,
        )
        .map_err(|e| e.to_string())?;
        rows.push(search_row("genetic", goal, &ga_out));

        let mut rnd_rng = stream_rng(seed, &format!("random-goal-{i}"));
        let rnd_out = random_search(env.param_space(), &mut objective, Some(0.0), budget, &mut rnd_rng)
            .map_err(|e| e.to_string())?;
        rows.push(search_row("random", goal, &rnd_out));
        log::info!("target {i}: compared all methods");
    }

    compare_csv(env.spec_defs(), &rows)
        .and_then(|t| t.write(&root.join("compare.csv")))
        .map_err(|e| e.to_string())?;

    println!("{:<10} {:>15} {:>12}", "method", "design_accuracy", "mean_steps");
    for method in ["policy", "genetic", "random"] {
        let of: Vec<&CompareRow> = rows.iter().filter(|r| r.method == method).collect();
        let wins: Vec<&&CompareRow> = of.iter().filter(|r| r.success).collect();
        let acc = wins.len() as f64 / of.len() as f64;
        // Policy cost is steps taken; search cost is evaluator calls spent.
        let mean_cost = if wins.is_empty() {
            "-".to_string()
        } else {
            let total: u64 = wins
                .iter()
                .map(|r| if method == "policy" { r.evals_used - 1 } else { r.evals_used })
                .sum();
            format!("{:.1}", total as f64 / wins.len() as f64)
        };
        println!("{method:<10} {acc:>15.3} {mean_cost:>12}");
    }
    println!("wrote {}", root.join("compare.csv").display());
    Ok(())
}

fn shortfall(env: &Env, achieved: &[f64], goal: &[f64]) -> Result<f64, String> {
    reward(achieved, goal, env.spec_defs(), 0.0).map_err(|e| e.to_string())
}

fn search_row(method: &str, goal: &[f64], out: &SearchOutcome) -> CompareRow {
    CompareRow {
        method: method.into(),
        goal: goal.to_vec(),
        success: out.evals_to_success.is_some(),
        evals_used: out.evals_to_success.unwrap_or(out.evals_used),
        best_r: out.best_value,
        wall_secs: None,
    }
}

// -------------------------------------------------------------------- fom

fn cmd_fom(cli: &Cli, budget: Option<u64>) -> Result<(), String> {
    let cfg = load_config(cli)?;
    let root = out_root(cli, &cfg);
    let dir = root.join("fom");
    ensure_dir(&dir)?;
    let env = cfg.build_fom_env().map_err(|e| e.to_string())?;
    let budget = budget.unwrap_or(cfg.fom.eval_budget);
    let weights = cfg.fom.weights.clone();

    let mut curve_rows: Vec<FomCurveRow> = Vec::new();
    let mut summary_rows: Vec<FomSummaryRow> = Vec::new();
    for &seed in &cfg.seeds {
        let net = cfg.build_policy(&env, seed);
        let mut rollout_rng = stream_rng(seed, "sampler");
        let mut shuffle_rng = stream_rng(seed, "shuffle");
        let result = train_fom(
            &env,
            net,
            &cfg.ppo.to_config(),
            budget,
            &mut rollout_rng,
            &mut shuffle_rng,
        )?;
        curve_rows.extend(result.fom_curve.iter().map(|&(evals, best)| FomCurveRow {
            method: "policy".into(),
            seed,
            evals,
            best_fom: best,
        }));
        summary_rows.push(FomSummaryRow {
            method: "policy".into(),
            seed,
            final_fom: result.final_fom,
            best_fom: result.best_fom,
            evals_used: result.env_evals,
        });
        println!(
            "seed {seed}: policy deployed fom {:.4} (best seen {:.4}) in {} evaluations",
            result.final_fom, result.best_fom, result.env_evals
        );

        let mut objective = |params: &[f64]| {
            env.evaluator().evaluate(params).map(|a| fom_value(&a, &weights))
        };
        let mut ga_cfg = cfg.ga.to_config();
        ga_cfg.eval_budget = budget;
        let mut ga_rng = stream_rng(seed, "ga");
        let ga_out = genetic_search(env.param_space(), &mut objective, None, &ga_cfg, &mut ga_rng)
            .map_err(|e| e.to_string())?;
        push_search_fom(&mut curve_rows, &mut summary_rows, "genetic", seed, &ga_out);

        let mut rnd_rng = stream_rng(seed, "random");
        let rnd_out =
            random_search(env.param_space(), &mut objective, None, budget, &mut rnd_rng)
                .map_err(|e| e.to_string())?;
        push_search_fom(&mut curve_rows, &mut summary_rows, "random", seed, &rnd_out);
    }

    fom_curve_csv(&curve_rows)
        .and_then(|t| t.write(&dir.join("curves.csv")))
        .map_err(|e| e.to_string())?;
    fom_summary_csv(&summary_rows)
        .and_then(|t| t.write(&dir.join("summary.csv")))
        .map_err(|e| e.to_string())?;
    write_svg(&dir.join("curves.svg"), &fom_chart(&curve_rows)).map_err(|e| e.to_string())?;

    println!("{:<10} {:>12} {:>12} {:>12}", "method", "mean_final", "best_final", "worst_final");
    for method in ["policy", "genetic", "random"] {
        let finals: Vec<f64> = summary_rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.final_fom)
            .collect();
        if finals.is_empty() {
            continue;
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let best = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = finals.iter().copied().fold(f64::INFINITY, f64::min);
        println!("{method:<10} {mean:>12.4} {best:>12.4} {worst:>12.4}");
    }
    println!("wrote figure-of-merit results under {}", dir.display());
    Ok(())
}

fn push_search_fom(
    curves: &mut Vec<FomCurveRow>,
    summaries: &mut Vec<FomSummaryRow>,
    method: &str,
    seed: u64,
    out: &SearchOutcome,
) {
    curves.extend(out.curve.iter().map(|&(evals, best)| FomCurveRow {
        method: method.into(),
        seed,
        evals,
        best_fom: best,
    }));
    summaries.push(FomSummaryRow {
        method: method.into(),
        seed,
        // A search method deploys exactly its best-seen design.
        final_fom: out.best_value,
        best_fom: out.best_value,
        evals_used: out.evals_used,
    });
}

const METHOD_COLORS: [(&str, &str); 3] =
    [("policy", "#4878a8"), ("genetic", "#d9822b"), ("random", "#3f8f5f")];

fn fom_chart(rows: &[FomCurveRow]) -> String {
    let mut chart =
        Chart::new("best figure of merit versus evaluations", "evaluator calls", "figure of merit");
    for (method, color) in METHOD_COLORS {
        let mut seeds: Vec<u64> =
            rows.iter().filter(|r| r.method == method).map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        for (si, &seed) in seeds.iter().enumerate() {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == method && r.seed == seed)
                .map(|r| (r.evals as f64, r.best_fom))
                .collect();
            chart.series.push(Series {
                label: if si == 0 { method.to_string() } else { String::new() },
                points,
                band: None,
                dashed: false,
                color: Some(color.to_string()),
            });
        }
    }
    chart.to_svg()
}

// ---------------------------------------------------------------- inspect

fn cmd_inspect(cli: &Cli, netlist: Option<&Path>, dot: bool) -> Result<(), String> {
    let netlist = match netlist {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            parse_netlist(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => load_config(cli)?.netlist().map_err(|e| e.to_string())?,
    };
    let graph = build_graph(&netlist).map_err(|e| e.to_string())?;
    if dot {
        print!("{}", graph_dot(&graph));
    } else {
        print!("{}", graph_description(&graph));
    }
    Ok(())
}

fn graph_description(graph: &CircuitGraph) -> String {
    let space = graph.param_space();
    let mut out = String::new();
    out.push_str(&format!(
        "{} nodes, {} tunable parameters\n\nnodes:\n",
        graph.node_count(),
        space.len()
    ));
    for (i, node) in graph.nodes.iter().enumerate() {
        let extra = match node.voltage {
            Some(v) => format!("  {v} V"),
            None => String::new(),
        };
        out.push_str(&format!("  {i:>3}  {:<8} {:?}{extra}\n", node.name, node.kind));
    }
    out.push_str("\nedges:\n");
    let a = &graph.adjacency;
    for i in 0..graph.node_count() {
        for j in i + 1..graph.node_count() {
            if a.get(i, j) > 0.0 {
                out.push_str(&format!(
                    "  {} -- {}\n",
                    graph.nodes[i].name, graph.nodes[j].name
                ));
            }
        }
    }
    out.push_str("\nparameters:\n");
    out.push_str(&format!(
        "  {:>3}  {:<16} {:>10} {:>10} {:>10} {:>8}  {}\n",
        "idx", "name", "init", "min", "max", "step", "integer"
    ));
    for i in 0..space.len() {
        let s = space.spec(i);
        out.push_str(&format!(
            "  {i:>3}  {:<16} {:>10} {:>10} {:>10} {:>8}  {}\n",
            space.label(i),
            trim(s.init),
            trim(s.min),
            trim(s.max),
            trim(s.step),
            s.integer
        ));
    }
    out
}

fn graph_dot(graph: &CircuitGraph) -> String {
    let mut out = String::from("graph circuit {\n  node [shape=box fontname=\"sans-serif\"];\n");
    for node in &graph.nodes {
        out.push_str(&format!(
            "  \"{}\" [label=\"{}\\n{:?}\"];\n",
            node.name, node.name, node.kind
        ));
    }
    let a = &graph.adjacency;
    for i in 0..graph.node_count() {
        for j in i + 1..graph.node_count() {
            if a.get(i, j) > 0.0 {
                out.push_str(&format!(
                    "  \"{}\" -- \"{}\";\n",
                    graph.nodes[i].name, graph.nodes[j].name
                ));
            }
        }
    }
    out.push_str("}\n");
    out
}
