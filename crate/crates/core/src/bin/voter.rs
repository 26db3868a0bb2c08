use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use voter_core::analysis::{bottleneck_optimum, condition_report, default_strategy, mixing_time, spectral_gap, BottleneckStrategy};
use voter_core::coalescent::{coalescent_ensemble, Start};
use voter_core::experiment::{exit_code, merge_reports, run_experiment, verification_battery, ExperimentConfig};
use voter_core::meeting::{bound_configurations, identity_check, meeting_moments, meeting_tail, decorrelation_check};
use voter_core::rng::stream;
use voter_core::voter::{ensemble, EnsembleConfig, EventMode, Moments};
use voter_core::wf::{mixture_cdf, wf_moment, wf_simulate};
use voter_core::zoo::{random_regular_perm, ZooSpec};
use voter_core::{Error, Kernel, PairLaw, Result};

#[derive(Parser)]
#[command(name = "voter", version, about = "Voter models, coalescing walks and their limits")]
struct Cli {
    /// Master seed for every randomized step.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads.
    #[arg(long, global = true, env = "VOTER_PARALLELISM", default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a kernel from a family and write it with a JSON sidecar.
    Graph(GraphArgs),
    /// Spectral gap, mixing time, bottleneck ratio, condition report.
    Analyze(AnalyzeArgs),
    /// Exact meeting-time moments, tails, identities and bound checks.
    Exact(ExactArgs),
    /// Monte Carlo ensembles.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Wright-Fisher reference values.
    Wf(WfArgs),
    /// Run the built-in verification battery.
    Verify(VerifyArgs),
    /// Run an experiment config.
    Report(ReportArgs),
}

#[derive(Args)]
struct GraphArgs {
    /// moran, torus_nn, torus_range, hypercube or random_regular_perm.
    #[arg(long)]
    family: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Number of permutations for random regular graphs.
    #[arg(long)]
    k: Option<usize>,
    /// Kernel file; the sidecar goes to `<out>.json`. Prints to stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelArg {
    /// Kernel file (a `<file>.json` sidecar, if present, restores the lattice).
    #[arg(long)]
    kernel: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    kernel: KernelArg,
    #[arg(long)]
    gap: bool,
    #[arg(long)]
    tmix: bool,
    /// exhaustive or intervals_1d; `auto` picks by kernel.
    #[arg(long)]
    bottleneck: Option<String>,
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct ExactArgs {
    #[command(flatten)]
    kernel: KernelArg,
    #[arg(long)]
    moments: bool,
    /// Time grid: `start:step:end` or a comma list.
    #[arg(long)]
    tails: Option<String>,
    #[arg(long)]
    identities: bool,
    #[arg(long, num_args = 2, value_names = ["S", "T"])]
    decorrelation: Option<Vec<f64>>,
    /// CSV file for the tail grid.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimulateCommand {
    Voter(VoterArgs),
    Coalescent(CoalescentArgs),
}

#[derive(Args)]
struct VoterArgs {
    #[command(flatten)]
    kernel: KernelArg,
    #[arg(long, default_value_t = 0.5)]
    u: f64,
    /// `tmeet` or a positive number.
    #[arg(long, default_value = "tmeet")]
    gamma: String,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value = "0.25,0.5,1")]
    grid: String,
    #[arg(long, default_value_t = 100)]
    replicas: usize,
    #[arg(long, default_value = "plain")]
    mode: String,
    /// Per-replica trajectory CSV.
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

#[derive(Args)]
struct CoalescentArgs {
    #[command(flatten)]
    kernel: KernelArg,
    #[arg(long, conflicts_with = "full")]
    k: Option<usize>,
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 1)]
    stop_at_j: usize,
    #[arg(long, default_value_t = 100)]
    replicas: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct WfArgs {
    #[arg(long, num_args = 3, value_names = ["U", "K", "T"])]
    moment: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["DELTA", "T"])]
    mixture: Option<Vec<f64>>,
    #[arg(long, num_args = 5, value_names = ["U", "T", "DT", "REPLICAS", "SEED"])]
    simulate: Option<Vec<f64>>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Multiplier on replica counts.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_kernel(path: &Path) -> Result<Kernel> {
    let kernel = Kernel::load(path)?;
    let sidecar = sidecar_path(path);
    if let Ok(text) = fs::read_to_string(&sidecar) {
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(spec) = value.get("spec") {
            let spec: ZooSpec = serde_json::from_value(spec.clone()).map_err(|e| Error::Parse(e.to_string()))?;
            if let Some(lattice) = spec.build()?.lattice() {
                return kernel.with_lattice(lattice.clone());
            }
        }
    }
    Ok(kernel)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parse(format!("bad grid '{text}'"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let (start, step, end) = (v[0], v[1], v[2]);
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let count = ((end - start) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| start + i as f64 * step).collect());
    }
    text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn need(value: Option<usize>, name: &str) -> Result<usize> {
    value.ok_or_else(|| Error::Config(format!("--{name} is required for this family")))
}

fn graph(args: &GraphArgs, seed: u64) -> Result<Value> {
    let spec = match args.family.as_str() {
        "moran" => ZooSpec::Moran { n: need(args.n, "n")? },
        "torus_nn" => ZooSpec::TorusNn {
            n: need(args.n, "n")?,
            d: need(args.d, "d")?,
        },
        "torus_range" => ZooSpec::TorusRange {
            n: need(args.n, "n")?,
            m: need(args.m, "m")?,
            d: need(args.d, "d")?,
        },
        "hypercube" => ZooSpec::Hypercube { dim: need(args.dim, "dim")? },
        "random_regular_perm" => ZooSpec::RandomRegularPerm {
            n: need(args.n, "n")?,
            k: need(args.k, "k")?,
            seed,
        },
        other => return Err(Error::Config(format!("unknown family '{other}'"))),
    };
    let (kernel, attempts) = match spec {
        ZooSpec::RandomRegularPerm { n, k, seed } => random_regular_perm(n, k, seed)?,
        _ => (spec.build()?, 1),
    };
    let sidecar = json!({ "spec": spec, "label": spec.label(), "attempts": attempts, "summary": kernel.summary() });
    match &args.out {
        Some(path) => {
            kernel.save(path)?;
            fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar).unwrap())?;
            Ok(sidecar)
        }
        None => {
            emit(&kernel.to_text());
            Ok(Value::Null)
        }
    }
}

fn analyze(args: &AnalyzeArgs) -> Result<Value> {
    let kernel = load_kernel(&args.kernel.kernel)?;
    let mut out = json!({ "summary": kernel.summary() });
    if args.gap {
        out["gap"] = json!(spectral_gap(&kernel)?);
    }
    if args.tmix {
        out["t_mix"] = json!(mixing_time(&kernel)?);
    }
    if let Some(s) = &args.bottleneck {
        let strategy = if s == "auto" {
            default_strategy(&kernel)
        } else {
            s.parse::<BottleneckStrategy>()?
        };
        out["bottleneck"] = serde_json::to_value(bottleneck_optimum(&kernel, strategy)?).unwrap();
    }
    if args.report {
        let t_meet = meeting_moments(&kernel)?.t_meet;
        out["report"] = serde_json::to_value(condition_report(&kernel, t_meet)?).unwrap();
    }
    Ok(out)
}

fn exact(args: &ExactArgs, seed: u64) -> Result<Value> {
    let kernel = load_kernel(&args.kernel.kernel)?;
    let mut out = json!({});
    if args.moments || args.identities {
        let sol = meeting_moments(&kernel)?;
        out["moments"] = json!({
            "t_meet": sol.t_meet,
            "mvv_mean": sol.mvv_mean,
            "mvv_second": sol.mvv_second,
            "route": sol.route,
        });
        if args.identities {
            out["identities"] = serde_json::to_value(identity_check(&kernel, &sol)).unwrap();
        }
    }
    if let Some(grid) = &args.tails {
        let times = parse_grid(grid)?;
        let uu = meeting_tail(&kernel, PairLaw::Product, &times)?;
        let vv = meeting_tail(&kernel, PairLaw::Edge, &times)?;
        if let Some(path) = &args.csv {
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
            w.write_record(["t", "tail_uu", "tail_vv"]).map_err(|e| Error::Io(e.to_string()))?;
            for i in 0..times.len() {
                w.write_record([times[i].to_string(), uu[i].to_string(), vv[i].to_string()])
                    .map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        out["tails"] = json!({ "times": times, "tail_uu": uu, "tail_vv": vv });
    }
    if let Some(st) = &args.decorrelation {
        let configs = bound_configurations(kernel.n(), seed);
        let check = decorrelation_check(&kernel, st[0], st[1], &configs)?;
        out["decorrelation"] = json!({
            "s": check.s,
            "t": check.t,
            "configurations": check.configurations,
            "min_margin_tv": check.min_margin_tv,
            "min_margin_gap": check.min_margin_gap,
            "holds": check.holds(),
        });
    }
    Ok(out)
}

fn simulate_voter(args: &VoterArgs, seed: u64, parallel: usize) -> Result<Value> {
    let kernel = load_kernel(&args.kernel.kernel)?;
    let gamma = if args.gamma == "tmeet" {
        meeting_moments(&kernel)?.t_meet
    } else {
        args.gamma.parse().map_err(|_| Error::Parse(format!("bad gamma '{}'", args.gamma)))?
    };
    let mode = match args.mode.as_str() {
        "plain" => EventMode::Plain,
        "discordant" => EventMode::Discordant,
        other => return Err(Error::Config(format!("unknown mode '{other}'"))),
    };
    let config = EnsembleConfig {
        u: args.u,
        gamma,
        horizon: args.horizon,
        grid: parse_grid(&args.grid)?,
        replicas: args.replicas,
        master_seed: seed,
        mode,
    };
    let (summary, trajectories) = ensemble(&kernel, &config, parallel)?;
    if let Some(path) = &args.trajectories {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(["replica", "s", "p1", "p1p0", "quad_var", "int_p1p0"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for (i, t) in trajectories.iter().enumerate() {
            for (s, x) in t.grid.iter().zip(&t.samples) {
                w.write_record([
                    i.to_string(),
                    s.to_string(),
                    x.p1.to_string(),
                    x.p1p0.to_string(),
                    x.quad_var.to_string(),
                    x.int_p1p0.to_string(),
                ])
                .map_err(|e| Error::Io(e.to_string()))?;
            }
        }
        w.flush()?;
    }
    Ok(json!({ "gamma": gamma, "config": config, "summary": summary }))
}

fn simulate_coalescent(args: &CoalescentArgs, seed: u64, parallel: usize) -> Result<Value> {
    let kernel = load_kernel(&args.kernel.kernel)?;
    let start = match (args.k, args.full) {
        (_, true) => Start::Full,
        (Some(k), false) => Start::Partial { k },
        (None, false) => return Err(Error::Config("give --k or --full".into())),
    };
    let runs = coalescent_ensemble(&kernel, start, args.stop_at_j, args.replicas, seed, parallel)?;
    let k = runs[0].k;
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        let mut header = vec!["replica".to_string()];
        header.extend((args.stop_at_j..=k).rev().map(|j| format!("C_{j}")));
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for (i, r) in runs.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(r.times.iter().map(|t| t.to_string()));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    let means: Vec<Value> = (args.stop_at_j..=k)
        .rev()
        .map(|j| {
            let m = Moments::of(runs.iter().map(|r| r.get(j).unwrap()));
            json!({ "j": j, "mean": m.mean, "se": m.se() })
        })
        .collect();
    Ok(json!({ "k": k, "start": start, "replicas": args.replicas, "seed": seed, "times": means }))
}

fn wf(args: &WfArgs) -> Result<Value> {
    let mut out = json!({});
    if let Some(v) = &args.moment {
        out["moment"] = json!(wf_moment(v[0], v[1] as usize, v[2])?);
    }
    if let Some(v) = &args.mixture {
        out["mixture_cdf"] = json!(mixture_cdf(v[0], v[1])?);
    }
    if let Some(v) = &args.simulate {
        let (u, horizon, dt, replicas, seed) = (v[0], v[1], v[2], v[3] as usize, v[4] as u64);
        let terminal = (0..replicas)
            .map(|i| wf_simulate(u, horizon, dt, &mut stream(seed, "wf", i as u64)).map(|p| p.terminal()))
            .collect::<Result<Vec<f64>>>()?;
        let y = Moments::of(terminal.iter().cloned());
        let het = Moments::of(terminal.iter().map(|y| y * (1.0 - y)));
        out["simulate"] = json!({
            "mean": y.mean, "mean_se": y.se(),
            "heterozygosity": het.mean, "heterozygosity_se": het.se(),
        });
    }
    Ok(out)
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn finish(result: Result<Value>) -> ExitCode {
    match result {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            emit(&(serde_json::to_string_pretty(&v).unwrap() + "\n"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Graph(a) => finish(graph(a, cli.seed)),
        Command::Analyze(a) => finish(analyze(a)),
        Command::Exact(a) => finish(exact(a, cli.seed)),
        Command::Simulate(SimulateCommand::Voter(a)) => finish(simulate_voter(a, cli.seed, cli.parallel)),
        Command::Simulate(SimulateCommand::Coalescent(a)) => finish(simulate_coalescent(a, cli.seed, cli.parallel)),
        Command::Wf(a) => finish(wf(a)),
        Command::Verify(a) => {
            let result = verification_battery(cli.seed, a.scale)
                .into_iter()
                .map(|mut c| {
                    c.parallelism = cli.parallel;
                    run_experiment(&c)
                })
                .collect::<Result<Vec<_>>>()
                .map(merge_reports);
            conclude(result, a.out.as_deref())
        }
        Command::Report(a) => {
            // Precedence: command-line flags, then the config file.
            let result = ExperimentConfig::load(&a.config).and_then(|mut c| {
                if cli_seed_given() {
                    c.master_seed = cli.seed;
                }
                if std::env::args().any(|s| s == "--parallel" || s.starts_with("--parallel=")) || std::env::var("VOTER_PARALLELISM").is_ok() {
                    c.parallelism = cli.parallel;
                }
                if let Some(r) = a.replicas {
                    c.replicas = r;
                }
                if a.out.is_some() {
                    c.output_dir = a.out.clone();
                }
                run_experiment(&c)
            });
            conclude(result, None)
        }
    }
}

fn cli_seed_given() -> bool {
    std::env::args().any(|s| s == "--seed" || s.starts_with("--seed="))
}

fn conclude(result: Result<voter_core::experiment::Report>, out: Option<&Path>) -> ExitCode {
    if let (Ok(report), Some(dir)) = (&result, out) {
        if let Err(e) = report.write(dir) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let code = exit_code(&result);
    match result {
        Ok(report) => {
            emit(&(report.to_json() + "\n"));
            for v in report.verdicts.iter().filter(|v| !v.pass) {
                eprintln!("FAIL {} {}: {} vs {}", v.tag, v.subject, v.statistic, v.threshold);
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(code as u8)
}
