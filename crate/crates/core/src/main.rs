use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use gainbudget::harness::{
    build_scenario, compare_modes, emit_plot_data, read_deployed, run_experiment, train_offline, ExperimentConfig, RunSummary,
};
use gainbudget::gaincert::{certify_point_mass, certify_point_mass_linf};
use gainbudget::plant::Dynamics;
use gainbudget::signals::VectorNorm;
use gainbudget::switching::{verify_window_bounds, SwitchLog, UpdateBudget};
use gainbudget::trace::ClosedLoopTrace;
use gainbudget::Error;

const EXIT_VIOLATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "gainbudget", version, about = "Gain-budgeted online controller updates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the certified plant gain of an experiment config's scenario.
    GainBound { config: PathBuf },
    /// Train the offline baseline policy and write its checkpoint.
    TrainOffline {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run an experiment; exits 2 if any window bound fails.
    Run {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Overrides the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Re-check a stored run: trace.csv, switchlog.json, budget.json.
    Verify { trace: PathBuf, log: PathBuf, budget: PathBuf },
    /// Paired comparison of report.json files; the first is the baseline.
    Compare {
        baseline: PathBuf,
        #[arg(required = true)]
        others: Vec<PathBuf>,
    },
    /// Write plotting CSVs for a stored seed directory.
    EmitPlots {
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Deployed policies (policies.json); defaults to the trace's directory.
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        tau: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        pred_len: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(c.downcast_ref::<Error>(), Some(Error::InvalidConfig(_) | Error::Json(_)))
            || c.downcast_ref::<serde_json::Error>().is_some()
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let s = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).map_err(Error::Json).with_context(|| format!("parsing {}", path.display()))
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::load(path)
        .map_err(|e| match e {
            Error::Io(io) => Error::InvalidConfig(format!("{}: {io}", path.display())),
            e => e,
        })
        .with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.cmd {
        Cmd::GainBound { config } => {
            let cfg = load_config(&config)?;
            let sc = build_scenario(&cfg, cfg.seeds[0])?;
            let mut out = serde_json::json!({ "scenario": cfg.scenario.as_str(), "p": cfg.p, "gamma_f": sc.gamma_f });
            if let Dynamics::PointMass(pm) = &sc.plant.dynamics {
                let c = certify_point_mass(&pm.params, &pm.prestab)?;
                out["l2_joint"] = c.joint.gamma_hat.into();
                out["l2_input_channel"] = c.input_channel.map(|c| c.gamma_hat).into();
                out["l2_noise_channel"] = c.noise_channel.map(|c| c.gamma_hat).into();
                out["linf_euclidean"] = certify_point_mass_linf(&pm.params, &pm.prestab, VectorNorm::Euclidean)?.into();
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(0)
        }
        Cmd::TrainOffline { config, seed, out } => {
            let cfg = load_config(&config)?;
            let sc = build_scenario(&cfg, seed)?;
            let pol = train_offline(&cfg, &sc, seed)?;
            std::fs::write(&out, pol.to_json()?).with_context(|| format!("writing {}", out.display()))?;
            println!("certified gain {:.6e}; checkpoint {}", pol.certified_gain()?, out.display());
            Ok(0)
        }
        Cmd::Run { config, out, seeds } => {
            let mut cfg = load_config(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            cfg.validate()?;
            let res = run_experiment(&cfg)?;
            let s = &res.summary;
            for r in &s.seeds {
                println!(
                    "seed {:>4}  cost {:>14.6e}  bounds {:?}  accepted {}/{}",
                    r.seed, r.total_cost, r.bound_status, r.accepted, r.attempts
                );
            }
            println!(
                "{} {} {}: mean {:.6e} median {:.6e} [{:.6e}, {:.6e}] acceptance {:.3} -> {}",
                cfg.scenario.as_str(),
                if cfg.perturbed { "perturbed" } else { "nominal" },
                cfg.mode.as_str(),
                s.mean_cost,
                s.median_cost,
                s.q1_cost,
                s.q3_cost,
                s.mean_acceptance_rate,
                s.status()
            );
            if let Some(d) = cfg.run_dir() {
                println!("wrote {}", d.display());
            }
            Ok(if s.all_verified { 0 } else { EXIT_VIOLATION })
        }
        Cmd::Verify { trace, log, budget } => {
            let tr = ClosedLoopTrace::read_csv(std::fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?)?;
            let log: SwitchLog = read_json(&log)?;
            let budget: UpdateBudget = read_json(&budget)?;
            let rep = verify_window_bounds(&tr, &log, &budget)?;
            for w in &rep.windows {
                println!(
                    "window {:>4} [{:>4}, {:>4}]  |x| {:.6e}  bound {:.6e}  margin {:+.3e}  {}",
                    w.window,
                    w.start,
                    w.end,
                    w.x_norm,
                    w.bound,
                    w.margin(),
                    if w.ok { "ok" } else { "VIOLATED" }
                );
            }
            println!("aggregate {:.6e} <= {:.6e}: {}", rep.aggregate.lhs, rep.aggregate.bound, rep.aggregate.ok);
            if !rep.replay_failures.is_empty() {
                println!("log replay disagrees at attempts {:?}", rep.replay_failures);
            }
            println!("{}", if rep.passed { "PASSED" } else { "FAILED" });
            Ok(if rep.passed { 0 } else { EXIT_VIOLATION })
        }
        Cmd::Compare { baseline, others } => {
            let b = RunSummary::from_json(&std::fs::read_to_string(&baseline)?).with_context(|| format!("parsing {}", baseline.display()))?;
            for o in others {
                let s = RunSummary::from_json(&std::fs::read_to_string(&o)?).with_context(|| format!("parsing {}", o.display()))?;
                print!("{}", compare_modes(&b, &s)?.table());
            }
            Ok(0)
        }
        Cmd::EmitPlots { trace, config, seed, policies, tau, pred_len, out } => {
            let cfg = load_config(&config)?;
            let sc = build_scenario(&cfg, seed)?;
            let tr = ClosedLoopTrace::read_csv(std::fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?)?;
            let pol_path = policies.unwrap_or_else(|| trace.with_file_name("policies.json"));
            let deployed = if pred_len > 0 && !tau.is_empty() { read_deployed(&pol_path)? } else { vec![] };
            let files = emit_plot_data(&tr, &sc, &deployed, &tau, pred_len, &out)?;
            println!("wrote {}", files.executed.display());
            for p in files.reference.iter().chain(files.obstacles.iter()).chain(files.predictions.iter()) {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // clap's own usage-error code (2) would collide with a bound violation.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { EXIT_CONFIG } else { 1 })
        }
    }
}
