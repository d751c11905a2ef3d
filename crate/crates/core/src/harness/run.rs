use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{reconstruct_disturbance, rng_for, ErrorDynamics};
use crate::policy::{GainBoundedPolicy, PolicyCheckpoint};
use crate::signals::Signal;
use crate::switching::{
    design_budget_from_nominal, geometric_d, iss_time_profile, simulate, verify_window_bounds, BoundReport, BudgetProfile, IssSchedule,
    SwitchLog, UpdateBudget, UpdateRule,
};
use crate::trace::ClosedLoopTrace;
use crate::training::{shift_plan, solve_rho_step, solve_update_problem, RhoConfig, TrainConfig};

use super::config::{BudgetSpec, ExperimentConfig, Mode, ScenarioKind};
use super::scenario::{build_scenario, Scenario};

/// Training streams are keyed by update time above this offset.
const TRAIN_STREAM: u64 = 1000;
const OFFLINE_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
const RHO_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Passed,
    Failed,
    /// The receding-horizon planner carries no gain certificate.
    NotApplicable,
}

/// One seed's row of the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub total_cost: f64,
    pub bound_status: BoundStatus,
    pub worst_margin: Option<f64>,
    /// `Some(false)` when the input-to-state envelope is violated at some step.
    pub iss_envelope: Option<bool>,
    pub attempts: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub gamma_f: f64,
    pub gamma_m0: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: ScenarioKind,
    pub perturbed: bool,
    pub mode: Mode,
    pub seeds: Vec<SeedResult>,
    pub mean_cost: f64,
    pub median_cost: f64,
    pub q1_cost: f64,
    pub q3_cost: f64,
    pub mean_acceptance_rate: f64,
    /// False if any certified seed failed its bound check; such an experiment is FAILED.
    pub all_verified: bool,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn from_seeds(cfg: &ExperimentConfig, seeds: Vec<SeedResult>, wall_time_s: f64) -> Self {
        let costs: Vec<f64> = seeds.iter().map(|s| s.total_cost).collect();
        let n = seeds.len().max(1) as f64;
        RunSummary {
            scenario: cfg.scenario,
            perturbed: cfg.perturbed,
            mode: cfg.mode,
            mean_cost: costs.iter().sum::<f64>() / n,
            median_cost: quantile(&costs, 0.5),
            q1_cost: quantile(&costs, 0.25),
            q3_cost: quantile(&costs, 0.75),
            mean_acceptance_rate: seeds.iter().map(|s| s.acceptance_rate).sum::<f64>() / n,
            all_verified: seeds.iter().all(|s| s.bound_status != BoundStatus::Failed && s.iss_envelope != Some(false)),
            seeds,
            wall_time_s,
        }
    }

    pub fn status(&self) -> &'static str {
        if self.all_verified {
            "OK"
        } else {
            "FAILED"
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Linearly interpolated quantile; NaN for an empty slice.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Full in-memory result of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub scenario: Scenario,
    pub trace: ClosedLoopTrace,
    pub log: SwitchLog,
    pub budget: Option<UpdateBudget>,
    pub report: Option<BoundReport>,
    /// Every policy that drove the plant, with its start time.
    pub deployed: Vec<(usize, GainBoundedPolicy)>,
    pub iss: Option<IssSchedule>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: RunSummary,
    pub runs: Vec<SeedRun>,
}

/// Offline baseline: one training run over the whole horizon from `x₀`, cap `γ̄`.
pub fn train_offline(cfg: &ExperimentConfig, sc: &Scenario, seed: u64) -> Result<GainBoundedPolicy> {
    let (n, m) = (sc.state_dim(), sc.input_dim());
    let init = GainBoundedPolicy::random(n, m, cfg.hidden, cfg.gamma_bar, cfg.s_rec, 0.1, &mut rng_for(seed, INIT_STREAM))?;
    let tc = TrainConfig { horizon: cfg.steps, samples: cfg.offline.samples, epochs: cfg.offline.epochs, lr: cfg.offline.lr, seed, warm_start: true };
    let sol = solve_update_problem(&sc.plant, &init, &tc, &sc.loss, &sc.noise, &sc.x0, 0, cfg.gamma_bar, &mut rng_for(seed, OFFLINE_STREAM))?;
    Ok(sol.policy)
}

fn sup_after_first(w: &Signal, cfg: &ExperimentConfig) -> f64 {
    w.rows().skip(1).map(|r| cfg.p.vector_norm.eval(r)).fold(0.0, f64::max)
}

/// Budget for one seed; the ISS variant also returns its schedule.
pub fn build_budget(cfg: &ExperimentConfig, sc: &Scenario, m0: &GainBoundedPolicy) -> Result<(UpdateBudget, Option<IssSchedule>)> {
    let gf = sc.gamma_f;
    let scale = gf * (cfg.gamma_bar + 1.0);
    let gamma_m0 = m0.certified_gain()?;
    let mut iss = None;
    let profile = match &cfg.budget {
        BudgetSpec::Nominal { kappa, tail_ratio } => {
            let mut w0 = Signal::zeros(sc.state_dim(), cfg.steps);
            w0.at_mut(0).copy_from_slice(&sc.x0);
            let probe = UpdateBudget { profile: BudgetProfile::ByIndex { values: vec![0.0], tail_ratio: 0.0 }, gamma_f: gf, gamma_bar: cfg.gamma_bar, pnorm: cfg.p };
            let nominal = simulate(&sc.plant, &sc.plant, m0.clone(), &probe, &UpdateRule::Static, &w0, &sc.loss, &mut no_trainer)?;
            let norms: Vec<f64> = nominal.trace.x.magnitudes(cfg.p.vector_norm).collect();
            design_budget_from_nominal(&norms, kappa * scale, *tail_ratio)?
        }
        BudgetSpec::Geometric { kappa, level, ratio } => BudgetProfile::ByIndex { values: vec![kappa * scale * level], tail_ratio: *ratio },
        BudgetSpec::Iss { ratio, g } => {
            let s = IssSchedule {
                x0_norm: cfg.p.vector_norm.eval(&sc.x0),
                gamma_f: gf,
                gamma_m0,
                gamma_bar: cfg.gamma_bar,
                d: geometric_d(*ratio, cfg.steps / cfg.t_opt + 2),
                g: *g,
                w_inf: sup_after_first(&sc.w, cfg),
            };
            let p = iss_time_profile(&s, cfg.t_opt, cfg.steps)?;
            iss = Some(s);
            p
        }
        BudgetSpec::Explicit { profile } => profile.clone(),
    };
    let b = UpdateBudget { profile, gamma_f: gf, gamma_bar: cfg.gamma_bar, pnorm: cfg.p };
    b.validate()?;
    Ok((b, iss))
}

fn no_trainer(_: &GainBoundedPolicy, _: &[f64], _: usize, _: f64) -> Result<GainBoundedPolicy> {
    Err(Error::Contract("static run requested an update".into()))
}

/// Steps with `|x_t|` above the input-to-state envelope (relative tolerance 1e−9).
pub fn iss_violations(trace: &ClosedLoopTrace, s: &IssSchedule, t_opt: usize, cfg: &ExperimentConfig) -> Vec<usize> {
    trace
        .x
        .rows()
        .enumerate()
        .filter(|(t, x)| cfg.p.vector_norm.eval(x) > s.envelope(*t, t_opt) * (1.0 + 1e-9))
        .map(|(t, _)| t)
        .collect()
}

/// Receding-horizon open-loop planner in closed loop.
pub fn run_rho(cfg: &ExperimentConfig, sc: &Scenario, seed: u64) -> Result<ClosedLoopTrace> {
    let (n, m) = (sc.state_dim(), sc.input_dim());
    let rc = RhoConfig { horizon: cfg.horizon, samples: cfg.samples, iters: cfg.rho.iters, lr: cfg.rho.lr, lr_decay: 1.0 };
    let mut trace = ClosedLoopTrace::with_capacity(n, m, cfg.steps);
    let mut x = sc.w.at(0).to_vec();
    let (mut x_prev, mut u_prev, mut w_hat, mut next) = (vec![0.0; n], vec![0.0; m], vec![0.0; n], vec![0.0; n]);
    let mut warm: Option<Vec<f64>> = None;
    for t in 0..cfg.steps {
        reconstruct_disturbance(&sc.plant, t, &x, (t > 0).then_some((x_prev.as_slice(), u_prev.as_slice())), &mut w_hat);
        let sol = solve_rho_step(&sc.plant, &x, t, &sc.loss, &rc, &sc.noise, seed.wrapping_add(RHO_SEED_OFFSET), warm.as_deref())?;
        let u = sol.u0;
        if cfg.rho.warm_start {
            warm = Some(shift_plan(&sol.plan, m));
        }
        trace.push_step(&x, &u, sc.w.at(t), &w_hat, 0, sc.loss.stage_cost(&x, &u, t));
        if t + 1 < cfg.steps {
            sc.plant.step(t, &x, &u, &mut next);
            next.iter_mut().zip(sc.w.at(t + 1)).for_each(|(a, b)| *a += b);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { step: t + 1, what: "closed-loop state".into() });
            }
            std::mem::swap(&mut x_prev, &mut x);
            x.copy_from_slice(&next);
            u_prev.copy_from_slice(&u);
        }
    }
    Ok(trace)
}

/// Runs one seed of `cfg` entirely in memory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    run_seed_with_m0(cfg, seed, None)
}

/// As [`run_seed`], with an already trained initial policy in place of
/// [`train_offline`]. Ignored by the RHO baseline.
pub fn run_seed_with_m0(cfg: &ExperimentConfig, seed: u64, m0: Option<GainBoundedPolicy>) -> Result<SeedRun> {
    let clock = Instant::now();
    let sc = build_scenario(cfg, seed)?;
    if cfg.mode == Mode::RhoBaseline {
        let trace = run_rho(cfg, &sc, seed)?;
        let result = SeedResult {
            seed,
            total_cost: trace.total_cost(),
            bound_status: BoundStatus::NotApplicable,
            worst_margin: None,
            iss_envelope: None,
            attempts: 0,
            accepted: 0,
            acceptance_rate: 0.0,
            gamma_f: sc.gamma_f,
            gamma_m0: 0.0,
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        let log = SwitchLog { gamma_f: sc.gamma_f, gamma_bar: cfg.gamma_bar, gamma_m0: 0.0, records: vec![] };
        return Ok(SeedRun { result, scenario: sc, trace, log, budget: None, report: None, deployed: vec![], iss: None });
    }
    let m0 = match m0 {
        Some(p) => {
            if p.shape().n != sc.state_dim() || p.shape().m != sc.input_dim() {
                return Err(Error::Contract("initial policy does not match the scenario dimensions".into()));
            }
            p
        }
        None => train_offline(cfg, &sc, seed)?,
    };
    let (budget, iss) = build_budget(cfg, &sc, &m0)?;
    let rule = match cfg.mode {
        Mode::StaticOffline => UpdateRule::Static,
        Mode::OnlineAlg1 => UpdateRule::Scheduled { t_opt: cfg.t_opt },
        Mode::OnlineAlg2 => UpdateRule::Triggered { gamma_level: cfg.gamma_level(), min_gap: cfg.t_opt },
        Mode::RhoBaseline => unreachable!("handled above"),
    };
    let tc = TrainConfig { horizon: cfg.horizon, samples: cfg.samples, epochs: cfg.epochs, lr: cfg.lr, seed, warm_start: true };
    let mut trainer = |inc: &GainBoundedPolicy, x: &[f64], t: usize, cap: f64| -> Result<GainBoundedPolicy> {
        let mut rng = rng_for(seed, TRAIN_STREAM + t as u64);
        Ok(solve_update_problem(&sc.plant, inc, &tc, &sc.loss, &sc.noise, x, t, cap, &mut rng)?.policy)
    };
    let out = simulate(&sc.plant, &sc.plant, m0, &budget, &rule, &sc.w, &sc.loss, &mut trainer)?;
    let report = verify_window_bounds(&out.trace, &out.log, &budget)?;
    let iss_ok = iss.as_ref().map(|s| iss_violations(&out.trace, s, cfg.t_opt, cfg).is_empty());
    let result = SeedResult {
        seed,
        total_cost: out.trace.total_cost(),
        bound_status: if report.passed { BoundStatus::Passed } else { BoundStatus::Failed },
        worst_margin: Some(report.worst_margin()),
        iss_envelope: iss_ok,
        attempts: out.log.records.len(),
        accepted: out.log.accepted().count(),
        acceptance_rate: out.log.acceptance_rate(),
        gamma_f: sc.gamma_f,
        gamma_m0: out.log.gamma_m0,
        wall_time_s: clock.elapsed().as_secs_f64(),
    };
    Ok(SeedRun {
        result,
        scenario: sc,
        trace: out.trace,
        log: out.log,
        budget: Some(budget),
        report: Some(report),
        deployed: out.controller.deployed,
        iss,
    })
}

#[derive(Serialize, Deserialize)]
struct DeployedPolicy {
    t: usize,
    policy: PolicyCheckpoint,
}

/// Writes `trace.csv`, `switchlog.csv`, `switchlog.json`, `budget.json`, `policies.json`
/// and `summary.json` into `dir`.
pub fn write_seed_dir(run: &SeedRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    run.trace.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
    run.log.write_csv(fs::File::create(dir.join("switchlog.csv"))?)?;
    fs::write(dir.join("switchlog.json"), run.log.to_json()?)?;
    if let Some(b) = &run.budget {
        fs::write(dir.join("budget.json"), serde_json::to_string_pretty(b)?)?;
    }
    let pols: Vec<DeployedPolicy> = run.deployed.iter().map(|(t, p)| DeployedPolicy { t: *t, policy: p.to_checkpoint() }).collect();
    fs::write(dir.join("policies.json"), serde_json::to_string(&pols)?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&run.result)?)?;
    Ok(())
}

/// Reads the policies written by [`write_seed_dir`].
pub fn read_deployed(path: &Path) -> Result<Vec<(usize, GainBoundedPolicy)>> {
    let v: Vec<DeployedPolicy> = serde_json::from_str(&fs::read_to_string(path)?)?;
    v.into_iter().map(|d| Ok((d.t, GainBoundedPolicy::from_checkpoint(&d.policy)?))).collect()
}

/// Runs every seed (in parallel up to the worker count), writes the per-seed
/// directories and `report.json` when an output directory is set, and returns
/// the runs in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let clock = Instant::now();
    let workers = cfg.worker_count().min(cfg.seeds.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SeedRun>>>> = Mutex::new((0..cfg.seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= cfg.seeds.len() {
                    break;
                }
                let r = run_seed(cfg, cfg.seeds[k]);
                slots.lock().expect("result slots poisoned")[k] = Some(r);
            });
        }
    });
    let runs: Vec<SeedRun> = slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<_>>()?;
    let summary = RunSummary::from_seeds(cfg, runs.iter().map(|r| r.result.clone()).collect(), clock.elapsed().as_secs_f64());
    if let Some(dir) = cfg.run_dir() {
        for r in &runs {
            write_seed_dir(r, &dir.join(format!("seed_{}", r.result.seed)))?;
        }
        fs::write(dir.join("report.json"), summary.to_json()?)?;
        fs::write(dir.join("config.json"), cfg.to_json()?)?;
    }
    Ok(ExperimentOutcome { summary, runs })
}

/// Total cost recomputed from a stored `trace.csv`.
pub fn cost_from_trace_file(path: &Path) -> Result<f64> {
    Ok(ClosedLoopTrace::read_csv(fs::File::open(path)?)?.total_cost())
}
