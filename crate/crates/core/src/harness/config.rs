use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::DisturbanceModel;
use crate::signals::{Exponent, PNorm};
use crate::switching::BudgetProfile;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Mountains,
    DynamicObstacles,
    ScalarSanity,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Mountains => "mountains",
            ScenarioKind::DynamicObstacles => "dynamic_obstacles",
            ScenarioKind::ScalarSanity => "scalar_sanity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    StaticOffline,
    OnlineAlg1,
    OnlineAlg2,
    RhoBaseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StaticOffline => "static_offline",
            Mode::OnlineAlg1 => "online_alg1",
            Mode::OnlineAlg2 => "online_alg2",
            Mode::RhoBaseline => "rho_baseline",
        }
    }

    pub fn is_online(self) -> bool {
        matches!(self, Mode::OnlineAlg1 | Mode::OnlineAlg2)
    }
}

/// How the update budget `r` is built for each seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetSpec {
    /// `r_t = κ γ̂(𝓕)(γ̄+1) ‖x̃_t‖` along the noise-free closed loop of `M⁰`, geometric tail.
    Nominal { kappa: f64, tail_ratio: f64 },
    /// `r⁽ⁱ⁾ = κ γ̂(𝓕)(γ̄+1) · level · ratioⁱ`.
    Geometric { kappa: f64, level: f64, ratio: f64 },
    /// Input-to-state schedule with `d⁽ⁱ⁾ = ratioⁱ`; `‖w‖∞` is taken from the realized
    /// disturbance after `w₀ = x₀`.
    Iss { ratio: f64, g: f64 },
    Explicit { profile: BudgetProfile },
}

/// Offline training of the static baseline (also `M⁰` for the online modes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineSettings {
    pub epochs: usize,
    pub lr: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoSettings {
    pub iters: usize,
    pub lr: f64,
    /// Start each solve from the previous plan shifted by one step instead of zeros.
    #[serde(default)]
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: ScenarioKind,
    /// Mountains only: add the impulses at `t = 1` and `t = 8`.
    #[serde(default)]
    pub perturbed: bool,
    pub mode: Mode,
    /// Closed-loop steps `T`.
    pub steps: usize,
    pub t_opt: usize,
    /// Prediction horizon `H` of online updates and of the receding-horizon planner.
    pub horizon: usize,
    /// Disturbance samples `S`.
    pub samples: usize,
    pub epochs: usize,
    pub lr: f64,
    pub offline: OfflineSettings,
    pub rho: RhoSettings,
    pub hidden: usize,
    pub s_rec: f64,
    pub gamma_bar: f64,
    /// Gain level of the triggered rule; defaults to `γ̄`.
    #[serde(default)]
    pub gamma_level: Option<f64>,
    pub budget: BudgetSpec,
    pub p: PNorm,
    /// User-supplied plant gain; required for `p ∉ {2, ∞}`.
    #[serde(default)]
    pub gamma_f: Option<f64>,
    /// Replaces the scenario's disturbance model.
    #[serde(default)]
    pub noise: Option<DisturbanceModel>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl ExperimentConfig {
    /// Desk-scale defaults for a scenario and mode, ten seeds.
    pub fn preset(scenario: ScenarioKind, mode: Mode) -> Self {
        let base = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            scenario,
            perturbed: false,
            mode,
            steps: 100,
            t_opt: 2,
            horizon: 25,
            samples: 3,
            epochs: 30,
            lr: 5e-3,
            offline: OfflineSettings { epochs: 300, lr: 1e-3, samples: 5 },
            rho: RhoSettings { iters: 100, lr: 0.05, warm_start: false },
            hidden: 16,
            s_rec: 0.9,
            gamma_bar: 10.0,
            gamma_level: None,
            budget: BudgetSpec::Nominal { kappa: 2.0, tail_ratio: 0.9 },
            p: PNorm::l2(),
            gamma_f: None,
            noise: None,
            seeds: (0..10).collect(),
            output_dir: None,
            workers: None,
        };
        match scenario {
            ScenarioKind::Mountains => base,
            ScenarioKind::DynamicObstacles => ExperimentConfig {
                steps: 300,
                t_opt: 1,
                horizon: 10,
                epochs: 100,
                lr: 0.05,
                hidden: 8,
                gamma_bar: 100.0,
                budget: BudgetSpec::Geometric { kappa: 2.0, level: 1.0, ratio: 0.999 },
                ..base
            },
            ScenarioKind::ScalarSanity => ExperimentConfig {
                steps: 50,
                t_opt: 5,
                horizon: 10,
                samples: 2,
                epochs: 10,
                offline: OfflineSettings { epochs: 50, lr: 1e-2, samples: 2 },
                rho: RhoSettings { iters: 30, lr: 0.05, warm_start: false },
                hidden: 4,
                gamma_bar: 2.0,
                ..base
            },
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn gamma_level(&self) -> f64 {
        self.gamma_level.unwrap_or(self.gamma_bar)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds must be nonempty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(bad("seeds must be distinct"));
        }
        if self.steps == 0 || self.t_opt == 0 || self.horizon == 0 || self.samples == 0 || self.hidden == 0 {
            return Err(bad("steps, t_opt, horizon, samples and hidden must be positive"));
        }
        if !(self.lr > 0.0 && self.offline.lr > 0.0 && self.rho.lr > 0.0) || self.offline.samples == 0 {
            return Err(bad("learning rates and offline samples must be positive"));
        }
        if !(self.s_rec > 0.0 && self.s_rec < 1.0) {
            return Err(bad("s_rec must lie in (0, 1)"));
        }
        if !(self.gamma_bar > 0.0) {
            return Err(bad("gamma_bar must be positive"));
        }
        let gl = self.gamma_level();
        if !(gl > 0.0 && gl <= self.gamma_bar) {
            return Err(bad("gamma_level must lie in (0, gamma_bar]"));
        }
        if self.perturbed && self.scenario != ScenarioKind::Mountains {
            return Err(bad("perturbed applies to the mountains scenario only"));
        }
        if let Exponent::Finite(p) = self.p.p {
            if p != 2.0 && self.gamma_f.is_none() {
                return Err(bad("plant gain is certified for p = 2 and p = ∞ only; supply gamma_f"));
            }
        }
        if let Some(g) = self.gamma_f {
            if !(g > 0.0 && g.is_finite()) {
                return Err(bad("gamma_f must be positive"));
            }
        }
        if let Some(dm) = &self.noise {
            dm.validate().map_err(|e| bad(e.to_string()))?;
        }
        match &self.budget {
            BudgetSpec::Nominal { kappa, tail_ratio } => {
                if !(*kappa >= 0.0) || !(*tail_ratio > 0.0 && *tail_ratio < 1.0) {
                    return Err(bad("nominal budget needs kappa >= 0 and tail_ratio in (0, 1)"));
                }
            }
            BudgetSpec::Geometric { kappa, level, ratio } => {
                if !(*kappa >= 0.0 && *level >= 0.0) || !(*ratio > 0.0 && *ratio <= 1.0) {
                    return Err(bad("geometric budget needs kappa, level >= 0 and ratio in (0, 1]"));
                }
            }
            BudgetSpec::Iss { ratio, g } => {
                if self.p.p != Exponent::Infinity {
                    return Err(bad("the input-to-state schedule needs p = ∞"));
                }
                if self.mode != Mode::OnlineAlg1 {
                    return Err(bad("the input-to-state schedule applies to online_alg1"));
                }
                if !(*ratio > 0.0 && *ratio < 1.0) || !(*g > 0.0) {
                    return Err(bad("ISS budget needs ratio in (0, 1) and g > 0"));
                }
            }
            BudgetSpec::Explicit { profile } => profile.validate().map_err(|e| bad(e.to_string()))?,
        }
        Ok(())
    }

    /// `<output_dir>/<scenario>[_perturbed]/<mode>`.
    pub fn run_dir(&self) -> Option<PathBuf> {
        let tag = if self.perturbed { format!("{}_perturbed", self.scenario.as_str()) } else { self.scenario.as_str().to_string() };
        self.output_dir.as_ref().map(|d| d.join(tag).join(self.mode.as_str()))
    }

    /// Worker count: `GAINBUDGET_WORKERS`, then the config, then available parallelism.
    pub fn worker_count(&self) -> usize {
        std::env::var("GAINBUDGET_WORKERS")
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .or(self.workers.filter(|&n| n > 0))
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
