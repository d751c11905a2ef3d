use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::plant::{reconstruct_disturbance, ErrorDynamics};
use crate::policy::GainBoundedPolicy;
use crate::signals::Signal;
use crate::trace::ClosedLoopTrace;
use crate::training::LossSpec;

use super::budget::UpdateBudget;
use super::rules::{algorithm1_cap, algorithm2_threshold, check_update_admissible, Reason, SwitchLog, SwitchRecord};

/// Caps handed to the trainer are shrunk by this factor so rounding in the
/// certified gain cannot push an update over its budget.
const CAP_SHRINK: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UpdateRule {
    /// Keep the initial policy for the whole run.
    Static,
    /// Attempt every `t_opt` steps with the largest admissible gain.
    Scheduled { t_opt: usize },
    /// Deploy a policy of gain `gamma_level` as soon as `|x_t| ≤ ε⁽ⁱ⁾`;
    /// attempts are at least `min_gap` steps apart.
    Triggered { gamma_level: f64, min_gap: usize },
}

impl UpdateRule {
    pub fn validate(&self, gamma_bar: f64) -> Result<()> {
        match *self {
            UpdateRule::Scheduled { t_opt: 0 } => Err(contract("t_opt must be positive")),
            UpdateRule::Triggered { gamma_level, min_gap } if !(gamma_level > 0.0 && gamma_level <= gamma_bar) || min_gap == 0 => {
                Err(contract(format!("gamma_level must lie in (0, γ̄ = {gamma_bar}] and min_gap >= 1")))
            }
            _ => Ok(()),
        }
    }
}

/// Produces a candidate policy for the window starting at `t_i`.
pub trait Trainer {
    fn train(&mut self, incumbent: &GainBoundedPolicy, x_ti: &[f64], t_i: usize, gamma_cap: f64) -> Result<GainBoundedPolicy>;
}

impl<F> Trainer for F
where
    F: FnMut(&GainBoundedPolicy, &[f64], usize, f64) -> Result<GainBoundedPolicy>,
{
    fn train(&mut self, incumbent: &GainBoundedPolicy, x_ti: &[f64], t_i: usize, gamma_cap: f64) -> Result<GainBoundedPolicy> {
        self(incumbent, x_ti, t_i, gamma_cap)
    }
}

/// Policies stitched at update instants; each starts from zero state on
/// `z⁽ⁱ⁾ = (x_{t_i}, ŵ_{t_i+1}, …)`.
#[derive(Debug, Clone)]
pub struct ConcatenatedController {
    pub active: GainBoundedPolicy,
    pub segment: usize,
    pub segment_start: usize,
    /// Every deployed policy with its start time, initial policy first.
    pub deployed: Vec<(usize, GainBoundedPolicy)>,
}

impl ConcatenatedController {
    pub fn new(mut m0: GainBoundedPolicy) -> Self {
        m0.reset();
        Self { deployed: vec![(0, m0.clone())], active: m0, segment: 0, segment_start: 0 }
    }

    pub fn switch_to(&mut self, t: usize, mut pol: GainBoundedPolicy) {
        pol.reset();
        self.deployed.push((t, pol.clone()));
        self.active = pol;
        self.segment += 1;
        self.segment_start = t;
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: ClosedLoopTrace,
    pub log: SwitchLog,
    pub controller: ConcatenatedController,
}

/// Closed loop `x_{t+1} = f_t(x_t, u_t) + w_{t+1}`, `x_0 = w_0`, over `w.len()` steps.
///
/// The controller sees `ŵ_t` reconstructed with `model`, except at a switch,
/// where the new policy receives `x_{t_i}` as its first input.
#[allow(clippy::too_many_arguments)]
pub fn simulate<P, M>(
    plant: &P,
    model: &M,
    m0: GainBoundedPolicy,
    budget: &UpdateBudget,
    rule: &UpdateRule,
    w: &Signal,
    ls: &LossSpec,
    trainer: &mut dyn Trainer,
) -> Result<SimOutcome>
where
    P: ErrorDynamics + ?Sized,
    M: ErrorDynamics + ?Sized,
{
    let (n, m) = (plant.state_dim(), plant.input_dim());
    if w.dim() != n || w.is_empty() {
        return Err(contract("disturbance must be nonempty with the plant state dimension"));
    }
    if m0.shape().n != n || m0.shape().m != m || model.state_dim() != n || model.input_dim() != m {
        return Err(contract("policy, model and plant dimensions differ"));
    }
    budget.validate()?;
    rule.validate(budget.gamma_bar)?;
    let gamma_m0 = m0.certified_gain()?;
    let vn = budget.pnorm.vector_norm;
    let horizon = w.len();
    let mut ctl = ConcatenatedController::new(m0);
    let mut log = SwitchLog { gamma_f: budget.gamma_f, gamma_bar: budget.gamma_bar, gamma_m0, records: vec![] };
    let mut trace = ClosedLoopTrace::with_capacity(n, m, horizon);
    let mut x = w.at(0).to_vec();
    let mut x_prev = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut u_prev = vec![0.0; m];
    let mut w_hat = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut accepted = 0usize;
    let mut last_attempt = 0usize;
    for t in 0..horizon {
        reconstruct_disturbance(model, t, &x, (t > 0).then_some((x_prev.as_slice(), u_prev.as_slice())), &mut w_hat);
        let x_norm = vn.eval(&x);
        let mut switched = false;
        let attempt = match *rule {
            UpdateRule::Static => None,
            UpdateRule::Scheduled { t_opt } => (t > 0 && t % t_opt == 0).then(|| {
                let r = budget.r_for(accepted + 1, t);
                let cap = algorithm1_cap(budget.gamma_f, budget.gamma_bar, r, x_norm);
                (r, x_norm, cap)
            }),
            UpdateRule::Triggered { gamma_level, min_gap } => {
                let r = budget.r_for(accepted + 1, t);
                let eps = algorithm2_threshold(budget.gamma_f, r, gamma_level);
                (t > 0 && t >= last_attempt + min_gap && x_norm <= eps).then_some((r, eps, gamma_level))
            }
        };
        if let Some((r, eps, cap)) = attempt {
            last_attempt = t;
            let index = accepted + 1;
            let mut rec = SwitchRecord {
                attempt: log.records.len(),
                t,
                index,
                x_norm,
                eps,
                r,
                gamma_cap: cap,
                gamma_new: 0.0,
                accepted: false,
                reason: Reason::Budget,
            };
            if cap > 0.0 {
                let cand = trainer.train(&ctl.active, &x, t, cap * CAP_SHRINK)?;
                let g = cand.certified_gain()?;
                let (ok, reason) = check_update_admissible(budget.gamma_f, budget.gamma_bar, r, eps, x_norm, g);
                rec.gamma_new = g;
                rec.accepted = ok;
                rec.reason = reason;
                if ok {
                    ctl.switch_to(t, cand);
                    accepted += 1;
                    switched = true;
                }
            }
            log.records.push(rec);
        }
        let z = if switched { &x } else { &w_hat };
        ctl.active.step(z, &mut u)?;
        let cost = ls.stage_cost(&x, &u, t);
        trace.push_step(&x, &u, w.at(t), &w_hat, ctl.segment, cost);
        if t + 1 < horizon {
            plant.step(t, &x, &u, &mut next);
            next.iter_mut().zip(w.at(t + 1)).for_each(|(a, b)| *a += b);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { step: t + 1, what: "closed-loop state".into() });
            }
            std::mem::swap(&mut x_prev, &mut x);
            x.copy_from_slice(&next);
            u_prev.copy_from_slice(&u);
        }
    }
    Ok(SimOutcome { trace, log, controller: ctl })
}
