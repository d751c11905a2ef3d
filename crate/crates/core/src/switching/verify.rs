use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::signals::{windows_of, Exponent, PNorm, Signal};
use crate::trace::ClosedLoopTrace;

use super::budget::UpdateBudget;
use super::rules::SwitchLog;

pub const BOUND_RTOL: f64 = 1e-9;

fn within(lhs: f64, bound: f64) -> bool {
    lhs <= bound * (1.0 + BOUND_RTOL)
}

/// One window `[start, end]` (inclusive) of the concatenated closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    pub window: usize,
    pub start: usize,
    pub end: usize,
    pub x_norm: f64,
    pub w_norm: f64,
    /// `r⁽ⁱ⁾`, zero for window 0.
    pub r: f64,
    pub bound: f64,
    pub ok: bool,
}

impl WindowCheck {
    /// `bound − ‖x̄ᵢ‖`; negative on violation.
    pub fn margin(&self) -> f64 {
        self.bound - self.x_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCheck {
    /// `‖x‖_p` for `p = ∞`, `‖x‖_p^p` otherwise.
    pub lhs: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub c0: f64,
    pub c: f64,
    pub windows: Vec<WindowCheck>,
    pub aggregate: AggregateCheck,
    /// Attempts whose logged decision does not replay.
    pub replay_failures: Vec<usize>,
    pub passed: bool,
}

impl BoundReport {
    pub fn violations(&self) -> impl Iterator<Item = &WindowCheck> {
        self.windows.iter().filter(|w| !w.ok)
    }

    pub fn worst_margin(&self) -> f64 {
        self.windows.iter().map(|w| w.margin()).fold(f64::INFINITY, f64::min)
    }
}

/// Checks the per-window bounds of the concatenated controller on a finished run:
/// `‖x̄₀‖ ≤ C₀‖w̄₀‖` and `‖x̄ᵢ‖ ≤ r⁽ⁱ⁾ + C‖w̄ᵢ‖` with `C₀ = γ̂(𝓕)(γ(M⁰)+1)`,
/// `C = γ̂(𝓕)(γ̄+1)`, plus the aggregate bound over the whole run.
///
/// `w̄ᵢ` excludes `w_{tᵢ}` for `i ≥ 1`: the new policy is driven by `x_{tᵢ}`
/// there, whose size is already charged to `r⁽ⁱ⁾`.
pub fn verify_window_bounds(trace: &ClosedLoopTrace, log: &SwitchLog, budget: &UpdateBudget) -> Result<BoundReport> {
    budget.validate()?;
    let pn = budget.pnorm;
    let starts = log.boundaries();
    if trace.segment_starts() != starts {
        return Err(contract("trace segments do not match the accepted updates in the log"));
    }
    let c0 = budget.gamma_f * (log.gamma_m0 + 1.0);
    let c = budget.gamma_f * (budget.gamma_bar + 1.0);
    let accepted: Vec<_> = log.accepted().collect();
    let mut windows = Vec::with_capacity(starts.len());
    for (k, (a, b)) in windows_of(&starts, trace.len()).into_iter().enumerate() {
        let x_norm = trace.x.window(a, b)?.norm(&pn);
        let w_from = if k == 0 { a } else { a + 1 };
        let w_norm = if w_from <= b { trace.w.window(w_from, b)?.norm(&pn) } else { 0.0 };
        let (r, bound) = if k == 0 { (0.0, c0 * w_norm) } else { (accepted[k - 1].r, accepted[k - 1].r + c * w_norm) };
        windows.push(WindowCheck { window: k, start: a, end: b, x_norm, w_norm, r, bound, ok: within(x_norm, bound) });
    }
    let aggregate = aggregate_check(&trace.x, &windows, c0, c, &pn);
    let replay_failures = log.replay();
    let passed = windows.iter().all(|w| w.ok) && aggregate.ok && replay_failures.is_empty();
    Ok(BoundReport { c0, c, windows, aggregate, replay_failures, passed })
}

fn aggregate_check(x: &Signal, windows: &[WindowCheck], c0: f64, c: f64, pn: &PNorm) -> AggregateCheck {
    match pn.p {
        Exponent::Infinity => {
            let lhs = x.norm(pn);
            let r_sup = windows.iter().map(|w| w.r).fold(0.0, f64::max);
            let w_sup = windows.iter().skip(1).map(|w| w.w_norm).fold(0.0, f64::max);
            let bound = (c0 * windows[0].w_norm).max(r_sup + c * w_sup);
            AggregateCheck { lhs, bound, ok: within(lhs, bound) }
        }
        Exponent::Finite(p) => {
            let lhs = x.norm_pow(p, pn.vector_norm);
            let k = c0.max(c).powf(p);
            let w_pow: f64 = windows.iter().map(|w| w.w_norm.powf(p)).sum();
            let r_pow: f64 = windows.iter().map(|w| w.r.powf(p)).sum();
            let bound = 2f64.powf(p - 1.0) * (k * w_pow + r_pow);
            AggregateCheck { lhs, bound, ok: within(lhs, bound) }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{rng_for, DisturbanceModel, LinearPlant};
    use crate::policy::GainBoundedPolicy;
    use crate::switching::budget::BudgetProfile;
    use crate::switching::controller::{simulate, UpdateRule};
    use crate::training::LossSpec;

    fn run(pn: PNorm, zero_gain: bool) -> (ClosedLoopTrace, SwitchLog, UpdateBudget) {
        let plant = LinearPlant::scalar(0.5, 1.0);
        let ls = LossSpec::quadratic(&[1.0], &[0.1]);
        let mut w = DisturbanceModel::gaussian_decay(0.2, 0.98).sample(80, 1, &mut rng_for(9, 0));
        w.at_mut(0)[0] = 2.0;
        let budget = UpdateBudget {
            profile: BudgetProfile::ByIndex { values: vec![20.0], tail_ratio: 0.8 },
            gamma_f: 2.0,
            gamma_bar: 2.0,
            pnorm: pn,
        };
        let mut rng = rng_for(10, 0);
        let m0 = GainBoundedPolicy::random(1, 1, 3, 2.0, 0.7, 0.5, &mut rng).unwrap();
        let mut tr = move |inc: &GainBoundedPolicy, _: &[f64], _: usize, cap: f64| {
            if zero_gain {
                return GainBoundedPolicy::zeros(1, 1, 3, inc.gamma_bar(), 0.7);
            }
            let mut p = GainBoundedPolicy::random(1, 1, 3, inc.gamma_bar(), 0.7, 1.0, &mut rng)?;
            p.project_exact(cap)?;
            Ok(p)
        };
        let out = simulate(&plant, &plant, m0, &budget, &UpdateRule::Scheduled { t_opt: 4 }, &w, &ls, &mut tr).unwrap();
        (out.trace, out.log, budget)
    }

    #[test]
    fn accepted_runs_pass_for_l2_and_linf() {
        for pn in [PNorm::l2(), PNorm::linf(), PNorm::finite(3.0).unwrap()] {
            let (trace, log, b) = run(pn, false);
            let rep = verify_window_bounds(&trace, &log, &b).unwrap();
            assert!(log.accepted().count() > 3);
            assert!(rep.passed, "{pn:?}: {:?}", rep.violations().collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_gain_updates_are_strictly_inside() {
        let (trace, log, b) = run(PNorm::l2(), true);
        let rep = verify_window_bounds(&trace, &log, &b).unwrap();
        assert!(rep.passed);
        for w in &rep.windows[1..] {
            // the policy is silent: x̄ᵢ is the plant response to x_{tᵢ} and w̄ᵢ
            assert!(w.x_norm <= w.r + b.gamma_f * w.w_norm);
            assert!(w.margin() > 0.0);
        }
    }

    #[test]
    fn inflated_state_is_flagged() {
        let (trace, log, mut b) = run(PNorm::l2(), false);
        // tight budget values force every window bound to lean on C‖w̄ᵢ‖
        let mut log = log;
        for r in log.records.iter_mut() {
            r.r = 0.0;
        }
        b.profile = BudgetProfile::ByIndex { values: vec![0.0], tail_ratio: 0.5 };
        let bad = trace.with_scaled_state(1e3);
        let rep = verify_window_bounds(&bad, &log, &b).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.violations().count(), rep.windows.len());
        assert!(!rep.aggregate.ok);
        assert!(rep.worst_margin() < 0.0);
    }

    #[test]
    fn mismatched_segments_rejected() {
        let (mut trace, log, b) = run(PNorm::l2(), false);
        trace.segment.iter_mut().for_each(|s| *s = 0);
        assert!(verify_window_bounds(&trace, &log, &b).is_err());
    }
}
