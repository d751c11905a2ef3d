use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::signals::{Exponent, PNorm};

/// A nonnegative budget sequence with a geometric tail past its stored values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetProfile {
    /// `r_t` looked up by the time of the update attempt.
    ByTime { values: Vec<f64>, tail_ratio: f64 },
    /// `r⁽ⁱ⁾` looked up by the index of the accepted update.
    ByIndex { values: Vec<f64>, tail_ratio: f64 },
}

impl BudgetProfile {
    fn parts(&self) -> (&[f64], f64) {
        match self {
            BudgetProfile::ByTime { values, tail_ratio } | BudgetProfile::ByIndex { values, tail_ratio } => (values, *tail_ratio),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (v, eta) = self.parts();
        if v.is_empty() {
            return Err(contract("budget profile is empty"));
        }
        if v.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(contract("budget values must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(contract(format!("tail ratio must lie in [0, 1], got {eta}")));
        }
        Ok(())
    }

    /// Entry `k`, extending with `r_last · η^(k − last)`.
    pub fn value(&self, k: usize) -> f64 {
        let (v, eta) = self.parts();
        match v.get(k) {
            Some(r) => *r,
            None => {
                let last = v.len() - 1;
                v[last] * eta.powi((k - last) as i32)
            }
        }
    }

    /// `Σ_k r_k^p` over the infinite sequence, tail in closed form; infinite for `η = 1` and `r_last > 0`.
    pub fn lp_pow(&self, p: f64) -> f64 {
        let (v, eta) = self.parts();
        let head: f64 = v.iter().map(|r| r.powf(p)).sum();
        let last = v[v.len() - 1];
        if last == 0.0 {
            return head;
        }
        let q = eta.powf(p);
        if q >= 1.0 {
            return f64::INFINITY;
        }
        head + last.powf(p) * q / (1.0 - q)
    }

    pub fn sup(&self) -> f64 {
        self.parts().0.iter().copied().fold(0.0, f64::max)
    }
}

/// Budget, plant gain and policy cap for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateBudget {
    pub profile: BudgetProfile,
    pub gamma_f: f64,
    pub gamma_bar: f64,
    pub pnorm: PNorm,
}

impl UpdateBudget {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if !(self.gamma_f > 0.0 && self.gamma_bar > 0.0) {
            return Err(contract("plant gain and policy cap must be positive"));
        }
        if let Exponent::Finite(_) = self.pnorm.p {
            let (v, eta) = self.profile.parts();
            if eta >= 1.0 && v[v.len() - 1] > 0.0 {
                return Err(contract("finite p needs a summable budget (tail ratio < 1)"));
            }
        }
        Ok(())
    }

    /// `r⁽ⁱ⁾` for the `i`-th accepted update attempted at time `t`.
    pub fn r_for(&self, i: usize, t: usize) -> f64 {
        match &self.profile {
            BudgetProfile::ByTime { .. } => self.profile.value(t),
            BudgetProfile::ByIndex { .. } => self.profile.value(i),
        }
    }
}

/// `r_t = ρ‖x̃_t‖` on the nominal horizon, then `r_T η^{t−T}`.
pub fn design_budget_from_nominal(nominal_norms: &[f64], rho: f64, tail_ratio: f64) -> Result<BudgetProfile> {
    if nominal_norms.is_empty() {
        return Err(contract("nominal trajectory is empty"));
    }
    if !(rho >= 0.0) || !(tail_ratio > 0.0 && tail_ratio < 1.0) {
        return Err(contract(format!("need ρ >= 0 and η in (0,1), got {rho}, {tail_ratio}")));
    }
    let p = BudgetProfile::ByTime { values: nominal_norms.iter().map(|x| rho * x).collect(), tail_ratio };
    p.validate()?;
    Ok(p)
}

/// Inputs of the input-to-state schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssSchedule {
    pub x0_norm: f64,
    pub gamma_f: f64,
    pub gamma_m0: f64,
    pub gamma_bar: f64,
    pub d: Vec<f64>,
    pub g: f64,
    pub w_inf: f64,
}

impl IssSchedule {
    /// `D = γ̂(𝓕)(γ(M⁰) + 1)`.
    pub fn big_d(&self) -> f64 {
        self.gamma_f * (self.gamma_m0 + 1.0)
    }

    /// `G = γ̂(𝓕)(γ̄ + 1)`.
    pub fn big_g(&self) -> f64 {
        self.gamma_f * (self.gamma_bar + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d.is_empty() || self.d[0] < 1.0 {
            return Err(contract("ISS schedule needs d⁽⁰⁾ >= 1"));
        }
        if self.d.windows(2).any(|w| !(w[1] < w[0])) || self.d.iter().any(|x| !(*x > 0.0)) {
            return Err(contract("ISS schedule needs a positive, strictly decreasing d"));
        }
        if !(self.g > 0.0) || !(self.w_inf >= 0.0) || !(self.x0_norm >= 0.0) {
            return Err(contract("ISS schedule needs g > 0 and nonnegative norms"));
        }
        Ok(())
    }

    /// Piecewise-linear `d̄(t)` for update times `t_i = i·t_opt`: `d⁽⁰⁾` on `[0, t_1]`,
    /// linear from `d^{(i-1)}` to `d^{(i)}` on `[t_i, t_{i+1}]`.
    pub fn d_bar(&self, t: usize, t_opt: usize) -> f64 {
        let i = t / t_opt;
        let d = |k: usize| self.d.get(k).copied().unwrap_or_else(|| *self.d.last().unwrap());
        if i == 0 {
            return d(0);
        }
        let frac = (t - i * t_opt) as f64 / t_opt as f64;
        d(i - 1) + frac * (d(i) - d(i - 1))
    }

    /// `D·d̄(t)·|x₀| + (g + G)‖w‖∞`.
    pub fn envelope(&self, t: usize, t_opt: usize) -> f64 {
        self.big_d() * self.d_bar(t, t_opt) * self.x0_norm + (self.g + self.big_g()) * self.w_inf
    }
}

/// `r⁽ⁱ⁾ = d⁽ⁱ⁾ D |x₀| + g‖w‖∞` for every stored `d⁽ⁱ⁾` (entry 0 included).
pub fn iss_budget_schedule(s: &IssSchedule) -> Result<Vec<f64>> {
    s.validate()?;
    Ok(s.d.iter().map(|d| d * s.big_d() * s.x0_norm + s.g * s.w_inf).collect())
}

/// Time profile placing `r⁽ⁱ⁾` on `[i·t_opt, (i+1)·t_opt)`.
pub fn iss_time_profile(s: &IssSchedule, t_opt: usize, horizon: usize) -> Result<BudgetProfile> {
    let r = iss_budget_schedule(s)?;
    if t_opt == 0 {
        return Err(contract("t_opt must be positive"));
    }
    let values = (0..horizon.max(1)).map(|t| r.get(t / t_opt).copied().unwrap_or(*r.last().unwrap())).collect();
    Ok(BudgetProfile::ByTime { values, tail_ratio: 1.0 })
}

/// `d⁽ⁱ⁾ = ratioⁱ`, `count` entries.
pub fn geometric_d(ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| ratio.powi(i as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_design_example() {
        let p = design_budget_from_nominal(&[1.0, 0.5, 0.25], 0.2, 0.5).unwrap();
        let got: Vec<f64> = (0..5).map(|t| p.value(t)).collect();
        let want = [0.2, 0.1, 0.05, 0.025, 0.0125];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        let z = design_budget_from_nominal(&[1.0, 0.5], 0.0, 0.5).unwrap();
        assert!((0..10).all(|t| z.value(t) == 0.0));
    }

    #[test]
    fn closed_form_tail_matches_partial_sums() {
        for eta in [0.1, 0.5, 0.9, 0.99] {
            let p = design_budget_from_nominal(&[3.0, 1.0, 0.7], 0.5, eta).unwrap();
            let closed = p.lp_pow(2.0);
            let partial: f64 = (0..20_000).map(|t| p.value(t).powi(2)).sum();
            assert!((closed - partial).abs() <= 1e-10 * closed, "{eta}: {closed} vs {partial}");
        }
    }

    #[test]
    fn iss_example() {
        let s = IssSchedule { x0_norm: 1.0, gamma_f: 2.0, gamma_m0: 1.0, gamma_bar: 3.0, d: geometric_d(0.5, 6), g: 1.0, w_inf: 0.1 };
        let r = iss_budget_schedule(&s).unwrap();
        let want = [2.1, 1.1, 0.6, 0.35];
        for (i, w) in want.iter().enumerate() {
            assert!((r[i + 1] - w).abs() < 1e-12);
        }
        assert_eq!(s.d_bar(0, 2), 1.0);
        assert_eq!(s.d_bar(2, 2), 1.0);
        assert_eq!(s.d_bar(3, 2), 0.75);
        assert_eq!(s.d_bar(4, 2), 0.5);
        let bad = IssSchedule { d: vec![1.0, 1.0], ..s.clone() };
        assert!(iss_budget_schedule(&bad).is_err());
        let bad = IssSchedule { d: vec![0.9, 0.5], ..s };
        assert!(iss_budget_schedule(&bad).is_err());
    }

    #[test]
    fn index_and_time_lookup() {
        let b = UpdateBudget {
            profile: BudgetProfile::ByIndex { values: vec![5.0, 4.0, 3.0], tail_ratio: 0.5 },
            gamma_f: 2.0,
            gamma_bar: 3.0,
            pnorm: PNorm::l2(),
        };
        b.validate().unwrap();
        assert_eq!(b.r_for(1, 99), 4.0);
        assert_eq!(b.r_for(3, 0), 1.5);
        let b = UpdateBudget { profile: BudgetProfile::ByTime { values: vec![5.0, 4.0], tail_ratio: 0.5 }, ..b };
        assert_eq!(b.r_for(7, 1), 4.0);
        let unsummable = UpdateBudget { profile: BudgetProfile::ByTime { values: vec![1.0], tail_ratio: 1.0 }, ..b.clone() };
        assert!(unsummable.validate().is_err());
        let linf = UpdateBudget { pnorm: PNorm::linf(), ..unsummable };
        linf.validate().unwrap();
    }
}
