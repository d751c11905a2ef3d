use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signals::csv_err;

/// Below this state norm the scheduled rule grants the full cap instead of dividing by `|x|`.
pub const ZERO_STATE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Accepted,
    /// `|x_{t_i}| > ε⁽ⁱ⁾`.
    Trigger,
    /// `γ̂(𝓕)(γ + 1)ε⁽ⁱ⁾ > r⁽ⁱ⁾`, including an empty gain range.
    Budget,
    /// `γ > γ̄`.
    GainCap,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Accepted => "accepted",
            Reason::Trigger => "trigger",
            Reason::Budget => "budget",
            Reason::GainCap => "gain_cap",
        }
    }
}

/// True iff `|x| ≤ ε`, `γ̂(𝓕)(γ_new + 1)ε ≤ r` and `γ_new ≤ γ̄`; otherwise the first failing condition.
pub fn check_update_admissible(gamma_f: f64, gamma_bar: f64, r: f64, eps: f64, x_norm: f64, gamma_new: f64) -> (bool, Reason) {
    if !(x_norm <= eps) {
        return (false, Reason::Trigger);
    }
    if !(gamma_f * (gamma_new + 1.0) * eps <= r) {
        return (false, Reason::Budget);
    }
    if !(gamma_new <= gamma_bar) {
        return (false, Reason::GainCap);
    }
    (true, Reason::Accepted)
}

/// `γ_max = min(γ̄, r/(γ̂(𝓕)|x|) − 1)`; nonpositive means no admissible update.
pub fn algorithm1_cap(gamma_f: f64, gamma_bar: f64, r: f64, x_norm: f64) -> f64 {
    if x_norm < ZERO_STATE_GUARD {
        return gamma_bar;
    }
    gamma_bar.min(r / (gamma_f * x_norm) - 1.0)
}

/// `ε⁽ⁱ⁾ = r⁽ⁱ⁾ / (γ̂(𝓕)(γ_level + 1))`.
pub fn algorithm2_threshold(gamma_f: f64, r: f64, gamma_level: f64) -> f64 {
    r / (gamma_f * (gamma_level + 1.0))
}

/// One update attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub attempt: usize,
    pub t: usize,
    /// Index the update has (or would have had) among accepted updates.
    pub index: usize,
    pub x_norm: f64,
    pub eps: f64,
    pub r: f64,
    pub gamma_cap: f64,
    pub gamma_new: f64,
    pub accepted: bool,
    pub reason: Reason,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SwitchLog {
    pub gamma_f: f64,
    pub gamma_bar: f64,
    /// Certified gain of the initial policy.
    pub gamma_m0: f64,
    pub records: Vec<SwitchRecord>,
}

impl SwitchLog {
    pub fn accepted(&self) -> impl Iterator<Item = &SwitchRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.accepted().count() as f64 / self.records.len() as f64
    }

    /// Segment start times: 0 followed by accepted update times.
    pub fn boundaries(&self) -> Vec<usize> {
        std::iter::once(0).chain(self.accepted().map(|r| r.t)).collect()
    }

    /// Re-evaluates every record from its logged values; returns the attempts whose
    /// logged outcome disagrees, or that break time ordering.
    pub fn replay(&self) -> Vec<usize> {
        let mut bad = Vec::new();
        let mut last_t = None;
        for r in &self.records {
            let (ok, _) = check_update_admissible(self.gamma_f, self.gamma_bar, r.r, r.eps, r.x_norm, r.gamma_new);
            let ordered = last_t.is_none_or(|lt| r.t > lt);
            if (r.accepted && !ok) || !ordered {
                bad.push(r.attempt);
            }
            last_t = Some(r.t);
        }
        bad
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["attempt", "t", "index", "x_norm", "eps", "r", "gamma_cap", "gamma_new", "accepted", "reason"]).map_err(csv_err)?;
        for r in &self.records {
            wr.write_record([
                r.attempt.to_string(),
                r.t.to_string(),
                r.index.to_string(),
                format!("{:e}", r.x_norm),
                format!("{:e}", r.eps),
                format!("{:e}", r.r),
                format!("{:e}", r.gamma_cap),
                format!("{:e}", r.gamma_new),
                r.accepted.to_string(),
                r.reason.as_str().to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn admissibility_examples() {
        assert_eq!(check_update_admissible(2.0, 10.0, 1.0, 0.1, 0.05, 3.0), (true, Reason::Accepted));
        assert_eq!(check_update_admissible(2.0, 10.0, 1.0, 0.1, 0.2, 3.0), (false, Reason::Trigger));
        assert_eq!(check_update_admissible(2.0, 10.0, 0.5, 0.1, 0.05, 3.0), (false, Reason::Budget));
        assert_eq!(check_update_admissible(2.0, 2.5, 1.0, 0.1, 0.05, 3.0), (false, Reason::GainCap));
    }

    #[test]
    fn algorithm1_examples() {
        assert!((algorithm1_cap(2.0, 10.0, 1.0, 0.1) - 4.0).abs() < 1e-12);
        assert_eq!(algorithm1_cap(2.0, 3.0, 1.0, 0.1), 3.0);
        assert!(algorithm1_cap(2.0, 3.0, 1.0, 0.6) <= 0.0);
        assert_eq!(algorithm1_cap(2.0, 3.0, 1.0, 0.0), 3.0);
    }

    #[test]
    fn algorithm2_examples() {
        assert!((algorithm2_threshold(2.0, 0.5, 4.0) - 0.05).abs() < 1e-15);
        assert!((algorithm2_threshold(2.0, 0.5, 1e-12) - 0.25).abs() < 1e-12);
        let eps = algorithm2_threshold(2.0, 0.0, 1.0);
        assert_eq!(eps, 0.0);
        assert!(!check_update_admissible(2.0, 3.0, 0.0, eps, 1e-300, 1.0).0);
    }

    #[test]
    fn log_round_trip_and_replay() {
        let mut log = SwitchLog { gamma_f: 2.0, gamma_bar: 5.0, gamma_m0: 1.0, records: vec![] };
        for (k, (x, g)) in [(0.05, 3.0), (0.3, 1.0), (0.01, 5.0)].iter().enumerate() {
            let r = 1.0;
            let (ok, reason) = check_update_admissible(2.0, 5.0, r, *x, *x, *g);
            log.records.push(SwitchRecord { attempt: k, t: 2 * (k + 1), index: 1, x_norm: *x, eps: *x, r, gamma_cap: *g, gamma_new: *g, accepted: ok, reason });
        }
        assert!(log.replay().is_empty());
        assert_eq!(log.boundaries(), vec![0, 2, 6]);
        let back = SwitchLog::from_json(&log.to_json().unwrap()).unwrap();
        assert_eq!(back, log);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
        log.records[1].accepted = true;
        assert_eq!(log.replay(), vec![1]);
    }

    proptest! {
        #[test]
        fn shrinking_budget_never_admits(gf in 0.5f64..50.0, gb in 0.1f64..20.0, r in 0.0f64..10.0, shrink in 0.0f64..1.0,
                                         eps in 0.0f64..1.0, x in 0.0f64..1.0, g in 0.0f64..20.0) {
            let (big, _) = check_update_admissible(gf, gb, r, eps, x, g);
            let (small, _) = check_update_admissible(gf, gb, r * shrink, eps, x, g);
            prop_assert!(!small || big);
            // the scheduled-rule cap is monotone in the budget as well
            prop_assert!(algorithm1_cap(gf, gb, r * shrink, x) <= algorithm1_cap(gf, gb, r, x));
        }
    }
}
