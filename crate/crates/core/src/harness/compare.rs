use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

use super::config::{Mode, ScenarioKind};
use super::run::{quantile, RunSummary};

/// Paired per-seed comparison of two modes on the same scenario and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: ScenarioKind,
    pub perturbed: bool,
    pub baseline: Mode,
    pub ours: Mode,
    pub seeds: Vec<u64>,
    pub baseline_mean: f64,
    pub ours_mean: f64,
    pub baseline_median: f64,
    pub ours_median: f64,
    /// `(baseline − ours) / baseline` on the means.
    pub reduction: f64,
    /// Baseline mean minus ours; flips sign when the roles swap.
    pub mean_difference: f64,
    /// Seeds where ours is strictly cheaper.
    pub seeds_won: usize,
    /// Seeds where the baseline is strictly cheaper.
    pub seeds_lost: usize,
}

impl Comparison {
    pub fn table(&self) -> String {
        let tag = if self.perturbed { " (perturbed)" } else { "" };
        format!(
            "{}{tag}: {} vs {}\n  mean    {:>14.6e} {:>14.6e}\n  median  {:>14.6e} {:>14.6e}\n  reduction {:.1}%  seeds won {}/{}\n",
            self.scenario.as_str(),
            self.ours.as_str(),
            self.baseline.as_str(),
            self.ours_mean,
            self.baseline_mean,
            self.ours_median,
            self.baseline_median,
            100.0 * self.reduction,
            self.seeds_won,
            self.seeds.len()
        )
    }
}

pub fn compare_modes(baseline: &RunSummary, ours: &RunSummary) -> Result<Comparison> {
    if baseline.scenario != ours.scenario || baseline.perturbed != ours.perturbed {
        return Err(contract("summaries come from different scenarios"));
    }
    let seeds: Vec<u64> = baseline.seeds.iter().map(|s| s.seed).collect();
    if seeds != ours.seeds.iter().map(|s| s.seed).collect::<Vec<_>>() {
        return Err(contract("summaries cover different seed sets"));
    }
    if seeds.is_empty() {
        return Err(contract("nothing to compare"));
    }
    let b: Vec<f64> = baseline.seeds.iter().map(|s| s.total_cost).collect();
    let o: Vec<f64> = ours.seeds.iter().map(|s| s.total_cost).collect();
    let n = b.len() as f64;
    let (bm, om) = (b.iter().sum::<f64>() / n, o.iter().sum::<f64>() / n);
    Ok(Comparison {
        scenario: baseline.scenario,
        perturbed: baseline.perturbed,
        baseline: baseline.mode,
        ours: ours.mode,
        seeds,
        baseline_mean: bm,
        ours_mean: om,
        baseline_median: quantile(&b, 0.5),
        ours_median: quantile(&o, 0.5),
        reduction: if bm != 0.0 { (bm - om) / bm } else { 0.0 },
        mean_difference: bm - om,
        seeds_won: b.iter().zip(&o).filter(|(b, o)| o < b).count(),
        seeds_lost: b.iter().zip(&o).filter(|(b, o)| b < o).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::{BoundStatus, SeedResult};

    fn summary(mode: Mode, costs: &[f64]) -> RunSummary {
        let seeds = costs
            .iter()
            .enumerate()
            .map(|(k, &c)| SeedResult {
                seed: k as u64,
                total_cost: c,
                bound_status: BoundStatus::Passed,
                worst_margin: None,
                iss_envelope: None,
                attempts: 0,
                accepted: 0,
                acceptance_rate: 0.0,
                gamma_f: 1.0,
                gamma_m0: 0.0,
                wall_time_s: 0.0,
            })
            .collect();
        let mut cfg = crate::harness::ExperimentConfig::preset(ScenarioKind::Mountains, mode);
        cfg.seeds = (0..costs.len() as u64).collect();
        RunSummary::from_seeds(&cfg, seeds, 0.0)
    }

    #[test]
    fn self_comparison_is_zero() {
        let a = summary(Mode::StaticOffline, &[1.0, 2.0, 3.0]);
        let c = compare_modes(&a, &a).unwrap();
        assert_eq!(c.reduction, 0.0);
        assert_eq!(c.seeds_won, 0);
        assert_eq!(c.seeds_lost, 0);
    }

    #[test]
    fn reduction_arithmetic() {
        let b = summary(Mode::StaticOffline, &[2.0, 2.0]);
        let o = summary(Mode::OnlineAlg1, &[1.3, 1.3]);
        let c = compare_modes(&b, &o).unwrap();
        assert!((c.reduction - 0.35).abs() < 1e-12);
        assert_eq!(c.seeds_won, 2);
        assert!(c.table().contains("35.0%"));
    }

    #[test]
    fn antisymmetric_under_swap() {
        let b = summary(Mode::StaticOffline, &[2.0, 1.0, 5.0]);
        let o = summary(Mode::OnlineAlg1, &[1.0, 2.0, 4.0]);
        let c1 = compare_modes(&b, &o).unwrap();
        let c2 = compare_modes(&o, &b).unwrap();
        assert_eq!(c1.mean_difference, -c2.mean_difference);
        assert_eq!((c1.seeds_won, c1.seeds_lost), (c2.seeds_lost, c2.seeds_won));
        assert!(c1.reduction > 0.0 && c2.reduction < 0.0);
    }

    #[test]
    fn mismatched_seeds_rejected() {
        let b = summary(Mode::StaticOffline, &[2.0, 1.0, 5.0]);
        let o = summary(Mode::OnlineAlg1, &[1.0, 3.0]);
        assert!(compare_modes(&b, &o).is_err());
    }
}
