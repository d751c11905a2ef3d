use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::plant::{DisturbanceModel, ErrorDynamics};
use crate::policy::GainBoundedPolicy;
use crate::signals::{csv_err, Signal};

use super::adam::Adam;
use super::loss::LossSpec;
use super::rollout::{batch_loss, loss_and_gradient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub horizon: usize,
    pub samples: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub warm_start: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.samples == 0 {
            return Err(contract("training needs H >= 1 and S >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(contract("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub certified_gain: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

pub fn write_train_log<W: Write>(log: &[TrainRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["epoch", "loss", "certified_gain", "grad_norm", "wall_time_s"]).map_err(csv_err)?;
    for r in log {
        wr.write_record([r.epoch.to_string(), format!("{:e}", r.loss), format!("{:e}", r.certified_gain), format!("{:e}", r.grad_norm), format!("{:.6}", r.wall_time_s)])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct UpdateSolution {
    pub policy: GainBoundedPolicy,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub log: Vec<TrainRecord>,
}

/// `S` predicted disturbances for a window starting at `t0` from state `x0`:
/// row 0 is `x0`, later rows are drawn from the nominal noise model.
pub fn sample_batch<R: Rng>(dm: &DisturbanceModel, x0: &[f64], t0: usize, horizon: usize, samples: usize, rng: &mut R) -> Vec<Signal> {
    let nominal = dm.nominal();
    (0..samples)
        .map(|_| {
            let mut w = nominal.sample_window(t0, horizon, x0.len(), rng);
            w.at_mut(0).copy_from_slice(x0);
            w
        })
        .collect()
}

/// Budgeted Adam on the truncated closed-loop loss, projecting to `γ_cap` after every step.
///
/// Returns the best iterate seen (exactly projected), so the loss on the
/// training batch never exceeds that of the initial iterate.
pub fn solve_update_problem<D: ErrorDynamics + ?Sized, R: Rng>(
    plant: &D,
    pol_init: &GainBoundedPolicy,
    tc: &TrainConfig,
    ls: &LossSpec,
    dm: &DisturbanceModel,
    x_ti: &[f64],
    t_i: usize,
    gamma_cap: f64,
    rng: &mut R,
) -> Result<UpdateSolution> {
    tc.validate()?;
    if x_ti.len() != plant.state_dim() {
        return Err(contract("window state has wrong dimension"));
    }
    let clock = Instant::now();
    let batch = sample_batch(dm, x_ti, t_i, tc.horizon, tc.samples, rng);
    let mut pol = if tc.warm_start {
        pol_init.clone()
    } else {
        let s = pol_init.shape();
        GainBoundedPolicy::random(s.n, s.m, s.h, pol_init.gamma_bar(), pol_init.caps().s_rec, 0.1, rng)?
    };
    pol.project_exact(gamma_cap)?;
    pol.reset();
    let shape = pol.shape();
    let initial_theta = pol.theta().to_vec();
    let initial_loss = batch_loss(plant, shape, &initial_theta, &batch, ls, tc.horizon, t_i)?;
    let mut best = (initial_loss, pol.theta().to_vec());
    let mut log = Vec::with_capacity(tc.epochs + 1);
    let mut adam = Adam::new(shape.num_params(), tc.lr);
    let mut grad = vec![0.0; shape.num_params()];
    let mut theta = pol.theta().to_vec();
    for epoch in 0..tc.epochs {
        let loss = loss_and_gradient(plant, shape, &theta, &batch, ls, tc.horizon, t_i, &mut grad)?;
        if loss < best.0 {
            best = (loss, theta.clone());
        }
        log.push(TrainRecord {
            epoch,
            loss,
            certified_gain: pol.certified_gain()?,
            grad_norm: crate::linalg::norm2(&grad),
            wall_time_s: clock.elapsed().as_secs_f64(),
        });
        adam.step(&mut theta, &grad);
        pol.set_theta(&theta)?;
        pol.project_parameters(gamma_cap)?;
        debug_assert!(pol.certified_gain()? <= gamma_cap.min(pol.gamma_bar()) * (1.0 + 1e-12));
        theta.copy_from_slice(pol.theta());
    }
    if tc.epochs > 0 {
        let loss = batch_loss(plant, shape, &theta, &batch, ls, tc.horizon, t_i)?;
        if loss < best.0 {
            best = (loss, theta.clone());
        }
    }
    pol.set_theta(&best.1)?;
    pol.project_exact(gamma_cap)?;
    let mut best_loss = batch_loss(plant, shape, pol.theta(), &batch, ls, tc.horizon, t_i)?;
    if best_loss > initial_loss {
        // exact re-projection moved the best iterate; fall back to the start point
        pol.set_theta(&initial_theta)?;
        pol.project_exact(gamma_cap)?;
        best_loss = initial_loss;
    }
    pol.reset();
    Ok(UpdateSolution { policy: pol, initial_loss, best_loss, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{rng_for, PointMassParams, PointMassPlant, Prestabilizer, Reference};
    use crate::training::loss::Circle;

    fn setup() -> (PointMassPlant, LossSpec, DisturbanceModel) {
        let reference = Reference::Targets { targets: vec![[2.0, 2.0], [-2.0, 2.0]] };
        let plant = PointMassPlant::new(PointMassParams::default(), Prestabilizer::default(), reference.clone()).unwrap();
        let mut ls = LossSpec::point_mass_default(2);
        ls.reference = Some(reference);
        ls.agent_radius = 0.2;
        ls.collision_weight = 5.0;
        ls.obstacle_weight = 5.0;
        ls.static_obstacles = vec![Circle { center: [1.5, 0.0], radius: 0.6 }, Circle { center: [-1.5, 0.0], radius: 0.6 }];
        (plant, ls, DisturbanceModel::gaussian_decay(0.2, 0.95))
    }

    const X0: [f64; 8] = [-4.0, -4.0, 0.0, 0.0, 4.0, -4.0, 0.0, 0.0];

    #[test]
    fn zero_epochs_returns_projected_init() {
        let (plant, ls, dm) = setup();
        let mut init = GainBoundedPolicy::random(8, 4, 6, 4.0, 0.8, 0.1, &mut rng_for(1, 0)).unwrap();
        let tc = TrainConfig { horizon: 25, samples: 3, epochs: 0, lr: 5e-3, seed: 0, warm_start: true };
        let sol = solve_update_problem(&plant, &init, &tc, &ls, &dm, &X0, 0, 4.0, &mut rng_for(2, 0)).unwrap();
        init.project_exact(4.0).unwrap();
        assert_eq!(sol.policy.theta(), init.theta());
        assert!(sol.log.is_empty());
    }

    #[test]
    fn training_improves_and_respects_cap() {
        let (plant, ls, dm) = setup();
        let init = GainBoundedPolicy::random(8, 4, 8, 5.0, 0.8, 0.1, &mut rng_for(3, 0)).unwrap();
        let tc = TrainConfig { horizon: 25, samples: 3, epochs: 100, lr: 5e-3, seed: 0, warm_start: true };
        let sol = solve_update_problem(&plant, &init, &tc, &ls, &dm, &X0, 0, 2.5, &mut rng_for(4, 0)).unwrap();
        assert!(sol.best_loss <= sol.initial_loss);
        assert!(sol.best_loss < 0.99 * sol.initial_loss, "{} vs {}", sol.best_loss, sol.initial_loss);
        assert!(sol.policy.certified_gain().unwrap() <= 2.5 + 1e-12);
        assert!(sol.policy.weight_gain_bound() <= 2.5 * (1.0 + 1e-9));
        assert!(sol.log.iter().all(|r| r.certified_gain <= 2.5 + 1e-12));
        let mut buf = Vec::new();
        write_train_log(&sol.log, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 101);
    }

    #[test]
    fn cold_start_is_deterministic() {
        let (plant, ls, dm) = setup();
        let init = GainBoundedPolicy::zeros(8, 4, 4, 3.0, 0.8).unwrap();
        let tc = TrainConfig { horizon: 10, samples: 2, epochs: 5, lr: 5e-3, seed: 0, warm_start: false };
        let a = solve_update_problem(&plant, &init, &tc, &ls, &dm, &X0, 4, 3.0, &mut rng_for(5, 0)).unwrap();
        let b = solve_update_problem(&plant, &init, &tc, &ls, &dm, &X0, 4, 3.0, &mut rng_for(5, 0)).unwrap();
        assert_eq!(a.policy.theta(), b.policy.theta());
        assert!(a.policy.theta().iter().any(|v| *v != 0.0));
    }
}
