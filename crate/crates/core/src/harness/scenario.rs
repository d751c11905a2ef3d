use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaincert::{certify_gain_linf, certify_gain_lmi, certify_point_mass, certify_point_mass_linf, noise_augmented};
use crate::plant::{
    rng_for, sample_disturbance, DisturbanceModel, Dynamics, Impulse, LinearPlant, NoiseKind, ObstacleTrack, PlantModel, PointMassParams,
    PointMassPlant, Prestabilizer, Reference,
};
use crate::signals::{Exponent, PNorm, Signal};
use crate::training::{Circle, LossSpec};

use super::config::{ExperimentConfig, ScenarioKind};

pub const MOUNTAIN_STARTS: [[f64; 2]; 2] = [[-2.0, -2.0], [2.0, -2.0]];
pub const MOUNTAIN_TARGETS: [[f64; 2]; 2] = [[2.0, 2.0], [-2.0, 2.0]];
pub const MOUNTAINS: [Circle; 2] = [Circle { center: [-1.5, 0.0], radius: 0.7 }, Circle { center: [1.5, 0.0], radius: 0.7 }];
pub const AGENT_RADIUS: f64 = 0.2;
pub const BARRIER_WEIGHT: f64 = 50.0;
/// Impulses of the perturbed mountains run: `+0.3` on every coordinate at these steps.
pub const IMPULSE_TIMES: [usize; 2] = [1, 8];
pub const IMPULSE_MAGNITUDE: f64 = 0.3;

/// Everything a run needs for one seed. The controller's internal model is the plant itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub plant: PlantModel,
    pub loss: LossSpec,
    /// Disturbance law the realization was drawn from (impulses included).
    pub noise: DisturbanceModel,
    pub x0: Vec<f64>,
    /// Realized disturbance with `w₀ = x₀`.
    pub w: Signal,
    pub gamma_f: f64,
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn input_dim(&self) -> usize {
        self.loss.m
    }

    pub fn obstacles(&self) -> Option<&ObstacleTrack> {
        self.loss.moving_obstacles.as_ref()
    }
}

fn mountains_plant() -> Result<PointMassPlant> {
    PointMassPlant::new(PointMassParams::default(), Prestabilizer::default(), Reference::Targets { targets: MOUNTAIN_TARGETS.to_vec() })
}

fn circle_reference(steps: usize) -> Reference {
    Reference::Circle { center: [0.0, 0.0], radius: 2.0, period_steps: steps.max(1) as f64 }
}

/// `γ̂(𝓕)` for the chosen norm: bounded-real certificate for `p = 2`, impulse-response
/// bound for `p = ∞`, otherwise the user-supplied value.
pub fn plant_gain(plant: &PlantModel, pn: &PNorm, user: Option<f64>) -> Result<f64> {
    if let Some(g) = user {
        return Ok(g);
    }
    match (&plant.dynamics, pn.p) {
        (Dynamics::PointMass(pm), Exponent::Finite(2.0)) => Ok(certify_point_mass(&pm.params, &pm.prestab)?.gamma_hat),
        (Dynamics::PointMass(pm), Exponent::Infinity) => certify_point_mass_linf(&pm.params, &pm.prestab, pn.vector_norm),
        (Dynamics::Linear(lp), Exponent::Finite(2.0)) => Ok(certify_gain_lmi(&lp.a_matrix(), &noise_augmented(&lp.b_matrix()))?.gamma_hat),
        (Dynamics::Linear(lp), Exponent::Infinity) => certify_gain_linf(&lp.a_matrix(), &lp.b_matrix(), pn.vector_norm),
        _ => Err(Error::InvalidConfig("no automatic gain certificate for this p; supply gamma_f".into())),
    }
}

/// Builds the scenario of `cfg` for one seed. Seed streams: 0 disturbance, 1 obstacle motion.
pub fn build_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    let t = cfg.steps;
    let (dynamics, mut loss, mut noise, x0) = match cfg.scenario {
        ScenarioKind::Mountains => {
            let pm = mountains_plant()?;
            let mut ls = LossSpec::point_mass_default(2);
            ls.reference = Some(pm.reference.clone());
            ls.agent_radius = AGENT_RADIUS;
            ls.collision_weight = BARRIER_WEIGHT;
            ls.obstacle_weight = BARRIER_WEIGHT;
            ls.static_obstacles = MOUNTAINS.to_vec();
            let x0: Vec<f64> = (0..2)
                .flat_map(|j| [MOUNTAIN_STARTS[j][0] - MOUNTAIN_TARGETS[j][0], MOUNTAIN_STARTS[j][1] - MOUNTAIN_TARGETS[j][1], 0.0, 0.0])
                .collect();
            (Dynamics::PointMass(pm), ls, DisturbanceModel::gaussian_decay(0.2, 0.95), Some(x0))
        }
        ScenarioKind::DynamicObstacles => {
            let reference = circle_reference(t);
            let pm = PointMassPlant::new(PointMassParams::default(), Prestabilizer::default(), reference.clone())?;
            let mut ls = LossSpec::point_mass_default(1);
            ls.reference = Some(reference);
            ls.agent_radius = AGENT_RADIUS;
            ls.obstacle_weight = BARRIER_WEIGHT;
            ls.moving_obstacles = Some(ObstacleTrack::default().resample(&mut rng_for(seed, 1)));
            (Dynamics::PointMass(pm), ls, DisturbanceModel::bounded_persistent(0.05), Some(vec![0.5, 0.0, 0.0, 0.0]))
        }
        ScenarioKind::ScalarSanity => {
            let lp = LinearPlant::scalar(0.5, 1.0);
            (Dynamics::Linear(lp), LossSpec::quadratic(&[1.0], &[0.1]), DisturbanceModel::gaussian_decay(0.1, 0.9), None)
        }
    };
    loss.ts = PointMassParams::default().ts;
    if let Some(dm) = &cfg.noise {
        noise = dm.clone();
    }
    if cfg.perturbed {
        let imps = IMPULSE_TIMES.iter().map(|&time| Impulse { time, magnitude: IMPULSE_MAGNITUDE, coords: None }).collect();
        noise = noise.with_impulses(imps);
    }
    let plant = PlantModel::new(dynamics);
    let n = loss.n;
    let mut w = sample_disturbance(&noise, t, n, seed);
    // scalar sanity draws x₀ = w₀ from the noise law itself
    let x0 = match x0 {
        Some(x0) => {
            w.at_mut(0).copy_from_slice(&x0);
            x0
        }
        None => w.at(0).to_vec(),
    };
    let gamma_f = plant_gain(&plant, &cfg.p, cfg.gamma_f)?;
    let plant = plant.with_gain(gamma_f);
    loss.validate()?;
    Ok(Scenario { kind: cfg.scenario, plant, loss, noise, x0, w, gamma_f })
}

/// True when the disturbance law has no random part and no impulses.
pub fn is_noise_free(dm: &DisturbanceModel) -> bool {
    dm.impulses.is_empty()
        && match dm.noise {
            NoiseKind::None => true,
            NoiseKind::GaussianDecay { sigma0, .. } => sigma0 == 0.0,
            NoiseKind::BoundedPersistent { amplitude } => amplitude == 0.0,
        }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Mode;

    #[test]
    fn mountains_initial_state_and_impulses() {
        let mut cfg = ExperimentConfig::preset(ScenarioKind::Mountains, Mode::StaticOffline);
        let s = build_scenario(&cfg, 3).unwrap();
        assert_eq!(s.x0, vec![-4.0, -4.0, 0.0, 0.0, 4.0, -4.0, 0.0, 0.0]);
        assert_eq!(s.w.at(0), s.x0.as_slice());
        assert_eq!(s.w.len(), cfg.steps);
        assert!(s.gamma_f > 1.0);
        cfg.perturbed = true;
        let p = build_scenario(&cfg, 3).unwrap();
        for t in 0..cfg.steps {
            for k in 0..8 {
                let d = p.w.at(t)[k] - s.w.at(t)[k];
                let want = if t > 0 && IMPULSE_TIMES.contains(&t) { IMPULSE_MAGNITUDE } else { 0.0 };
                assert!((d - want).abs() < 1e-15, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn obstacle_track_depends_on_seed_only() {
        let cfg = ExperimentConfig::preset(ScenarioKind::DynamicObstacles, Mode::OnlineAlg1);
        let a = build_scenario(&cfg, 1).unwrap();
        let b = build_scenario(&cfg, 1).unwrap();
        let c = build_scenario(&cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.obstacles(), c.obstacles());
        let w_amp = a.w.rows().skip(1).flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(w_amp <= 0.05);
    }

    #[test]
    fn linf_gain_for_scalar_plant() {
        let mut cfg = ExperimentConfig::preset(ScenarioKind::ScalarSanity, Mode::StaticOffline);
        cfg.p = PNorm::linf();
        let s = build_scenario(&cfg, 0).unwrap();
        assert!((s.gamma_f - 2.0).abs() < 1e-9);
        cfg.p = PNorm::l2();
        let s = build_scenario(&cfg, 0).unwrap();
        assert!(s.gamma_f >= 2.0 && s.gamma_f <= 2.2);
    }
}
