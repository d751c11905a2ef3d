use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::plant::{rng_for, DisturbanceModel, ErrorDynamics};
use crate::signals::Signal;

use super::adam::Adam;
use super::loss::LossSpec;
use super::solve::sample_batch;

/// Receding-horizon open-loop planner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoConfig {
    pub horizon: usize,
    pub samples: usize,
    pub iters: usize,
    pub lr: f64,
    #[serde(default = "one")]
    pub lr_decay: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoSolution {
    /// First input, the only one applied.
    pub u0: Vec<f64>,
    /// Optimized sequence `u_{0:H-1}`, row-major.
    pub plan: Vec<f64>,
    pub loss: f64,
}

/// Average cost of an open-loop plan over the batch, with its gradient.
pub fn open_loop_loss_grad<D: ErrorDynamics + ?Sized>(
    plant: &D,
    plan: &[f64],
    batch: &[Signal],
    ls: &LossSpec,
    horizon: usize,
    t0: usize,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let mut e = vec![0.0; (horizon + 1) * n];
    let mut total = 0.0;
    let want_grad = grad.is_some();
    let mut g_acc = vec![0.0; horizon * m];
    let (mut adj, mut ge, mut gu) = (vec![0.0; n], vec![0.0; n], vec![0.0; m]);
    for w in batch {
        e[..n].copy_from_slice(w.at(0));
        for k in 0..horizon {
            let (lo, hi) = e.split_at_mut((k + 1) * n);
            let ek = &lo[k * n..];
            let uk = &plan[k * m..(k + 1) * m];
            total += ls.stage_cost(ek, uk, t0 + k);
            plant.step(t0 + k, ek, uk, &mut hi[..n]);
            if let Some(wn) = w.get(k + 1) {
                hi[..n].iter_mut().zip(wn).for_each(|(a, b)| *a += b);
            }
            if !hi[..n].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { step: t0 + k + 1, what: "planned state".into() });
            }
        }
        if want_grad {
            adj.iter_mut().for_each(|v| *v = 0.0);
            for k in (0..horizon).rev() {
                let ek = &e[k * n..(k + 1) * n];
                let uk = &plan[k * m..(k + 1) * m];
                ge.iter_mut().for_each(|v| *v = 0.0);
                gu.iter_mut().for_each(|v| *v = 0.0);
                ls.stage_cost_grad(ek, uk, t0 + k, &mut ge, &mut gu);
                plant.vjp(t0 + k, ek, uk, &adj, &mut ge, &mut gu);
                g_acc[k * m..(k + 1) * m].iter_mut().zip(&gu).for_each(|(a, b)| *a += b);
                adj.copy_from_slice(&ge);
            }
        }
    }
    let s = batch.len() as f64;
    if let Some(g) = grad {
        g.iter_mut().zip(&g_acc).for_each(|(a, b)| *a = b / s);
    }
    Ok(total / s)
}

/// One receding-horizon solve at `(t, e_t)`: Adam on an open-loop input sequence
/// shared across `S` sampled disturbances. `warm` is a previous plan, already shifted.
pub fn solve_rho_step<D: ErrorDynamics + ?Sized>(
    plant: &D,
    e_t: &[f64],
    t: usize,
    ls: &LossSpec,
    cfg: &RhoConfig,
    dm: &DisturbanceModel,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<RhoSolution> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    if cfg.horizon == 0 || cfg.samples == 0 {
        return Err(contract("receding-horizon planner needs H >= 1 and S >= 1"));
    }
    if e_t.len() != n {
        return Err(contract("planner state has wrong dimension"));
    }
    let mut rng = rng_for(seed, t as u64);
    let batch = sample_batch(dm, e_t, t, cfg.horizon, cfg.samples, &mut rng);
    let mut plan = match warm {
        Some(p) if p.len() == cfg.horizon * m => p.to_vec(),
        Some(_) => return Err(contract("warm-start plan has wrong length")),
        None => vec![0.0; cfg.horizon * m],
    };
    let mut adam = Adam::new(plan.len(), cfg.lr).with_decay(cfg.lr_decay);
    let mut grad = vec![0.0; plan.len()];
    let mut best = (f64::INFINITY, plan.clone());
    for _ in 0..cfg.iters {
        let loss = open_loop_loss_grad(plant, &plan, &batch, ls, cfg.horizon, t, Some(&mut grad))?;
        if loss < best.0 {
            best = (loss, plan.clone());
        }
        adam.step(&mut plan, &grad);
    }
    let loss = open_loop_loss_grad(plant, &plan, &batch, ls, cfg.horizon, t, None)?;
    if loss < best.0 {
        best = (loss, plan);
    }
    Ok(RhoSolution { u0: best.1[..m].to_vec(), plan: best.1, loss: best.0 })
}

/// Shifts a plan one step forward, padding with zeros.
pub fn shift_plan(plan: &[f64], m: usize) -> Vec<f64> {
    let mut out = plan[m.min(plan.len())..].to_vec();
    out.resize(plan.len(), 0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaincert::worst_case_linearization;
    use crate::plant::{LinearPlant, NoiseKind, PointMassParams, Prestabilizer};
    use nalgebra::{DMatrix, DVector};

    fn zero_noise() -> DisturbanceModel {
        DisturbanceModel { noise: NoiseKind::None, impulses: vec![] }
    }

    #[test]
    fn origin_needs_no_input() {
        let plant = LinearPlant::scalar(0.5, 1.0);
        let ls = LossSpec::quadratic(&[1.0], &[0.1]);
        let cfg = RhoConfig { horizon: 10, samples: 2, iters: 200, lr: 1e-2, lr_decay: 1.0 };
        let sol = solve_rho_step(&plant, &[0.0], 0, &ls, &cfg, &zero_noise(), 1, None).unwrap();
        assert!(sol.u0[0].abs() <= 1e-3);
    }

    #[test]
    fn matches_finite_horizon_lq() {
        let (a, b) = worst_case_linearization(&PointMassParams::default(), &Prestabilizer::default());
        let plant = LinearPlant::new(4, 2, a.transpose().as_slice().to_vec(), b.transpose().as_slice().to_vec()).unwrap();
        let ls = LossSpec::quadratic(&[1.0, 1.0, 0.1, 0.1], &[0.01, 0.01]);
        let h = 10;
        let e0 = [1.0, -0.5, 0.2, 0.0];
        // Riccati oracle with zero terminal weight
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.1, 0.1]));
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.01]));
        let mut p = DMatrix::<f64>::zeros(4, 4);
        let mut k0 = DMatrix::<f64>::zeros(2, 4);
        for _ in 0..h {
            let btp = b.transpose() * &p;
            let k = (&r + &btp * &b).try_inverse().unwrap() * &btp * &a;
            p = &q + a.transpose() * &p * (&a - &b * &k);
            k0 = k;
        }
        let u_lq = -(k0 * DVector::from_row_slice(&e0));
        let cfg = RhoConfig { horizon: h, samples: 1, iters: 6000, lr: 0.05, lr_decay: 0.999 };
        let sol = solve_rho_step(&plant, &e0, 0, &ls, &cfg, &zero_noise(), 3, None).unwrap();
        let diff = ((sol.u0[0] - u_lq[0]).powi(2) + (sol.u0[1] - u_lq[1]).powi(2)).sqrt();
        assert!(diff <= 0.01 * u_lq.norm(), "{:?} vs {u_lq}", sol.u0);
    }

    #[test]
    fn deterministic_and_gradient_checked() {
        let plant = LinearPlant::scalar(0.9, 0.5);
        let ls = LossSpec::quadratic(&[1.0], &[0.1]);
        let dm = DisturbanceModel::bounded_persistent(0.05);
        let cfg = RhoConfig { horizon: 6, samples: 3, iters: 50, lr: 1e-2, lr_decay: 1.0 };
        let a = solve_rho_step(&plant, &[1.0], 5, &ls, &cfg, &dm, 9, None).unwrap();
        let b = solve_rho_step(&plant, &[1.0], 5, &ls, &cfg, &dm, 9, None).unwrap();
        assert_eq!(a, b);
        let mut rng = rng_for(1, 1);
        let batch = sample_batch(&dm, &[1.0], 5, 6, 3, &mut rng);
        let plan: Vec<f64> = (0..6).map(|k| 0.1 * k as f64 - 0.2).collect();
        let mut g = vec![0.0; 6];
        open_loop_loss_grad(&plant, &plan, &batch, &ls, 6, 5, Some(&mut g)).unwrap();
        for i in 0..6 {
            let (mut p1, mut p2) = (plan.clone(), plan.clone());
            p1[i] += 1e-6;
            p2[i] -= 1e-6;
            let fd = (open_loop_loss_grad(&plant, &p1, &batch, &ls, 6, 5, None).unwrap() - open_loop_loss_grad(&plant, &p2, &batch, &ls, 6, 5, None).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn shifting() {
        assert_eq!(shift_plan(&[1.0, 2.0, 3.0, 4.0], 2), vec![3.0, 4.0, 0.0, 0.0]);
    }
}
