use crate::error::{contract, Error, Result};
use crate::linalg::{gemv_t_acc, outer_acc};
use crate::plant::ErrorDynamics;
use crate::policy::{GainBoundedPolicy, PolicyShape};
use crate::signals::Signal;
use crate::trace::ClosedLoopTrace;

use super::loss::LossSpec;

/// Predicted closed loop carried across calls: error, hidden state and absolute time.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    pub t: usize,
    pub e: Vec<f64>,
    pub xi: Vec<f64>,
}

impl RolloutState {
    /// Window start: `e = w_0` and a zeroed policy.
    pub fn start(t0: usize, w0: &[f64], h: usize) -> Self {
        Self { t: t0, e: w0.to_vec(), xi: vec![0.0; h] }
    }
}

/// Runs steps `k ∈ [k0, k1)` of the predicted loop. The policy sees `z_k = w_k`
/// (the model is exact, so `ŵ = w`), and `e_{k+1} = f(e_k, u_k) + w_{k+1}` with
/// zero extension past the end of `w`.
pub fn advance<D: ErrorDynamics + ?Sized>(
    plant: &D,
    shape: PolicyShape,
    theta: &[f64],
    ls: &LossSpec,
    st: &mut RolloutState,
    w: &Signal,
    k0: usize,
    k1: usize,
    mut trace: Option<&mut ClosedLoopTrace>,
) -> Result<f64> {
    let n = plant.state_dim();
    let mut u = vec![0.0; shape.m];
    let mut xi_next = vec![0.0; shape.h];
    let mut next = vec![0.0; n];
    let mut total = 0.0;
    for k in k0..k1 {
        let z = w.at(k);
        shape.forward(theta, &st.xi, z, &mut xi_next, &mut u);
        std::mem::swap(&mut st.xi, &mut xi_next);
        let c = ls.stage_cost(&st.e, &u, st.t);
        if !c.is_finite() {
            return Err(Error::NonFinite { step: st.t, what: "stage cost".into() });
        }
        total += c;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push_step(&st.e, &u, z, z, 0, c);
        }
        plant.step(st.t, &st.e, &u, &mut next);
        if let Some(wn) = w.get(k + 1) {
            next.iter_mut().zip(wn).for_each(|(a, b)| *a += b);
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: st.t + 1, what: "state".into() });
        }
        st.e.copy_from_slice(&next);
        st.t += 1;
    }
    Ok(total)
}

fn check_dims<D: ErrorDynamics + ?Sized>(plant: &D, shape: PolicyShape, w: &Signal, horizon: usize) -> Result<()> {
    if shape.n != plant.state_dim() || shape.m != plant.input_dim() {
        return Err(contract("policy and plant dimensions differ"));
    }
    if w.dim() != plant.state_dim() || w.len() < horizon || horizon == 0 {
        return Err(contract(format!("disturbance must have dim {} and at least {horizon} steps", plant.state_dim())));
    }
    Ok(())
}

/// Closed-loop prediction over `horizon` steps from `e_0 = w_0` at time `t0`, policy from zero state.
pub fn rollout_and_loss<D: ErrorDynamics + ?Sized>(
    plant: &D,
    pol: &GainBoundedPolicy,
    w: &Signal,
    ls: &LossSpec,
    horizon: usize,
    t0: usize,
) -> Result<(ClosedLoopTrace, f64)> {
    let shape = pol.shape();
    check_dims(plant, shape, w, horizon)?;
    let mut st = RolloutState::start(t0, w.at(0), shape.h);
    let mut tr = ClosedLoopTrace::with_capacity(shape.n, shape.m, horizon);
    let loss = advance(plant, shape, pol.theta(), ls, &mut st, w, 0, horizon, Some(&mut tr))?;
    Ok((tr, loss))
}

/// Scratch for one forward/backward pass.
struct Tape {
    e: Vec<f64>,
    xi: Vec<f64>,
    u: Vec<f64>,
}

/// Loss averaged over `batch`, with its exact gradient written to `grad`.
pub fn loss_and_gradient<D: ErrorDynamics + ?Sized>(
    plant: &D,
    shape: PolicyShape,
    theta: &[f64],
    batch: &[Signal],
    ls: &LossSpec,
    horizon: usize,
    t0: usize,
    grad: &mut [f64],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(contract("empty disturbance batch"));
    }
    if grad.len() != shape.num_params() || theta.len() != shape.num_params() {
        return Err(contract("parameter/gradient length mismatch"));
    }
    let PolicyShape { n, m, h } = shape;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut tape = Tape { e: vec![0.0; (horizon + 1) * n], xi: vec![0.0; (horizon + 1) * h], u: vec![0.0; horizon * m] };
    let (mut adj_e, mut adj_xi) = (vec![0.0; n], vec![0.0; h]);
    let (mut ge, mut gu, mut gxi, mut ga) = (vec![0.0; n], vec![0.0; m], vec![0.0; h], vec![0.0; h]);
    let mut total = 0.0;
    let (_, w_rec, w_out) = shape.split(theta);
    let (li, lr) = (shape.len_in(), shape.len_rec());
    for w in batch {
        check_dims(plant, shape, w, horizon)?;
        tape.e[..n].copy_from_slice(w.at(0));
        tape.xi[..h].iter_mut().for_each(|v| *v = 0.0);
        for k in 0..horizon {
            let (xi_lo, xi_hi) = tape.xi.split_at_mut((k + 1) * h);
            shape.forward(theta, &xi_lo[k * h..], w.at(k), &mut xi_hi[..h], &mut tape.u[k * m..(k + 1) * m]);
            let (e_lo, e_hi) = tape.e.split_at_mut((k + 1) * n);
            let ek = &e_lo[k * n..];
            let uk = &tape.u[k * m..(k + 1) * m];
            let c = ls.stage_cost(ek, uk, t0 + k);
            if !c.is_finite() {
                return Err(Error::NonFinite { step: t0 + k, what: "stage cost".into() });
            }
            total += c;
            let next = &mut e_hi[..n];
            plant.step(t0 + k, ek, uk, next);
            if let Some(wn) = w.get(k + 1) {
                next.iter_mut().zip(wn).for_each(|(a, b)| *a += b);
            }
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { step: t0 + k + 1, what: "state".into() });
            }
        }
        adj_e.iter_mut().for_each(|v| *v = 0.0);
        adj_xi.iter_mut().for_each(|v| *v = 0.0);
        let (g_in, rest) = grad.split_at_mut(li);
        let (g_rec, g_out) = rest.split_at_mut(lr);
        for k in (0..horizon).rev() {
            let ek = &tape.e[k * n..(k + 1) * n];
            let uk = &tape.u[k * m..(k + 1) * m];
            let xi_prev = &tape.xi[k * h..(k + 1) * h];
            let xi_k = &tape.xi[(k + 1) * h..(k + 2) * h];
            ge.iter_mut().for_each(|v| *v = 0.0);
            gu.iter_mut().for_each(|v| *v = 0.0);
            ls.stage_cost_grad(ek, uk, t0 + k, &mut ge, &mut gu);
            plant.vjp(t0 + k, ek, uk, &adj_e, &mut ge, &mut gu);
            outer_acc(g_out, &gu, xi_k);
            gxi.copy_from_slice(&adj_xi);
            gemv_t_acc(w_out, m, h, &gu, &mut gxi);
            for i in 0..h {
                ga[i] = gxi[i] * (1.0 - xi_k[i] * xi_k[i]);
            }
            outer_acc(g_rec, &ga, xi_prev);
            outer_acc(g_in, &ga, w.at(k));
            adj_xi.iter_mut().for_each(|v| *v = 0.0);
            gemv_t_acc(w_rec, h, h, &ga, &mut adj_xi);
            adj_e.copy_from_slice(&ge);
        }
    }
    let s = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= s);
    Ok(total / s)
}

/// `∂(average loss)/∂θ` over the batch by reverse-mode differentiation.
pub fn bptt_gradient<D: ErrorDynamics + ?Sized>(
    plant: &D,
    pol: &GainBoundedPolicy,
    batch: &[Signal],
    ls: &LossSpec,
    horizon: usize,
    t0: usize,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; pol.shape().num_params()];
    loss_and_gradient(plant, pol.shape(), pol.theta(), batch, ls, horizon, t0, &mut g)?;
    Ok(g)
}

/// Average predicted loss without gradients.
pub fn batch_loss<D: ErrorDynamics + ?Sized>(
    plant: &D,
    shape: PolicyShape,
    theta: &[f64],
    batch: &[Signal],
    ls: &LossSpec,
    horizon: usize,
    t0: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for w in batch {
        check_dims(plant, shape, w, horizon)?;
        let mut st = RolloutState::start(t0, w.at(0), shape.h);
        total += advance(plant, shape, theta, ls, &mut st, w, 0, horizon, None)?;
    }
    Ok(total / batch.len() as f64)
}
