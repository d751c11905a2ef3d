//! Certified gain bounds.
//!
//! The plant certificate follows the worst-case-slope construction: replace the
//! friction derivative by its least favourable value, then solve the discrete
//! bounded-real inequality
//!
//! ```text
//! [ AᵀPA − P + ηI    AᵀPB̄      ]
//! [ B̄ᵀPA             B̄ᵀPB̄ − ρI ]  ⪯ 0,   γ̂ = max(1, √(max(λmax P, ρ)/η))
//! ```
//!
//! which yields `‖e‖₂ ≤ γ̂ (‖u‖₂ + ‖w‖₂)` under the convention `w₀ = e₀`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{spectral_radius, sym_eigenvalues, sym_max_eigenvalue};
use crate::plant::{rng_for, ErrorDynamics, PointMassParams, Prestabilizer};
use crate::signals::{Signal, VectorNorm};
use crate::trace::ClosedLoopTrace;

const BISECT_LO: f64 = 1.0;
const BISECT_HI: f64 = 1e6;
const BISECT_ITERS: usize = 60;
/// Doubling steps; step `j` covers `2ʲ` Riccati iterations.
const DOUBLING_STEPS: usize = 64;
const BLOCK_TOL: f64 = 1e-9;
/// Relative slack on η inside the Riccati recursion, so the block matrix ends strictly negative.
const ETA_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedRealCertificate {
    pub n: usize,
    /// Storage matrix, row-major `n × n`.
    pub p: Vec<f64>,
    pub eta: f64,
    pub rho: f64,
    pub c: f64,
    pub gamma_hat: f64,
    /// Largest eigenvalue of the block matrix at `(P, η, ρ)`.
    pub block_max_eig: f64,
}

impl BoundedRealCertificate {
    pub fn p_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.p)
    }

    pub fn lambda_max_p(&self) -> f64 {
        sym_max_eigenvalue(&self.p_matrix())
    }

    fn storage(&self, e: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                v += e[i] * self.p[i * self.n + j] * e[j];
            }
        }
        v
    }
}

/// Plant certificate: the joint certificate on `[B_u I]` and, when tighter,
/// the superposition of separate input and noise channel certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantCertificate {
    pub gamma_hat: f64,
    pub joint: BoundedRealCertificate,
    pub input_channel: Option<BoundedRealCertificate>,
    pub noise_channel: Option<BoundedRealCertificate>,
}

/// Discrete error matrices of one agent with `∂G/∂v` replaced by `σ_wc = −(b1 − b2)`.
///
/// State order `[e_qx, e_qy, e_vx, e_vy]`, input `[u_x, u_y]`.
pub fn worst_case_linearization(p: &PointMassParams, k: &Prestabilizer) -> (DMatrix<f64>, DMatrix<f64>) {
    let sigma = worst_case_slope(p);
    let h = p.ts / p.m;
    let mut a = DMatrix::zeros(4, 4);
    let mut b = DMatrix::zeros(4, 2);
    for ax in 0..2 {
        a[(ax, ax)] = 1.0;
        a[(ax, 2 + ax)] = p.ts;
        a[(2 + ax, ax)] = -h * k.gain(ax);
        a[(2 + ax, 2 + ax)] = 1.0 + h * sigma;
        b[(2 + ax, ax)] = h;
    }
    (a, b)
}

pub fn worst_case_slope(p: &PointMassParams) -> f64 {
    -(p.b1 - p.b2)
}

/// Block matrix of the bounded-real inequality.
pub fn bounded_real_block(a: &DMatrix<f64>, b_bar: &DMatrix<f64>, p: &DMatrix<f64>, eta: f64, rho: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let k = b_bar.ncols();
    let atp = a.transpose() * p;
    let mut m = DMatrix::zeros(n + k, n + k);
    let tl = &atp * a - p + DMatrix::identity(n, n) * eta;
    let tr = &atp * b_bar;
    let br = b_bar.transpose() * p * b_bar - DMatrix::identity(k, k) * rho;
    m.view_mut((0, 0), (n, n)).copy_from(&tl);
    m.view_mut((0, n), (n, k)).copy_from(&tr);
    m.view_mut((n, 0), (k, n)).copy_from(&tr.transpose());
    m.view_mut((n, n), (k, k)).copy_from(&br);
    m
}

/// Minimal storage at level `γ` with `η = 1`, `ρ = γ²`, or `None` if the level is infeasible.
///
/// The Riccati recursion `P⁺ = AᵀPA + ηI + AᵀPB̄(ρI − B̄ᵀPB̄)⁻¹B̄ᵀPA` from `P = 0`
/// is run by doubling: after step `j` the iterate `H` equals the recursion's
/// `2ʲ`-th iterate, so convergence takes a few dozen steps even near the
/// critical level.
fn feasible_at(a: &DMatrix<f64>, b_bar: &DMatrix<f64>, gamma: f64) -> Option<BoundedRealCertificate> {
    let n = a.nrows();
    let k = b_bar.ncols();
    let eta = 1.0;
    let rho = gamma * gamma;
    let eta_iter = eta * (1.0 + ETA_SLACK);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.clone();
    let mut g = -(b_bar * b_bar.transpose()) / rho;
    let mut p = &eye * eta_iter;
    let mut converged = false;
    for _ in 0..DOUBLING_STEPS {
        let lu = (&eye + &g * &p).lu();
        let inv = lu.try_inverse()?;
        let a_inv = &ak * &inv;
        let mut next = &p + ak.transpose() * &p * &inv * &ak;
        let g_next = &g + &a_inv * &g * ak.transpose();
        ak = &a_inv * &ak;
        g = g_next;
        next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|x| x.is_finite()) {
            return None;
        }
        let scale = next.amax().max(1.0);
        let diff = (&next - &p).amax();
        p = next;
        // The iterates grow monotonically from 0, so exceeding γ² is final.
        if p.diagonal().amax() > rho {
            return None;
        }
        if diff <= 1e-13 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    let s = DMatrix::identity(k, k) * rho - b_bar.transpose() * &p * b_bar;
    s.cholesky()?;
    let lam_p = sym_max_eigenvalue(&p);
    if lam_p > rho || sym_eigenvalues(&p)[0] <= 0.0 {
        return None;
    }
    let block = bounded_real_block(a, b_bar, &p, eta, rho);
    let block_max_eig = sym_max_eigenvalue(&block);
    if block_max_eig > BLOCK_TOL {
        return None;
    }
    let c = lam_p.max(rho);
    Some(BoundedRealCertificate {
        n,
        p: p.transpose().as_slice().to_vec(),
        eta,
        rho,
        c,
        gamma_hat: (c / eta).sqrt().max(1.0),
        block_max_eig,
    })
}

/// Bisection on the gain level for the joint inequality with the supplied `B̄`.
pub fn certify_bounded_real(a: &DMatrix<f64>, b_bar: &DMatrix<f64>) -> Result<BoundedRealCertificate> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || b_bar.nrows() != n || b_bar.ncols() == 0 {
        return Err(contract(format!(
            "bounded-real check needs square A and B̄ with matching rows; got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b_bar.nrows(),
            b_bar.ncols()
        )));
    }
    if !(spectral_radius(a) < 1.0) {
        return Err(Error::Infeasible("plant not pre-stabilized (A is not Schur)".into()));
    }
    if let Some(c) = feasible_at(a, b_bar, BISECT_LO) {
        return Ok(c);
    }
    let mut best = feasible_at(a, b_bar, BISECT_HI)
        .ok_or_else(|| Error::Infeasible(format!("no certificate at gain level {BISECT_HI:e}")))?;
    let (mut lo, mut hi) = (BISECT_LO, BISECT_HI);
    for _ in 0..BISECT_ITERS {
        // geometric midpoint: the bracket spans six decades
        let mid = (lo * hi).sqrt();
        match feasible_at(a, b_bar, mid) {
            Some(c) => {
                hi = mid;
                best = c;
            }
            None => lo = mid,
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    Ok(best)
}

/// Plant gain certificate from `(A, B̄)` with `B̄ = [B_u  I]`.
///
/// The joint certificate bounds `‖e‖` by `γ̂ ‖(u, w)‖`. When the trailing `n`
/// columns of `B̄` form the noise channel, the input and noise channels are
/// also certified separately; by superposition `‖e‖ ≤ γ_u‖u‖ + γ_w‖w‖`, so
/// `max(γ_u, γ_w)` is valid too, and the smaller of the two bounds is reported.
pub fn certify_gain_lmi(a: &DMatrix<f64>, b_bar: &DMatrix<f64>) -> Result<PlantCertificate> {
    let joint = certify_bounded_real(a, b_bar)?;
    let n = a.nrows();
    let k = b_bar.ncols();
    if k <= n {
        return Ok(PlantCertificate { gamma_hat: joint.gamma_hat, joint, input_channel: None, noise_channel: None });
    }
    let b_u = b_bar.columns(0, k - n).into_owned();
    let b_w = b_bar.columns(k - n, n).into_owned();
    let cu = certify_bounded_real(a, &b_u)?;
    let cw = certify_bounded_real(a, &b_w)?;
    let split = cu.gamma_hat.max(cw.gamma_hat);
    Ok(PlantCertificate {
        gamma_hat: joint.gamma_hat.min(split),
        joint,
        input_channel: Some(cu),
        noise_channel: Some(cw),
    })
}

/// `[B_u  I]`.
pub fn noise_augmented(b_u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b_u.nrows();
    let m = b_u.ncols();
    let mut b = DMatrix::zeros(n, m + n);
    b.view_mut((0, 0), (n, m)).copy_from(b_u);
    b.view_mut((0, m), (n, n)).fill_diagonal(1.0);
    b
}

fn induced_norm(m: &DMatrix<f64>, vn: VectorNorm) -> f64 {
    match vn {
        VectorNorm::Euclidean => crate::linalg::spectral_norm(m.transpose().as_slice(), m.nrows(), m.ncols()),
        VectorNorm::Max => m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max),
    }
}

/// ℓ∞ gain bound from the impulse response: `max(Σ‖AᵏB_u‖, Σ‖Aᵏ‖)`, at least 1.
///
/// The series is summed until `‖A^N‖ ≤ 0.1` and the tail is closed with the
/// submultiplicative bound `Σ_{k≥0} ‖A^{k}X‖ ≤ S_N / (1 − ‖A^N‖)`.
pub fn certify_gain_linf(a: &DMatrix<f64>, b_u: &DMatrix<f64>, vn: VectorNorm) -> Result<f64> {
    let n = a.nrows();
    if a.ncols() != n || b_u.nrows() != n {
        return Err(contract("certify_gain_linf: dimension mismatch"));
    }
    if !(spectral_radius(a) < 1.0) {
        return Err(Error::Infeasible("plant not pre-stabilized (A is not Schur)".into()));
    }
    let mut ak = DMatrix::identity(n, n);
    let (mut su, mut sw) = (0.0, 0.0);
    for _ in 0..1_000_000 {
        let an = induced_norm(&ak, vn);
        if an <= 0.1 {
            let q = an;
            return Ok((su / (1.0 - q)).max(sw / (1.0 - q)).max(1.0));
        }
        su += induced_norm(&(&ak * b_u), vn);
        sw += an;
        ak = &ak * a;
    }
    Err(Error::Infeasible("impulse response did not decay".into()))
}

/// Certificate for the point mass: block-diagonal over agents, so one agent suffices.
pub fn certify_point_mass(p: &PointMassParams, k: &Prestabilizer) -> Result<PlantCertificate> {
    let (a, b) = worst_case_linearization(p, k);
    certify_gain_lmi(&a, &noise_augmented(&b))
}

pub fn certify_point_mass_linf(p: &PointMassParams, k: &Prestabilizer, vn: VectorNorm) -> Result<f64> {
    let (a, b) = worst_case_linearization(p, k);
    certify_gain_linf(&a, &b, vn)
}

/// Checks `V(e_{t+1}) − V(e_t) ≤ −η‖e_t‖² + ρ(‖u_t‖² + ‖w_{t+1}‖²)` at every step (tolerance 1e−8).
pub fn storage_dissipation_check(cert: &BoundedRealCertificate, trace: &ClosedLoopTrace) -> bool {
    let len = trace.x.len();
    for t in 0..len.saturating_sub(1) {
        let e = trace.x.at(t);
        let e1 = trace.x.at(t + 1);
        if e.len() != cert.n {
            return false;
        }
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let lhs = cert.storage(e1) - cert.storage(e);
        let rhs = -cert.eta * sq(e) + cert.rho * (sq(trace.u.at(t)) + sq(trace.w.at(t + 1)));
        if lhs > rhs + 1e-8 * (1.0 + rhs.abs()) {
            return false;
        }
    }
    true
}

/// A causal operator with internal state, driven one step at a time.
pub trait CausalOperator {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn reset(&mut self);
    fn step(&mut self, z: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub lower: f64,
    pub upper: f64,
    pub method: String,
}

impl GainEstimate {
    pub fn consistent(&self) -> bool {
        self.lower <= self.upper + 1e-6
    }
}

/// Probe `k` of a deterministic family: constant, impulse, alternating, then
/// white and low-pass filtered gaussian sequences, scaled to unit ℓ2 norm.
pub fn probe_signal<R: Rng>(k: usize, dim: usize, horizon: usize, rng: &mut R) -> Signal {
    let mut s = Signal::zeros(dim, horizon);
    match k {
        0 => s.as_flat_mut().iter_mut().for_each(|x| *x = 1.0),
        1 => s.at_mut(0).iter_mut().for_each(|x| *x = 1.0),
        2 => {
            for t in 0..horizon {
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                s.at_mut(t).iter_mut().for_each(|x| *x = sign);
            }
        }
        _ => {
            // pole drawn per probe so a range of frequencies is covered
            let pole = if k.is_multiple_of(2) { 0.0 } else { rng.random_range(0.5..0.99) };
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let mut state = vec![0.0; dim];
            for t in 0..horizon {
                for (i, x) in s.at_mut(t).iter_mut().enumerate() {
                    let n: f64 = StandardNormal.sample(rng);
                    state[i] = pole * state[i] + n + if pole > 0.0 { 0.3 * dir[i] } else { 0.0 };
                    *x = state[i];
                }
            }
        }
    }
    let nrm = s.norm_pow(2.0, VectorNorm::Euclidean).sqrt();
    if nrm > 0.0 {
        s.as_flat_mut().iter_mut().for_each(|x| *x /= nrm);
    }
    s
}

/// The `trials` unit-norm probes used by [`estimate_gain_empirical`].
pub fn probe_set(trials: usize, dim: usize, horizon: usize, seed: u64) -> Result<Vec<Signal>> {
    if trials == 0 || horizon == 0 {
        return Err(contract("empirical gain estimate needs at least one trial and one step"));
    }
    let mut rng = rng_for(seed, 0xE5);
    Ok((0..trials).map(|k| probe_signal(k, dim, horizon, &mut rng)).collect())
}

/// Largest `‖y‖₂ / ‖z‖₂` over the given probes, each from zero state.
pub fn max_gain_on_probes<O: CausalOperator + ?Sized>(op: &mut O, probes: &[Signal]) -> Result<f64> {
    let mut y = vec![0.0; op.output_dim()];
    let mut best: f64 = 0.0;
    for z in probes {
        if z.dim() != op.input_dim() {
            return Err(contract("probe dimension does not match the operator input"));
        }
        let nz = z.norm_pow(2.0, VectorNorm::Euclidean).sqrt();
        if nz == 0.0 {
            continue;
        }
        op.reset();
        let mut out2 = 0.0;
        for t in 0..z.len() {
            op.step(z.at(t), &mut y);
            out2 += y.iter().map(|v| v * v).sum::<f64>();
        }
        best = best.max(out2.sqrt() / nz);
    }
    Ok(best)
}

/// Largest `‖y‖₂ / ‖z‖₂` over `trials` unit-norm probes, each from zero state.
pub fn estimate_gain_empirical<O: CausalOperator + ?Sized>(op: &mut O, trials: usize, horizon: usize, seed: u64) -> Result<f64> {
    let probes = probe_set(trials, op.input_dim(), horizon, seed)?;
    max_gain_on_probes(op, &probes)
}

/// Empirical check of `‖e‖₂ ≤ γ̂(‖u‖₂ + ‖w‖₂)` on the (possibly nonlinear) error dynamics.
///
/// Returns the largest observed ratio over random `(u, w)` probes with `e₀ = w₀`.
pub fn empirical_plant_ratio<D: ErrorDynamics + ?Sized>(plant: &D, trials: usize, horizon: usize, scale: f64, seed: u64) -> f64 {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let mut rng = rng_for(seed, 0x91);
    let mut best: f64 = 0.0;
    let mut e = vec![0.0; n];
    let mut next = vec![0.0; n];
    for k in 0..trials {
        let u = probe_signal(k + 3, m, horizon, &mut rng).scaled(scale * rng.random_range(0.0..1.0));
        let w = probe_signal(k + 4, n, horizon, &mut rng).scaled(scale);
        let nu = u.norm_pow(2.0, VectorNorm::Euclidean).sqrt();
        let nw = w.norm_pow(2.0, VectorNorm::Euclidean).sqrt();
        e.copy_from_slice(w.at(0));
        let mut e2 = e.iter().map(|x| x * x).sum::<f64>();
        for t in 0..horizon - 1 {
            plant.step(t, &e, u.at(t), &mut next);
            for i in 0..n {
                e[i] = next[i] + w.at(t + 1)[i];
            }
            e2 += e.iter().map(|x| x * x).sum::<f64>();
        }
        best = best.max(e2.sqrt() / (nu + nw));
    }
    best
}
