//! Plant models in error coordinates.
//!
//! Every model has the form `e_{t+1} = f_t(e_t, u_t) + w_{t+1}` with `w_0 = e_0`,
//! and the origin as equilibrium. The point-mass models fold the baseline
//! position feedback `K'` (and, when tracking, the reference feedforward) into
//! `f_t`, so `u` is the auxiliary input left to the learned controller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::signals::Signal;

/// Deterministic RNG stream for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassParams {
    pub m: f64,
    pub ts: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self { m: 1.0, ts: 0.05, b1: 1.0, b2: 0.5 }
    }
}

impl PointMassParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.ts > 0.0 && 0.0 < self.b2 && self.b2 < self.b1) {
            return Err(Error::InvalidConfig(format!(
                "point mass needs m > 0, Ts > 0 and 0 < b2 < b1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Nonlinear damping `G(v) = -b1 v + b2 tanh(v)`, per coordinate.
    #[inline]
    pub fn friction(&self, v: f64) -> f64 {
        -self.b1 * v + self.b2 * v.tanh()
    }

    /// `G'(v) ∈ [-b1, -(b1 - b2)]`.
    #[inline]
    pub fn friction_slope(&self, v: f64) -> f64 {
        let th = v.tanh();
        -self.b1 + self.b2 * (1.0 - th * th)
    }
}

/// One step of the absolute point-mass dynamics with additive noise `w = (w_q, w_v)`.
pub fn step_point_mass(p: &PointMassParams, q: [f64; 2], v: [f64; 2], f: [f64; 2], w: [f64; 4]) -> ([f64; 2], [f64; 2]) {
    let mut qn = [0.0; 2];
    let mut vn = [0.0; 2];
    for k in 0..2 {
        qn[k] = q[k] + p.ts * v[k] + w[k];
        vn[k] = v[k] + p.ts / p.m * (f[k] + p.friction(v[k])) + w[2 + k];
    }
    (qn, vn)
}

/// Diagonal position feedback `K' = diag(k1, k2)` (one gain per axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prestabilizer {
    pub k1: f64,
    pub k2: f64,
}

impl Default for Prestabilizer {
    fn default() -> Self {
        Self { k1: 1.0, k2: 1.0 }
    }
}

impl Prestabilizer {
    pub fn gain(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.k1
        } else {
            self.k2
        }
    }
}

/// Desired motion of each agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// Regulation to fixed targets with zero velocity.
    Targets { targets: Vec<[f64; 2]> },
    /// A single agent tracking a circle at constant angular rate; one revolution per `period_steps`.
    Circle { center: [f64; 2], radius: f64, period_steps: f64 },
}

impl Reference {
    pub fn agents(&self) -> usize {
        match self {
            Reference::Targets { targets } => targets.len(),
            Reference::Circle { .. } => 1,
        }
    }

    pub fn position(&self, agent: usize, t: usize) -> [f64; 2] {
        match self {
            Reference::Targets { targets } => targets[agent],
            Reference::Circle { center, radius, period_steps } => {
                let ang = 2.0 * std::f64::consts::PI * t as f64 / period_steps;
                [center[0] + radius * ang.cos(), center[1] + radius * ang.sin()]
            }
        }
    }

    /// Reference velocity consistent with the discrete kinematics `q_{t+1} = q_t + Ts v_t`.
    pub fn velocity(&self, agent: usize, t: usize, ts: f64) -> [f64; 2] {
        match self {
            Reference::Targets { .. } => [0.0; 2],
            Reference::Circle { .. } => {
                let a = self.position(agent, t);
                let b = self.position(agent, t + 1);
                [(b[0] - a[0]) / ts, (b[1] - a[1]) / ts]
            }
        }
    }

    /// Inverse-dynamics force that keeps the noiseless plant on the reference.
    pub fn feedforward(&self, agent: usize, t: usize, p: &PointMassParams) -> [f64; 2] {
        match self {
            Reference::Targets { .. } => [0.0; 2],
            Reference::Circle { .. } => {
                let v0 = self.velocity(agent, t, p.ts);
                let v1 = self.velocity(agent, t + 1, p.ts);
                [0, 1].map(|k| p.m * (v1[k] - v0[k]) / p.ts - p.friction(v0[k]))
            }
        }
    }

    /// Absolute state `[q, v]` of every agent, stacked.
    pub fn state(&self, t: usize, ts: f64) -> Vec<f64> {
        (0..self.agents())
            .flat_map(|j| {
                let q = self.position(j, t);
                let v = self.velocity(j, t, ts);
                [q[0], q[1], v[0], v[1]]
            })
            .collect()
    }
}

/// Discrete-time error dynamics `e' = f_t(e, u)` (noise excluded).
pub trait ErrorDynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, t: usize, e: &[f64], u: &[f64], out: &mut [f64]);
    /// Accumulates `(∂f/∂e)ᵀ adj` into `ge` and `(∂f/∂u)ᵀ adj` into `gu`.
    fn vjp(&self, t: usize, e: &[f64], u: &[f64], adj: &[f64], ge: &mut [f64], gu: &mut [f64]);
}

/// One or more pre-stabilized point masses, state `[e_q, e_v]` per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassPlant {
    pub params: PointMassParams,
    pub prestab: Prestabilizer,
    pub reference: Reference,
}

impl PointMassPlant {
    pub fn new(params: PointMassParams, prestab: Prestabilizer, reference: Reference) -> Result<Self> {
        params.validate()?;
        if !(prestab.k1 > 0.0 && prestab.k2 > 0.0) {
            return Err(Error::InvalidConfig("prestabilizer gains must be positive".into()));
        }
        if reference.agents() == 0 {
            return Err(Error::InvalidConfig("reference has no agents".into()));
        }
        Ok(Self { params, prestab, reference })
    }

    pub fn agents(&self) -> usize {
        self.reference.agents()
    }

    /// Total force applied for error `e` and auxiliary input `u`.
    pub fn force(&self, agent: usize, t: usize, e: &[f64], u: &[f64]) -> [f64; 2] {
        let ff = self.reference.feedforward(agent, t, &self.params);
        let eq = &e[4 * agent..4 * agent + 2];
        let ua = &u[2 * agent..2 * agent + 2];
        [0, 1].map(|k| ff[k] - self.prestab.gain(k) * eq[k] + ua[k])
    }
}

impl ErrorDynamics for PointMassPlant {
    fn state_dim(&self) -> usize {
        4 * self.agents()
    }

    fn input_dim(&self) -> usize {
        2 * self.agents()
    }

    fn step(&self, t: usize, e: &[f64], u: &[f64], out: &mut [f64]) {
        let p = &self.params;
        let h = p.ts / p.m;
        for j in 0..self.agents() {
            let vref = self.reference.velocity(j, t, p.ts);
            let ej = &e[4 * j..4 * j + 4];
            let uj = &u[2 * j..2 * j + 2];
            for k in 0..2 {
                let dg = p.friction(vref[k] + ej[2 + k]) - p.friction(vref[k]);
                out[4 * j + k] = ej[k] + p.ts * ej[2 + k];
                out[4 * j + 2 + k] = ej[2 + k] + h * (-self.prestab.gain(k) * ej[k] + uj[k] + dg);
            }
        }
    }

    fn vjp(&self, t: usize, e: &[f64], _u: &[f64], adj: &[f64], ge: &mut [f64], gu: &mut [f64]) {
        let p = &self.params;
        let h = p.ts / p.m;
        for j in 0..self.agents() {
            let vref = self.reference.velocity(j, t, p.ts);
            for k in 0..2 {
                let aq = adj[4 * j + k];
                let av = adj[4 * j + 2 + k];
                let slope = p.friction_slope(vref[k] + e[4 * j + 2 + k]);
                ge[4 * j + k] += aq - h * self.prestab.gain(k) * av;
                ge[4 * j + 2 + k] += p.ts * aq + (1.0 + h * slope) * av;
                gu[2 * j + k] += h * av;
            }
        }
    }
}

/// Linear time-invariant error model `e' = A e + B u` (row-major matrices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearPlant {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearPlant {
    pub fn new(n: usize, m: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || a.len() != n * n || b.len() != n * m {
            return Err(contract(format!("linear plant needs A {n}x{n} and B {n}x{m}")));
        }
        Ok(Self { n, m, a, b })
    }

    pub fn scalar(a: f64, b: f64) -> Self {
        Self { n: 1, m: 1, a: vec![a], b: vec![b] }
    }

    pub fn a_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.a)
    }

    pub fn b_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.m, &self.b)
    }
}

impl ErrorDynamics for LinearPlant {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn step(&self, _t: usize, e: &[f64], u: &[f64], out: &mut [f64]) {
        crate::linalg::gemv(&self.a, self.n, self.n, e, out);
        crate::linalg::gemv_acc(&self.b, self.n, self.m, u, out);
    }

    fn vjp(&self, _t: usize, _e: &[f64], _u: &[f64], adj: &[f64], ge: &mut [f64], gu: &mut [f64]) {
        crate::linalg::gemv_t_acc(&self.a, self.n, self.n, adj, ge);
        crate::linalg::gemv_t_acc(&self.b, self.n, self.m, adj, gu);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    PointMass(PointMassPlant),
    Linear(LinearPlant),
}

/// Plant model plus its certified input-to-state gain `γ̂(𝓕)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub dynamics: Dynamics,
    pub certified_gain: Option<f64>,
}

impl PlantModel {
    pub fn new(dynamics: Dynamics) -> Self {
        Self { dynamics, certified_gain: None }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.certified_gain = Some(gain);
        self
    }

    pub fn gain(&self) -> Result<f64> {
        self.certified_gain
            .ok_or_else(|| Error::InvalidConfig("plant gain has not been certified".into()))
    }

    pub fn point_mass(&self) -> Option<&PointMassPlant> {
        match &self.dynamics {
            Dynamics::PointMass(pm) => Some(pm),
            Dynamics::Linear(_) => None,
        }
    }
}

impl ErrorDynamics for PlantModel {
    fn state_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::PointMass(p) => p.state_dim(),
            Dynamics::Linear(p) => p.state_dim(),
        }
    }

    fn input_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::PointMass(p) => p.input_dim(),
            Dynamics::Linear(p) => p.input_dim(),
        }
    }

    #[inline]
    fn step(&self, t: usize, e: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::PointMass(p) => p.step(t, e, u, out),
            Dynamics::Linear(p) => p.step(t, e, u, out),
        }
    }

    #[inline]
    fn vjp(&self, t: usize, e: &[f64], u: &[f64], adj: &[f64], ge: &mut [f64], gu: &mut [f64]) {
        match &self.dynamics {
            Dynamics::PointMass(p) => p.vjp(t, e, u, adj, ge, gu),
            Dynamics::Linear(p) => p.vjp(t, e, u, adj, ge, gu),
        }
    }
}

/// `e' = f_t(e, u) + w`, with dimension checks.
pub fn error_dynamics_step<D: ErrorDynamics + ?Sized>(plant: &D, t: usize, e: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    if e.len() != n || w.len() != n || u.len() != m {
        return Err(contract(format!(
            "error step expects e,w in R^{n} and u in R^{m}; got {}, {}, {}",
            e.len(),
            w.len(),
            u.len()
        )));
    }
    let mut out = vec![0.0; n];
    plant.step(t, e, u, &mut out);
    out.iter_mut().zip(w).for_each(|(o, wi)| *o += wi);
    Ok(out)
}

/// IMC residual `ŵ_t = x_t - f_{t-1}(x_{t-1}, u_{t-1})`; at `t = 0` this is `x_0`.
pub fn reconstruct_disturbance<D: ErrorDynamics + ?Sized>(
    plant: &D,
    t: usize,
    x_t: &[f64],
    prev: Option<(&[f64], &[f64])>,
    out: &mut [f64],
) {
    match (t, prev) {
        (0, _) | (_, None) => out.copy_from_slice(x_t),
        (_, Some((x_prev, u_prev))) => {
            plant.step(t - 1, x_prev, u_prev, out);
            out.iter_mut().zip(x_t).for_each(|(o, x)| *o = x - *o);
        }
    }
}

/// A time-localized additive pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Impulse {
    pub time: usize,
    pub magnitude: f64,
    /// Affected coordinates; all of them when absent.
    #[serde(default)]
    pub coords: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    /// `w_t ~ N(0, (sigma0 · decay^t)² I)`.
    GaussianDecay { sigma0: f64, decay: f64 },
    /// `w_t ~ U[-amplitude, amplitude]` per coordinate, zero past the horizon.
    BoundedPersistent { amplitude: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceModel {
    pub noise: NoiseKind,
    #[serde(default)]
    pub impulses: Vec<Impulse>,
}

impl DisturbanceModel {
    pub fn gaussian_decay(sigma0: f64, decay: f64) -> Self {
        Self { noise: NoiseKind::GaussianDecay { sigma0, decay }, impulses: vec![] }
    }

    pub fn bounded_persistent(amplitude: f64) -> Self {
        Self { noise: NoiseKind::BoundedPersistent { amplitude }, impulses: vec![] }
    }

    pub fn with_impulses(mut self, impulses: Vec<Impulse>) -> Self {
        self.impulses = impulses;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.noise {
            NoiseKind::GaussianDecay { sigma0, decay } if !(sigma0 >= 0.0 && decay > 0.0 && decay <= 1.0) => {
                Err(Error::InvalidConfig(format!("gaussian_decay needs sigma0 >= 0 and decay in (0,1], got {sigma0}, {decay}")))
            }
            NoiseKind::BoundedPersistent { amplitude } if !(amplitude >= 0.0) => {
                Err(Error::InvalidConfig("bounded_persistent amplitude must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Copy without impulses: the noise a planner may assume.
    pub fn nominal(&self) -> Self {
        Self { noise: self.noise.clone(), impulses: vec![] }
    }

    /// Samples `w_0, …, w_{horizon-1}` in ℝ^dim.
    pub fn sample<R: Rng>(&self, horizon: usize, dim: usize, rng: &mut R) -> Signal {
        self.sample_window(0, horizon, dim, rng)
    }

    /// Samples `w_{t0}, …, w_{t0+len-1}`, reindexed from 0.
    pub fn sample_window<R: Rng>(&self, t0: usize, len: usize, dim: usize, rng: &mut R) -> Signal {
        let horizon = len;
        let mut s = Signal::zeros(dim, horizon);
        match self.noise {
            NoiseKind::GaussianDecay { sigma0, decay } => {
                for t in 0..horizon {
                    let sd = sigma0 * decay.powi((t0 + t) as i32);
                    let row = s.at_mut(t);
                    for x in row.iter_mut() {
                        let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
                        *x = sd * z;
                    }
                }
            }
            NoiseKind::BoundedPersistent { amplitude } => {
                if amplitude > 0.0 {
                    for t in 0..horizon {
                        for x in s.at_mut(t).iter_mut() {
                            *x = rng.random_range(-amplitude..=amplitude);
                        }
                    }
                }
            }
            NoiseKind::None => {}
        }
        for imp in &self.impulses {
            if imp.time < t0 || imp.time >= t0 + horizon {
                continue;
            }
            let row = s.at_mut(imp.time - t0);
            match &imp.coords {
                Some(cs) => cs.iter().filter(|&&c| c < dim).for_each(|&c| row[c] += imp.magnitude),
                None => row.iter_mut().for_each(|x| *x += imp.magnitude),
            }
        }
        s
    }
}

/// `sample_disturbance` with a seeded stream.
pub fn sample_disturbance(dm: &DisturbanceModel, horizon: usize, dim: usize, seed: u64) -> Signal {
    dm.sample(horizon, dim, &mut rng_for(seed, 0))
}

/// Two obstacles moving along `y` on fixed `x` columns:
/// `y_j(t) = A sin((2π ψ_j + η_j) τ + φ_j) + y0_j`, with `τ = t · Ts` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleTrack {
    pub amplitude: f64,
    pub psi: [f64; 2],
    #[serde(default)]
    pub eta: [f64; 2],
    #[serde(default)]
    pub phi: [f64; 2],
    pub y0: [f64; 2],
    #[serde(default)]
    pub x: [f64; 2],
    pub radius: f64,
    pub sample_time: f64,
}

impl Default for ObstacleTrack {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            psi: [0.05, 0.08],
            eta: [0.0; 2],
            phi: [0.0; 2],
            y0: [1.5, -1.5],
            x: [0.0; 2],
            radius: 0.3,
            sample_time: 0.05,
        }
    }
}

impl ObstacleTrack {
    /// Draws `η_j ~ N(0, 0.01)` (std 0.1) and `φ_j ~ U[0, 2π)`.
    pub fn resample<R: Rng>(&self, rng: &mut R) -> ObstacleTrack {
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mut out = self.clone();
        for j in 0..2 {
            out.eta[j] = normal.sample(rng);
            out.phi[j] = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        }
        out
    }

    pub fn y(&self, j: usize, t: usize) -> f64 {
        let tau = t as f64 * self.sample_time;
        self.amplitude * ((2.0 * std::f64::consts::PI * self.psi[j] + self.eta[j]) * tau + self.phi[j]).sin() + self.y0[j]
    }

    pub fn position(&self, j: usize, t: usize) -> [f64; 2] {
        [self.x[j], self.y(j, t)]
    }
}

pub fn obstacle_position(track: &ObstacleTrack, j: usize, t: usize) -> Result<f64> {
    if j >= 2 {
        return Err(contract(format!("obstacle index {j} out of range (two obstacles)")));
    }
    Ok(track.y(j, t))
}
