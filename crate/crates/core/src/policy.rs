//! Recurrent policy with an ℓ2 gain bound that holds by construction.
//!
//! `ξ⁺ = tanh(W_rec ξ + W_in z)`, `u = W_out ξ⁺`, no biases. With
//! `‖W_in‖ ≤ s_in`, `‖W_rec‖ ≤ s_rec < 1`, `‖W_out‖ ≤ s_out` and tanh 1-Lipschitz,
//! `|ξ_{t+1}| ≤ s_rec|ξ_t| + s_in|z_t|`, so from zero state
//! `‖u‖_p ≤ s_out s_in / (1 − s_rec) ‖z‖_p`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::gaincert::CausalOperator;
use crate::linalg::{gemv, gemv_acc, spectral_norm, spectral_norm_power};

pub const POWER_ITERS: usize = 50;
pub const POWER_TOL: f64 = 1e-10;

/// Dimensions and the layout of the flat parameter vector `[W_in | W_rec | W_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub n: usize,
    pub m: usize,
    pub h: usize,
}

impl PolicyShape {
    pub fn len_in(&self) -> usize {
        self.h * self.n
    }
    pub fn len_rec(&self) -> usize {
        self.h * self.h
    }
    pub fn len_out(&self) -> usize {
        self.m * self.h
    }
    pub fn num_params(&self) -> usize {
        self.len_in() + self.len_rec() + self.len_out()
    }
    pub fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (a, rest) = theta.split_at(self.len_in());
        let (b, c) = rest.split_at(self.len_rec());
        (a, b, c)
    }
    pub fn split_mut<'a>(&self, theta: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64]) {
        let (a, rest) = theta.split_at_mut(self.len_in());
        let (b, c) = rest.split_at_mut(self.len_rec());
        (a, b, c)
    }

    /// One step from hidden state `xi`: writes `ξ⁺` and `u`.
    #[inline]
    pub fn forward(&self, theta: &[f64], xi: &[f64], z: &[f64], xi_next: &mut [f64], u: &mut [f64]) {
        let (w_in, w_rec, w_out) = self.split(theta);
        gemv(w_rec, self.h, self.h, xi, xi_next);
        gemv_acc(w_in, self.h, self.n, z, xi_next);
        xi_next.iter_mut().for_each(|v| *v = v.tanh());
        gemv(w_out, self.m, self.h, xi_next, u);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyCaps {
    pub s_in: f64,
    pub s_rec: f64,
    pub s_out: f64,
}

impl PolicyCaps {
    /// `s_in = s_out = √(γ̄(1 − s_rec))`, so the bound equals `γ̄`.
    pub fn balanced(gamma_bar: f64, s_rec: f64) -> Self {
        let s = (gamma_bar * (1.0 - s_rec)).sqrt();
        Self { s_in: s, s_rec, s_out: s }
    }

    pub fn bound(&self) -> Result<f64> {
        if !(self.s_rec < 1.0) || self.s_rec < 0.0 || self.s_in < 0.0 || self.s_out < 0.0 {
            return Err(Error::InvalidConfig(format!("caps need 0 <= s_rec < 1 and nonnegative s_in, s_out; got {self:?}")));
        }
        Ok(self.s_out * self.s_in / (1.0 - self.s_rec))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainBoundedPolicy {
    shape: PolicyShape,
    theta: Vec<f64>,
    gamma_bar: f64,
    /// Caps at the full budget `γ̄`.
    base: PolicyCaps,
    /// Output cap currently in force, `≤ base.s_out`.
    s_out: f64,
    state: Vec<f64>,
    scratch: Vec<f64>,
    power_vecs: [Vec<f64>; 3],
}

impl GainBoundedPolicy {
    /// Zero weights with balanced caps at `γ̄`.
    pub fn zeros(n: usize, m: usize, h: usize, gamma_bar: f64, s_rec: f64) -> Result<Self> {
        if n == 0 || m == 0 || h == 0 {
            return Err(Error::InvalidConfig("policy dimensions must be positive".into()));
        }
        if !(gamma_bar > 0.0 && gamma_bar.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma_bar must be positive and finite, got {gamma_bar}")));
        }
        let base = PolicyCaps::balanced(gamma_bar, s_rec);
        base.bound()?;
        let shape = PolicyShape { n, m, h };
        Ok(Self {
            shape,
            theta: vec![0.0; shape.num_params()],
            gamma_bar,
            base,
            s_out: base.s_out,
            state: vec![0.0; h],
            scratch: vec![0.0; h],
            power_vecs: [vec![0.0; n], vec![0.0; h], vec![0.0; h]],
        })
    }

    /// Gaussian weights, each matrix rescaled to `init_frac` of its cap.
    pub fn random<R: Rng>(n: usize, m: usize, h: usize, gamma_bar: f64, s_rec: f64, init_frac: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(n, m, h, gamma_bar, s_rec)?;
        for x in p.theta.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        let shape = p.shape;
        let caps = [p.base.s_in, p.base.s_rec, p.base.s_out];
        let dims = [(h, n), (h, h), (m, h)];
        let (a, b, c) = shape.split_mut(&mut p.theta);
        for ((w, cap), (r, cl)) in [a, b, c].into_iter().zip(caps).zip(dims) {
            let s = spectral_norm(w, r, cl);
            if s > 0.0 {
                let k = init_frac * cap / s;
                w.iter_mut().for_each(|x| *x *= k);
            }
        }
        Ok(p)
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Replaces θ; call a projection before deploying.
    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(contract(format!("theta has {} entries, expected {}", theta.len(), self.theta.len())));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    pub fn caps(&self) -> PolicyCaps {
        PolicyCaps { s_out: self.s_out, ..self.base }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }

    /// `s_out · s_in / (1 − s_rec)` from the caps in force.
    pub fn certified_gain(&self) -> Result<f64> {
        self.caps().bound()
    }

    pub fn step(&mut self, z: &[f64], u: &mut [f64]) -> Result<()> {
        if z.len() != self.shape.n || u.len() != self.shape.m {
            return Err(contract(format!(
                "policy expects z in R^{} and u in R^{}; got {} and {}",
                self.shape.n,
                self.shape.m,
                z.len(),
                u.len()
            )));
        }
        self.step_unchecked(z, u);
        Ok(())
    }

    #[inline]
    pub fn step_unchecked(&mut self, z: &[f64], u: &mut [f64]) {
        self.shape.forward(&self.theta, &self.state, z, &mut self.scratch, u);
        std::mem::swap(&mut self.state, &mut self.scratch);
    }

    fn set_output_cap(&mut self, gamma_req: f64) -> Result<()> {
        if !(gamma_req > 0.0) {
            return Err(contract(format!("requested gain must be positive, got {gamma_req}")));
        }
        let full = self.base.bound()?;
        self.s_out = self.base.s_out * (gamma_req / full).min(1.0);
        Ok(())
    }

    fn shrink_to_caps(&mut self, norm: impl Fn(&[f64], usize, usize, &mut [f64]) -> f64) {
        let PolicyShape { n, m, h } = self.shape;
        let caps = [self.base.s_in, self.base.s_rec, self.s_out];
        let dims = [(h, n), (h, h), (m, h)];
        let (a, b, c) = self.shape.split_mut(&mut self.theta);
        for (((w, cap), (r, cl)), v) in [a, b, c].into_iter().zip(caps).zip(dims).zip(self.power_vecs.iter_mut()) {
            let s = norm(w, r, cl, v);
            if s > cap {
                let k = if cap == 0.0 { 0.0 } else { cap / s };
                w.iter_mut().for_each(|x| *x *= k);
            }
        }
    }

    /// Caps `certified_gain` at `min(γ_req, γ̄)` and shrinks each matrix over its cap.
    ///
    /// Norms come from warm-started power iteration, which approaches from below;
    /// use [`Self::project_exact`] before deployment.
    pub fn project_parameters(&mut self, gamma_req: f64) -> Result<()> {
        self.set_output_cap(gamma_req)?;
        self.shrink_to_caps(|w, r, c, v| spectral_norm_power(w, r, c, v, POWER_ITERS, POWER_TOL));
        Ok(())
    }

    /// As [`Self::project_parameters`] with exact spectral norms, so the caps are rigorous.
    pub fn project_exact(&mut self, gamma_req: f64) -> Result<()> {
        self.set_output_cap(gamma_req)?;
        self.shrink_to_caps(|w, r, c, _| spectral_norm(w, r, c));
        // Guard against rounding in the rescale itself.
        self.shrink_to_caps(|w, r, c, _| spectral_norm(w, r, c) * (1.0 + 1e-12));
        Ok(())
    }

    /// Exact spectral norms `(‖W_in‖, ‖W_rec‖, ‖W_out‖)`.
    pub fn weight_norms(&self) -> (f64, f64, f64) {
        let PolicyShape { n, m, h } = self.shape;
        let (a, b, c) = self.shape.split(&self.theta);
        (spectral_norm(a, h, n), spectral_norm(b, h, h), spectral_norm(c, m, h))
    }

    /// Gain bound from the actual weight norms (never above `certified_gain` after `project_exact`).
    pub fn weight_gain_bound(&self) -> f64 {
        let (a, b, c) = self.weight_norms();
        if b >= 1.0 {
            return f64::INFINITY;
        }
        c * a / (1.0 - b)
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: self.shape,
            gamma_bar: self.gamma_bar,
            caps: self.caps(),
            theta: self.theta.clone(),
        }
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let mut p = Self::zeros(ck.shape.n, ck.shape.m, ck.shape.h, ck.gamma_bar, ck.caps.s_rec)?;
        p.set_theta(&ck.theta)?;
        if ck.caps.s_out > p.base.s_out * (1.0 + 1e-12) || (ck.caps.s_in - p.base.s_in).abs() > 1e-12 * p.base.s_in.max(1.0) {
            return Err(Error::InvalidConfig("checkpoint caps inconsistent with gamma_bar".into()));
        }
        p.s_out = ck.caps.s_out.min(p.base.s_out);
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(s)?)
    }
}

impl CausalOperator for GainBoundedPolicy {
    fn input_dim(&self) -> usize {
        self.shape.n
    }
    fn output_dim(&self) -> usize {
        self.shape.m
    }
    fn reset(&mut self) {
        GainBoundedPolicy::reset(self)
    }
    fn step(&mut self, z: &[f64], out: &mut [f64]) {
        self.step_unchecked(z, out)
    }
}

pub const CHECKPOINT_FORMAT: &str = "gainbudget-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub shape: PolicyShape,
    pub gamma_bar: f64,
    pub caps: PolicyCaps,
    pub theta: Vec<f64>,
}
