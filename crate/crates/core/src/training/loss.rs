use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::plant::{ObstacleTrack, Reference};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Stage cost `[e;u]ᵀQ[e;u]` plus squared-softplus barriers on agent–agent and
/// agent–obstacle distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub n: usize,
    pub m: usize,
    /// `(n+m) × (n+m)`, row-major, positive semidefinite.
    pub q: Vec<f64>,
    /// Needed to recover absolute agent positions when any barrier is active.
    #[serde(default)]
    pub reference: Option<Reference>,
    #[serde(default = "default_ts")]
    pub ts: f64,
    #[serde(default)]
    pub agent_radius: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub collision_weight: f64,
    #[serde(default)]
    pub obstacle_weight: f64,
    #[serde(default)]
    pub static_obstacles: Vec<Circle>,
    #[serde(default)]
    pub moving_obstacles: Option<ObstacleTrack>,
}

fn default_ts() -> f64 {
    0.05
}
fn default_beta() -> f64 {
    50.0
}
fn default_margin() -> f64 {
    0.05
}

const DIST_EPS: f64 = 1e-12;

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `weight · (softplus(β(d_safe − d))/β)²` and its derivative in `d`.
#[inline]
pub fn barrier(d: f64, d_safe: f64, beta: f64, weight: f64) -> (f64, f64) {
    let x = beta * (d_safe - d);
    let s = softplus(x) / beta;
    (weight * s * s, -2.0 * weight * s * sigmoid(x))
}

impl LossSpec {
    /// Quadratic cost with diagonal weights and no barriers.
    pub fn quadratic(q_state: &[f64], q_input: &[f64]) -> Self {
        let (n, m) = (q_state.len(), q_input.len());
        let k = n + m;
        let mut q = vec![0.0; k * k];
        for (i, v) in q_state.iter().chain(q_input).enumerate() {
            q[i * k + i] = *v;
        }
        Self {
            n,
            m,
            q,
            reference: None,
            ts: default_ts(),
            agent_radius: 0.0,
            beta: default_beta(),
            margin: default_margin(),
            collision_weight: 0.0,
            obstacle_weight: 0.0,
            static_obstacles: vec![],
            moving_obstacles: None,
        }
    }

    /// `diag(1, 1, 0.1, 0.1)` per agent on the error, `0.01` on each input.
    pub fn point_mass_default(agents: usize) -> Self {
        let qs: Vec<f64> = (0..agents).flat_map(|_| [1.0, 1.0, 0.1, 0.1]).collect();
        Self::quadratic(&qs, &vec![0.01; 2 * agents])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n + self.m;
        if self.q.len() != k * k {
            return Err(contract(format!("Q must be {k}x{k}")));
        }
        if !(self.beta > 0.0) {
            return Err(contract("barrier sharpness must be positive"));
        }
        let barriers = self.collision_weight > 0.0 || (self.obstacle_weight > 0.0 && (!self.static_obstacles.is_empty() || self.moving_obstacles.is_some()));
        if barriers {
            match &self.reference {
                Some(r) if 4 * r.agents() == self.n => {}
                _ => return Err(contract("barriers need a point-mass reference matching the state dimension")),
            }
        }
        Ok(())
    }

    fn barriers_active(&self) -> bool {
        self.reference.is_some() && (self.collision_weight > 0.0 || self.obstacle_weight > 0.0)
    }

    fn positions(&self, e: &[f64], t: usize) -> Vec<[f64; 2]> {
        let r = self.reference.as_ref().expect("reference required for barriers");
        (0..r.agents())
            .map(|j| {
                let q = r.position(j, t);
                [q[0] + e[4 * j], q[1] + e[4 * j + 1]]
            })
            .collect()
    }

    /// Obstacle circles in force at step `t`.
    pub fn obstacles_at(&self, t: usize) -> Vec<Circle> {
        let mut out = self.static_obstacles.clone();
        if let Some(tr) = &self.moving_obstacles {
            for j in 0..2 {
                out.push(Circle { center: tr.position(j, t), radius: tr.radius });
            }
        }
        out
    }

    pub fn stage_cost(&self, e: &[f64], u: &[f64], t: usize) -> f64 {
        self.eval(e, u, t, None)
    }

    /// Stage cost; accumulates `∂l/∂e` into `ge` and `∂l/∂u` into `gu`.
    pub fn stage_cost_grad(&self, e: &[f64], u: &[f64], t: usize, ge: &mut [f64], gu: &mut [f64]) -> f64 {
        self.eval(e, u, t, Some((ge, gu)))
    }

    pub fn quadratic_part(&self, e: &[f64], u: &[f64]) -> f64 {
        let k = self.n + self.m;
        let z = |i: usize| if i < self.n { e[i] } else { u[i - self.n] };
        let mut c = 0.0;
        for i in 0..k {
            let zi = z(i);
            if zi == 0.0 {
                continue;
            }
            let row = &self.q[i * k..(i + 1) * k];
            for (j, qij) in row.iter().enumerate() {
                if *qij != 0.0 {
                    c += zi * qij * z(j);
                }
            }
        }
        c
    }

    fn eval(&self, e: &[f64], u: &[f64], t: usize, mut grad: Option<(&mut [f64], &mut [f64])>) -> f64 {
        let k = self.n + self.m;
        let z = |i: usize| if i < self.n { e[i] } else { u[i - self.n] };
        let mut cost = 0.0;
        for i in 0..k {
            let row = &self.q[i * k..(i + 1) * k];
            let zi = z(i);
            let mut qz = 0.0;
            for (j, qij) in row.iter().enumerate() {
                if *qij != 0.0 {
                    qz += qij * z(j);
                }
            }
            cost += zi * qz;
            if let Some((ge, gu)) = grad.as_mut() {
                // (Q + Qᵀ) z, split over the two blocks
                let mut sym = qz;
                for j in 0..k {
                    let qji = self.q[j * k + i];
                    if qji != 0.0 {
                        sym += qji * z(j);
                    }
                }
                if i < self.n {
                    ge[i] += sym;
                } else {
                    gu[i - self.n] += sym;
                }
            }
        }
        if !self.barriers_active() {
            return cost;
        }
        let pos = self.positions(e, t);
        if self.collision_weight > 0.0 {
            let d_safe = 2.0 * self.agent_radius + self.margin;
            for a in 0..pos.len() {
                for b in a + 1..pos.len() {
                    let dx = [pos[a][0] - pos[b][0], pos[a][1] - pos[b][1]];
                    let d = (dx[0] * dx[0] + dx[1] * dx[1] + DIST_EPS).sqrt();
                    let (v, dv) = barrier(d, d_safe, self.beta, self.collision_weight);
                    cost += v;
                    if let Some((ge, _)) = grad.as_mut() {
                        for c in 0..2 {
                            let g = dv * dx[c] / d;
                            ge[4 * a + c] += g;
                            ge[4 * b + c] -= g;
                        }
                    }
                }
            }
        }
        if self.obstacle_weight > 0.0 {
            for ob in self.obstacles_at(t) {
                let d_safe = self.agent_radius + ob.radius + self.margin;
                for (a, p) in pos.iter().enumerate() {
                    let dx = [p[0] - ob.center[0], p[1] - ob.center[1]];
                    let d = (dx[0] * dx[0] + dx[1] * dx[1] + DIST_EPS).sqrt();
                    let (v, dv) = barrier(d, d_safe, self.beta, self.obstacle_weight);
                    cost += v;
                    if let Some((ge, _)) = grad.as_mut() {
                        for c in 0..2 {
                            ge[4 * a + c] += dv * dx[c] / d;
                        }
                    }
                }
            }
        }
        cost
    }
}
