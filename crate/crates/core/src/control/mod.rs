//! Unicycle dynamics and the receding-horizon controller.
//!
//! A candidate control `u = (v, ω)` is held constant over the horizon and
//! scored by `‖x̂(T) − g‖ + κ/τ`, where `τ` is the time to the first predicted
//! collision. Each control step solves that non-smooth problem with the
//! derivative-free solver from several starting points and keeps the best.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionScene;
use crate::dfo::{minimize, OptProblem, SolverConfig};
use crate::Vec2;

pub mod episode;

/// Wraps an angle to `[−π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Control {
    pub v: f64,
    pub omega: f64,
}

impl Control {
    pub const ZERO: Control = Control { v: 0.0, omega: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBounds {
    pub lower: Control,
    pub upper: Control,
}

impl Default for ControlBounds {
    /// `−1 ≤ v ≤ 1`, `0 ≤ ω ≤ 1`.
    fn default() -> Self {
        Self {
            lower: Control {
                v: -1.0,
                omega: 0.0,
            },
            upper: Control { v: 1.0, omega: 1.0 },
        }
    }
}

impl ControlBounds {
    /// `−1 ≤ v ≤ 1`, `−1 ≤ ω ≤ 1`, allowing turns in both directions.
    pub fn symmetric() -> Self {
        Self {
            lower: Control {
                v: -1.0,
                omega: -1.0,
            },
            upper: Control { v: 1.0, omega: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if ok(self.lower.v, self.upper.v) && ok(self.lower.omega, self.upper.omega) {
            Ok(())
        } else {
            Err(format!(
                "control bounds must be finite and ordered: {self:?}"
            ))
        }
    }

    pub fn contains(&self, u: Control) -> bool {
        (self.lower.v..=self.upper.v).contains(&u.v)
            && (self.lower.omega..=self.upper.omega).contains(&u.omega)
    }

    pub fn clamp(&self, u: Control) -> Control {
        Control {
            v: u.v.clamp(self.lower.v, self.upper.v),
            omega: u.omega.clamp(self.lower.omega, self.upper.omega),
        }
    }

    /// Affine map from `[−1, 1]²` onto the box.
    pub fn from_unit(&self, z: &[f64]) -> Control {
        let map = |z: f64, lo: f64, hi: f64| lo + 0.5 * (z + 1.0) * (hi - lo);
        Control {
            v: map(z[0], self.lower.v, self.upper.v),
            omega: map(z[1], self.lower.omega, self.upper.omega),
        }
    }

    pub fn to_unit(&self, u: Control) -> [f64; 2] {
        let map = |x: f64, lo: f64, hi: f64| {
            if hi > lo {
                2.0 * (x - lo) / (hi - lo) - 1.0
            } else {
                0.0
            }
        };
        [
            map(u.v, self.lower.v, self.upper.v),
            map(u.omega, self.lower.omega, self.upper.omega),
        ]
    }
}

/// One Euler step of the unicycle.
pub fn step_dynamics(x: RobotState, u: Control, dt: f64) -> RobotState {
    RobotState::new(
        x.x + u.v * x.theta.cos() * dt,
        x.y + u.v * x.theta.sin() * dt,
        x.theta + u.omega * dt,
    )
}

/// The `round(T/Δt)` states reached under constant `u`, excluding `x0`.
pub fn rollout(x0: RobotState, u: Control, horizon: f64, dt: f64) -> Vec<RobotState> {
    let n = (horizon / dt).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    for _ in 0..n {
        x = step_dynamics(x, u, dt);
        out.push(x);
    }
    out
}

/// One receding-horizon subproblem. Horizon and step come from the scene.
#[derive(Debug, Clone)]
pub struct ControlProblem<'a> {
    pub x0: RobotState,
    pub goal: Vec2,
    pub kappa: f64,
    pub bounds: ControlBounds,
    pub scene: CollisionScene<'a>,
    /// Previous solution; always used as the first restart.
    pub warm_start: Control,
}

/// `‖x̂(T) − g‖ + κ/τ`, with the second term zero when no collision is predicted.
pub fn cost(u: Control, problem: &ControlProblem<'_>) -> f64 {
    let (hit, end) = problem.scene.scan(problem.x0, u);
    let dist = (end.position() - problem.goal).norm();
    match hit {
        Some(k) => dist + problem.kappa / (k as f64 * problem.scene.config().dt),
        None => dist,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub restarts: usize,
    pub solver: SolverConfig,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            restarts: 40,
            solver: SolverConfig::default(),
        }
    }
}

/// Best control over `restarts` local solves: the warm start plus uniform
/// samples from the box. The result is always inside the bounds.
pub fn solve_step<R: Rng + ?Sized>(
    problem: &ControlProblem<'_>,
    cfg: &SolveConfig,
    rng: &mut R,
) -> Control {
    let bounds = problem.bounds;
    let mut starts = vec![bounds.to_unit(bounds.clamp(problem.warm_start))];
    for _ in 1..cfg.restarts.max(1) {
        starts.push([rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]);
    }
    let objective = |z: &[f64]| cost(bounds.from_unit(z), problem);
    let candidates: Vec<([f64; 2], f64)> = starts
        .par_iter()
        .map(|z0| {
            let opt = OptProblem::new(z0.to_vec(), objective).with_box(&[-1.0, -1.0], &[1.0, 1.0]);
            let r = minimize(&opt, &cfg.solver);
            let z = [r.x[0].clamp(-1.0, 1.0), r.x[1].clamp(-1.0, 1.0)];
            (z, objective(&z))
        })
        .collect();
    // Order-independent reduction: lowest cost, then lexicographically smallest.
    let best = candidates
        .iter()
        .fold(None::<&([f64; 2], f64)>, |acc, c| match acc {
            None => Some(c),
            Some(b) if c.1 < b.1 || (c.1 == b.1 && c.0 < b.0) => Some(c),
            keep => keep,
        })
        .expect("at least one restart");
    bounds.clamp(bounds.from_unit(&best.0))
}
