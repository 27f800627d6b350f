//! Pedestrian world models.
//!
//! Simulated pedestrians follow an anticipatory power-law model: each agent
//! relaxes toward its preferred velocity and is pushed away from neighbours by
//! the gradient of the interaction energy `E(τ) = k/τ² · e^{−τ/τ₀}`, where `τ`
//! is the time to collision under constant velocities. Replayed pedestrians
//! follow recorded tracks and never react to anything.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::occupancy::OccupancyGrid;
use crate::Vec2;

mod replay;

pub use replay::{
    load_tracks, parse_tracks, replay_positions, synthetic_tracks, write_tracks, ReplayTrack, TrackError, VisibleAgent,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pedestrian {
    pub position: Vec2,
    pub velocity: Vec2,
    pub goal: Vec2,
    pub radius: f64,
    pub preferred_speed: f64,
}

impl Pedestrian {
    pub fn new(position: Vec2, goal: Vec2, radius: f64, preferred_speed: f64) -> Self {
        Self { position, velocity: Vec2::zeros(), goal, radius, preferred_speed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrowdParams {
    /// Interaction energy scale.
    pub k: f64,
    /// Exponential cutoff time of the interaction energy (s).
    pub tau0: f64,
    /// Neighbours whose time to collision exceeds this are ignored (s).
    pub horizon: f64,
    /// Relaxation time toward the preferred velocity (s).
    pub xi: f64,
    pub max_speed: f64,
    /// Central-difference step for the interaction gradient (m).
    pub fd_step: f64,
    /// Cap on the magnitude of each interaction and of the total force.
    pub max_force: f64,
    /// Standard deviation of the per-step force noise.
    pub noise: f64,
    /// Distance beyond an agent's radius at which occupied map cells repel.
    pub wall_margin: f64,
    pub wall_strength: f64,
}

impl Default for CrowdParams {
    fn default() -> Self {
        Self {
            k: 1.5,
            tau0: 3.0,
            horizon: 4.0,
            xi: 0.5,
            max_speed: 1.0,
            fd_step: 1e-3,
            max_force: 20.0,
            noise: 0.05,
            wall_margin: 0.5,
            wall_strength: 10.0,
        }
    }
}

/// A non-reacting disk that simulated pedestrians avoid, such as the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// Smallest `t ≥ 0` with `‖x + t·v‖ = r`, where `x` and `v` are relative
/// position and velocity. Zero when already overlapping; `+∞` when receding
/// or never touching.
fn ttc_relative(x: Vec2, v: Vec2, r: f64) -> f64 {
    let c = x.norm_squared() - r * r;
    if c < 0.0 {
        return 0.0;
    }
    let a = v.norm_squared();
    let b = x.dot(&v);
    if a == 0.0 || b >= 0.0 {
        return f64::INFINITY;
    }
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return f64::INFINITY;
    }
    // Smaller root of a t² + 2 b t + c, in a cancellation-free form.
    let t = c / (-b + disc.sqrt());
    if t >= 0.0 {
        t
    } else {
        f64::INFINITY
    }
}

/// Time until two pedestrians touch under their current velocities.
pub fn pairwise_ttc(a: &Pedestrian, b: &Pedestrian) -> f64 {
    ttc_relative(a.position - b.position, a.velocity - b.velocity, a.radius + b.radius)
}

fn energy(tau: f64, p: &CrowdParams) -> f64 {
    if tau.is_finite() && tau > 0.0 && tau < p.horizon {
        p.k / (tau * tau) * (-tau / p.tau0).exp()
    } else {
        0.0
    }
}

fn cap(f: Vec2, max: f64) -> Vec2 {
    let n = f.norm();
    if n > max {
        f * (max / n)
    } else {
        f
    }
}

/// Repulsion on an agent at relative position `x` and velocity `v` to another
/// agent, with combined radius `r`.
fn interaction_force(x: Vec2, v: Vec2, r: f64, p: &CrowdParams) -> Vec2 {
    if p.k == 0.0 {
        return Vec2::zeros();
    }
    let tau = ttc_relative(x, v, r);
    if tau == 0.0 {
        // Already overlapping: push straight apart.
        let n = x.norm();
        return if n > 0.0 { x * (p.max_force / n) } else { Vec2::new(p.max_force, 0.0) };
    }
    if energy(tau, p) == 0.0 {
        return Vec2::zeros();
    }
    let h = p.fd_step;
    let e = |dx: f64, dy: f64| energy(ttc_relative(x + Vec2::new(dx, dy), v, r), p);
    let grad = Vec2::new((e(h, 0.0) - e(-h, 0.0)) / (2.0 * h), (e(0.0, h) - e(0.0, -h)) / (2.0 * h));
    cap(-grad, p.max_force)
}

const WALL_DIRECTIONS: usize = 16;

fn wall_force(pos: Vec2, radius: f64, map: &OccupancyGrid, p: &CrowdParams) -> Vec2 {
    let mut f = Vec2::zeros();
    for i in 0..WALL_DIRECTIONS {
        let a = 2.0 * std::f64::consts::PI * i as f64 / WALL_DIRECTIONS as f64;
        let dir = Vec2::new(a.cos(), a.sin());
        for (s, w) in [(radius, 1.0), (radius + 0.5 * p.wall_margin, 0.5), (radius + p.wall_margin, 0.25)] {
            f -= dir * (w * map.query(pos + dir * s));
        }
    }
    f * (p.wall_strength / WALL_DIRECTIONS as f64)
}

fn goal_force(a: &Pedestrian, p: &CrowdParams) -> Vec2 {
    let to_goal = a.goal - a.position;
    let dist = to_goal.norm();
    let desired = if dist > 1e-9 {
        // Slows on arrival instead of overshooting.
        to_goal * (a.preferred_speed.min(dist / p.xi) / dist)
    } else {
        Vec2::zeros()
    };
    (desired - a.velocity) / p.xi
}

/// Advances all pedestrians by one synchronous Euler step: forces use the
/// state before the step, then velocities and positions update together.
pub fn step_crowd<R: Rng + ?Sized>(
    peds: &[Pedestrian],
    obstacles: &[Obstacle],
    map: Option<&OccupancyGrid>,
    dt: f64,
    params: &CrowdParams,
    rng: &mut R,
) -> Vec<Pedestrian> {
    let noise: Vec<Vec2> = peds
        .iter()
        .map(|_| Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * params.noise)
        .collect();
    peds.iter()
        .enumerate()
        .map(|(i, a)| {
            let mut f = goal_force(a, params);
            for (j, b) in peds.iter().enumerate() {
                if i != j {
                    f += interaction_force(a.position - b.position, a.velocity - b.velocity, a.radius + b.radius, params);
                }
            }
            for o in obstacles {
                f += interaction_force(a.position - o.position, a.velocity - o.velocity, a.radius + o.radius, params);
            }
            if let Some(map) = map {
                f += wall_force(a.position, a.radius, map, params);
            }
            f = cap(f, params.max_force) + noise[i];
            let velocity = cap(a.velocity + f * dt, params.max_speed);
            Pedestrian { position: a.position + velocity * dt, velocity, ..*a }
        })
        .collect()
}
