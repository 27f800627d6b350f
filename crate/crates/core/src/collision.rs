//! Chance-constrained collision predicates and time to collision.
//!
//! A pedestrian's position at time `t` is Gaussian with mean `ō(t)` and
//! covariance `Σ(t)`. The probability that it lies within `r_robot + r_ped` of
//! the robot is bounded above by the probability of the half-plane containing
//! that disk, which has a closed form through `erf`. Static obstacles are
//! checked by sampling the occupancy map on a circle around the robot.

use std::borrow::Cow;
use std::fmt;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::control::{step_dynamics, Control, RobotState};
use crate::occupancy::OccupancyGrid;
use crate::trajectory::{BasisSpec, MatrixNormalParams, TrajectoryError};
use crate::Vec2;

#[derive(Debug, thiserror::Error)]
pub enum CollisionError {
    #[error("invalid collision config: {0}")]
    InvalidConfig(String),
    #[error("prediction has {params} weight rows but basis has {basis} functions")]
    BasisMismatch { params: usize, basis: usize },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionConfig {
    /// Collision probability threshold, in (0, 1).
    pub epsilon: f64,
    pub r_robot: f64,
    pub r_ped: f64,
    /// Number of angles sampled on the robot's circle for map checks.
    pub sweep_count: usize,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            r_robot: 0.4,
            r_ped: 0.4,
            sweep_count: 36,
            dt: 0.1,
            horizon: 4.0,
        }
    }
}

impl CollisionConfig {
    pub fn validate(&self) -> Result<(), CollisionError> {
        let bad = |m: String| Err(CollisionError::InvalidConfig(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.r_robot > 0.0
            && self.r_ped > 0.0
            && self.r_robot.is_finite()
            && self.r_ped.is_finite())
        {
            return bad(format!(
                "radii must be positive, got {} and {}",
                self.r_robot, self.r_ped
            ));
        }
        if self.sweep_count < 8 {
            return bad(format!(
                "sweep_count must be at least 8, got {}",
                self.sweep_count
            ));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon && self.horizon.is_finite()) {
            return bad(format!(
                "need 0 < dt ≤ horizon, got {} and {}",
                self.dt, self.horizon
            ));
        }
        Ok(())
    }

    pub fn r_sum(&self) -> f64 {
        self.r_robot + self.r_ped
    }

    /// Number of rollout steps, `round(T / Δt)`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Offsets `r_robot·[sin φ, cos φ]` for the evenly spaced sweep angles.
    pub fn sweep_offsets(&self) -> Vec<Vec2> {
        (0..self.sweep_count)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / self.sweep_count as f64;
                Vec2::new(phi.sin(), phi.cos()) * self.r_robot
            })
            .collect()
    }
}

/// The `z` with `erf(z) = 2ε − 1`, so that `bound > ε ⇔ argument > z`.
pub fn erf_threshold(epsilon: f64) -> f64 {
    let target = 2.0 * epsilon - 1.0;
    let (mut lo, mut hi) = (-6.0f64, 6.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if libm::erf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Predicted future of one pedestrian: a trajectory distribution expressed in a
/// frame whose origin is `anchor` in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianPrediction {
    params: MatrixNormalParams,
    basis: BasisSpec,
    anchor: Vec2,
}

impl PedestrianPrediction {
    pub fn new(
        params: MatrixNormalParams,
        basis: BasisSpec,
        anchor: Vec2,
    ) -> Result<Self, CollisionError> {
        if params.m() != basis.len() {
            return Err(CollisionError::BasisMismatch {
                params: params.m(),
                basis: basis.len(),
            });
        }
        Ok(Self {
            params,
            basis,
            anchor,
        })
    }

    /// A pedestrian frozen at `position` with isotropic positional variance.
    pub fn stationary(position: Vec2, variance: f64) -> Result<Self, CollisionError> {
        // One basis function flat to double precision over any practical horizon.
        let basis = BasisSpec::with_centers(vec![0.0], 1e-300)?;
        let params = MatrixNormalParams::new(
            nalgebra::DMatrix::zeros(1, 2),
            nalgebra::DMatrix::from_element(1, 1, variance),
            Matrix2::identity(),
        )?;
        Self::new(params, basis, position)
    }

    pub fn params(&self) -> &MatrixNormalParams {
        &self.params
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn anchor(&self) -> Vec2 {
        self.anchor
    }

    /// World-frame mean and covariance at time `t` after the anchor time.
    pub fn moments(&self, t: f64) -> (Vec2, Matrix2<f64>) {
        let mut phi = vec![0.0; self.basis.len()];
        self.basis.fill(t, &mut phi);
        let (mean, cov) = self.params.moments_from_phi(&phi);
        (mean + self.anchor, cov)
    }
}

/// Upper bound on the probability that the pedestrian overlaps the robot at `t`.
pub fn ped_collision_bound(
    robot_pos: Vec2,
    pred: &PedestrianPrediction,
    t: f64,
    cfg: &CollisionConfig,
) -> f64 {
    let (mean, cov) = pred.moments(t);
    bound_from_moments(robot_pos - mean, &cov, cfg.r_sum())
}

pub(crate) fn bound_from_moments(d: Vec2, cov: &Matrix2<f64>, r_sum: f64) -> f64 {
    let dist = d.norm();
    if dist == 0.0 {
        return 1.0;
    }
    let a = d / dist;
    let s2 = (a.transpose() * cov * a)[(0, 0)];
    let gap = r_sum - dist;
    if !(s2 > 0.0) {
        return match gap.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    (0.5 * (1.0 + libm::erf(gap / (2.0 * s2).sqrt()))).clamp(0.0, 1.0)
}

pub fn ped_collision_check(
    robot_pos: Vec2,
    preds: &[PedestrianPrediction],
    t: f64,
    cfg: &CollisionConfig,
) -> bool {
    preds
        .iter()
        .any(|p| ped_collision_bound(robot_pos, p, t, cfg) > cfg.epsilon)
}

pub fn static_collision_check(
    robot_pos: Vec2,
    map: Option<&OccupancyGrid>,
    cfg: &CollisionConfig,
) -> bool {
    let Some(map) = map else { return false };
    cfg.sweep_offsets()
        .iter()
        .any(|off| map.query(robot_pos + off) > cfg.epsilon)
}

/// Earliest step time in `[Δt, T]` at which either check fires under constant
/// `u`, or `+∞`.
pub fn time_to_collision(
    x0: RobotState,
    u: Control,
    preds: &[PedestrianPrediction],
    map: Option<&OccupancyGrid>,
    cfg: &CollisionConfig,
) -> Result<f64, CollisionError> {
    Ok(CollisionScene::new(preds, map, cfg)?.time_to_collision(x0, u))
}

/// Cells from which the swept map check cannot fire: every grid value that a
/// sweep point from anywhere in the cell interpolates lies below `ε`, and a
/// convex combination of such values stays below `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearMask {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Vec2,
    epsilon: f64,
    r_robot: f64,
    clear: Vec<bool>,
}

impl ClearMask {
    pub fn new(map: &OccupancyGrid, cfg: &CollisionConfig) -> Self {
        let (w, h) = (map.width(), map.height());
        // Interpolation reads cells at most ceil(r/res) + 1 away; one more for rounding.
        let k = (cfg.r_robot / map.resolution()).ceil() as usize + 2;
        // Margin keeps a few ulps of interpolation rounding on the safe side.
        let limit = cfg.epsilon - 1e-12;
        // 2-D prefix counts of cells that could push the interpolant to ε.
        let mut bad = vec![0u32; (w + 1) * (h + 1)];
        for r in 0..h {
            for c in 0..w {
                let b = u32::from(!(map.value(c, r) < limit));
                bad[(r + 1) * (w + 1) + c + 1] = b + bad[r * (w + 1) + c + 1] + bad[(r + 1) * (w + 1) + c] - bad[r * (w + 1) + c];
            }
        }
        let mut clear = vec![false; w * h];
        if w > 2 * k && h > 2 * k {
            for r in k..h - k {
                for c in k..w - k {
                    let (c0, c1, r0, r1) = (c - k, c + k + 1, r - k, r + k + 1);
                    let n = bad[r1 * (w + 1) + c1] + bad[r0 * (w + 1) + c0] - bad[r0 * (w + 1) + c1] - bad[r1 * (w + 1) + c0];
                    clear[r * w + c] = n == 0;
                }
            }
        }
        Self {
            width: w,
            height: h,
            resolution: map.resolution(),
            origin: map.origin(),
            epsilon: cfg.epsilon,
            r_robot: cfg.r_robot,
            clear,
        }
    }

    fn matches(&self, map: &OccupancyGrid, cfg: &CollisionConfig) -> bool {
        self.width == map.width()
            && self.height == map.height()
            && self.resolution == map.resolution()
            && self.origin == map.origin()
            && self.epsilon == cfg.epsilon
            && self.r_robot == cfg.r_robot
    }

    /// `true` only if the swept check at `pos` is certain to pass.
    #[inline]
    pub fn is_clear(&self, pos: Vec2) -> bool {
        let gx = (pos.x - self.origin.x) / self.resolution;
        let gy = (pos.y - self.origin.y) / self.resolution;
        if !(gx >= 0.0 && gy >= 0.0 && gx < self.width as f64 && gy < self.height as f64) {
            return false;
        }
        self.clear[gy as usize * self.width + gx as usize]
    }
}

#[derive(Debug, Clone, Copy)]
struct StepMoment {
    mean: Vec2,
    cxx: f64,
    cxy: f64,
    cyy: f64,
}

/// Collision context with pedestrian moments tabulated at every step time, so
/// repeated rollouts only pay for the geometric test.
#[derive(Debug, Clone)]
pub struct CollisionScene<'a> {
    cfg: CollisionConfig,
    threshold: f64,
    map: Option<&'a OccupancyGrid>,
    mask: Option<Cow<'a, ClearMask>>,
    steps: usize,
    n_peds: usize,
    table: Vec<StepMoment>,
    sweep: Vec<Vec2>,
}

impl<'a> CollisionScene<'a> {
    pub fn new(
        preds: &[PedestrianPrediction],
        map: Option<&'a OccupancyGrid>,
        cfg: &CollisionConfig,
    ) -> Result<Self, CollisionError> {
        Self::with_mask(preds, map, None, cfg)
    }

    /// Like [`CollisionScene::new`], reusing a precomputed [`ClearMask`] when it
    /// was built for this map, `ε` and robot radius.
    pub fn with_mask(
        preds: &[PedestrianPrediction],
        map: Option<&'a OccupancyGrid>,
        mask: Option<&'a ClearMask>,
        cfg: &CollisionConfig,
    ) -> Result<Self, CollisionError> {
        cfg.validate()?;
        let mask = map.map(|m| match mask {
            Some(given) if given.matches(m, cfg) => Cow::Borrowed(given),
            _ => Cow::Owned(ClearMask::new(m, cfg)),
        });
        let steps = cfg.steps();
        let mut table = Vec::with_capacity(steps * preds.len());
        for k in 1..=steps {
            let t = k as f64 * cfg.dt;
            for p in preds {
                let (mean, cov) = p.moments(t);
                table.push(StepMoment {
                    mean,
                    cxx: cov[(0, 0)],
                    cxy: cov[(0, 1)],
                    cyy: cov[(1, 1)],
                });
            }
        }
        Ok(Self {
            cfg: *cfg,
            threshold: erf_threshold(cfg.epsilon),
            map,
            mask,
            steps,
            n_peds: preds.len(),
            table,
            sweep: cfg.sweep_offsets(),
        })
    }

    pub fn config(&self) -> &CollisionConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn map(&self) -> Option<&'a OccupancyGrid> {
        self.map
    }

    /// Pedestrian check at step `k` (time `k·Δt`, `1 ≤ k ≤ steps`).
    pub fn ped_collides(&self, k: usize, pos: Vec2) -> bool {
        let r_sum = self.cfg.r_sum();
        let row = &self.table[(k - 1) * self.n_peds..k * self.n_peds];
        row.iter().any(|m| {
            let d = pos - m.mean;
            let n2 = d.norm_squared();
            if n2 == 0.0 {
                return true;
            }
            let s2 = (d.x * d.x * m.cxx + 2.0 * d.x * d.y * m.cxy + d.y * d.y * m.cyy) / n2;
            let gap = r_sum - n2.sqrt();
            if s2 > 0.0 {
                gap > self.threshold * (2.0 * s2).sqrt()
            } else {
                // Deterministic pedestrian: the bound is a step function of the gap.
                gap > 0.0 || (gap == 0.0 && self.cfg.epsilon < 0.5)
            }
        })
    }

    pub fn static_collides(&self, pos: Vec2) -> bool {
        if self.mask.as_ref().is_some_and(|m| m.is_clear(pos)) {
            return false;
        }
        match self.map {
            Some(map) => self
                .sweep
                .iter()
                .any(|off| map.query(pos + off) > self.cfg.epsilon),
            None => false,
        }
    }

    pub fn collides_at(&self, k: usize, pos: Vec2) -> bool {
        self.ped_collides(k, pos) || self.static_collides(pos)
    }

    /// First colliding step index under constant `u`, with the final rollout state.
    pub fn scan(&self, x0: RobotState, u: Control) -> (Option<usize>, RobotState) {
        let mut x = x0;
        let mut hit = None;
        for k in 1..=self.steps {
            x = step_dynamics(x, u, self.cfg.dt);
            if hit.is_none() && self.collides_at(k, x.position()) {
                hit = Some(k);
            }
        }
        (hit, x)
    }

    pub fn time_to_collision(&self, x0: RobotState, u: Control) -> f64 {
        let mut x = x0;
        for k in 1..=self.steps {
            x = step_dynamics(x, u, self.cfg.dt);
            if self.collides_at(k, x.position()) {
                return k as f64 * self.cfg.dt;
            }
        }
        f64::INFINITY
    }
}

impl fmt::Display for CollisionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ε={} r_robot={} r_ped={} K={} Δt={} T={}",
            self.epsilon, self.r_robot, self.r_ped, self.sweep_count, self.dt, self.horizon
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn point_ped(x: f64, y: f64, var: f64) -> PedestrianPrediction {
        PedestrianPrediction::stationary(Vec2::new(x, y), var).unwrap()
    }

    fn east() -> (RobotState, Control) {
        (
            RobotState::new(0.0, 0.0, 0.0),
            Control { v: 1.0, omega: 0.0 },
        )
    }

    #[test]
    fn threshold_inverts_erf() {
        for eps in [0.01, 0.25, 0.5, 0.9] {
            let z = erf_threshold(eps);
            assert_abs_diff_eq!(libm::erf(z), 2.0 * eps - 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn config_validation() {
        assert!(CollisionConfig::default().validate().is_ok());
        for cfg in [
            CollisionConfig {
                epsilon: 1.0,
                ..Default::default()
            },
            CollisionConfig {
                r_ped: 0.0,
                ..Default::default()
            },
            CollisionConfig {
                sweep_count: 7,
                ..Default::default()
            },
            CollisionConfig {
                dt: 5.0,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn bound_special_cases() {
        let cfg = CollisionConfig::default();
        let ped = point_ped(0.0, 0.0, 0.3);
        assert_abs_diff_eq!(
            ped_collision_bound(Vec2::new(0.8, 0.0), &ped, 1.0, &cfg),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(ped_collision_bound(Vec2::zeros(), &ped, 1.0, &cfg), 1.0);
        assert!(ped_collision_bound(Vec2::new(1e3, 0.0), &ped, 1.0, &cfg) < 1e-12);
    }

    #[test]
    fn pedestrian_check_takes_max() {
        let cfg = CollisionConfig::default();
        assert!(!ped_collision_check(Vec2::zeros(), &[], 0.5, &cfg));
        assert!(ped_collision_check(
            Vec2::new(0.8, 0.0),
            &[point_ped(0.0, 0.0, 0.3)],
            0.5,
            &cfg
        ));
        // Distances chosen so the bounds are roughly 0.1 and 0.2.
        let far = [
            point_ped(0.8 + 1.2816 * 0.2, 0.0, 0.04),
            point_ped(0.0, 0.8 + 0.8416 * 0.2, 0.04),
        ];
        let b: Vec<f64> = far
            .iter()
            .map(|p| ped_collision_bound(Vec2::zeros(), p, 0.5, &cfg))
            .collect();
        assert_abs_diff_eq!(b[0], 0.1, epsilon = 1e-3);
        assert_abs_diff_eq!(b[1], 0.2, epsilon = 1e-3);
        assert!(!ped_collision_check(Vec2::zeros(), &far, 0.5, &cfg));
    }

    #[test]
    fn bound_is_sound_against_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = 20_000;
        for _ in 0..200 {
            let r_sum: f64 = rng.random_range(0.2..1.5);
            let d = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let l = Matrix2::new(
                rng.random_range(0.05..1.0),
                0.0,
                rng.random_range(-0.5..0.5),
                rng.random_range(0.05..1.0),
            );
            let cov = l * l.transpose();
            let bound = bound_from_moments(d, &cov, r_sum);
            let mut hits = 0usize;
            for _ in 0..samples {
                let z = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                if (d + l * z).norm() < r_sum {
                    hits += 1;
                }
            }
            let p = hits as f64 / samples as f64;
            let se = (p * (1.0 - p) / samples as f64).sqrt();
            assert!(
                p <= bound + 3.0 * se + 1e-12,
                "MC {p} exceeds bound {bound} (d={d:?})"
            );
        }
    }

    #[test]
    fn fast_check_agrees_with_bound() {
        let cfg = CollisionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let preds: Vec<_> = (0..6)
            .map(|_| {
                point_ped(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.001..0.5),
                )
            })
            .collect();
        let scene = CollisionScene::new(&preds, None, &cfg).unwrap();
        for _ in 0..5000 {
            let pos = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let k = rng.random_range(1..=scene.steps());
            let t = k as f64 * cfg.dt;
            let max = preds
                .iter()
                .map(|p| ped_collision_bound(pos, p, t, &cfg))
                .fold(0.0, f64::max);
            if (max - cfg.epsilon).abs() > 1e-9 {
                assert_eq!(scene.ped_collides(k, pos), max > cfg.epsilon);
            }
        }
    }

    #[test]
    fn static_check_on_uniform_maps() {
        let cfg = CollisionConfig::default();
        let free = OccupancyGrid::uniform(50, 50, 0.1, Vec2::zeros(), 0.0).unwrap();
        let full = OccupancyGrid::uniform(50, 50, 0.1, Vec2::zeros(), 1.0).unwrap();
        for p in [
            Vec2::new(1.0, 1.0),
            Vec2::new(2.5, 3.7),
            Vec2::new(4.0, 0.6),
        ] {
            assert!(!static_collision_check(p, Some(&free), &cfg));
            assert!(static_collision_check(p, Some(&full), &cfg));
        }
        assert!(!static_collision_check(Vec2::zeros(), None, &cfg));
    }

    #[test]
    fn static_check_matches_disk_geometry() {
        let cfg = CollisionConfig::default();
        let res = 0.05;
        let mut map = OccupancyGrid::uniform(200, 200, res, Vec2::zeros(), 0.0).unwrap();
        let center = Vec2::new(5.0, 5.0);
        let radius = 1.0;
        map.fill_disk(center, radius, 1.0);
        for i in 0..400 {
            let ang = i as f64 * 0.7;
            let dist = 0.5 + 1.5 * (i as f64 / 400.0);
            let pos = center + Vec2::new(ang.cos(), ang.sin()) * dist;
            let hit = static_collision_check(pos, Some(&map), &cfg);
            let gap = dist - (radius + cfg.r_robot);
            if gap.abs() > res {
                assert_eq!(hit, gap < 0.0, "dist {dist}");
            }
        }
    }

    #[test]
    fn empty_world_never_collides() {
        let (x0, u) = east();
        let tau = time_to_collision(x0, u, &[], None, &CollisionConfig::default()).unwrap();
        assert!(tau.is_infinite());
    }

    #[test]
    fn pedestrian_ahead_time_to_collision() {
        let cfg = CollisionConfig::default();
        let (x0, u) = east();
        let tau = time_to_collision(x0, u, &[point_ped(2.0, 0.0, 1e-9)], None, &cfg).unwrap();
        assert!((tau - 1.2).abs() <= cfg.dt + 1e-9, "tau = {tau}");
    }

    fn wall_map() -> OccupancyGrid {
        let mut map = OccupancyGrid::uniform(80, 80, 0.1, Vec2::new(-4.0, -4.0), 0.0).unwrap();
        map.fill_rect(Vec2::new(2.0, -4.0), Vec2::new(4.0, 4.0), 1.0);
        map
    }

    #[test]
    fn wall_ahead_time_to_collision() {
        let cfg = CollisionConfig::default();
        let (x0, u) = east();
        let map = wall_map();
        let tau_wall = time_to_collision(x0, u, &[], Some(&map), &cfg).unwrap();
        assert!((tau_wall - 1.6).abs() <= cfg.dt + 1e-9, "tau = {tau_wall}");
        let ped = [point_ped(2.0, 0.0, 1e-9)];
        let tau_ped = time_to_collision(x0, u, &ped, None, &cfg).unwrap();
        let both = time_to_collision(x0, u, &ped, Some(&map), &cfg).unwrap();
        assert_eq!(both, tau_wall.min(tau_ped));
    }

    #[test]
    fn clear_mask_never_changes_the_static_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let res = [0.05, 0.1, 0.25][trial % 3];
            let mut map = OccupancyGrid::uniform(60, 50, res, Vec2::new(-1.0, -2.0), 0.0).unwrap();
            for _ in 0..4 {
                let c = map.cell_center(rng.random_range(0..60), rng.random_range(0..50));
                let half = Vec2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                map.fill_rect(c - half, c + half, rng.random_range(0.0..1.0));
            }
            let cfg = CollisionConfig { epsilon: rng.random_range(0.05..0.95), ..Default::default() };
            let scene = CollisionScene::new(&[], Some(&map), &cfg).unwrap();
            let mask = ClearMask::new(&map, &cfg);
            let (lo, hi) = (map.origin() - Vec2::new(1.0, 1.0), map.cell_center(59, 49) + Vec2::new(1.0, 1.0));
            let mut cleared = 0;
            for _ in 0..2000 {
                let pos = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
                assert_eq!(scene.static_collides(pos), static_collision_check(pos, Some(&map), &cfg));
                cleared += usize::from(mask.is_clear(pos));
            }
            assert!(trial % 3 == 2 || cleared > 0, "mask never fires for res {res}");
        }
    }

    #[test]
    fn stationary_prediction_is_constant() {
        let p = point_ped(1.0, -2.0, 0.09);
        for t in [0.0, 1.0, 4.0] {
            let (m, c) = p.moments(t);
            assert_eq!(m, Vec2::new(1.0, -2.0));
            assert_abs_diff_eq!(c, Matrix2::identity() * 0.09, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn bound_monotone_in_distance(s in 0.01f64..2.0, d1 in 0.0f64..5.0, extra in 0.0f64..5.0, ang in 0.0f64..6.3) {
            let cov = Matrix2::identity() * s;
            let dir = Vec2::new(ang.cos(), ang.sin());
            let near = bound_from_moments(dir * d1, &cov, 0.8);
            let far = bound_from_moments(dir * (d1 + extra), &cov, 0.8);
            prop_assert!(far <= near + 1e-15);
        }

        #[test]
        fn tighter_epsilon_never_delays_collision(eps in 0.02f64..0.98, shrink in 0.1f64..1.0,
                                                  px in 0.5f64..4.0, py in -1.5f64..1.5, var in 0.001f64..0.5,
                                                  omega in 0.0f64..1.0) {
            let loose = CollisionConfig { epsilon: eps, ..Default::default() };
            let strict = CollisionConfig { epsilon: eps * shrink, ..Default::default() };
            let peds = [point_ped(px, py, var)];
            let x0 = RobotState::new(0.0, 0.0, 0.0);
            let u = Control { v: 1.0, omega };
            let a = time_to_collision(x0, u, &peds, None, &loose).unwrap();
            let b = time_to_collision(x0, u, &peds, None, &strict).unwrap();
            prop_assert!(b <= a);
        }

        #[test]
        fn check_is_scale_invariant(scale in 0.1f64..10.0, dx in -3.0f64..3.0, dy in -3.0f64..3.0, s in 0.01f64..1.0) {
            let base = CollisionConfig::default();
            let scaled = CollisionConfig { r_robot: base.r_robot * scale, r_ped: base.r_ped * scale, ..base };
            let d = Vec2::new(dx, dy);
            let b1 = bound_from_moments(d, &(Matrix2::identity() * s), base.r_sum());
            let b2 = bound_from_moments(d * scale, &(Matrix2::identity() * s * scale * scale), scaled.r_sum());
            if (b1 - base.epsilon).abs() > 1e-9 {
                prop_assert_eq!(b1 > base.epsilon, b2 > scaled.epsilon);
            }
        }
    }
}
