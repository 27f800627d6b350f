//! Closed-loop episodes: observe, predict, solve, apply, advance the world.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{solve_step, step_dynamics, Control, ControlBounds, ControlProblem, RobotState, SolveConfig};
use crate::collision::{
    static_collision_check, ClearMask, CollisionConfig, CollisionError, CollisionScene, PedestrianPrediction,
};
use crate::crowd::{replay_positions, step_crowd, CrowdParams, Obstacle, Pedestrian, ReplayTrack};
use crate::occupancy::OccupancyGrid;
use crate::predictor::{ObservationWindow, PredictorError, PredictorModel};
use crate::Vec2;

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    /// Learned predictions over the full horizon.
    Span,
    /// Two-step horizon against pedestrians frozen where they stand.
    Reactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub controller: Controller,
    pub collision: CollisionConfig,
    pub kappa: f64,
    pub bounds: ControlBounds,
    pub solve: SolveConfig,
    /// Distance to goal that counts as arrival (m).
    pub goal_tolerance: f64,
    pub t_max: f64,
    /// Positional variance of the frozen pedestrians seen by the reactive controller.
    pub reactive_variance: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            controller: Controller::Span,
            collision: CollisionConfig::default(),
            kappa: 100.0,
            bounds: ControlBounds::default(),
            solve: SolveConfig::default(),
            goal_tolerance: 0.5,
            t_max: 120.0,
            reactive_variance: 1e-4,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        self.collision.validate()?;
        self.bounds.validate().map_err(EpisodeError::InvalidConfig)?;
        self.solve.solver.validate(2).map_err(|e| EpisodeError::InvalidConfig(e.to_string()))?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(EpisodeError::InvalidConfig("kappa must be finite and ≥ 0".into()));
        }
        if !(positive(self.goal_tolerance) && positive(self.t_max) && positive(self.reactive_variance)) {
            return Err(EpisodeError::InvalidConfig("goal_tolerance, t_max and reactive_variance must be positive".into()));
        }
        if self.solve.restarts == 0 {
            return Err(EpisodeError::InvalidConfig("restarts must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Collision settings the controller plans with.
    pub fn planning_collision(&self) -> CollisionConfig {
        match self.controller {
            Controller::Span => self.collision,
            // Two steps is the shortest horizon at which ω moves the robot.
            Controller::Reactive => CollisionConfig { horizon: 2.0 * self.collision.dt, ..self.collision },
        }
    }
}

/// Everything outside the robot.
#[derive(Debug, Clone)]
pub struct World<'a> {
    pub map: Option<&'a OccupancyGrid>,
    /// Pedestrians that react to each other and to the robot.
    pub simulated: Vec<Pedestrian>,
    pub crowd: CrowdParams,
    /// Pedestrians that follow fixed tracks.
    pub replay: Vec<ReplayTrack>,
}

impl<'a> World<'a> {
    pub fn empty(map: Option<&'a OccupancyGrid>) -> Self {
        Self { map, simulated: Vec::new(), crowd: CrowdParams::default(), replay: Vec::new() }
    }
}

/// Ground-truth pedestrian at one step. Simulated agents are `sim:<i>`,
/// recorded ones carry their track id.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPosition {
    pub id: String,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub state: RobotState,
    /// Control applied from this state; zero on the arrival step.
    pub control: Control,
    pub pedestrians: Vec<AgentPosition>,
    /// Swept map check at the robot's true position.
    pub map_hit: bool,
    /// Some pedestrian centre is closer than `r_robot + r_ped`, or `map_hit`.
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub dt: f64,
    pub goal: Vec2,
    pub records: Vec<StepRecord>,
    /// Wall time of prediction plus control solve, one entry per solved step.
    pub iter_ms: Vec<f64>,
    pub reached: bool,
}

impl Episode {
    /// Time at which the robot first stood within tolerance of the goal.
    pub fn time_to_goal(&self) -> Option<f64> {
        self.reached.then(|| self.records.last().map_or(0.0, |r| r.step as f64 * self.dt))
    }
}

/// The last `p` positions from `history`, padded by repeating the earliest one.
fn padded_window(history: &[Vec2], p: usize) -> ObservationWindow {
    let start = history.len().saturating_sub(p);
    let recent = &history[start..];
    let mut points = vec![recent[0]; p - recent.len()];
    points.extend_from_slice(recent);
    ObservationWindow::new(points)
}

/// Runs one episode from `start` until the robot is within tolerance of `goal`
/// or `t_max` elapses. `model` is required for [`Controller::Span`].
pub fn run_episode<R: Rng + ?Sized>(
    start: RobotState,
    goal: Vec2,
    mut world: World<'_>,
    model: Option<&PredictorModel>,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Episode, EpisodeError> {
    cfg.validate()?;
    if cfg.controller == Controller::Span && model.is_none() {
        return Err(EpisodeError::InvalidConfig("the span controller needs a predictor model".into()));
    }
    let dt = cfg.collision.dt;
    let p = model.map_or(1, |m| m.spec().p);
    if let Some(m) = model {
        if (m.spec().dt - dt).abs() > 1e-12 {
            return Err(EpisodeError::InvalidConfig(format!("model Δt {} differs from control Δt {dt}", m.spec().dt)));
        }
    }
    let plan_cfg = cfg.planning_collision();
    let mask = world.map.map(|m| ClearMask::new(m, &plan_cfg));
    let r_sum = cfg.collision.r_sum();
    let max_steps = (cfg.t_max / dt).round() as usize;

    let mut history: Vec<Vec<Vec2>> = world.simulated.iter().map(|a| vec![a.position]).collect();
    let mut state = start;
    let mut warm = Control::ZERO;
    let mut records = Vec::new();
    let mut iter_ms = Vec::new();
    let mut reached = false;

    for step in 0..=max_steps {
        let t = step as f64 * dt;
        let visible = replay_positions(&world.replay, t, dt, p);
        let mut agents: Vec<AgentPosition> = Vec::with_capacity(world.simulated.len() + visible.len());
        let mut windows = Vec::with_capacity(agents.capacity());
        for (i, a) in world.simulated.iter().enumerate() {
            agents.push(AgentPosition { id: format!("sim:{i}"), position: a.position });
            windows.push(padded_window(&history[i], p));
        }
        for v in visible {
            agents.push(AgentPosition { id: world.replay[v.track].id().to_string(), position: v.position });
            windows.push(v.window);
        }

        let pos = state.position();
        let map_hit = static_collision_check(pos, world.map, &cfg.collision);
        let collision = map_hit || agents.iter().any(|a| (a.position - pos).norm() < r_sum);
        let mut record = StepRecord { step, state, control: Control::ZERO, pedestrians: agents, map_hit, collision };

        if (pos - goal).norm() <= cfg.goal_tolerance {
            reached = true;
            records.push(record);
            break;
        }
        if step == max_steps {
            records.push(record);
            break;
        }

        let clock = Instant::now();
        let preds = match cfg.controller {
            Controller::Span => model.expect("checked above").predict_many(&windows)?,
            Controller::Reactive => record
                .pedestrians
                .iter()
                .map(|a| PedestrianPrediction::stationary(a.position, cfg.reactive_variance))
                .collect::<Result<_, _>>()?,
        };
        let scene = CollisionScene::with_mask(&preds, world.map, mask.as_ref(), &plan_cfg)?;
        let problem = ControlProblem { x0: state, goal, kappa: cfg.kappa, bounds: cfg.bounds, scene, warm_start: warm };
        let u = solve_step(&problem, &cfg.solve, rng);
        iter_ms.push(clock.elapsed().as_secs_f64() * 1e3);

        record.control = u;
        records.push(record);
        warm = u;

        let robot = Obstacle {
            position: pos,
            velocity: Vec2::new(state.theta.cos(), state.theta.sin()) * u.v,
            radius: cfg.collision.r_robot,
        };
        state = step_dynamics(state, u, dt);
        if !world.simulated.is_empty() {
            world.simulated = step_crowd(&world.simulated, &[robot], world.map, dt, &world.crowd, rng);
            for (h, a) in history.iter_mut().zip(&world.simulated) {
                h.push(a.position);
                if h.len() > p {
                    h.remove(0);
                }
            }
        }
    }

    Ok(Episode { dt, goal, records, iter_ms, reached })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fast() -> EpisodeConfig {
        EpisodeConfig {
            controller: Controller::Reactive,
            solve: SolveConfig { restarts: 4, ..Default::default() },
            bounds: ControlBounds::symmetric(),
            ..Default::default()
        }
    }

    #[test]
    fn window_padding_repeats_earliest() {
        let h = [Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        let w = padded_window(&h, 4);
        assert_eq!(w.points, vec![h[0], h[0], h[0], h[1]]);
        let long: Vec<Vec2> = (0..9).map(|i| Vec2::new(i as f64, 0.0)).collect();
        assert_eq!(padded_window(&long, 3).points, long[6..].to_vec());
    }

    #[test]
    fn starting_at_goal_ends_immediately() {
        let ep = run_episode(
            RobotState::new(1.0, 1.0, 0.0),
            Vec2::new(1.2, 1.0),
            World::empty(None),
            None,
            &fast(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(ep.reached);
        assert_eq!(ep.time_to_goal(), Some(0.0));
        assert_eq!(ep.records.len(), 1);
        assert!(ep.iter_ms.is_empty());
    }

    #[test]
    fn free_space_drive_reaches_goal() {
        let goal = Vec2::new(5.0, 0.0);
        let ep = run_episode(RobotState::new(0.0, 0.0, 0.0), goal, World::empty(None), None, &fast(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!(ep.reached);
        // Full speed straight ahead: 4.5 m at 1 m/s.
        let ttg = ep.time_to_goal().unwrap();
        assert!((4.5..=4.6 + 1e-9).contains(&ttg), "{ttg}");
        assert!(ep.records.iter().all(|r| !r.collision));
        for w in ep.records.windows(2) {
            assert_eq!(w[1].state, step_dynamics(w[0].state, w[0].control, 0.1));
        }
    }

    #[test]
    fn timeout_is_reported() {
        let cfg = EpisodeConfig { t_max: 1.0, ..fast() };
        let ep = run_episode(
            RobotState::new(0.0, 0.0, 0.0),
            Vec2::new(50.0, 0.0),
            World::empty(None),
            None,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(!ep.reached);
        assert_eq!(ep.time_to_goal(), None);
        assert_eq!(ep.records.len(), 11);
        assert_eq!(ep.iter_ms.len(), 10);
    }

    #[test]
    fn span_requires_model() {
        let cfg = EpisodeConfig { controller: Controller::Span, ..fast() };
        let r = run_episode(RobotState::new(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0), World::empty(None), None, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(EpisodeError::InvalidConfig(_))));
    }

    #[test]
    fn replay_pedestrians_are_logged_while_active() {
        let track = ReplayTrack::constant_velocity("walker", Vec2::new(2.0, 5.0), Vec2::new(0.0, 1.0), 0.0, 0.5, 0.1).unwrap();
        let world = World { replay: vec![track], ..World::empty(None) };
        let ep = run_episode(RobotState::new(0.0, 0.0, 0.0), Vec2::new(3.0, 0.0), world, None, &fast(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        for r in &ep.records {
            let expect = usize::from(r.step <= 5);
            assert_eq!(r.pedestrians.len(), expect, "step {}", r.step);
        }
        assert_eq!(ep.records[3].pedestrians[0].id, "walker");
    }

    #[test]
    fn ground_truth_collision_flag() {
        // A pedestrian parked on the path; the reactive robot may still brush it,
        // but the flag must match the geometry on every step.
        let ped = Pedestrian::new(Vec2::new(2.0, 0.0), Vec2::new(2.0, 0.0), 0.4, 0.0);
        let world = World { simulated: vec![ped], ..World::empty(None) };
        let cfg = EpisodeConfig { t_max: 10.0, ..fast() };
        let ep = run_episode(RobotState::new(0.0, 0.0, 0.0), Vec2::new(4.0, 0.0), world, None, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        for r in &ep.records {
            let d = (r.pedestrians[0].position - r.state.position()).norm();
            assert_eq!(r.collision, d < 0.8);
        }
    }
}
