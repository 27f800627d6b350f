//! Scenario files: one JSON document fixing the map, robot task, pedestrians,
//! every hyperparameter and the seed. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::control::episode::{EpisodeConfig, World};
use crate::control::RobotState;
use crate::crowd::{load_tracks, CrowdParams, Pedestrian, ReplayTrack};
use crate::occupancy::{MapFormat, OccupancyGrid};
use crate::Vec2;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    /// Free-form label copied into logs.
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub map: Option<MapSpec>,
    pub robot: RobotTask,
    #[serde(default)]
    pub pedestrians: PedestrianSpec,
    #[serde(default)]
    pub crowd: CrowdParams,
    #[serde(default)]
    pub params: EpisodeConfig,
    /// Predictor model file, relative to the scenario file. Needed by the span controller.
    #[serde(default)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum MapSpec {
    /// Raster with a `<stem>.json` sidecar.
    File { path: PathBuf, format: MapFormat },
    /// Free space with solid axis-aligned rectangles.
    Rects { size: [usize; 2], resolution: f64, origin: [f64; 2], rects: Vec<Rect> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotTask {
    /// `[x, y, θ]`.
    pub start: [f64; 3],
    pub goal: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PedestrianSpec {
    pub simulated: Vec<SimulatedPedestrian>,
    pub scripted: Vec<ScriptedPedestrian>,
    pub replay: Option<ReplaySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedPedestrian {
    pub position: [f64; 2],
    pub goal: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Defaults to `params.collision.r_ped`.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_preferred_speed")]
    pub preferred_speed: f64,
}

fn default_preferred_speed() -> f64 {
    1.0
}

/// Walks at constant velocity from `start`, active over `[t_start, t_end]`,
/// and ignores the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPedestrian {
    pub id: String,
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
}

/// Recorded tracks overlaid into one episode. Each listed track is shifted so
/// that its first sample falls at `start` seconds into the episode; tracks not
/// listed are left out. An empty schedule keeps every track at its recorded time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    pub corpus: PathBuf,
    #[serde(default)]
    pub schedule: Vec<Overlay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overlay {
    pub track: String,
    pub start: f64,
}

/// A scenario with its files loaded.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub map: Option<OccupancyGrid>,
    pub replay: Vec<ReplayTrack>,
    pub model_path: Option<PathBuf>,
}

impl Loaded {
    pub fn start(&self) -> RobotState {
        let s = self.scenario.robot.start;
        RobotState::new(s[0], s[1], s[2])
    }

    pub fn goal(&self) -> Vec2 {
        Vec2::from(self.scenario.robot.goal)
    }

    pub fn world(&self) -> World<'_> {
        let r_ped = self.scenario.params.collision.r_ped;
        let simulated = self
            .scenario
            .pedestrians
            .simulated
            .iter()
            .map(|s| Pedestrian {
                position: Vec2::from(s.position),
                velocity: Vec2::from(s.velocity),
                goal: Vec2::from(s.goal),
                radius: s.radius.unwrap_or(r_ped),
                preferred_speed: s.preferred_speed,
            })
            .collect();
        World { map: self.map.as_ref(), simulated, crowd: self.scenario.crowd, replay: self.replay.clone() }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|e| HarnessError::Scenario(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if self.version != SCENARIO_VERSION {
            return bad(format!("unsupported version {} (expected {SCENARIO_VERSION})", self.version));
        }
        self.params.validate().map_err(|e| HarnessError::Scenario(e.to_string()))?;
        let c = &self.crowd;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(c.k >= 0.0
            && positive(c.tau0)
            && positive(c.horizon)
            && positive(c.xi)
            && positive(c.max_speed)
            && positive(c.fd_step)
            && positive(c.max_force)
            && c.noise >= 0.0
            && c.wall_margin >= 0.0
            && c.wall_strength >= 0.0)
        {
            return bad("crowd parameters out of range".into());
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.robot.start) || !finite(&self.robot.goal) {
            return bad("robot start and goal must be finite".into());
        }
        for (i, p) in self.pedestrians.simulated.iter().enumerate() {
            let radius_ok = p.radius.is_none_or(positive);
            if !(finite(&p.position) && finite(&p.goal) && finite(&p.velocity) && radius_ok && positive(p.preferred_speed)) {
                return bad(format!("simulated pedestrian {i} is invalid"));
            }
        }
        for p in &self.pedestrians.scripted {
            if !(finite(&p.start) && finite(&p.velocity) && p.t_start.is_finite() && p.t_end > p.t_start) {
                return bad(format!("scripted pedestrian {} is invalid", p.id));
            }
        }
        if let Some(MapSpec::Rects { size, resolution, origin, rects }) = &self.map {
            if size[0] == 0 || size[1] == 0 || !positive(*resolution) || !finite(origin) {
                return bad("map grid needs positive size and resolution".into());
            }
            if rects.iter().any(|r| !(finite(&r.min) && finite(&r.max) && r.min[0] <= r.max[0] && r.min[1] <= r.max[1])) {
                return bad("map rectangles need min ≤ max".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, so formatting does not matter.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serialises");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Loads referenced files, resolving relative paths against `base`.
    pub fn load(self, base: &Path) -> Result<Loaded, HarnessError> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let map = match &self.map {
            None => None,
            Some(MapSpec::File { path, format }) => {
                Some(OccupancyGrid::load(&resolve(path), *format).map_err(|e| HarnessError::Runtime(e.to_string()))?)
            }
            Some(MapSpec::Rects { size, resolution, origin, rects }) => {
                let mut g = OccupancyGrid::uniform(size[0], size[1], *resolution, Vec2::from(*origin), 0.0)
                    .map_err(|e| HarnessError::Scenario(e.to_string()))?;
                for r in rects {
                    g.fill_rect(Vec2::from(r.min), Vec2::from(r.max), 1.0);
                }
                Some(g)
            }
        };
        let dt = self.params.collision.dt;
        let mut replay = Vec::new();
        for s in &self.pedestrians.scripted {
            let track = ReplayTrack::constant_velocity(
                s.id.clone(),
                Vec2::from(s.start),
                Vec2::from(s.velocity),
                s.t_start,
                s.t_end,
                dt,
            )
            .map_err(|e| HarnessError::Scenario(e.to_string()))?;
            replay.push(track);
        }
        if let Some(spec) = &self.pedestrians.replay {
            let corpus = load_tracks(&resolve(&spec.corpus)).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            if spec.schedule.is_empty() {
                replay.extend(corpus);
            } else {
                for o in &spec.schedule {
                    let tr = corpus
                        .iter()
                        .find(|t| t.id() == o.track)
                        .ok_or_else(|| HarnessError::Scenario(format!("overlay names unknown track {}", o.track)))?;
                    replay.push(tr.shifted(o.start - tr.start()));
                }
            }
        }
        let model_path = self.model.as_deref().map(resolve);
        Ok(Loaded { scenario: self, map, replay, model_path })
    }
}
