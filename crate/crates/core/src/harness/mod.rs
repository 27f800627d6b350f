//! Scenario files, episode logs, metrics and plot data: the pieces behind the
//! `span` command line.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::episode::{run_episode, Controller};
use crate::predictor::PredictorModel;

mod log;
mod scenario;

pub use log::{ground_truth_collision, plot_data, EpisodeLog, LogMeta, Metrics, LOG_VERSION};
pub use scenario::{
    Loaded, MapSpec, Overlay, PedestrianSpec, Rect, ReplaySpec, RobotTask, Scenario, ScriptedPedestrian,
    SimulatedPedestrian, SCENARIO_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("log: {0}")]
    Log(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Runs a loaded scenario once. `controller` overrides the scenario's choice
/// and `model` overrides its model file.
pub fn simulate(loaded: &Loaded, controller: Option<Controller>, model: Option<&PredictorModel>) -> Result<EpisodeLog, HarnessError> {
    let sc = &loaded.scenario;
    let mut cfg = sc.params.clone();
    if let Some(c) = controller {
        cfg.controller = c;
    }
    let owned;
    let model = match (cfg.controller, model) {
        (Controller::Reactive, _) => None,
        (Controller::Span, Some(m)) => Some(m),
        (Controller::Span, None) => {
            let path = loaded
                .model_path
                .as_ref()
                .ok_or_else(|| HarnessError::Scenario("the span controller needs a model file".into()))?;
            owned = PredictorModel::load(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
            Some(&owned)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let episode = run_episode(loaded.start(), loaded.goal(), loaded.world(), model, &cfg, &mut rng)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let meta = LogMeta {
        controller: match cfg.controller {
            Controller::Span => "span",
            Controller::Reactive => "reactive",
        }
        .into(),
        scenario: sc.name.replace(['\n', '\r'], " "),
        seed: sc.seed,
        scenario_hash: sc.hash(),
        dt: cfg.collision.dt,
        goal: loaded.goal(),
        goal_tolerance: cfg.goal_tolerance,
        r_robot: cfg.collision.r_robot,
        r_ped: cfg.collision.r_ped,
    };
    Ok(EpisodeLog::new(meta, episode))
}

/// Writes `log.csv`, `metrics.json` and optionally `plot.csv` into `dir`.
pub fn write_outputs(log: &EpisodeLog, dir: &Path, plot: bool) -> Result<Metrics, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    };
    write("log.csv", &log.to_csv())?;
    let metrics = log.metrics();
    write("metrics.json", &metrics.to_json())?;
    if plot {
        write("plot.csv", &plot_data(log))?;
    }
    Ok(metrics)
}
