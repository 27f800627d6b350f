use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use span_nav::control::episode::Controller;
use span_nav::crowd::{load_tracks, synthetic_tracks, ReplayTrack};
use span_nav::harness::{simulate, write_outputs, EpisodeLog, HarnessError, Scenario};
use span_nav::predictor::{
    build_dataset, loss_and_gradient, split_tracks, train, ModelSpec, ObservationWindow, PredictorModel,
    TrainConfig, TrainingPair,
};
use span_nav::trajectory::{fit_weights, BasisSpec};
use span_nav::Vec2;

/// Anticipatory crowd navigation: prediction, control and evaluation.
#[derive(Parser)]
#[command(name = "span", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit basis weights to each track in a CSV corpus and report them as JSON.
    Fit(FitArgs),
    /// Train a predictor on a corpus and write the model file.
    Train(TrainArgs),
    /// Predict the trajectory distribution that follows one observation window.
    Predict(PredictArgs),
    /// Run scenarios and write logs, metrics and plot data.
    Simulate(SimArgs),
    /// Recompute metrics from a saved log.
    Evaluate(EvalArgs),
    /// Run scenarios with a baseline controller.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV file or directory of CSV files with columns t,agent_id,x,y.
    #[arg(long)]
    tracks: PathBuf,
    /// Only fit this agent.
    #[arg(long)]
    agent: Option<String>,
    #[arg(long, default_value_t = 8)]
    m: usize,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    /// Seconds of each track to fit, from its first sample.
    #[arg(long, default_value_t = 4.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// CSV corpus (file or directory).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    corpus: Option<PathBuf>,
    /// Train on this many generated constant-velocity tracks instead.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training loss as CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of tracks used for training; the rest is held out.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,100,100")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    m: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Observed positions oldest first, as `x,y;x,y;…`.
    #[arg(long)]
    window: String,
    /// Trajectories to sample in addition to the mean.
    #[arg(long, default_value_t = 0)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; repeat to run several.
    #[arg(long, required = true)]
    scenario: Vec<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory; one subdirectory per scenario when several are given.
    #[arg(long)]
    out: PathBuf,
    /// Also write plot.csv.
    #[arg(long)]
    plot: bool,
    /// Scenarios to run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BaselineKind {
    Reactive,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value = "reactive")]
    controller: BaselineKind,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn runtime<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::io(p, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(runtime),
    }
}

#[derive(Serialize)]
struct FitReport {
    agent_id: String,
    points: usize,
    rms_m: f64,
    weights: Vec<[f64; 2]>,
}

fn cmd_fit(a: FitArgs) -> Result<(), HarnessError> {
    let basis = BasisSpec::new(a.m, a.horizon, a.gamma).map_err(runtime)?;
    let tracks = load_tracks(&a.tracks).map_err(runtime)?;
    let mut reports = Vec::new();
    for tr in tracks.iter().filter(|t| a.agent.as_deref().is_none_or(|id| t.id() == id)) {
        let t0 = tr.start();
        let pts: Vec<_> = tr
            .points()
            .iter()
            .filter(|q| q.t - t0 <= a.horizon + 1e-9)
            .map(|q| span_nav::trajectory::TimedPoint { t: q.t - t0, p: q.p })
            .collect();
        let w = fit_weights(&pts, &basis, a.lambda).map_err(runtime)?;
        let mut sq = 0.0;
        for q in &pts {
            sq += (w.evaluate(&basis, q.t).map_err(runtime)? - q.p).norm_squared();
        }
        let m = w.as_matrix();
        reports.push(FitReport {
            agent_id: tr.id().to_string(),
            points: pts.len(),
            rms_m: (sq / pts.len() as f64).sqrt(),
            weights: (0..m.nrows()).map(|i| [m[(i, 0)], m[(i, 1)]]).collect(),
        });
    }
    if reports.is_empty() {
        return Err(HarnessError::Runtime("no matching tracks".into()));
    }
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&reports).map_err(runtime)? + "\n"))
}

/// Mean displacement at the horizon of the predicted mean and of a
/// stand-still guess.
fn horizon_errors(model: &PredictorModel, pairs: &[TrainingPair]) -> (f64, f64) {
    let basis = model.basis();
    let horizon = model.spec().horizon;
    let (mut model_err, mut still_err) = (0.0, 0.0);
    for pair in pairs {
        let truth = pair.target.evaluate(basis, horizon).expect("target matches basis");
        let pred = model.predict(&pair.window).expect("window length matches").moments(horizon).0;
        model_err += (pred - truth).norm();
        still_err += truth.norm();
    }
    let n = pairs.len().max(1) as f64;
    (model_err / n, still_err / n)
}

fn cmd_train(a: TrainArgs) -> Result<(), HarnessError> {
    let spec = ModelSpec { hidden: a.hidden.clone(), m: a.m, ..Default::default() };
    spec.validate().map_err(runtime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let tracks: Vec<ReplayTrack> = match (&a.corpus, a.synthetic) {
        (Some(path), _) => load_tracks(path).map_err(runtime)?,
        (None, Some(n)) => synthetic_tracks(n, 10.0, spec.dt, 0.02, &mut rng),
        (None, None) => unreachable!("clap requires one source"),
    };
    if !(a.train_fraction > 0.0 && a.train_fraction <= 1.0) {
        return Err(HarnessError::Runtime("train fraction must be in (0, 1]".into()));
    }
    let (train_idx, val_idx) = split_tracks(tracks.len(), a.train_fraction, a.seed);
    let basis = spec.basis().map_err(runtime)?;
    let subset = |idx: &[usize]| -> Vec<_> { idx.iter().map(|&i| tracks[i].points().to_vec()).collect() };
    let build = |idx: &[usize]| build_dataset(&subset(idx), spec.dt, spec.p, spec.horizon, &basis, a.lambda).map_err(runtime);
    let train_set = build(&train_idx)?;
    let val_set = build(&val_idx)?;
    let cfg = TrainConfig { learning_rate: a.lr, batch_size: a.batch, epochs: a.epochs, ..Default::default() };
    let outcome = train(&train_set.pairs, spec, cfg, &mut rng).map_err(runtime)?;
    outcome.model.save(&a.out).map_err(runtime)?;
    if let Some(path) = &a.loss_csv {
        let mut text = String::from("epoch,train_loss\n");
        for (i, l) in outcome.losses.iter().enumerate() {
            text.push_str(&format!("{},{}\n", i + 1, l));
        }
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
    }
    eprintln!(
        "trained on {} pairs from {} tracks ({} too short); final loss {:.4}",
        train_set.pairs.len(),
        train_idx.len(),
        train_set.skipped,
        outcome.losses.last().copied().unwrap_or(f64::NAN)
    );
    if !val_set.pairs.is_empty() {
        let (val_loss, _) = loss_and_gradient(&outcome.model, &val_set.pairs);
        let (model_err, still_err) = horizon_errors(&outcome.model, &val_set.pairs);
        eprintln!(
            "held out: {} pairs, loss {val_loss:.4}, horizon error {model_err:.3} m (stand-still {still_err:.3} m)",
            val_set.pairs.len()
        );
    }
    Ok(())
}

fn parse_window(text: &str) -> Result<ObservationWindow, HarnessError> {
    let points = text
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let mut it = pair.split(',').map(|v| v.trim().parse::<f64>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) if x.is_finite() && y.is_finite() => Ok(Vec2::new(x, y)),
                _ => Err(HarnessError::Runtime(format!("bad window point {pair:?}; expected x,y"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ObservationWindow::new(points))
}

fn cmd_predict(a: PredictArgs) -> Result<(), HarnessError> {
    let model = PredictorModel::load(&a.model).map_err(|e| HarnessError::Runtime(format!("{}: {e}", a.model.display())))?;
    let window = parse_window(&a.window)?;
    let pred = model.predict(&window).map_err(runtime)?;
    let spec = model.spec();
    let steps = (spec.horizon / spec.dt).round() as usize;
    let times: Vec<f64> = (1..=steps).map(|k| k as f64 * spec.dt).collect();
    let mut text = String::from("kind,sample,t,x,y,cov_xx,cov_xy,cov_yy\n");
    for &t in &times {
        let (m, c) = pred.moments(t);
        text.push_str(&format!("mean,,{t},{},{},{},{},{}\n", m.x, m.y, c[(0, 0)], c[(0, 1)], c[(1, 1)]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for s in 0..a.samples {
        let w = pred.params().sample_weights(&mut rng);
        for &t in &times {
            let p = w.evaluate(pred.basis(), t).map_err(runtime)? + pred.anchor();
            text.push_str(&format!("sample,{s},{t},{},{},,,\n", p.x, p.y));
        }
    }
    emit(a.out.as_deref(), &text)
}

fn run_scenarios(r: RunArgs, controller: Option<Controller>) -> Result<(), HarnessError> {
    let model = match &r.model {
        Some(p) => Some(PredictorModel::load(p).map_err(|e| HarnessError::Runtime(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let many = r.scenario.len() > 1;
    let run_one = |path: &PathBuf| -> Result<String, HarnessError> {
        let mut sc = Scenario::from_file(path)?;
        if let Some(seed) = r.seed {
            sc.seed = seed;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let loaded = sc.load(base)?;
        let log = simulate(&loaded, controller, model.as_ref())?;
        let dir = if many {
            r.out.join(path.file_stem().unwrap_or_default())
        } else {
            r.out.clone()
        };
        let m = write_outputs(&log, &dir, r.plot)?;
        let ttg = m.ttg_s.map_or("timeout".to_string(), |t| format!("{t} s"));
        Ok(format!(
            "{}: ttg {ttg}, doc {} s, mean iteration {:.1} ms, max {:.1} ms -> {}",
            path.display(),
            m.doc_s,
            m.mean_iter_ms,
            m.max_iter_ms,
            dir.display()
        ))
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(r.jobs.max(1)).build().map_err(runtime)?;
    let results: Vec<_> = pool.install(|| r.scenario.par_iter().map(run_one).collect());
    let mut first_err = None;
    for res in results {
        match res {
            Ok(line) => eprintln!("{line}"),
            Err(e) => {
                eprintln!("error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn cmd_evaluate(a: EvalArgs) -> Result<(), HarnessError> {
    let text = std::fs::read_to_string(&a.log).map_err(|e| HarnessError::io(&a.log, e))?;
    let log = EpisodeLog::parse(&text)?;
    emit(a.out.as_deref(), &log.metrics().to_json())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Simulate(a) => run_scenarios(a.run, None),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Baseline(a) => {
            let BaselineKind::Reactive = a.controller;
            run_scenarios(a.run, Some(Controller::Reactive))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
