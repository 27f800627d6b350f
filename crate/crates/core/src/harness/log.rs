//! Episode logs and the metrics derived from them.
//!
//! A log is `#`-prefixed `key: value` header lines followed by a CSV body with
//! one robot row and one row per visible pedestrian for every step:
//!
//! ```text
//! # span-episode-log: 1
//! # controller: span
//! # seed: 7
//! ...
//! # timing_ms: 12.5 11.0 ...
//! step,t,agent,x,y,theta,v,omega,map_hit,collision
//! 0,0,robot,0,0,0,1,0.25,0,0
//! 0,0,ped-a,4,-3,,,,,
//! ```
//!
//! Floats are written in shortest round-trip form, so every value reads back
//! exactly. `timing_ms` is the only line that varies between identical runs.

use std::fmt::Write as _;

use serde::Serialize;

use super::HarnessError;
use crate::control::episode::{AgentPosition, Episode, StepRecord};
use crate::control::{Control, RobotState};
use crate::Vec2;

pub const LOG_VERSION: u32 = 1;
const HEADER: [&str; 10] = ["step", "t", "agent", "x", "y", "theta", "v", "omega", "map_hit", "collision"];

#[derive(Debug, Clone, PartialEq)]
pub struct LogMeta {
    pub controller: String,
    pub scenario: String,
    pub seed: u64,
    pub scenario_hash: String,
    pub dt: f64,
    pub goal: Vec2,
    pub goal_tolerance: f64,
    pub r_robot: f64,
    pub r_ped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub meta: LogMeta,
    pub records: Vec<StepRecord>,
    pub iter_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Absent when the goal was never reached.
    pub ttg_s: Option<f64>,
    pub doc_s: f64,
    pub reached: bool,
    pub mean_iter_ms: f64,
    pub max_iter_ms: f64,
    pub seed: u64,
    pub scenario_hash: String,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialise");
        s.push('\n');
        s
    }
}

/// Multiples of `Δt` rounded to 1e-9 s, so three steps of 0.1 s read as 0.3.
fn steps_to_seconds(n: usize, dt: f64) -> f64 {
    (n as f64 * dt * 1e9).round() / 1e9
}

/// Ground-truth collision: a pedestrian centre closer than `r_sum`, or the map check.
pub fn ground_truth_collision(robot: Vec2, pedestrians: &[AgentPosition], map_hit: bool, r_sum: f64) -> bool {
    map_hit || pedestrians.iter().any(|a| (a.position - robot).norm() < r_sum)
}

impl EpisodeLog {
    pub fn new(meta: LogMeta, episode: Episode) -> Self {
        // Millisecond timings are kept to 1 µs so they survive the text form exactly.
        let iter_ms = episode.iter_ms.iter().map(|v| (v * 1e3).round() / 1e3).collect();
        Self { meta, records: episode.records, iter_ms }
    }

    pub fn metrics(&self) -> Metrics {
        let m = &self.meta;
        let ttg = self
            .records
            .iter()
            .find(|r| (r.state.position() - m.goal).norm() <= m.goal_tolerance)
            .map(|r| steps_to_seconds(r.step, m.dt));
        let colliding = self.records.iter().filter(|r| r.collision).count();
        let (mean, max) = if self.iter_ms.is_empty() {
            (0.0, 0.0)
        } else {
            let sum: f64 = self.iter_ms.iter().sum();
            (sum / self.iter_ms.len() as f64, self.iter_ms.iter().copied().fold(0.0, f64::max))
        };
        Metrics {
            ttg_s: ttg,
            doc_s: steps_to_seconds(colliding, m.dt),
            reached: ttg.is_some(),
            mean_iter_ms: mean,
            max_iter_ms: max,
            seed: m.seed,
            scenario_hash: m.scenario_hash.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "# {k}: {v}").expect("string write");
        line("span-episode-log", LOG_VERSION.to_string());
        line("controller", m.controller.clone());
        line("scenario", m.scenario.clone());
        line("seed", m.seed.to_string());
        line("scenario_hash", m.scenario_hash.clone());
        line("dt", m.dt.to_string());
        line("goal", format!("{} {}", m.goal.x, m.goal.y));
        line("goal_tolerance", m.goal_tolerance.to_string());
        line("r_robot", m.r_robot.to_string());
        line("r_ped", m.r_ped.to_string());
        line("timing_ms", self.iter_ms.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));

        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        for r in &self.records {
            let t = steps_to_seconds(r.step, m.dt).to_string();
            let s = r.state;
            w.write_record([
                r.step.to_string(),
                t.clone(),
                "robot".into(),
                s.x.to_string(),
                s.y.to_string(),
                s.theta.to_string(),
                r.control.v.to_string(),
                r.control.omega.to_string(),
                flag(r.map_hit),
                flag(r.collision),
            ])
            .expect("in-memory write");
            for a in &r.pedestrians {
                let (x, y) = (a.position.x.to_string(), a.position.y.to_string());
                let row = [r.step.to_string(), t.clone(), a.id.clone(), x, y];
                w.write_record(row.iter().map(String::as_str).chain([""; 5])).expect("in-memory write");
            }
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    /// Parses a log and checks that every collision flag matches the geometry.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let err = |m: String| HarnessError::Log(m);
        let mut header = std::collections::BTreeMap::new();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.strip_prefix('#') else { break };
            body_start += line.len();
            let (k, v) = rest.split_once(':').ok_or_else(|| err(format!("bad header line {line:?}")))?;
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| header.get(k).ok_or_else(|| err(format!("missing header {k}")));
        let num = |k: &str| -> Result<f64, HarnessError> {
            get(k)?.parse::<f64>().map_err(|e| err(format!("header {k}: {e}")))
        };
        if get("span-episode-log")? != &LOG_VERSION.to_string() {
            return Err(err("unsupported log version".into()));
        }
        let goal: Vec<f64> = get("goal")?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| err(format!("header goal: {e}"))))
            .collect::<Result<_, _>>()?;
        if goal.len() != 2 {
            return Err(err("header goal needs two numbers".into()));
        }
        let meta = LogMeta {
            controller: get("controller")?.clone(),
            scenario: get("scenario")?.clone(),
            seed: get("seed")?.parse().map_err(|e| err(format!("header seed: {e}")))?,
            scenario_hash: get("scenario_hash")?.clone(),
            dt: num("dt")?,
            goal: Vec2::new(goal[0], goal[1]),
            goal_tolerance: num("goal_tolerance")?,
            r_robot: num("r_robot")?,
            r_ped: num("r_ped")?,
        };
        if !(meta.dt > 0.0) {
            return Err(err("dt must be positive".into()));
        }
        let iter_ms = get("timing_ms")?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| err(format!("timing_ms: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;

        let mut rdr = csv::ReaderBuilder::new().from_reader(text[body_start..].as_bytes());
        let cols = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        if cols.iter().ne(HEADER) {
            return Err(err(format!("unexpected columns {cols:?}")));
        }
        let mut records: Vec<StepRecord> = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| err(e.to_string()))?;
            let line = i + 2;
            let f = |j: usize| -> Result<f64, HarnessError> {
                row[j].parse::<f64>().map_err(|e| err(format!("row {line}, column {}: {e}", HEADER[j])))
            };
            let b = |j: usize| match &row[j] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(err(format!("row {line}: flag {other:?}"))),
            };
            let step: usize = row[0].parse().map_err(|e| err(format!("row {line}, step: {e}")))?;
            if row[2] == *"robot" {
                if step != records.len() {
                    return Err(err(format!("row {line}: expected step {}", records.len())));
                }
                records.push(StepRecord {
                    step,
                    state: RobotState { x: f(3)?, y: f(4)?, theta: f(5)? },
                    control: Control { v: f(6)?, omega: f(7)? },
                    pedestrians: Vec::new(),
                    map_hit: b(8)?,
                    collision: b(9)?,
                });
            } else {
                let rec = records
                    .last_mut()
                    .filter(|r| r.step == step)
                    .ok_or_else(|| err(format!("row {line}: pedestrian before its robot row")))?;
                rec.pedestrians.push(AgentPosition { id: row[2].to_string(), position: Vec2::new(f(3)?, f(4)?) });
            }
        }
        let r_sum = meta.r_robot + meta.r_ped;
        for r in &records {
            if ground_truth_collision(r.state.position(), &r.pedestrians, r.map_hit, r_sum) != r.collision {
                return Err(err(format!("step {}: collision flag disagrees with logged positions", r.step)));
            }
        }
        Ok(Self { meta, records, iter_ms })
    }
}

/// Robot and pedestrian paths plus distance to goal, one tidy row per sample.
pub fn plot_data(log: &EpisodeLog) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "t", "agent", "x", "y", "value"]).expect("in-memory write");
    for r in &log.records {
        let t = steps_to_seconds(r.step, log.meta.dt).to_string();
        let p = r.state.position();
        w.write_record(["path", &t, "robot", &p.x.to_string(), &p.y.to_string(), ""]).expect("in-memory write");
        for a in &r.pedestrians {
            w.write_record(["path", &t, &a.id, &a.position.x.to_string(), &a.position.y.to_string(), ""])
                .expect("in-memory write");
        }
        let d = (p - log.meta.goal).norm().to_string();
        w.write_record(["goal_distance", &t, "robot", "", "", &d]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
