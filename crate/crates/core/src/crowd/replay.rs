//! Recorded pedestrian tracks and the CSV corpus format `t,agent_id,x,y`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::predictor::ObservationWindow;
use crate::trajectory::TimedPoint;
use crate::Vec2;

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("track {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("{0}: no tracks found")]
    Empty(String),
}

/// A recorded pedestrian with strictly increasing, finite timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrack {
    id: String,
    points: Vec<TimedPoint>,
}

impl ReplayTrack {
    pub fn new(id: impl Into<String>, points: Vec<TimedPoint>) -> Result<Self, TrackError> {
        let id = id.into();
        let invalid = |reason: &str| TrackError::Invalid { id: id.clone(), reason: reason.into() };
        if points.is_empty() {
            return Err(invalid("no points"));
        }
        if points.iter().any(|q| !(q.t.is_finite() && q.p.x.is_finite() && q.p.y.is_finite())) {
            return Err(invalid("non-finite value"));
        }
        if points.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(invalid("timestamps not strictly increasing"));
        }
        Ok(Self { id, points })
    }

    /// A track moving at constant velocity from `start` over `[t0, t1]`,
    /// sampled every `dt`.
    pub fn constant_velocity(id: impl Into<String>, start: Vec2, velocity: Vec2, t0: f64, t1: f64, dt: f64) -> Result<Self, TrackError> {
        let n = ((t1 - t0) / dt).round().max(1.0) as usize;
        let points = (0..=n)
            .map(|i| {
                let t = t0 + i as f64 * dt;
                let p = start + velocity * (t - t0);
                TimedPoint::new(t, p.x, p.y)
            })
            .collect();
        Self::new(id, points)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[TimedPoint] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0].t
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1].t
    }

    pub fn is_active(&self, t: f64) -> bool {
        (self.start()..=self.end()).contains(&t)
    }

    /// The same track with every timestamp moved by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        let points = self.points.iter().map(|q| TimedPoint { t: q.t + offset, p: q.p }).collect();
        Self { id: self.id.clone(), points }
    }

    /// Linear interpolation, held at the first or last point outside the track.
    pub fn position_at(&self, t: f64) -> Vec2 {
        let pts = &self.points;
        if t <= pts[0].t {
            return pts[0].p;
        }
        if t >= pts[pts.len() - 1].t {
            return pts[pts.len() - 1].p;
        }
        let i = pts.partition_point(|q| q.t <= t);
        let (a, b) = (&pts[i - 1], &pts[i]);
        if t == a.t {
            return a.p;
        }
        let s = (t - a.t) / (b.t - a.t);
        a.p + (b.p - a.p) * s
    }
}

/// An active recorded pedestrian as seen at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleAgent {
    /// Index into the queried track list.
    pub track: usize,
    pub position: Vec2,
    /// `p` positions ending at the query time, spaced `dt`, oldest first.
    pub window: ObservationWindow,
}

/// Windows and positions of every track active at `t`. Window times before a
/// track's start repeat its first point.
pub fn replay_positions(tracks: &[ReplayTrack], t: f64, dt: f64, p: usize) -> Vec<VisibleAgent> {
    tracks
        .iter()
        .enumerate()
        .filter(|(_, tr)| tr.is_active(t))
        .map(|(i, tr)| {
            let points = (0..p).map(|j| tr.position_at(t - (p - 1 - j) as f64 * dt)).collect();
            VisibleAgent { track: i, position: tr.position_at(t), window: ObservationWindow::new(points) }
        })
        .collect()
}

/// Straight walks at constant velocity with Gaussian observation noise: start
/// uniform in `[−5, 5]²`, heading uniform, speed uniform in `[0.5, 1.5]` m/s.
pub fn synthetic_tracks<R: Rng + ?Sized>(count: usize, duration: f64, dt: f64, noise: f64, rng: &mut R) -> Vec<ReplayTrack> {
    let n = (duration / dt).round() as usize;
    (0..count)
        .map(|i| {
            let start = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let heading: f64 = rng.random_range(-PI..PI);
            let velocity = Vec2::new(heading.cos(), heading.sin()) * rng.random_range(0.5..1.5);
            let points = (0..=n)
                .map(|k| {
                    let t = k as f64 * dt;
                    let p = start + velocity * t;
                    let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    TimedPoint::new(t, p.x + noise * e[0], p.y + noise * e[1])
                })
                .collect();
            ReplayTrack::new(format!("syn{i}"), points).expect("increasing timestamps")
        })
        .collect()
}

/// Writes tracks in the corpus CSV format.
pub fn write_tracks<W: std::io::Write>(tracks: &[ReplayTrack], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "agent_id", "x", "y"])?;
    for tr in tracks {
        for q in tr.points() {
            w.write_record([q.t.to_string(), tr.id().to_string(), q.p.x.to_string(), q.p.y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct Row {
    t: f64,
    agent_id: String,
    x: f64,
    y: f64,
}

/// Parses one CSV document. Rows may be in any order; tracks come out sorted
/// by id, each sorted by time, with ids prefixed by `prefix` when given.
pub fn parse_tracks<R: Read>(reader: R, source: &str, prefix: Option<&str>) -> Result<Vec<ReplayTrack>, TrackError> {
    let mut by_id: BTreeMap<String, Vec<TimedPoint>> = BTreeMap::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|source_err| TrackError::Csv { path: source.to_string(), source: source_err })?;
        let id = match prefix {
            Some(pre) => format!("{pre}/{}", row.agent_id),
            None => row.agent_id,
        };
        by_id.entry(id).or_default().push(TimedPoint::new(row.t, row.x, row.y));
    }
    by_id
        .into_iter()
        .map(|(id, mut pts)| {
            pts.sort_by(|a, b| a.t.total_cmp(&b.t));
            ReplayTrack::new(id, pts)
        })
        .collect()
}

/// Loads a CSV file, or every `*.csv` in a directory in file-name order with
/// ids prefixed by the file stem.
pub fn load_tracks(path: &Path) -> Result<Vec<ReplayTrack>, TrackError> {
    let display = path.display().to_string();
    let io = |e| TrackError::Io { path: display.clone(), source: e };
    let tracks = if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        let mut all = Vec::new();
        for f in files {
            let name = f.display().to_string();
            let file = std::fs::File::open(&f).map_err(|e| TrackError::Io { path: name.clone(), source: e })?;
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("track");
            all.extend(parse_tracks(file, &name, Some(stem))?);
        }
        all
    } else {
        parse_tracks(std::fs::File::open(path).map_err(io)?, &display, None)?
    };
    if tracks.is_empty() {
        return Err(TrackError::Empty(display));
    }
    Ok(tracks)
}
