use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ObservationWindow, PredictorError, Result, TrainingPair};
use crate::trajectory::{fit_weights, BasisSpec, TimedPoint};
use crate::Vec2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<TrainingPair>,
    /// Tracks too short to yield a single pair.
    pub skipped: usize,
}

/// Positions at `t₀, t₀ + Δt, …` up to the last timestamp, by linear interpolation.
pub fn resample_track(track: &[TimedPoint], dt: f64) -> Vec<Vec2> {
    let Some(first) = track.first() else {
        return Vec::new();
    };
    let last = track.last().expect("non-empty").t;
    let n = ((last - first.t) / dt + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let t = first.t + k as f64 * dt;
        while seg + 1 < track.len() - 1 && track[seg + 1].t < t {
            seg += 1;
        }
        if track.len() == 1 {
            out.push(first.p);
            continue;
        }
        let (a, b) = (&track[seg], &track[seg + 1]);
        let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        out.push(a.p + (b.p - a.p) * s);
    }
    out
}

/// Sliding windows over each track at stride `Δt`. A track of `n` resampled
/// points yields `n − p − round(T/Δt) + 1` pairs; each target is fitted to
/// the `round(T/Δt) + 1` points from the window's last observation onward.
pub fn build_dataset(
    tracks: &[Vec<TimedPoint>],
    dt: f64,
    p: usize,
    horizon: f64,
    basis: &BasisSpec,
    lambda: f64,
) -> Result<Dataset> {
    let future = (horizon / dt).round() as usize;
    let mut out = Dataset::default();
    for (index, track) in tracks.iter().enumerate() {
        let ordered = track.windows(2).all(|w| w[1].t > w[0].t);
        if !ordered
            || track
                .iter()
                .any(|q| !q.t.is_finite() || !q.p.x.is_finite() || !q.p.y.is_finite())
        {
            return Err(PredictorError::InvalidTrack { index });
        }
        let pts = resample_track(track, dt);
        if pts.len() < p + future {
            out.skipped += 1;
            continue;
        }
        for end in (p - 1)..=(pts.len() - 1 - future) {
            let anchor = pts[end];
            let window =
                ObservationWindow::new(pts[end + 1 - p..=end].iter().map(|q| q - anchor).collect());
            let fut: Vec<TimedPoint> = (0..=future)
                .map(|k| {
                    let q = pts[end + k] - anchor;
                    TimedPoint::new(k as f64 * dt, q.x, q.y)
                })
                .collect();
            let target = fit_weights(&fut, basis, lambda)?;
            out.pairs.push(TrainingPair { window, target });
        }
    }
    Ok(out)
}

/// Deterministic split of track indices into `fraction` for training and the
/// rest for validation.
pub fn split_tracks(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * fraction).round() as usize;
    let val = idx.split_off(cut.min(n));
    (idx, val)
}
