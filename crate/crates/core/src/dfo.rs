//! Derivative-free constrained minimisation by linear approximations.
//!
//! A COBYLA-style trust-region method: the objective and every constraint
//! `cᵢ(x) ≥ 0` are interpolated linearly on a simplex of `n + 1` points. Each
//! iteration minimises the linear objective model inside a ball of radius `ρ`,
//! subject to the linearised constraints (relaxed by the smallest uniform
//! amount that makes them satisfiable inside the ball). Steps are judged with
//! the merit function `f + μ·max(0, −minᵢ cᵢ)`. The radius shrinks from
//! `rho_begin` to `rho_end`, and simplex geometry is repaired whenever a vertex
//! drifts too far or flattens the simplex.
//!
//! The trust-region subproblem is solved exactly by enumerating active sets,
//! which is cheap for the handful of variables and constraints this crate uses
//! (two controls, four bounds) but grows combinatorially with dimension.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

// Simplex acceptability: every vertex at least ALPHA·ρ from the opposite face
// and at most BETA·ρ from the pivot.
const ALPHA: f64 = 0.25;
const BETA: f64 = 2.1;
// Geometry-repair step length as a fraction of ρ.
const GAMMA: f64 = 0.5;
/// Constraint violation below which a point counts as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rho_begin: f64,
    pub rho_end: f64,
    pub max_evals: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho_begin: 0.25,
            rho_end: 1e-3,
            max_evals: 100,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n: usize) -> Result<(), String> {
        if !(self.rho_end > 0.0 && self.rho_end <= self.rho_begin && self.rho_begin.is_finite()) {
            return Err(format!(
                "need 0 < rho_end ≤ rho_begin, got {} and {}",
                self.rho_end, self.rho_begin
            ));
        }
        if self.max_evals < n + 2 {
            return Err(format!("max_evals must be at least n + 2 = {}", n + 2));
        }
        Ok(())
    }
}

type Func<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// Objective, inequality constraints `c(x) ≥ 0` and a starting point.
pub struct OptProblem<'a> {
    objective: Func<'a>,
    constraints: Vec<Func<'a>>,
    x0: Vec<f64>,
}

impl<'a> OptProblem<'a> {
    pub fn new(x0: Vec<f64>, objective: impl Fn(&[f64]) -> f64 + Sync + 'a) -> Self {
        assert!(!x0.is_empty(), "problem needs at least one variable");
        Self {
            objective: Box::new(objective),
            constraints: Vec::new(),
            x0,
        }
    }

    pub fn constraint(mut self, c: impl Fn(&[f64]) -> f64 + Sync + 'a) -> Self {
        self.constraints.push(Box::new(c));
        self
    }

    /// Adds `lower ≤ x ≤ upper` as `2n` one-sided constraints.
    pub fn with_box(mut self, lower: &[f64], upper: &[f64]) -> Self {
        assert_eq!(lower.len(), self.x0.len());
        assert_eq!(upper.len(), self.x0.len());
        for i in 0..self.x0.len() {
            let (lo, hi) = (lower[i], upper[i]);
            self = self.constraint(move |x: &[f64]| x[i] - lo);
            self = self.constraint(move |x: &[f64]| hi - x[i]);
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// The trust radius reached `rho_end`.
    Converged,
    /// `max_evals` objective evaluations were used.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    /// Largest constraint violation at `x`.
    pub violation: f64,
    pub feasible: bool,
    pub status: Status,
    /// Best feasible objective after each evaluation (`+∞` until one is found).
    pub best_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Vertex {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    viol: f64,
}

impl Vertex {
    fn merit(&self, mu: f64) -> f64 {
        self.f + mu * self.viol
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

struct Tracker<'p, 'a> {
    problem: &'p OptProblem<'a>,
    evals: usize,
    best_feasible: Option<Vertex>,
    least_infeasible: Option<Vertex>,
    trace: Vec<f64>,
}

impl Tracker<'_, '_> {
    fn eval(&mut self, x: Vec<f64>) -> Vertex {
        let f = (self.problem.objective)(&x);
        // A non-finite objective is treated as a very poor but comparable value.
        let f = if f.is_nan() {
            f64::MAX
        } else {
            f.min(f64::MAX)
        };
        let c: Vec<f64> = self.problem.constraints.iter().map(|c| c(&x)).collect();
        let viol = c.iter().fold(0.0f64, |m, &v| m.max(-v));
        let v = Vertex { x, f, c, viol };
        self.evals += 1;
        if v.viol <= FEASIBILITY_TOL {
            let better = match &self.best_feasible {
                None => true,
                Some(b) => v.f < b.f || (v.f == b.f && lex_less(&v.x, &b.x)),
            };
            if better {
                self.best_feasible = Some(v.clone());
            }
        } else {
            let better = match &self.least_infeasible {
                None => true,
                Some(b) => v.viol < b.viol || (v.viol == b.viol && v.f < b.f),
            };
            if better {
                self.least_infeasible = Some(v.clone());
            }
        }
        self.trace
            .push(self.best_feasible.as_ref().map_or(f64::INFINITY, |b| b.f));
        v
    }
}

/// Minimises `problem` from its starting point. Deterministic; never panics on
/// non-smooth or non-finite objectives.
pub fn minimize(problem: &OptProblem<'_>, cfg: &SolverConfig) -> Minimum {
    let n = problem.dim();
    let mut tracker = Tracker {
        problem,
        evals: 0,
        best_feasible: None,
        least_infeasible: None,
        trace: Vec::new(),
    };
    let mut rho = cfg.rho_begin;
    let mut mu = 1.0;
    let budget = cfg.max_evals.max(n + 2);

    let mut sim: Vec<Vertex> = Vec::with_capacity(n + 1);
    sim.push(tracker.eval(problem.x0.clone()));
    for i in 0..n {
        let mut x = problem.x0.clone();
        x[i] += rho;
        sim.push(tracker.eval(x));
    }

    let status = loop {
        if tracker.evals >= budget {
            break Status::BudgetExhausted;
        }
        select_pivot(&mut sim, mu);

        let Some(inv) = simplex_inverse(&sim) else {
            // Degenerate simplex: rebuild around the pivot.
            let base = sim[0].x.clone();
            for i in 0..n {
                let mut x = base.clone();
                x[i] += rho;
                sim[i + 1] = tracker.eval(x);
                if tracker.evals >= budget {
                    break;
                }
            }
            continue;
        };

        // Linear models: gradient of objective and of each constraint.
        let df = DVector::from_iterator(n, sim[1..].iter().map(|v| v.f - sim[0].f));
        let grad_f = inv.clone() * df;
        let mc = problem.constraints.len();
        let mut grad_c = DMatrix::zeros(mc, n);
        for k in 0..mc {
            let dc = DVector::from_iterator(n, sim[1..].iter().map(|v| v.c[k] - sim[0].c[k]));
            grad_c.row_mut(k).copy_from(&(inv.clone() * dc).transpose());
        }

        if let Some(j) = unacceptable_vertex(&sim, &inv, rho) {
            // Move vertex j to the far side of the opposite face, at distance γρ.
            let w = inv.column(j - 1).into_owned();
            let dir = &w / w.norm();
            let slope = grad_f.dot(&dir)
                + mu * (0..mc)
                    .map(|k| -grad_c.row(k).transpose().dot(&dir))
                    .fold(f64::NEG_INFINITY, f64::max)
                    .max(0.0);
            let sign = if slope > 0.0 { -1.0 } else { 1.0 };
            let x: Vec<f64> = sim[0]
                .x
                .iter()
                .zip(dir.iter())
                .map(|(a, d)| a + sign * GAMMA * rho * d)
                .collect();
            sim[j] = tracker.eval(x);
            continue;
        }

        let c0 = DVector::from_column_slice(&sim[0].c);
        let step = trust_region_step(&grad_f, &c0, &grad_c, rho);
        let step_norm = step.norm();

        if step_norm < 0.5 * rho {
            if rho <= cfg.rho_end {
                break Status::Converged;
            }
            rho = shrink(rho, cfg.rho_end);
            continue;
        }

        // Predicted changes of the linear models.
        let pred_df = grad_f.dot(&step);
        let lin_c = &c0 + &grad_c * &step;
        let pred_viol = lin_c.iter().fold(0.0f64, |m, &v| m.max(-v));
        let viol_drop = sim[0].viol - pred_viol;
        if pred_df > 0.0 && viol_drop > 0.0 {
            let needed = pred_df / viol_drop;
            if mu < 1.5 * needed {
                mu = 2.0 * needed;
                let before = sim[0].x.clone();
                select_pivot(&mut sim, mu);
                if sim[0].x != before {
                    continue;
                }
            }
        }
        let predicted = -(pred_df - mu * viol_drop);

        let x_new: Vec<f64> = sim[0]
            .x
            .iter()
            .zip(step.iter())
            .map(|(a, s)| a + s)
            .collect();
        let trial = tracker.eval(x_new);
        let actual = sim[0].merit(mu) - trial.merit(mu);
        let ratio = if predicted > 0.0 {
            actual / predicted
        } else {
            -1.0
        };

        // Which vertex to drop: the one whose replacement best preserves volume.
        let coords = inv.transpose() * &step;
        let improved = trial.merit(mu) < sim[0].merit(mu);
        let mut choice: Option<(usize, f64)> = None;
        for j in 1..=n {
            let mut score = coords[j - 1].abs();
            if !improved {
                let dist = vec_dist(&sim[j].x, &sim[0].x);
                score *= (dist / rho).max(1.0);
            }
            if choice.map_or(true, |(_, s)| score > s) {
                choice = Some((j, score));
            }
        }
        if let Some((j, score)) = choice {
            if improved || score > 1.0 {
                sim[j] = trial;
            }
        }

        if ratio < 0.1 && !improved {
            select_pivot(&mut sim, mu);
            let still_ok = simplex_inverse(&sim)
                .map_or(false, |inv| unacceptable_vertex(&sim, &inv, rho).is_none());
            if still_ok {
                if rho <= cfg.rho_end {
                    break Status::Converged;
                }
                rho = shrink(rho, cfg.rho_end);
            }
        }
    };

    let best = tracker
        .best_feasible
        .clone()
        .or_else(|| tracker.least_infeasible.clone())
        .expect("at least one evaluation");
    Minimum {
        feasible: best.viol <= FEASIBILITY_TOL,
        x: best.x,
        f: best.f,
        violation: best.viol,
        evals: tracker.evals,
        status,
        best_trace: tracker.trace,
    }
}

fn shrink(rho: f64, rho_end: f64) -> f64 {
    let next = 0.5 * rho;
    if next <= 1.5 * rho_end {
        rho_end
    } else {
        next
    }
}

fn vec_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Moves the vertex with the lowest merit to position 0; ties go to the
/// lexicographically smaller point.
fn select_pivot(sim: &mut [Vertex], mu: f64) {
    let mut best = 0;
    for j in 1..sim.len() {
        let (a, b) = (sim[j].merit(mu), sim[best].merit(mu));
        if a < b || (a == b && lex_less(&sim[j].x, &sim[best].x)) {
            best = j;
        }
    }
    sim.swap(0, best);
}

/// Inverse of the matrix whose rows are `xⱼ − x₀`. Column `j − 1` of the
/// inverse is normal to the face opposite vertex `j`.
fn simplex_inverse(sim: &[Vertex]) -> Option<DMatrix<f64>> {
    let n = sim.len() - 1;
    let d = DMatrix::from_fn(n, n, |r, c| sim[r + 1].x[c] - sim[0].x[c]);
    let inv = d.try_inverse()?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

fn unacceptable_vertex(sim: &[Vertex], inv: &DMatrix<f64>, rho: f64) -> Option<usize> {
    let n = sim.len() - 1;
    let mut far: Option<(usize, f64)> = None;
    for j in 1..=n {
        let dist = vec_dist(&sim[j].x, &sim[0].x);
        if dist > BETA * rho && far.map_or(true, |(_, d)| dist > d) {
            far = Some((j, dist));
        }
    }
    if let Some((j, _)) = far {
        return Some(j);
    }
    let mut flat: Option<(usize, f64)> = None;
    for j in 1..=n {
        let sigma = 1.0 / inv.column(j - 1).norm();
        if sigma < ALPHA * rho && flat.map_or(true, |(_, s)| sigma < s) {
            flat = Some((j, sigma));
        }
    }
    flat.map(|(j, _)| j)
}

/// Minimiser of `gᵀs` over `‖s‖ ≤ ρ` and `c + A s ≥ −t`, where `t ≥ 0` is the
/// smallest relaxation for which that set is non-empty.
pub(crate) fn trust_region_step(
    g: &DVector<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    rho: f64,
) -> DVector<f64> {
    let n = g.len();
    let rows: Vec<DVector<f64>> = (0..a.nrows()).map(|k| a.row(k).transpose()).collect();
    // Constraints in the form rowₖ · s ≥ bₖ − t with bₖ = −cₖ.
    let base: Vec<f64> = c.iter().map(|v| -v).collect();

    let relaxed = |t: f64| -> Vec<f64> { base.iter().map(|b| b - t).collect() };
    let feasible_at = |t: f64| min_norm_point(&rows, &relaxed(t), n).filter(|s| s.norm() <= rho);

    let t = if feasible_at(0.0).is_some() {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = base.iter().fold(0.0f64, |m, &b| m.max(b));
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if feasible_at(mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + hi) {
                break;
            }
        }
        hi
    };
    let bounds = relaxed(t);
    best_linear_in_ball(g, &rows, &bounds, rho)
        .or_else(|| min_norm_point(&rows, &bounds, n))
        .unwrap_or_else(|| DVector::zeros(n))
}

fn satisfies(rows: &[DVector<f64>], b: &[f64], s: &DVector<f64>) -> bool {
    rows.iter()
        .zip(b)
        .all(|(r, &bk)| r.dot(s) >= bk - 1e-11 * (1.0 + bk.abs() + r.norm() * s.norm()))
}

/// Calls `visit` with every subset of `0..m` of size at most `max_size`.
fn for_each_subset(m: usize, max_size: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(
        start: usize,
        m: usize,
        max_size: usize,
        cur: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        visit(cur);
        if cur.len() == max_size {
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, max_size, cur, visit);
            cur.pop();
        }
    }
    rec(0, m, max_size, &mut Vec::new(), &mut visit);
}

/// For active rows `S`, returns `(s₀, P)` with `s₀` the minimum-norm solution of
/// `Sᵀ s = b_S` and `P` the projector onto the null space of the active rows.
fn affine_piece(
    rows: &[DVector<f64>],
    b: &[f64],
    active: &[usize],
    n: usize,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    if active.is_empty() {
        return Some((DVector::zeros(n), DMatrix::identity(n, n)));
    }
    let k = active.len();
    let bs = DMatrix::from_fn(k, n, |r, c| rows[active[r]][c]);
    let gram = &bs * bs.transpose();
    let gram_inv = gram.clone().try_inverse()?;
    // reject nearly dependent active rows
    let cond = gram.norm() * gram_inv.norm();
    if !cond.is_finite() || cond > 1e12 {
        return None;
    }
    let rhs = DVector::from_iterator(k, active.iter().map(|&i| b[i]));
    let s0 = bs.transpose() * (&gram_inv * rhs);
    let proj = DMatrix::identity(n, n) - bs.transpose() * gram_inv * bs;
    Some((s0, proj))
}

fn min_norm_point(rows: &[DVector<f64>], b: &[f64], n: usize) -> Option<DVector<f64>> {
    let mut best: Option<DVector<f64>> = None;
    for_each_subset(rows.len(), n, |active| {
        if let Some((s0, _)) = affine_piece(rows, b, active, n) {
            if satisfies(rows, b, &s0) && best.as_ref().map_or(true, |cur| s0.norm() < cur.norm()) {
                best = Some(s0);
            }
        }
    });
    best
}

fn best_linear_in_ball(
    g: &DVector<f64>,
    rows: &[DVector<f64>],
    b: &[f64],
    rho: f64,
) -> Option<DVector<f64>> {
    let n = g.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for_each_subset(rows.len(), n, |active| {
        let Some((s0, proj)) = affine_piece(rows, b, active, n) else {
            return;
        };
        let r2 = rho * rho - s0.norm_squared();
        if r2 < -1e-12 * rho * rho {
            return;
        }
        let pg = &proj * g;
        let s = if pg.norm() > 1e-14 * (1.0 + g.norm()) {
            &s0 - pg.normalize() * r2.max(0.0).sqrt()
        } else {
            s0
        };
        if s.norm() > rho * (1.0 + 1e-10) || !satisfies(rows, b, &s) {
            return;
        }
        let val = g.dot(&s);
        if best
            .as_ref()
            .map_or(true, |(v, _)| val < *v - 1e-15 * (1.0 + v.abs()))
        {
            best = Some((val, s));
        }
    });
    best.map(|(_, s)| s)
}
