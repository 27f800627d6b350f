//! Continuous-time stochastic-process trajectories.
//!
//! A 2-D trajectory is written as `o(t) = Wᵀ φ(t)` where `φ(t)` is a vector of
//! `m` squared-exponential basis functions centred on evenly spaced times and
//! `W` is an `m × 2` weight matrix, one column per axis. Placing a
//! matrix-normal distribution on `W` turns the trajectory into a stochastic
//! process whose marginal at any time `t` is a 2-D Gaussian.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::Vec2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Condition number of the regularised normal equations above which the fit
/// switches from Cholesky to an SVD of the augmented design matrix.
const MAX_NORMAL_EQ_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("a basis needs at least one function")]
    EmptyBasis,
    #[error("length-scale coefficient must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("basis centres must be finite, strictly increasing and evenly spaced")]
    InvalidCenters,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("no observations to fit")]
    NoPoints,
    #[error("regularisation must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("least-squares system is singular (numerical rank {rank} < {m})")]
    Singular { rank: usize, m: usize },
    #[error("{0} covariance is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, TrajectoryError>;

/// A squared-exponential basis `φᵢ(t) = exp(−γ (t − cᵢ)²)` over evenly spaced centres.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    centers: Vec<f64>,
    gamma: f64,
}

impl BasisSpec {
    /// `m` centres evenly spaced on `[0, horizon]`. A single centre sits at 0.
    pub fn new(m: usize, horizon: f64, gamma: f64) -> Result<Self> {
        if m == 0 {
            return Err(TrajectoryError::EmptyBasis);
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(TrajectoryError::InvalidCenters);
        }
        let centers = if m == 1 {
            vec![0.0]
        } else {
            let step = horizon / (m - 1) as f64;
            (0..m).map(|i| i as f64 * step).collect()
        };
        Self::with_centers(centers, gamma)
    }

    pub fn with_centers(centers: Vec<f64>, gamma: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(TrajectoryError::EmptyBasis);
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(TrajectoryError::InvalidGamma(gamma));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(TrajectoryError::InvalidCenters);
        }
        if centers.len() > 1 {
            let step = centers[1] - centers[0];
            let tol = 1e-9 * step.abs().max(1.0);
            let even = centers
                .windows(2)
                .all(|w| w[1] - w[0] > 0.0 && ((w[1] - w[0]) - step).abs() <= tol);
            if !even {
                return Err(TrajectoryError::InvalidCenters);
            }
        }
        Ok(Self { centers, gamma })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `φ(t)`; every component lies in `(0, 1]`.
    pub fn basis_vector(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.iter_at(t))
    }

    /// Writes `φ(t)` into `out`, which must have length `m`.
    pub fn fill(&self, t: f64, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.iter_at(t)) {
            *o = v;
        }
    }

    fn iter_at(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        self.centers.iter().map(move |c| {
            let d = t - c;
            (-self.gamma * d * d).exp()
        })
    }

    /// Design matrix with one row `φ(tᵢ)ᵀ` per time.
    pub fn design_matrix(&self, times: &[f64]) -> DMatrix<f64> {
        let m = self.len();
        let mut phi = DMatrix::zeros(times.len(), m);
        for (r, &t) in times.iter().enumerate() {
            for (c, v) in self.iter_at(t).enumerate() {
                phi[(r, c)] = v;
            }
        }
        phi
    }
}

/// A timestamped 2-D observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPoint {
    pub t: f64,
    pub p: Vec2,
}

impl TimedPoint {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self {
            t,
            p: Vector2::new(x, y),
        }
    }
}

/// The `m × 2` weight matrix of a deterministic trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(DMatrix<f64>);

impl WeightMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.ncols() != 2 || w.nrows() == 0 {
            return Err(TrajectoryError::DimensionMismatch {
                expected: "m×2 with m ≥ 1".into(),
                found: format!("{}×{}", w.nrows(), w.ncols()),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(TrajectoryError::NonFinite("weight matrix"));
        }
        Ok(Self(w))
    }

    pub fn zeros(m: usize) -> Self {
        Self(DMatrix::zeros(m, 2))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Position `Wᵀ φ(t)` of the trajectory at time `t`.
    pub fn evaluate(&self, basis: &BasisSpec, t: f64) -> Result<Vec2> {
        check_rows(self.rows(), basis)?;
        Ok(self
            .0
            .tr_mul(&basis.basis_vector(t))
            .fixed_rows::<2>(0)
            .into_owned())
    }
}

fn check_rows(rows: usize, basis: &BasisSpec) -> Result<()> {
    if rows != basis.len() {
        return Err(TrajectoryError::DimensionMismatch {
            expected: format!("{} basis rows", basis.len()),
            found: format!("{rows} rows"),
        });
    }
    Ok(())
}

/// Ridge least-squares fit of a weight matrix to timestamped points.
///
/// Minimises `Σᵢ ‖ôᵢ − Wᵀφ(tᵢ)‖² + λ‖vec W‖²`. Well-conditioned systems are
/// solved by Cholesky on the normal equations; otherwise the augmented system
/// `[Φ; √λ I] W = [Y; 0]` is solved through an SVD, and with `λ = 0` a
/// numerically rank-deficient design is rejected.
pub fn fit_weights(points: &[TimedPoint], basis: &BasisSpec, lambda: f64) -> Result<WeightMatrix> {
    if points.is_empty() {
        return Err(TrajectoryError::NoPoints);
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(TrajectoryError::InvalidLambda(lambda));
    }
    if points
        .iter()
        .any(|p| !(p.t.is_finite() && p.p.x.is_finite() && p.p.y.is_finite()))
    {
        return Err(TrajectoryError::NonFinite("observations"));
    }
    let m = basis.len();
    let times: Vec<f64> = points.iter().map(|p| p.t).collect();
    let phi = basis.design_matrix(&times);
    let y = DMatrix::from_fn(points.len(), 2, |r, c| points[r].p[c]);

    let mut normal = phi.tr_mul(&phi);
    for i in 0..m {
        normal[(i, i)] += lambda;
    }
    let rhs = phi.tr_mul(&y);

    let eig = normal.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e), hi.max(e.abs()))
    });
    if lo > 0.0 && hi / lo <= MAX_NORMAL_EQ_CONDITION {
        if let Some(chol) = normal.cholesky() {
            return WeightMatrix::new(chol.solve(&rhs));
        }
    }

    // Rank-revealing fallback on the augmented design.
    let n = points.len();
    let mut aug = DMatrix::zeros(n + m, m);
    aug.rows_mut(0, n).copy_from(&phi);
    let sqrt_lambda = lambda.sqrt();
    for i in 0..m {
        aug[(n + i, i)] = sqrt_lambda;
    }
    let mut aug_rhs = DMatrix::zeros(n + m, 2);
    aug_rhs.rows_mut(0, n).copy_from(&y);

    let svd = aug.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (n + m) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < m && lambda == 0.0 {
        return Err(TrajectoryError::Singular { rank, m });
    }
    let w = svd
        .solve(&aug_rhs, tol)
        .map_err(|_| TrajectoryError::Singular { rank, m })?;
    WeightMatrix::new(w)
}

/// Matrix-normal distribution `MN(M, U, V)` over `m × 2` weight matrices.
///
/// `U` is the among-row (basis) covariance and `V` the among-column (axis)
/// covariance; `vec W ~ N(vec M, V ⊗ U)`. Lower Cholesky factors of both are
/// cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixNormalParams {
    mean: DMatrix<f64>,
    row_cov: DMatrix<f64>,
    col_cov: Matrix2<f64>,
    row_chol: DMatrix<f64>,
    col_chol: Matrix2<f64>,
}

impl MatrixNormalParams {
    pub fn new(mean: DMatrix<f64>, row_cov: DMatrix<f64>, col_cov: Matrix2<f64>) -> Result<Self> {
        let m = mean.nrows();
        if mean.ncols() != 2 || m == 0 {
            return Err(TrajectoryError::DimensionMismatch {
                expected: "m×2 mean".into(),
                found: format!("{}×{}", m, mean.ncols()),
            });
        }
        if row_cov.shape() != (m, m) {
            return Err(TrajectoryError::DimensionMismatch {
                expected: format!("{m}×{m} row covariance"),
                found: format!("{}×{}", row_cov.nrows(), row_cov.ncols()),
            });
        }
        if mean
            .iter()
            .chain(row_cov.iter())
            .chain(col_cov.iter())
            .any(|v| !v.is_finite())
        {
            return Err(TrajectoryError::NonFinite("matrix-normal parameters"));
        }
        if !is_symmetric(row_cov.as_slice(), m) {
            return Err(TrajectoryError::NotPositiveDefinite("row"));
        }
        if !is_symmetric(col_cov.as_slice(), 2) {
            return Err(TrajectoryError::NotPositiveDefinite("column"));
        }
        let row_chol = row_cov
            .clone()
            .cholesky()
            .ok_or(TrajectoryError::NotPositiveDefinite("row"))?
            .l();
        let col_chol = col_cov
            .cholesky()
            .ok_or(TrajectoryError::NotPositiveDefinite("column"))?
            .l();
        Ok(Self {
            mean,
            row_cov,
            col_cov,
            row_chol,
            col_chol,
        })
    }

    /// Builds the distribution from lower-triangular factors, `U = L_U L_Uᵀ`, `V = L_V L_Vᵀ`.
    /// Factors must have strictly positive diagonals.
    pub fn from_cholesky(
        mean: DMatrix<f64>,
        row_chol: DMatrix<f64>,
        col_chol: Matrix2<f64>,
    ) -> Result<Self> {
        let m = mean.nrows();
        if mean.ncols() != 2 || row_chol.shape() != (m, m) {
            return Err(TrajectoryError::DimensionMismatch {
                expected: format!("{m}×2 mean with {m}×{m} factor"),
                found: format!(
                    "{}×{} / {}×{}",
                    m,
                    mean.ncols(),
                    row_chol.nrows(),
                    row_chol.ncols()
                ),
            });
        }
        if (0..m).any(|i| !(row_chol[(i, i)] > 0.0))
            || !(col_chol[(0, 0)] > 0.0 && col_chol[(1, 1)] > 0.0)
        {
            return Err(TrajectoryError::NotPositiveDefinite("factor"));
        }
        let row_chol = row_chol.lower_triangle();
        let col_chol = col_chol.lower_triangle();
        let row_cov = &row_chol * row_chol.transpose();
        let col_cov = col_chol * col_chol.transpose();
        Ok(Self {
            mean,
            row_cov,
            col_cov,
            row_chol,
            col_chol,
        })
    }

    pub fn m(&self) -> usize {
        self.mean.nrows()
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn row_cov(&self) -> &DMatrix<f64> {
        &self.row_cov
    }

    pub fn col_cov(&self) -> &Matrix2<f64> {
        &self.col_cov
    }

    pub fn row_chol(&self) -> &DMatrix<f64> {
        &self.row_chol
    }

    pub fn col_chol(&self) -> &Matrix2<f64> {
        &self.col_chol
    }

    /// Mean `Mᵀφ(t)` and covariance `(φᵀUφ)·V` of the position at time `t`.
    pub fn point_moments(&self, basis: &BasisSpec, t: f64) -> Result<(Vec2, Matrix2<f64>)> {
        check_rows(self.m(), basis)?;
        Ok(self.moments_from_phi(basis.basis_vector(t).as_slice()))
    }

    /// Same as [`point_moments`](Self::point_moments) for a precomputed `φ(t)`.
    pub fn moments_from_phi(&self, phi: &[f64]) -> (Vec2, Matrix2<f64>) {
        let m = self.m();
        let mut mean = Vec2::zeros();
        for i in 0..m {
            mean.x += self.mean[(i, 0)] * phi[i];
            mean.y += self.mean[(i, 1)] * phi[i];
        }
        // φᵀUφ = ‖L_Uᵀ φ‖²
        let mut scale = 0.0;
        for j in 0..m {
            let mut acc = 0.0;
            for i in j..m {
                acc += self.row_chol[(i, j)] * phi[i];
            }
            scale += acc * acc;
        }
        (mean, self.col_cov * scale)
    }

    /// Draws `W = M + L_U Z L_Vᵀ` with `Z` standard normal.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightMatrix {
        let m = self.m();
        let z = DMatrix::from_fn(m, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lz = &self.row_chol * z;
        let lvt = self.col_chol.transpose();
        let w = DMatrix::from_fn(m, 2, |i, j| {
            self.mean[(i, j)] + lz[(i, 0)] * lvt[(0, j)] + lz[(i, 1)] * lvt[(1, j)]
        });
        WeightMatrix(w)
    }

    /// Matrix-normal negative log-density of `w`:
    /// `½ tr[V⁻¹(W−M)ᵀU⁻¹(W−M)] + m ln 2π + (m/2) ln|V| + ln|U|`.
    pub fn nll(&self, w: &WeightMatrix) -> Result<f64> {
        if w.rows() != self.m() {
            return Err(TrajectoryError::DimensionMismatch {
                expected: format!("{} rows", self.m()),
                found: format!("{} rows", w.rows()),
            });
        }
        let z = self.whitened_residual(w.as_matrix());
        Ok(0.5 * z.norm_squared() + self.log_normalizer())
    }

    /// `L_U⁻¹ (W − M) L_V⁻ᵀ`, whose squared Frobenius norm is the trace term.
    pub(crate) fn whitened_residual(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let e = w - &self.mean;
        let a = self
            .row_chol
            .solve_lower_triangular(&e)
            .expect("factor has a positive diagonal");
        // Z = A L_V⁻ᵀ  ⇔  Zᵀ = L_V⁻¹ Aᵀ
        let zt = self
            .col_chol
            .solve_lower_triangular(&a.transpose())
            .expect("factor has a positive diagonal");
        zt.transpose()
    }

    pub(crate) fn log_normalizer(&self) -> f64 {
        let m = self.m() as f64;
        let log_det_u: f64 = 2.0
            * (0..self.m())
                .map(|i| self.row_chol[(i, i)].ln())
                .sum::<f64>();
        let log_det_v = 2.0 * (self.col_chol[(0, 0)].ln() + self.col_chol[(1, 1)].ln());
        m * LN_2PI + 0.5 * m * log_det_v + log_det_u
    }
}

fn is_symmetric(data: &[f64], n: usize) -> bool {
    let scale = data
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    (0..n).all(|i| (0..i).all(|j| (data[i * n + j] - data[j * n + i]).abs() <= 1e-9 * scale))
}
