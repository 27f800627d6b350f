//! Output head: raw network outputs to matrix-normal parameters, and the
//! negative log-likelihood with its gradient with respect to the raw outputs.
//!
//! Layout of the `2m + m(m+1)/2 + 3` raw values:
//! `M` row-major (`M[i][j] = raw[2i + j]`), then the lower triangle of `L_U`
//! row by row, then `L_V` as `(0,0), (1,0), (1,1)`. Diagonal entries of both
//! factors pass through `softplus(·) + 1e-6`.

use nalgebra::{DMatrix, Matrix2};

use crate::trajectory::MatrixNormalParams;

const DIAG_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn raw_len(m: usize) -> usize {
    2 * m + m * (m + 1) / 2 + 3
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Parts {
    mean: DMatrix<f64>,
    lu: DMatrix<f64>,
    lv: Matrix2<f64>,
}

fn unpack(raw: &[f64], m: usize) -> Parts {
    assert_eq!(raw.len(), raw_len(m), "raw output has wrong length");
    let mean = DMatrix::from_fn(m, 2, |i, j| raw[2 * i + j]);
    let mut lu = DMatrix::zeros(m, m);
    let mut k = 2 * m;
    for i in 0..m {
        for j in 0..=i {
            lu[(i, j)] = if i == j {
                softplus(raw[k]) + DIAG_FLOOR
            } else {
                raw[k]
            };
            k += 1;
        }
    }
    let lv = Matrix2::new(
        softplus(raw[k]) + DIAG_FLOOR,
        0.0,
        raw[k + 1],
        softplus(raw[k + 2]) + DIAG_FLOOR,
    );
    Parts { mean, lu, lv }
}

/// Always yields valid parameters: the Cholesky factors have positive diagonals.
pub fn decode(raw: &[f64], m: usize) -> MatrixNormalParams {
    let p = unpack(raw, m);
    MatrixNormalParams::from_cholesky(p.mean, p.lu, p.lv)
        .expect("decoded factors have positive diagonals")
}

/// Raw vector whose `M` block is `mean` and whose covariance blocks are zero.
pub fn encode_mean(mean: &DMatrix<f64>) -> Vec<f64> {
    let m = mean.nrows();
    let mut raw = vec![0.0; raw_len(m)];
    for i in 0..m {
        raw[2 * i] = mean[(i, 0)];
        raw[2 * i + 1] = mean[(i, 1)];
    }
    raw
}

/// Matrix-normal NLL of `target` under `decode(raw)`, writing `∂NLL/∂raw` into `grad`.
pub fn nll_and_grad(raw: &[f64], target: &DMatrix<f64>, m: usize, grad: &mut [f64]) -> f64 {
    let Parts { mean, lu, lv } = unpack(raw, m);
    let e = target - &mean;
    let y = lu.solve_lower_triangular(&e).expect("positive diagonal");
    // Zᵀ = L_V⁻¹ Yᵀ
    let zt = lv
        .solve_lower_triangular(&y.transpose())
        .expect("positive diagonal");
    let z = zt.transpose();

    let log_det_u: f64 = (0..m).map(|i| lu[(i, i)].ln()).sum();
    let log_det_v = lv[(0, 0)].ln() + lv[(1, 1)].ln();
    let loss = 0.5 * z.norm_squared() + m as f64 * LN_2PI + m as f64 * log_det_v + 2.0 * log_det_u;

    // ∂/∂M = −L_U⁻ᵀ Z L_V⁻¹
    let a = lv
        .transpose()
        .solve_upper_triangular(&zt)
        .expect("positive diagonal")
        .transpose();
    let g_e = lu
        .transpose()
        .solve_upper_triangular(&a)
        .expect("positive diagonal");
    for i in 0..m {
        grad[2 * i] = -g_e[(i, 0)];
        grad[2 * i + 1] = -g_e[(i, 1)];
    }

    // ∂/∂L_U = −tril(L_U⁻ᵀ Z Zᵀ) + diag(2 / L_ii)
    let g_u = lu
        .transpose()
        .solve_upper_triangular(&(&z * &zt))
        .expect("positive diagonal");
    let mut k = 2 * m;
    for i in 0..m {
        for j in 0..=i {
            grad[k] = if i == j {
                (-g_u[(i, i)] + 2.0 / lu[(i, i)]) * sigmoid(raw[k])
            } else {
                -g_u[(i, j)]
            };
            k += 1;
        }
    }

    // ∂/∂L_V = −tril(L_V⁻ᵀ Zᵀ Z) + diag(m / L_ii)
    let ztz = &zt * &z;
    let g_v = lv
        .transpose()
        .solve_upper_triangular(&ztz)
        .expect("positive diagonal");
    let mf = m as f64;
    grad[k] = (-g_v[(0, 0)] + mf / lv[(0, 0)]) * sigmoid(raw[k]);
    grad[k + 1] = -g_v[(1, 0)];
    grad[k + 2] = (-g_v[(1, 1)] + mf / lv[(1, 1)]) * sigmoid(raw[k + 2]);
    loss
}
