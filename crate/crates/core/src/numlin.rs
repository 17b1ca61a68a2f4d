//! Dense linear algebra used by assembly: pseudoinverses, numerical rank,
//! metric-orthonormal bases and null spaces.

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use thiserror::Error;

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Relative singular-value cutoff used when no tolerance is given.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is rank deficient: numerical rank {rank}, required {required}")]
    RankDeficient { rank: usize, required: usize },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub numerical_rank: usize,
    /// Nonincreasing.
    pub singular_values: Vec<f64>,
    pub tolerance_used: f64,
}

fn sorted_singular_values(m: &DenseMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .map(|v| v.abs())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn rank_with_tolerance(m: &DenseMatrix, rel_tol: f64) -> RankReport {
    let singular_values = sorted_singular_values(m);
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let tolerance_used = rel_tol * smax;
    let numerical_rank = singular_values
        .iter()
        .filter(|&&s| s > tolerance_used)
        .count();
    RankReport {
        numerical_rank,
        singular_values,
        tolerance_used,
    }
}

/// Ratio of extreme singular values; infinite for rank-deficient input.
pub fn condition_number(m: &DenseMatrix) -> f64 {
    let sv = sorted_singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Right inverse `Mᵀ(MMᵀ)⁻¹`.
pub fn pinv_full_row_rank(m: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let report = rank_with_tolerance(m, DEFAULT_RANK_TOL);
    if report.numerical_rank < m.nrows() {
        return Err(LinalgError::RankDeficient {
            rank: report.numerical_rank,
            required: m.nrows(),
        });
    }
    let gram = m * m.transpose();
    let chol = Cholesky::new(gram).ok_or(LinalgError::RankDeficient {
        rank: report.numerical_rank,
        required: m.nrows(),
    })?;
    Ok(chol.solve(m).transpose())
}

/// Left inverse `(MᵀM)⁻¹Mᵀ`.
pub fn pinv_full_col_rank(m: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let report = rank_with_tolerance(m, DEFAULT_RANK_TOL);
    if report.numerical_rank < m.ncols() {
        return Err(LinalgError::RankDeficient {
            rank: report.numerical_rank,
            required: m.ncols(),
        });
    }
    let gram = m.transpose() * m;
    let chol = Cholesky::new(gram).ok_or(LinalgError::RankDeficient {
        rank: report.numerical_rank,
        required: m.ncols(),
    })?;
    Ok(chol.solve(&m.transpose()))
}

fn check_spd(w: &DenseMatrix) -> Result<(), LinalgError> {
    if !w.is_square() {
        return Err(LinalgError::DimensionMismatch("metric must be square".into()));
    }
    let scale = w.amax().max(f64::MIN_POSITIVE);
    if (w - w.transpose()).amax() > 1e-12 * scale {
        return Err(LinalgError::NotPositiveDefinite);
    }
    if Cholesky::new(w.clone()).is_none() {
        return Err(LinalgError::NotPositiveDefinite);
    }
    Ok(())
}

/// Flip `v` so that its first entry that is not negligible is positive.
fn normalize_sign(v: &mut DenseVector) {
    let scale = v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Columns spanning the same space as `b`, orthonormal in the `W` inner product.
///
/// Gram–Schmidt with one reorthogonalization pass; each column is signed so
/// its first significant entry is positive.
pub fn metric_orthonormal_columns(
    b: &DenseMatrix,
    w: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    if w.nrows() != b.nrows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "basis has {} rows, metric is {}x{}",
            b.nrows(),
            w.nrows(),
            w.ncols()
        )));
    }
    check_spd(w)?;
    let n = b.ncols();
    let mut out = DenseMatrix::zeros(b.nrows(), n);
    // W·q_k for the accepted columns, so each projection is a plain dot product.
    let mut wq: Vec<DenseVector> = Vec::with_capacity(n);
    for j in 0..n {
        let col = b.column(j).into_owned();
        let orig_norm = col.dot(&(w * &col)).sqrt();
        let mut v = col;
        for _pass in 0..2 {
            for (k, wqk) in wq.iter().enumerate() {
                let c = wqk.dot(&v);
                v.axpy(-c, &out.column(k), 1.0);
            }
        }
        let wv = w * &v;
        let norm = v.dot(&wv).sqrt();
        if !(norm > 1e-10 * orig_norm) || orig_norm == 0.0 {
            let rank = rank_with_tolerance(b, DEFAULT_RANK_TOL).numerical_rank;
            return Err(LinalgError::RankDeficient { rank, required: n });
        }
        v /= norm;
        normalize_sign(&mut v);
        wq.push(w * &v);
        out.set_column(j, &v);
    }
    Ok(out)
}

/// Orthonormal basis of `{x : Mx = 0}` from the SVD, with the deterministic
/// sign convention of [`metric_orthonormal_columns`].
pub fn null_space_basis(m: &DenseMatrix, rel_tol: f64) -> DenseMatrix {
    let cols = m.ncols();
    if cols == 0 {
        return DenseMatrix::zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a full right basis.
    let rows = m.nrows().max(cols);
    let mut padded = DenseMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let cutoff = rel_tol * smax;
    let mut kept: Vec<DenseVector> = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= cutoff {
            let mut v = v_t.row(i).transpose();
            normalize_sign(&mut v);
            kept.push(v);
        }
    }
    if kept.is_empty() {
        return DenseMatrix::zeros(cols, 0);
    }
    DenseMatrix::from_columns(&kept)
}

/// Infinity norm of a matrix in the max-abs-entry sense.
pub fn max_abs(m: &DenseMatrix) -> f64 {
    m.amax()
}
