//! Metric projection onto a polyhedron given as a finite intersection of
//! half-spaces `nᵢᵀx ≤ bᵢ`, optionally intersected with hyperplanes.
//!
//! The solver is the dual active-set method of Goldfarb and Idnani: it starts
//! from the unconstrained minimizer `y`, repeatedly adds the most violated
//! constraint and drops constraints whose multipliers would turn negative.
//! Every iterate is the projection onto its working set, so the method ends
//! after finitely many pivots on an exact KKT point.

use crate::numlin::{rank_with_tolerance, DenseMatrix, DenseVector, DEFAULT_RANK_TOL};
use nalgebra::Cholesky;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("the polyhedron is empty")]
    Infeasible,
    #[error("active-set safeguard tripped after {pivots} pivots")]
    MaxIterations { pivots: usize },
    #[error("equality constraints are inconsistent or linearly dependent")]
    InconsistentEqualities,
    #[error("metric is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("invalid half-space set: {0}")]
    InvalidSet(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    /// Absolute tolerance on `nᵢᵀx − bᵢ`.
    pub feasibility_tol: f64,
    pub kkt_tol: f64,
    /// Pivot budget is this factor times the number of constraints.
    pub pivot_factor: usize,
    /// A new normal whose squared distance to the span of the working set is
    /// below this fraction of its squared norm counts as dependent.
    pub dependence_tol: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            feasibility_tol: 1e-11,
            kkt_tol: 1e-9,
            pivot_factor: 100,
            dependence_tol: 1e-14,
        }
    }
}

/// Constraints `nᵢᵀx ≤ bᵢ`, one row of `normals` per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceSet {
    normals: DenseMatrix,
    offsets: DenseVector,
}

impl HalfspaceSet {
    pub fn new(normals: DenseMatrix, offsets: DenseVector) -> Result<Self, ProjectionError> {
        if normals.nrows() == 0 {
            return Err(ProjectionError::InvalidSet("no constraints".into()));
        }
        if normals.nrows() != offsets.len() {
            return Err(ProjectionError::DimensionMismatch(format!(
                "{} normals but {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        for (i, row) in normals.row_iter().enumerate() {
            if row.iter().all(|v| *v == 0.0) {
                return Err(ProjectionError::InvalidSet(format!("normal {i} is zero")));
            }
        }
        if normals.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(ProjectionError::InvalidSet("non-finite data".into()));
        }
        Ok(HalfspaceSet { normals, offsets })
    }

    pub fn normals(&self) -> &DenseMatrix {
        &self.normals
    }

    pub fn offsets(&self) -> &DenseVector {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.normals.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    /// `max(nᵢᵀx − bᵢ)`, positive when `x` is outside.
    pub fn max_violation(&self, x: &DenseVector) -> f64 {
        (&self.normals * x - &self.offsets).max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: DenseVector,
    /// Active inequality indices, ascending.
    pub active: Vec<usize>,
    /// Nonnegative multiplier per entry of `active`.
    pub multipliers: Vec<f64>,
    /// Multiplier per equality row, in input order.
    pub equality_multipliers: Vec<f64>,
    /// `‖S(y−x) − Σλᵢnᵢ − Σμⱼeⱼ‖∞`.
    pub kkt_residual: f64,
    pub pivots: usize,
}

/// Cholesky factor `L` of the working-set Gram matrix, stored by rows.
#[derive(Debug, Clone, Default)]
struct LowerFactor {
    rows: Vec<Vec<f64>>,
}

impl LowerFactor {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut z = b.to_vec();
        for i in 0..self.rows.len() {
            let row = &self.rows[i];
            let mut acc = z[i];
            for j in 0..i {
                acc -= row[j] * z[j];
            }
            z[i] = acc / row[i];
        }
        z
    }

    /// Solves `L Lᵀ x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = self.forward(b);
        let n = self.rows.len();
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.rows[j][i] * x[j];
            }
            x[i] = acc / self.rows[i][i];
        }
        x
    }

    fn append(&mut self, cross: &[f64], diag: f64) {
        let mut row = self.forward(cross);
        row.push(diag);
        self.rows.push(row);
    }

    /// Drops row and column `k`, restoring triangularity with a rank-one update
    /// of the trailing block.
    fn remove(&mut self, k: usize) {
        let n = self.rows.len();
        let mut x: Vec<f64> = (k + 1..n).map(|i| self.rows[i][k]).collect();
        self.rows.remove(k);
        for row in self.rows[k..].iter_mut() {
            row.remove(k);
        }
        let n = n - 1;
        for j in k..n {
            let ljj = self.rows[j][j];
            let xj = x[j - k];
            let r = ljj.hypot(xj);
            let c = r / ljj;
            let s = xj / ljj;
            self.rows[j][j] = r;
            for i in j + 1..n {
                let lij = (self.rows[i][j] + s * x[i - k]) / c;
                self.rows[i][j] = lij;
                x[i - k] = c * x[i - k] - s * lij;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    index: usize,
    sign: f64,
}

/// Working sets up to this size get their final multipliers from a fresh
/// Gram solve, averaged over forward and reversed orderings. The average is
/// invariant under permutations that map the problem onto itself, so
/// symmetric inputs yield exactly symmetric outputs.
const SYMMETRIC_POLISH_LIMIT: usize = 16;

/// Euclidean projector with a fixed list of constraint normals.
///
/// Offsets are supplied per call, and the final working set and its factor
/// are kept as the warm start for the next call. This is the intended use
/// inside fixed-point iterations, where only offsets move.
#[derive(Debug, Clone)]
pub struct Projector {
    /// Column `i` is normal `i`.
    cols: DenseMatrix,
    norms2: Vec<f64>,
    is_eq: Vec<bool>,
    opts: ProjectionOptions,
    working: Vec<Entry>,
    factor: LowerFactor,
}

#[derive(Debug, Clone)]
pub struct EuclideanSolution {
    pub point: DenseVector,
    /// `(constraint index, signed multiplier)` sorted by index.
    pub working: Vec<(usize, f64)>,
    pub pivots: usize,
}

impl Projector {
    /// `inequalities` and `equalities` hold one normal per row; equality rows
    /// are numbered after the inequalities.
    pub fn new(
        inequalities: &DenseMatrix,
        equalities: Option<&DenseMatrix>,
        opts: ProjectionOptions,
    ) -> Self {
        let n_eq = equalities.map_or(0, |e| e.nrows());
        let p = inequalities.nrows() + n_eq;
        let dim = inequalities.ncols();
        let mut cols = DenseMatrix::zeros(dim, p);
        cols.view_mut((0, 0), (dim, inequalities.nrows()))
            .copy_from(&inequalities.transpose());
        if let Some(e) = equalities {
            cols.view_mut((0, inequalities.nrows()), (dim, n_eq))
                .copy_from(&e.transpose());
        }
        let norms2 = cols.column_iter().map(|c| c.norm_squared()).collect();
        let mut is_eq = vec![false; inequalities.nrows()];
        is_eq.extend(std::iter::repeat_n(true, n_eq));
        Projector {
            cols,
            norms2,
            is_eq,
            opts,
            working: Vec::new(),
            factor: LowerFactor::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.cols.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.cols.nrows()
    }

    /// Forget the warm start.
    pub fn reset(&mut self) {
        self.working.clear();
        self.factor = LowerFactor::default();
    }

    fn gram(&self, i: &Entry, j: &Entry) -> f64 {
        i.sign * j.sign * self.cols.column(i.index).dot(&self.cols.column(j.index))
    }

    fn cross(&self, p: &Entry) -> Vec<f64> {
        self.working.iter().map(|e| self.gram(e, p)).collect()
    }

    fn rebuild_factor(&mut self) {
        let entries = std::mem::take(&mut self.working);
        self.factor = LowerFactor::default();
        for e in entries {
            let cross = self.cross(&e);
            let z = self.factor.forward(&cross);
            let d2 = self.norms2[e.index] - z.iter().map(|v| v * v).sum::<f64>();
            if d2 > self.opts.dependence_tol * self.norms2[e.index] && d2 > 0.0 {
                self.factor.append(&cross, d2.sqrt());
                self.working.push(e);
            }
        }
    }

    /// Signed right-hand side `sⱼ(nⱼᵀy − bⱼ)` of the working-set system.
    fn rhs(&self, y: &DenseVector, b: &DenseVector) -> Vec<f64> {
        self.working
            .iter()
            .map(|e| e.sign * (self.cols.column(e.index).dot(y) - b[e.index]))
            .collect()
    }

    fn point_from(&self, y: &DenseVector, lambda: &[f64]) -> DenseVector {
        let mut x = y.clone();
        for (e, l) in self.working.iter().zip(lambda) {
            x.axpy(-e.sign * l, &self.cols.column(e.index), 1.0);
        }
        x
    }

    fn multipliers_from_factor(&self, y: &DenseVector, b: &DenseVector) -> Vec<f64> {
        self.factor.solve(&self.rhs(y, b))
    }

    fn polished_multipliers(&self, y: &DenseVector, b: &DenseVector) -> Vec<f64> {
        let w = self.working.len();
        if w == 0 || w > SYMMETRIC_POLISH_LIMIT {
            return self.multipliers_from_factor(y, b);
        }
        let rhs = self.rhs(y, b);
        let solve_in = |order: &[usize]| -> Option<Vec<f64>> {
            let g = DenseMatrix::from_fn(w, w, |i, j| {
                self.gram(&self.working[order[i]], &self.working[order[j]])
            });
            let chol = Cholesky::new(g)?;
            let r = DenseVector::from_iterator(w, order.iter().map(|&i| rhs[i]));
            let sol = chol.solve(&r);
            let mut out = vec![0.0; w];
            for (k, &i) in order.iter().enumerate() {
                out[i] = sol[k];
            }
            Some(out)
        };
        let fwd: Vec<usize> = (0..w).collect();
        let rev: Vec<usize> = (0..w).rev().collect();
        match (solve_in(&fwd), solve_in(&rev)) {
            (Some(a), Some(b)) => a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect(),
            _ => self.multipliers_from_factor(y, b),
        }
    }

    fn drop_at(&mut self, k: usize, lambda: &mut Vec<f64>) {
        self.working.remove(k);
        self.factor.remove(k);
        lambda.remove(k);
    }

    /// Index of the most negative inequality multiplier, if any is negative.
    fn most_negative(&self, lambda: &[f64], tol: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (k, (e, &l)) in self.working.iter().zip(lambda).enumerate() {
            if self.is_eq[e.index] || l >= -tol {
                continue;
            }
            match best {
                Some((_, bl)) if bl <= l => {}
                _ => best = Some((k, l)),
            }
        }
        best.map(|(k, _)| k)
    }

    /// Most violated constraint outside the working set: `(index, violation, sign)`.
    /// Ties go to the lowest index.
    fn most_violated(&self, x: &DenseVector, b: &DenseVector) -> Option<(usize, f64, f64)> {
        let slack = self.cols.tr_mul(x) - b;
        let mut in_w = vec![false; self.len()];
        for e in &self.working {
            in_w[e.index] = true;
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..self.len() {
            if in_w[i] {
                continue;
            }
            let (v, sign) = if self.is_eq[i] {
                (slack[i].abs(), if slack[i] >= 0.0 { 1.0 } else { -1.0 })
            } else {
                (slack[i], 1.0)
            };
            if v > self.opts.feasibility_tol && best.is_none_or(|(_, bv, _)| v > bv) {
                best = Some((i, v, sign));
            }
        }
        best
    }

    /// Projects `y` onto `{nᵢᵀx ≤ bᵢ (inequalities), nᵢᵀx = bᵢ (equalities)}`.
    pub fn project(
        &mut self,
        y: &DenseVector,
        b: &DenseVector,
    ) -> Result<EuclideanSolution, ProjectionError> {
        if y.len() != self.dim() || b.len() != self.len() {
            return Err(ProjectionError::DimensionMismatch(format!(
                "point of length {}, {} offsets for a projector of dimension {} with {} rows",
                y.len(),
                b.len(),
                self.dim(),
                self.len()
            )));
        }
        let result = self.project_inner(y, b);
        if result.is_err() {
            self.reset();
        }
        result
    }

    fn project_inner(
        &mut self,
        y: &DenseVector,
        b: &DenseVector,
    ) -> Result<EuclideanSolution, ProjectionError> {
        let max_pivots = self.opts.pivot_factor * self.len().max(1);
        let mut pivots = 0usize;

        if self.factor.len() != self.working.len() {
            self.rebuild_factor();
        }
        // Warm start: projection onto the previous working set, shrunk until
        // its multipliers are dual feasible.
        let mut lambda = self.multipliers_from_factor(y, b);
        while let Some(k) = self.most_negative(&lambda, 0.0) {
            self.drop_at(k, &mut lambda);
            lambda = self.multipliers_from_factor(y, b);
        }
        let mut x = self.point_from(y, &lambda);

        loop {
            while let Some((p, _, sign)) = self.most_violated(&x, b) {
                let entry = Entry { index: p, sign };
                let np = self.cols.column(p).into_owned() * sign;
                let bp = sign * b[p];
                let mut lambda_p = 0.0;
                loop {
                    pivots += 1;
                    if pivots > max_pivots {
                        return Err(ProjectionError::MaxIterations { pivots });
                    }
                    let cross = self.cross(&entry);
                    let r = self.factor.solve(&cross);
                    let mut z = np.clone();
                    for (e, rj) in self.working.iter().zip(&r) {
                        z.axpy(-e.sign * rj, &self.cols.column(e.index), 1.0);
                    }
                    let zz = z.norm_squared();
                    let full = if zz > self.opts.dependence_tol * self.norms2[p] {
                        (np.dot(&x) - bp) / zz
                    } else {
                        f64::INFINITY
                    };
                    let mut partial = f64::INFINITY;
                    let mut drop = None;
                    for (k, (e, &rk)) in self.working.iter().zip(&r).enumerate() {
                        if self.is_eq[e.index] || rk <= 0.0 {
                            continue;
                        }
                        let ratio = lambda[k] / rk;
                        if ratio < partial {
                            partial = ratio;
                            drop = Some(k);
                        }
                    }
                    if full.is_infinite() && partial.is_infinite() {
                        return Err(if self.is_eq[p] {
                            ProjectionError::InconsistentEqualities
                        } else {
                            ProjectionError::Infeasible
                        });
                    }
                    let t = full.min(partial);
                    if full.is_finite() {
                        x.axpy(-t, &z, 1.0);
                    }
                    for (l, rk) in lambda.iter_mut().zip(&r) {
                        *l -= t * rk;
                    }
                    lambda_p += t;
                    if full <= partial {
                        self.factor.append(&cross, zz.sqrt());
                        self.working.push(entry);
                        lambda.push(lambda_p);
                        break;
                    }
                    let k = drop.expect("finite partial step has a blocking index");
                    self.drop_at(k, &mut lambda);
                }
            }

            // Fresh multipliers remove the drift of the incremental updates.
            lambda = self.polished_multipliers(y, b);
            let scale = lambda.iter().fold(1.0f64, |m, l| m.max(l.abs()));
            if let Some(k) = self.most_negative(&lambda, 1e-13 * scale) {
                pivots += 1;
                if pivots > max_pivots {
                    return Err(ProjectionError::MaxIterations { pivots });
                }
                self.drop_at(k, &mut lambda);
                lambda = self.multipliers_from_factor(y, b);
                x = self.point_from(y, &lambda);
                continue;
            }
            for (e, l) in self.working.iter().zip(lambda.iter_mut()) {
                if !self.is_eq[e.index] && *l < 0.0 {
                    *l = 0.0;
                }
            }
            x = self.point_from(y, &lambda);
            if self.most_violated(&x, b).is_some() {
                continue;
            }
            break;
        }

        let mut working: Vec<(usize, f64)> = self
            .working
            .iter()
            .zip(&lambda)
            .map(|(e, l)| (e.index, e.sign * l))
            .collect();
        working.sort_by_key(|(i, _)| *i);
        Ok(EuclideanSolution {
            point: x,
            working,
            pivots,
        })
    }
}

/// Projection of `y` onto `C` in the metric `‖v‖²_S = vᵀSv`.
pub fn project(
    y: &DenseVector,
    c: &HalfspaceSet,
    s: &DenseMatrix,
) -> Result<ProjectionResult, ProjectionError> {
    project_with_equalities(y, c, &[], s)
}

fn is_identity(s: &DenseMatrix) -> bool {
    s.is_square()
        && (0..s.nrows()).all(|i| {
            (0..s.ncols()).all(|j| s[(i, j)] == if i == j { 1.0 } else { 0.0 })
        })
}

/// As [`project`], additionally enforcing `eⱼᵀx = vⱼ` for every `(eⱼ, vⱼ)`.
pub fn project_with_equalities(
    y: &DenseVector,
    c: &HalfspaceSet,
    equalities: &[(DenseVector, f64)],
    s: &DenseMatrix,
) -> Result<ProjectionResult, ProjectionError> {
    let dim = c.dim();
    if y.len() != dim || s.nrows() != dim || s.ncols() != dim {
        return Err(ProjectionError::DimensionMismatch(format!(
            "point {}, metric {}x{}, constraints in dimension {}",
            y.len(),
            s.nrows(),
            s.ncols(),
            dim
        )));
    }
    if equalities.iter().any(|(e, _)| e.len() != dim) {
        return Err(ProjectionError::DimensionMismatch(
            "equality normal has wrong length".into(),
        ));
    }
    let eq_rows = if equalities.is_empty() {
        None
    } else {
        let m = DenseMatrix::from_fn(equalities.len(), dim, |i, j| equalities[i].0[j]);
        if rank_with_tolerance(&m, DEFAULT_RANK_TOL).numerical_rank < equalities.len() {
            return Err(ProjectionError::InconsistentEqualities);
        }
        Some(m)
    };

    let identity = is_identity(s);
    let chol = if identity {
        None
    } else {
        if (s - s.transpose()).amax() > 1e-12 * s.amax() {
            return Err(ProjectionError::NotPositiveDefinite);
        }
        Some(Cholesky::new(s.clone()).ok_or(ProjectionError::NotPositiveDefinite)?)
    };

    // With S = LLᵀ and u = Lᵀx the problem is Euclidean in u with normals L⁻¹n.
    let transform = |rows: &DenseMatrix| -> DenseMatrix {
        match &chol {
            None => rows.clone(),
            Some(ch) => {
                let l = ch.l();
                let t = l
                    .solve_lower_triangular(&rows.transpose())
                    .expect("Cholesky factor is nonsingular");
                t.transpose()
            }
        }
    };
    let ineq = transform(c.normals());
    let eq = eq_rows.as_ref().map(&transform);
    let mut projector = Projector::new(&ineq, eq.as_ref(), ProjectionOptions::default());

    let mut b = DenseVector::zeros(c.len() + equalities.len());
    b.rows_mut(0, c.len()).copy_from(c.offsets());
    for (j, (_, v)) in equalities.iter().enumerate() {
        b[c.len() + j] = *v;
    }
    let u_y = match &chol {
        None => y.clone(),
        Some(ch) => ch.l().tr_mul(y),
    };
    let sol = projector.project(&u_y, &b)?;
    let point = match &chol {
        None => sol.point.clone(),
        Some(ch) => ch
            .l()
            .transpose()
            .solve_upper_triangular(&sol.point)
            .expect("Cholesky factor is nonsingular"),
    };

    let mut active = Vec::new();
    let mut multipliers = Vec::new();
    let mut equality_multipliers = vec![0.0; equalities.len()];
    let mut stationarity = s * (y - &point);
    for &(i, l) in &sol.working {
        if i < c.len() {
            active.push(i);
            multipliers.push(l);
            stationarity.axpy(-l, &c.normals().row(i).transpose(), 1.0);
        } else {
            let j = i - c.len();
            equality_multipliers[j] = l;
            stationarity.axpy(-l, &equalities[j].0, 1.0);
        }
    }
    Ok(ProjectionResult {
        point,
        active,
        multipliers,
        equality_multipliers,
        kkt_residual: stationarity.amax(),
        pivots: sol.pivots,
    })
}
