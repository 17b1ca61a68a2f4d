//! Lattice description and the operators of the sweeping-process
//! reformulation: compatibility, equilibrium pseudoinverse, the splitting of
//! stress space into 𝒰 and the self-stress space 𝒱, and the load maps G, F.

use crate::numlin::{
    condition_number, metric_orthonormal_columns, null_space_basis, pinv_full_col_rank,
    pinv_full_row_rank, rank_with_tolerance, DenseMatrix, DenseVector, LinalgError,
    DEFAULT_RANK_TOL,
};
use crate::spring::SpringParams;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("spring {index} has degenerate rest length {length:e}")]
    DegenerateSpring { index: usize, length: f64 },
    #[error("invalid lattice: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("assumptions violated: {}", .0.join("; "))]
    AssumptionsViolated(Vec<String>),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Scalar program linear between breakpoints and constant outside them.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseLinear {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn constant(v: f64) -> Self {
        PiecewiseLinear {
            times: vec![0.0],
            values: vec![v],
        }
    }

    /// `v(t) = rate·t` on `[0, t_end]`.
    pub fn ramp(rate: f64, t_end: f64) -> Self {
        PiecewiseLinear {
            times: vec![0.0, t_end],
            values: vec![0.0, rate * t_end],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.times.is_empty() || self.times.len() != self.values.len() {
            return Err(format!(
                "program needs matching nonempty time and value lists (got {} and {})",
                self.times.len(),
                self.values.len()
            ));
        }
        if self.times.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err("program has non-finite entries".into());
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err("program breakpoints must be strictly increasing".into());
        }
        Ok(())
    }

    pub fn covers(&self, t0: f64, t_end: f64) -> bool {
        self.times.len() == 1 || (self.times[0] <= t0 && *self.times.last().unwrap() >= t_end)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let j = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        v0 + (t - t0) / (t1 - t0) * (v1 - v0)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub origin: usize,
    pub terminus: usize,
    pub params: SpringParams,
}

/// Time-dependent loads.
///
/// `displacement[i]` is the prescribed displacement `uᵢ(t)` of constraint row
/// `i`, so that `R(ξ0 + ζ) + r(t) = 0` with `r(t) = −Rξ0 − u(t)`.
/// `forces` lists `(degree of freedom, program)` pairs of the nodal load `f(t)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Loading {
    pub displacement: Vec<PiecewiseLinear>,
    pub forces: Vec<(usize, PiecewiseLinear)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub dim: usize,
    /// `n·d` reference coordinates, node-major.
    pub positions: Vec<f64>,
    pub springs: Vec<Spring>,
    /// `q × n·d`.
    pub constraints: DenseMatrix,
    pub loading: Loading,
    /// Area used by the total-stress observable.
    pub area: Option<f64>,
}

impl LatticeSpec {
    pub fn n_nodes(&self) -> usize {
        self.positions.len() / self.dim.max(1)
    }

    pub fn n_springs(&self) -> usize {
        self.springs.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    /// Every violated structural invariant, or `Ok`.
    pub fn validate(&self) -> Result<(), LatticeError> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("spatial dimension must be at least 1".to_string());
        }
        if self.dim > 0 && self.positions.len() % self.dim != 0 {
            problems.push(format!(
                "{} coordinates do not split into nodes of dimension {}",
                self.positions.len(),
                self.dim
            ));
        }
        if self.positions.is_empty() {
            problems.push("lattice has no nodes".into());
        }
        if self.positions.iter().any(|v| !v.is_finite()) {
            problems.push("node positions must be finite".into());
        }
        if self.springs.is_empty() {
            problems.push("lattice has no springs".into());
        }
        let n = self.n_nodes();
        let mut seen = HashSet::new();
        for (i, s) in self.springs.iter().enumerate() {
            if s.origin >= n || s.terminus >= n {
                problems.push(format!("spring {i} references a missing node"));
            }
            if s.origin == s.terminus {
                problems.push(format!("spring {i} connects node {} to itself", s.origin));
            }
            let key = (s.origin.min(s.terminus), s.origin.max(s.terminus));
            if !seen.insert(key) {
                problems.push(format!("spring {i} duplicates edge {key:?}"));
            }
            if let Err(e) = s.params.validate() {
                problems.push(format!("spring {i}: {e}"));
            }
        }
        let nd = self.positions.len();
        if self.constraints.ncols() != nd {
            problems.push(format!(
                "constraint matrix has {} columns, expected {nd}",
                self.constraints.ncols()
            ));
        }
        if self.loading.displacement.len() != self.constraints.nrows() {
            problems.push(format!(
                "{} displacement programs for {} constraint rows",
                self.loading.displacement.len(),
                self.constraints.nrows()
            ));
        }
        for (i, p) in self.loading.displacement.iter().enumerate() {
            if let Err(e) = p.validate() {
                problems.push(format!("displacement program {i}: {e}"));
            }
        }
        for (dof, p) in &self.loading.forces {
            if *dof >= nd {
                problems.push(format!("force on missing degree of freedom {dof}"));
            }
            if let Err(e) = p.validate() {
                problems.push(format!("force program on dof {dof}: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LatticeError::InvalidSpec(problems))
        }
    }
}

/// `n × m`, +1 at the origin row and −1 at the terminus row of each column.
pub fn incidence_matrix(spec: &LatticeSpec) -> DenseMatrix {
    let mut q = DenseMatrix::zeros(spec.n_nodes(), spec.n_springs());
    for (i, s) in spec.springs.iter().enumerate() {
        q[(s.origin, i)] = 1.0;
        q[(s.terminus, i)] = -1.0;
    }
    q
}

/// Spring lengths for arbitrary node coordinates.
pub fn spring_lengths(spec: &LatticeSpec, positions: &[f64]) -> DenseVector {
    let d = spec.dim;
    DenseVector::from_iterator(
        spec.n_springs(),
        spec.springs.iter().map(|s| {
            (0..d)
                .map(|k| positions[s.origin * d + k] - positions[s.terminus * d + k])
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        }),
    )
}

pub fn rest_lengths(spec: &LatticeSpec) -> Result<DenseVector, LatticeError> {
    let l = spring_lengths(spec, &spec.positions);
    if let Some((index, &length)) = l.iter().enumerate().find(|(_, v)| **v < 1e-12) {
        return Err(LatticeError::DegenerateSpring { index, length });
    }
    Ok(l)
}

/// Linearized elongation map `Dφ` (m × n·d) and the unit directions 𝒟 (m × d),
/// with 𝒟 row `i` pointing from the terminus to the origin of spring `i`.
pub fn compatibility_matrix(
    spec: &LatticeSpec,
) -> Result<(DenseMatrix, DenseMatrix), LatticeError> {
    let d = spec.dim;
    let lengths = rest_lengths(spec)?;
    let mut dirs = DenseMatrix::zeros(spec.n_springs(), d);
    let mut dphi = DenseMatrix::zeros(spec.n_springs(), spec.positions.len());
    for (i, s) in spec.springs.iter().enumerate() {
        for k in 0..d {
            let c = (spec.positions[s.origin * d + k] - spec.positions[s.terminus * d + k])
                / lengths[i];
            dirs[(i, k)] = c;
            dphi[(i, s.origin * d + k)] = c;
            dphi[(i, s.terminus * d + k)] = -c;
        }
    }
    Ok((dphi, dirs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub dim_u: usize,
    pub dim_v: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub rank_r_ok: bool,
    pub kinematic_determinacy_ok: bool,
    pub self_stress_nondegenerate: bool,
    pub dims: Dims,
    /// Condition numbers of `R` and of the stacked `(Dφ; R)`.
    pub worst_condition_numbers: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Condition numbers of `(Dφ; R)` above this trigger a warning.
pub const CONDITION_WARNING: f64 = 1e8;

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.rank_r_ok && self.kinematic_determinacy_ok && self.self_stress_nondegenerate
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.rank_r_ok {
            out.push("constraint rank: R does not have full row rank q".to_string());
        }
        if !self.kinematic_determinacy_ok {
            out.push("kinematic determinacy: node displacements are not determined by elongations and constraints".to_string());
        }
        if !self.self_stress_nondegenerate {
            out.push("self-stress nondegeneracy: the self-stress space is trivial (m + q <= n d)".to_string());
        }
        out
    }
}

fn stacked(dphi: &DenseMatrix, r: &DenseMatrix) -> DenseMatrix {
    let (m, q, nd) = (dphi.nrows(), r.nrows(), dphi.ncols());
    let mut e = DenseMatrix::zeros(m + q, nd);
    e.view_mut((0, 0), (m, nd)).copy_from(dphi);
    e.view_mut((m, 0), (q, nd)).copy_from(r);
    e
}

pub fn verify_assumptions(spec: &LatticeSpec) -> Result<AssumptionReport, LatticeError> {
    spec.validate()?;
    let (dphi, _) = compatibility_matrix(spec)?;
    let r = &spec.constraints;
    let (n, m, q, nd) = (spec.n_nodes(), spec.n_springs(), r.nrows(), spec.positions.len());
    let rank_r_ok = rank_with_tolerance(r, DEFAULT_RANK_TOL).numerical_rank == q;
    let e = stacked(&dphi, r);
    let kinematic_determinacy_ok = rank_with_tolerance(&e, DEFAULT_RANK_TOL).numerical_rank == nd;
    let self_stress_nondegenerate = nd < m + q;
    let cond_r = if q > 0 { condition_number(r) } else { 1.0 };
    let cond_e = condition_number(&e);
    let mut warnings = Vec::new();
    if cond_e > CONDITION_WARNING {
        warnings.push(format!(
            "condition number of (Dphi; R) is {cond_e:.3e}; displacement recovery may be inaccurate"
        ));
    }
    Ok(AssumptionReport {
        rank_r_ok,
        kinematic_determinacy_ok,
        self_stress_nondegenerate,
        dims: Dims {
            n,
            m,
            q,
            dim_u: nd.saturating_sub(q),
            dim_v: (m + q).saturating_sub(nd),
        },
        worst_condition_numbers: vec![cond_r, cond_e],
        warnings,
    })
}

/// Everything the sweeping process and field recovery need.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub dim: usize,
    pub dims: Dims,
    pub xi0: DenseVector,
    pub springs: Vec<SpringParams>,
    pub stiffness: DenseVector,
    pub dphi: DenseMatrix,
    pub directions: DenseMatrix,
    pub rest_lengths: DenseVector,
    pub r_matrix: DenseMatrix,
    pub r_pinv: DenseMatrix,
    /// Orthonormal basis of `Ker R`.
    pub ker_r: DenseMatrix,
    pub f1: DenseMatrix,
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    pub p_u: DenseMatrix,
    pub p_v: DenseMatrix,
    pub g: DenseMatrix,
    pub f: DenseMatrix,
    pub g_v: DenseMatrix,
    pub zeta_pinv: DenseMatrix,
    pub loading: Loading,
    pub area: Option<f64>,
}

pub fn assemble(spec: &LatticeSpec) -> Result<AssembledOperators, LatticeError> {
    let report = verify_assumptions(spec)?;
    if !report.all_ok() {
        return Err(LatticeError::AssumptionsViolated(report.failures()));
    }
    let dims = report.dims;
    let (dphi, directions) = compatibility_matrix(spec)?;
    let rest = rest_lengths(spec)?;
    let r = spec.constraints.clone();
    let m = dims.m;
    let stiffness =
        DenseVector::from_iterator(m, spec.springs.iter().map(|s| s.params.k));
    let k = DenseMatrix::from_diagonal(&stiffness);
    let k_inv = DenseMatrix::from_diagonal(&stiffness.map(|v| 1.0 / v));

    let e = stacked(&dphi, &r);
    let zeta_pinv = pinv_full_col_rank(&e)?;
    let f1 = zeta_pinv.transpose().rows(0, m).into_owned();

    let ker_r = if dims.q == 0 {
        DenseMatrix::identity(spec.positions.len(), spec.positions.len())
    } else {
        null_space_basis(&r, DEFAULT_RANK_TOL)
    };
    let dz = &dphi * &ker_r;
    let u = metric_orthonormal_columns(&(&k * &dz), &k_inv)?;
    let v_raw = null_space_basis(&dz.transpose(), DEFAULT_RANK_TOL);
    if v_raw.ncols() != dims.dim_v || u.ncols() != dims.dim_u {
        return Err(LatticeError::AssumptionsViolated(vec![format!(
            "computed dim U = {}, dim V = {}; expected {} and {}",
            u.ncols(),
            v_raw.ncols(),
            dims.dim_u,
            dims.dim_v
        )]));
    }
    let v = metric_orthonormal_columns(&v_raw, &k_inv)?;
    let p_u = u.transpose() * &k_inv;
    let p_v = v.transpose() * &k_inv;
    let r_pinv = if dims.q == 0 {
        DenseMatrix::zeros(spec.positions.len(), 0)
    } else {
        pinv_full_row_rank(&r)?
    };
    let kdr = &k * &dphi * &r_pinv;
    let g_v = &p_v * &kdr;
    let g = &v * &g_v;
    let f = &u * (&p_u * &f1);

    Ok(AssembledOperators {
        dim: spec.dim,
        dims,
        xi0: DenseVector::from_column_slice(&spec.positions),
        springs: spec.springs.iter().map(|s| s.params).collect(),
        stiffness,
        dphi,
        directions,
        rest_lengths: rest,
        r_matrix: r,
        r_pinv,
        ker_r,
        f1,
        u,
        v,
        p_u,
        p_v,
        g,
        f,
        g_v,
        zeta_pinv,
        loading: spec.loading.clone(),
        area: spec.area,
    })
}

/// Displacement recovered from total elongations `x` and the constraint
/// load `r_t`, with the two closure residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub zeta: DenseVector,
    /// `‖Dφ·ζ − x‖∞`.
    pub compatibility_residual: f64,
    /// `‖R(ζ + ξ0) + r(t)‖∞`.
    pub constraint_residual: f64,
}

pub fn recover_displacements(
    ops: &AssembledOperators,
    x: &DenseVector,
    r_t: &DenseVector,
    xi0: &DenseVector,
) -> Recovery {
    let m = ops.dims.m;
    let q = ops.dims.q;
    let mut rhs = DenseVector::zeros(m + q);
    rhs.rows_mut(0, m).copy_from(x);
    let c = -(&ops.r_matrix * xi0) - r_t;
    rhs.rows_mut(m, q).copy_from(&c);
    let zeta = &ops.zeta_pinv * rhs;
    let compatibility_residual = (&ops.dphi * &zeta - x).amax();
    let constraint_residual = if q == 0 {
        0.0
    } else {
        (&ops.r_matrix * (&zeta + xi0) + r_t).amax()
    };
    Recovery {
        zeta,
        compatibility_residual,
        constraint_residual,
    }
}

impl AssembledOperators {
    pub fn m(&self) -> usize {
        self.dims.m
    }

    pub fn dim_v(&self) -> usize {
        self.dims.dim_v
    }

    /// Prescribed constraint displacements `u(t)`.
    pub fn prescribed_displacement(&self, t: f64) -> DenseVector {
        DenseVector::from_iterator(
            self.dims.q,
            self.loading.displacement.iter().map(|p| p.eval(t)),
        )
    }

    /// The constraint load `r(t) = −Rξ0 − u(t)`.
    pub fn displacement_load(&self, t: f64) -> DenseVector {
        -(&self.r_matrix * &self.xi0) - self.prescribed_displacement(t)
    }

    /// `G·r(t)` with the constant `−G·Rξ0` left out. The constant lies in 𝒱
    /// and cancels between the sweeping variable and the recovered stress,
    /// so σ and the damage are unaffected.
    pub fn g_r(&self, t: f64) -> DenseVector {
        -(&self.g * self.prescribed_displacement(t))
    }

    /// Reduced counterpart `G_V·r(t)` with the same constant left out.
    pub fn g_v_r(&self, t: f64) -> DenseVector {
        -(&self.g_v * self.prescribed_displacement(t))
    }

    pub fn nodal_force(&self, t: f64) -> DenseVector {
        let mut f = DenseVector::zeros(self.xi0.len());
        for (dof, p) in &self.loading.forces {
            f[*dof] += p.eval(t);
        }
        f
    }

    /// `F·f(t)`.
    pub fn f_f(&self, t: f64) -> DenseVector {
        &self.f * self.nodal_force(t)
    }

    /// `‖Zᵀ(Dφᵀσ − f)‖∞` with `Z` spanning `Ker R`: the part of the nodal
    /// force balance not absorbed by constraint reactions.
    pub fn equilibrium_residual(&self, sigma: &DenseVector, t: f64) -> f64 {
        let w = self.dphi.tr_mul(sigma) - self.nodal_force(t);
        let proj = self.ker_r.tr_mul(&w);
        if proj.is_empty() {
            0.0
        } else {
            proj.amax()
        }
    }
}
