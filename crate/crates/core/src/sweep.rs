//! The reduced sweeping process on 𝒱 × ℝᵐ: the moving set 𝒞_V(t, ã), the
//! yield functions g±, and the per-step map `T(ã)`.
//!
//! Rows of the moving set are numbered `(−, i) ↦ i` and `(+, i) ↦ m + i`.

use crate::lattice::AssembledOperators;
use crate::numlin::{DenseMatrix, DenseVector};
use crate::polyproj::{
    project_with_equalities, HalfspaceSet, ProjectionError, ProjectionOptions, Projector,
};
use crate::spring::SpringParams;

/// Absolute tolerance on g for active-set reporting.
pub const ACTIVE_TOL: f64 = 1e-9;
/// Both g values of a softening spring above `−FAILURE_TOL` mean failure.
pub const FAILURE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepState {
    pub y_hat: DenseVector,
    pub a: DenseVector,
}

impl SweepState {
    pub fn stacked(&self) -> DenseVector {
        let mut z = DenseVector::zeros(self.y_hat.len() + self.a.len());
        z.rows_mut(0, self.y_hat.len()).copy_from(&self.y_hat);
        z.rows_mut(self.y_hat.len(), self.a.len()).copy_from(&self.a);
        z
    }

    pub fn from_stacked(z: &DenseVector, dim_v: usize) -> Self {
        SweepState {
            y_hat: z.rows(0, dim_v).into_owned(),
            a: z.rows(dim_v, z.len() - dim_v).into_owned(),
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.y_hat.iter().chain(self.a.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub g_minus: DenseVector,
    pub g_plus: DenseVector,
    pub active_minus: Vec<usize>,
    pub active_plus: Vec<usize>,
    pub tol_used: f64,
}

impl ConstraintEval {
    pub fn max_g(&self) -> f64 {
        self.g_minus.max().max(self.g_plus.max())
    }

    pub fn is_feasible(&self) -> bool {
        self.max_g() <= self.tol_used
    }

    /// Springs with at least one active side.
    pub fn active_springs(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .active_minus
            .iter()
            .chain(&self.active_plus)
            .copied()
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovingSetView {
    pub halfspaces: HalfspaceSet,
}

/// The 2m fixed normals `n̂±ᵢ = (±kᵢP_V eᵢ; −sᵢeᵢ)`.
pub fn moving_set_normals(ops: &AssembledOperators) -> DenseMatrix {
    let m = ops.m();
    let dv = ops.dim_v();
    let mut n = DenseMatrix::zeros(2 * m, dv + m);
    for (i, p) in ops.springs.iter().enumerate() {
        for j in 0..dv {
            let c = p.k * ops.p_v[(j, i)];
            n[(i, j)] = -c;
            n[(m + i, j)] = c;
        }
        n[(i, dv + i)] = -p.s;
        n[(m + i, dv + i)] = -p.s;
    }
    n
}

/// Offsets of 𝒞_V(t, 0): `c0ᵢ ∓ (Gr)ᵢ ± (Ff)ᵢ`.
pub fn time_offsets(ops: &AssembledOperators, t: f64) -> DenseVector {
    let m = ops.m();
    let gr = ops.g_r(t);
    let ff = ops.f_f(t);
    let mut b = DenseVector::zeros(2 * m);
    for (i, p) in ops.springs.iter().enumerate() {
        b[i] = p.c0 - gr[i] + ff[i];
        b[m + i] = p.c0 + gr[i] - ff[i];
    }
    b
}

/// Shifts both rows of spring `i` by `−sᵢhᵢãᵢ`.
fn shift_offsets(springs: &[SpringParams], base: &DenseVector, a_tilde: &DenseVector) -> DenseVector {
    let m = springs.len();
    let mut b = base.clone();
    for (i, p) in springs.iter().enumerate() {
        let shift = p.s * p.h * a_tilde[i];
        b[i] -= shift;
        b[m + i] -= shift;
    }
    b
}

pub fn moving_set(ops: &AssembledOperators, t: f64, a_tilde: &DenseVector) -> MovingSetView {
    let offsets = shift_offsets(&ops.springs, &time_offsets(ops, t), a_tilde);
    MovingSetView {
        halfspaces: HalfspaceSet::new(moving_set_normals(ops), offsets)
            .expect("moving-set normals are nonzero"),
    }
}

/// `σ = Vŷ − G·r(t) + F·f(t)`.
pub fn stress(ops: &AssembledOperators, t: f64, y_hat: &DenseVector) -> DenseVector {
    &ops.v * y_hat - ops.g_r(t) + ops.f_f(t)
}

pub fn constraint_values(
    ops: &AssembledOperators,
    t: f64,
    a_tilde: &DenseVector,
    state: &SweepState,
) -> ConstraintEval {
    let sigma = stress(ops, t, &state.y_hat);
    let m = ops.m();
    let mut g_minus = DenseVector::zeros(m);
    let mut g_plus = DenseVector::zeros(m);
    for (i, p) in ops.springs.iter().enumerate() {
        let yield_part = p.s * (state.a[i] - p.h * a_tilde[i]) + p.c0;
        g_minus[i] = -sigma[i] - yield_part;
        g_plus[i] = sigma[i] - yield_part;
    }
    let active = |g: &DenseVector| -> Vec<usize> {
        (0..m).filter(|&i| g[i].abs() <= ACTIVE_TOL).collect()
    };
    ConstraintEval {
        active_minus: active(&g_minus),
        active_plus: active(&g_plus),
        g_minus,
        g_plus,
        tol_used: ACTIVE_TOL,
    }
}

/// A spring held at its failure state: damage and stress stay fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenSpring {
    pub index: usize,
    pub a: f64,
    pub sigma: f64,
}

/// `T(ã)` with a reusable projector. Normals never change, so the active set
/// of one call is a good warm start for the next.
#[derive(Debug, Clone)]
pub struct SweepMap<'a> {
    ops: &'a AssembledOperators,
    projector: Projector,
    /// Original moving-set row for each inequality kept in the projector.
    rows: Vec<usize>,
    frozen: Vec<FrozenSpring>,
}

impl<'a> SweepMap<'a> {
    pub fn new(ops: &'a AssembledOperators) -> Self {
        Self::with_frozen(ops, &[])
    }

    /// Replaces the two half-spaces of each frozen spring by the equalities
    /// `aᵢ = a*` and `σᵢ = σ*`.
    pub fn with_frozen(ops: &'a AssembledOperators, frozen: &[FrozenSpring]) -> Self {
        let m = ops.m();
        let dv = ops.dim_v();
        let all = moving_set_normals(ops);
        let rows: Vec<usize> = (0..2 * m)
            .filter(|r| !frozen.iter().any(|f| f.index == r % m))
            .collect();
        let ineq = DenseMatrix::from_fn(rows.len(), dv + m, |i, j| all[(rows[i], j)]);
        let eq = if frozen.is_empty() {
            None
        } else {
            let mut e = DenseMatrix::zeros(2 * frozen.len(), dv + m);
            for (k, f) in frozen.iter().enumerate() {
                e[(2 * k, dv + f.index)] = 1.0;
                for j in 0..dv {
                    e[(2 * k + 1, j)] = ops.v[(f.index, j)];
                }
            }
            Some(e)
        };
        SweepMap {
            ops,
            projector: Projector::new(&ineq, eq.as_ref(), ProjectionOptions::default()),
            rows,
            frozen: frozen.to_vec(),
        }
    }

    pub fn ops(&self) -> &AssembledOperators {
        self.ops
    }

    pub fn frozen(&self) -> &[FrozenSpring] {
        &self.frozen
    }

    /// Offsets for the projector at time `t` and guess `ã`.
    fn offsets(&self, base: &DenseVector, t: f64, a_tilde: &DenseVector) -> DenseVector {
        let full = shift_offsets(&self.ops.springs, base, a_tilde);
        let mut b = DenseVector::zeros(self.rows.len() + 2 * self.frozen.len());
        for (i, &r) in self.rows.iter().enumerate() {
            b[i] = full[r];
        }
        if !self.frozen.is_empty() {
            let gr = self.ops.g_r(t);
            let ff = self.ops.f_f(t);
            let off = self.rows.len();
            for (k, f) in self.frozen.iter().enumerate() {
                b[off + 2 * k] = f.a;
                b[off + 2 * k + 1] = f.sigma + gr[f.index] - ff[f.index];
            }
        }
        b
    }

    /// `T(ã)` where `base = time_offsets(ops, t)` has been computed once per step.
    pub fn apply_with_base(
        &mut self,
        prev: &SweepState,
        t: f64,
        base: &DenseVector,
        a_tilde: &DenseVector,
    ) -> Result<(DenseVector, SweepState), ProjectionError> {
        let b = self.offsets(base, t, a_tilde);
        let sol = self.projector.project(&prev.stacked(), &b)?;
        let state = SweepState::from_stacked(&sol.point, self.ops.dim_v());
        Ok((state.a.clone(), state))
    }

    pub fn apply(
        &mut self,
        prev: &SweepState,
        t: f64,
        a_tilde: &DenseVector,
    ) -> Result<(DenseVector, SweepState), ProjectionError> {
        let base = time_offsets(self.ops, t);
        self.apply_with_base(prev, t, &base, a_tilde)
    }
}

/// One evaluation of `T(ã)`: project `(ŷ_prev; a_prev)` onto 𝒞_V(t, ã) and
/// return the damage block together with the whole projected state.
pub fn t_map(
    ops: &AssembledOperators,
    prev: &SweepState,
    t_next: f64,
    a_tilde: &DenseVector,
) -> Result<(DenseVector, SweepState), ProjectionError> {
    SweepMap::new(ops).apply(prev, t_next, a_tilde)
}

/// Springs with both yield functions active and `h > 1`.
pub fn detect_failure(
    state: &SweepState,
    eval: &ConstraintEval,
    params: &[SpringParams],
) -> Vec<usize> {
    debug_assert_eq!(state.a.len(), params.len());
    params
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            p.h > 1.0 && eval.g_minus[*i] >= -FAILURE_TOL && eval.g_plus[*i] >= -FAILURE_TOL
        })
        .map(|(i, _)| i)
        .collect()
}

/// `max |hᵢ|`. Below one the moving set depends on the state in a
/// contractive way; at or above one uniqueness of the step is not implied.
pub fn contraction_diagnostic(params: &[SpringParams]) -> f64 {
    params.iter().fold(0.0, |m, p| m.max(p.h.abs()))
}

/// State of the unreduced process: `y ∈ 𝒱 ⊂ ℝᵐ` and the damage.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub y: DenseVector,
    pub a: DenseVector,
}

/// `T(ã)` in ℝ²ᵐ with metric `diag(K⁻¹, I)` and the constraint `y ∈ 𝒱`
/// imposed as `UᵀK⁻¹y = 0`.
pub fn t_map_full(
    ops: &AssembledOperators,
    prev: &FullState,
    t_next: f64,
    a_tilde: &DenseVector,
) -> Result<(DenseVector, FullState), ProjectionError> {
    let m = ops.m();
    let mut n = DenseMatrix::zeros(2 * m, 2 * m);
    for (i, p) in ops.springs.iter().enumerate() {
        n[(i, i)] = -1.0;
        n[(m + i, i)] = 1.0;
        n[(i, m + i)] = -p.s;
        n[(m + i, m + i)] = -p.s;
    }
    let b = shift_offsets(&ops.springs, &time_offsets(ops, t_next), a_tilde);
    let set = HalfspaceSet::new(n, b).expect("moving-set normals are nonzero");
    let k_inv_u = DenseMatrix::from_fn(m, ops.u.ncols(), |i, j| ops.u[(i, j)] / ops.stiffness[i]);
    let equalities: Vec<(DenseVector, f64)> = k_inv_u
        .column_iter()
        .map(|c| {
            let mut e = DenseVector::zeros(2 * m);
            e.rows_mut(0, m).copy_from(&c);
            (e, 0.0)
        })
        .collect();
    let mut metric = DenseMatrix::identity(2 * m, 2 * m);
    for i in 0..m {
        metric[(i, i)] = 1.0 / ops.stiffness[i];
    }
    let mut z = DenseVector::zeros(2 * m);
    z.rows_mut(0, m).copy_from(&prev.y);
    z.rows_mut(m, m).copy_from(&prev.a);
    let res = project_with_equalities(&z, &set, &equalities, &metric)?;
    let state = FullState {
        y: res.point.rows(0, m).into_owned(),
        a: res.point.rows(m, m).into_owned(),
    };
    Ok((state.a.clone(), state))
}
