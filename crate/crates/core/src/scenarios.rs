//! Problem generators, closed-form oracles and fixed-point charts of the
//! per-step map for two-spring systems.

use crate::lattice::{AssembledOperators, LatticeSpec, Loading, PiecewiseLinear, Spring};
use crate::numlin::{DenseMatrix, DenseVector};
use crate::polyproj::ProjectionError;
use crate::spring::SpringParams;
use crate::sweep::{constraint_values, detect_failure, SweepMap, SweepState};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

/// Nodes and springs removed from a generated lattice, addressed by grid
/// coordinates `(column, row)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Defect {
    pub removed_nodes: Vec<(usize, usize)>,
    pub removed_springs: Vec<((usize, usize), (usize, usize))>,
}

impl Defect {
    fn removes_node(&self, c: usize, r: usize) -> bool {
        self.removed_nodes.contains(&(c, r))
    }

    fn removes_spring(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        self.removed_springs
            .iter()
            .any(|&(p, q)| (p == a && q == b) || (p == b && q == a))
    }
}

/// Shared assembly for grid-addressed 2-D lattices.
struct GridBuilder {
    positions: Vec<f64>,
    index: HashMap<(usize, usize), usize>,
    springs: Vec<Spring>,
}

impl GridBuilder {
    fn new() -> Self {
        GridBuilder {
            positions: Vec::new(),
            index: HashMap::new(),
            springs: Vec::new(),
        }
    }

    fn add_node(&mut self, key: (usize, usize), x: f64, y: f64) {
        self.index.insert(key, self.positions.len() / 2);
        self.positions.push(x);
        self.positions.push(y);
    }

    fn connect(&mut self, a: (usize, usize), b: (usize, usize), params: SpringParams, defect: &Defect) {
        if defect.removes_spring(a, b) {
            return;
        }
        if let (Some(&i), Some(&j)) = (self.index.get(&a), self.index.get(&b)) {
            self.springs.push(Spring {
                origin: i.min(j),
                terminus: i.max(j),
                params,
            });
        }
    }

    /// Pins the vertical coordinate of every bottom node, drives the vertical
    /// coordinate of every top node by `drive`, and pins the horizontal
    /// coordinate of the leftmost bottom node.
    fn finish(
        self,
        bottom: Vec<(usize, usize)>,
        top: Vec<(usize, usize)>,
        drive: PiecewiseLinear,
        area: f64,
    ) -> LatticeSpec {
        let nd = self.positions.len();
        let bottom: Vec<usize> = bottom.iter().filter_map(|k| self.index.get(k).copied()).collect();
        let top: Vec<usize> = top.iter().filter_map(|k| self.index.get(k).copied()).collect();
        let mut rows: Vec<(usize, PiecewiseLinear)> = Vec::new();
        for &j in &bottom {
            rows.push((2 * j + 1, PiecewiseLinear::constant(0.0)));
        }
        for &j in &top {
            rows.push((2 * j + 1, drive.clone()));
        }
        if let Some(&j) = bottom.first() {
            rows.push((2 * j, PiecewiseLinear::constant(0.0)));
        }
        let mut r = DenseMatrix::zeros(rows.len(), nd);
        for (i, (dof, _)) in rows.iter().enumerate() {
            r[(i, *dof)] = 1.0;
        }
        LatticeSpec {
            dim: 2,
            positions: self.positions,
            springs: self.springs,
            constraints: r,
            loading: Loading {
                displacement: rows.into_iter().map(|(_, p)| p).collect(),
                forces: Vec::new(),
            },
            area: Some(area),
        }
    }
}

/// `cols × rows` grid with horizontal, vertical and both diagonal springs in
/// every cell. The bottom row is held vertically, the top row is displaced
/// upward by `drive(t)`, and the bottom-left node is held horizontally.
pub fn make_rectangular(
    cols: usize,
    rows: usize,
    spacing: f64,
    params: SpringParams,
    defect: Option<&Defect>,
    drive: PiecewiseLinear,
) -> LatticeSpec {
    let none = Defect::default();
    let defect = defect.unwrap_or(&none);
    let mut b = GridBuilder::new();
    for r in 0..rows {
        for c in 0..cols {
            if !defect.removes_node(c, r) {
                b.add_node((c, r), c as f64 * spacing, r as f64 * spacing);
            }
        }
    }
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            b.connect((c, r), (c + 1, r), params, defect);
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols {
            b.connect((c, r), (c, r + 1), params, defect);
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols.saturating_sub(1) {
            b.connect((c, r), (c + 1, r + 1), params, defect);
            b.connect((c + 1, r), (c, r + 1), params, defect);
        }
    }
    let bottom = (0..cols).map(|c| (c, 0)).collect();
    let top = (0..cols).map(|c| (c, rows - 1)).collect();
    let area = (cols as f64 - 1.0) * (rows as f64 - 1.0);
    b.finish(bottom, top, drive, area)
}

/// Triangular lattice with rows alternating between `row_nodes` nodes
/// (even rows, offset by half a spacing) and `row_nodes + 1` nodes (odd
/// rows). Neighbouring rows are joined by the two slanted springs of each
/// triangle. Horizontal springs join neighbours within a row; with
/// `boundary_row_springs = false` they are omitted on the first and last row.
/// Boundary conditions follow [`make_rectangular`].
pub fn make_triangular(
    rows: usize,
    row_nodes: usize,
    spacing: f64,
    params: SpringParams,
    boundary_row_springs: bool,
    defect: Option<&Defect>,
    drive: PiecewiseLinear,
) -> LatticeSpec {
    let none = Defect::default();
    let defect = defect.unwrap_or(&none);
    let height = spacing * 3f64.sqrt() / 2.0;
    let count = |r: usize| if r % 2 == 0 { row_nodes } else { row_nodes + 1 };
    let mut b = GridBuilder::new();
    for r in 0..rows {
        for c in 0..count(r) {
            if defect.removes_node(c, r) {
                continue;
            }
            let x = if r % 2 == 0 {
                (c as f64 + 0.5) * spacing
            } else {
                c as f64 * spacing
            };
            b.add_node((c, r), x, r as f64 * height);
        }
    }
    for r in 0..rows {
        if !boundary_row_springs && (r == 0 || r + 1 == rows) {
            continue;
        }
        for c in 0..count(r).saturating_sub(1) {
            b.connect((c, r), (c + 1, r), params, defect);
        }
    }
    for r in 0..rows.saturating_sub(1) {
        let (short, long) = if r % 2 == 0 { (r, r + 1) } else { (r + 1, r) };
        for c in 0..row_nodes {
            b.connect((c, short), (c, long), params, defect);
            b.connect((c, short), (c + 1, long), params, defect);
        }
    }
    let bottom = (0..count(0)).map(|c| (c, 0)).collect();
    let top = (0..count(rows - 1)).map(|c| (c, rows - 1)).collect();
    let area = (row_nodes as f64 - 1.0) * (rows as f64 - 1.0);
    b.finish(bottom, top, drive, area)
}

/// Two springs in series on the nodes 0, 1, 2 of a line. The outer nodes are
/// constrained; the right one is displaced by `drive(t)`.
pub fn make_two_spring(p1: SpringParams, p2: SpringParams, drive: PiecewiseLinear) -> LatticeSpec {
    let mut r = DenseMatrix::zeros(2, 3);
    r[(0, 0)] = 1.0;
    r[(1, 2)] = 1.0;
    LatticeSpec {
        dim: 1,
        positions: vec![0.0, 1.0, 2.0],
        springs: vec![
            Spring { origin: 0, terminus: 1, params: p1 },
            Spring { origin: 1, terminus: 2, params: p2 },
        ],
        constraints: r,
        loading: Loading {
            displacement: vec![PiecewiseLinear::constant(0.0), drive],
            forces: Vec::new(),
        },
        area: None,
    }
}

/// [`make_two_spring`] with a force program on the middle node.
pub fn make_two_spring_with_force(
    p1: SpringParams,
    p2: SpringParams,
    drive: PiecewiseLinear,
    middle_force: PiecewiseLinear,
) -> LatticeSpec {
    let mut spec = make_two_spring(p1, p2, drive);
    spec.loading.forces.push((1, middle_force));
    spec
}

/// One spring between two fully constrained nodes; the right node is
/// displaced by `drive(t)`, so the spring elongation is `l(t)`.
pub fn make_single_spring(p: SpringParams, drive: PiecewiseLinear) -> LatticeSpec {
    LatticeSpec {
        dim: 1,
        positions: vec![0.0, 1.0],
        springs: vec![Spring { origin: 0, terminus: 1, params: p }],
        constraints: DenseMatrix::identity(2, 2),
        loading: Loading {
            displacement: vec![PiecewiseLinear::constant(0.0), drive],
            forces: Vec::new(),
        },
        area: None,
    }
}

/// Spring permutation induced by reflecting the lattice about the vertical
/// line through its horizontal midpoint, or `None` if the lattice is not
/// mirror symmetric.
pub fn mirror_permutation(spec: &LatticeSpec) -> Option<Vec<usize>> {
    if spec.dim < 1 {
        return None;
    }
    let d = spec.dim;
    let xs: Vec<f64> = (0..spec.n_nodes()).map(|j| spec.positions[j * d]).collect();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = (hi - lo).abs().max(1.0);
    let key = |p: &[f64]| -> Vec<i64> { p.iter().map(|v| (v / scale * 1e9).round() as i64).collect() };
    let mut node_of: HashMap<Vec<i64>, usize> = HashMap::new();
    for j in 0..spec.n_nodes() {
        node_of.insert(key(spec.node(j)), j);
    }
    let mirror_node: Option<Vec<usize>> = (0..spec.n_nodes())
        .map(|j| {
            let mut p = spec.node(j).to_vec();
            p[0] = lo + hi - p[0];
            node_of.get(&key(&p)).copied()
        })
        .collect();
    let mirror_node = mirror_node?;
    let mut spring_of: HashMap<(usize, usize), usize> = HashMap::new();
    for (i, s) in spec.springs.iter().enumerate() {
        spring_of.insert((s.origin.min(s.terminus), s.origin.max(s.terminus)), i);
    }
    spec.springs
        .iter()
        .map(|s| {
            let (a, b) = (mirror_node[s.origin], mirror_node[s.terminus]);
            spring_of.get(&(a.min(b), a.max(b))).copied()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle precondition violated: {0}")]
    PreconditionViolated(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleSpringSolution {
    pub y: f64,
    pub a: f64,
    pub sigma: f64,
}

/// Closed-form plastic evolution of one spring with elongation `l(t)`,
/// starting from a state on one of its yield facets at `t0`.
///
/// On the upper facet the rates are `ẏ = −ck·l̇`, `ȧ = cs·l̇` with
/// `c = 1/(1 + k⁻¹s²(1−h))`; on the lower facet `ȧ = −cs·l̇`.
pub fn oracle_single_spring(
    p: &SpringParams,
    sigma0: f64,
    a0: f64,
    t0: f64,
    l: &PiecewiseLinear,
    t: f64,
) -> Result<SingleSpringSolution, OracleError> {
    p.validate()
        .map_err(|e| OracleError::PreconditionViolated(e.to_string()))?;
    if t < t0 {
        return Err(OracleError::PreconditionViolated("t precedes t0".into()));
    }
    let limit = p.c0 + p.s * (1.0 - p.h) * a0;
    let upper = (sigma0 - limit).abs() <= 1e-9;
    let lower = (-sigma0 - limit).abs() <= 1e-9;
    if !upper && !lower {
        return Err(OracleError::PreconditionViolated(
            "initial stress is not on a yield facet".into(),
        ));
    }
    let mut samples = vec![l.eval(t0)];
    samples.extend(l.times.iter().filter(|&&s| s > t0 && s < t).map(|&s| l.eval(s)));
    samples.push(l.eval(t));
    let direction = if upper { 1.0 } else { -1.0 };
    if samples.windows(2).any(|w| direction * (w[1] - w[0]) < 0.0) {
        return Err(OracleError::PreconditionViolated(
            "loading must move monotonically away from the facet".into(),
        ));
    }
    let c = 1.0 / (1.0 + p.softening_ratio());
    let dl = l.eval(t) - l.eval(t0);
    let y0 = sigma0 - p.k * l.eval(t0);
    let y = y0 - c * p.k * dl;
    let a = a0 + direction * c * p.s * dl;
    let sigma = y + p.k * l.eval(t);
    let opposite = -direction * sigma - (p.c0 + p.s * (1.0 - p.h) * a);
    if opposite > 1e-9 {
        return Err(OracleError::PreconditionViolated(
            "the opposite yield facet is reached before t".into(),
        ));
    }
    Ok(SingleSpringSolution { y, a, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchKind {
    Localized1,
    Localized2,
    Distributed,
    PerfectFamily { theta_min: f64, theta_max: f64 },
}

/// Per-unit-load rates `(dŷ/dl, da₁/dl, da₂/dl)` of one evolution branch
/// leaving the state where both springs sit on their upper facets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchSolution {
    pub kind: BranchKind,
    pub rate: [f64; 3],
    pub exists: bool,
    pub existence_margin: f64,
}

fn kappa(p1: &SpringParams, p2: &SpringParams) -> f64 {
    1.0 / (1.0 / p1.k + 1.0 / p2.k).sqrt()
}

/// Rates of the member `θ` of the perfectly plastic family: the load is
/// shared as `θ` and `1 − θ` between the two springs.
pub fn perfect_family_rate(p1: &SpringParams, p2: &SpringParams, theta: f64) -> [f64; 3] {
    [-kappa(p1, p2), theta * p1.s, (1.0 - theta) * p2.s]
}

/// Stress rate `dσ/dl` of both springs for a branch rate. Both springs carry
/// the same stress since the chain has one self-stress mode.
pub fn branch_stress_rate(p1: &SpringParams, p2: &SpringParams, rate: &[f64; 3]) -> f64 {
    let k = kappa(p1, p2);
    k * rate[0] + k * k
}

/// Branches for springs of equal plasticity type. Mixed types are not
/// covered and give an empty list.
pub fn oracle_two_spring_branches(p1: &SpringParams, p2: &SpringParams) -> Vec<BranchSolution> {
    let k = kappa(p1, p2);
    let compliance = 1.0 / p1.k + 1.0 / p2.k;
    let q1 = p1.s * p1.s * (1.0 - p1.h);
    let q2 = p2.s * p2.s * (1.0 - p2.h);
    let n1 = [k, -p1.s, 0.0];
    let n2 = [k, 0.0, -p2.s];
    let scaled = |a: f64, u: [f64; 3], b: f64, v: [f64; 3], den: f64| -> [f64; 3] {
        [
            -(a * u[0] + b * v[0]) / den,
            -(a * u[1] + b * v[1]) / den,
            -(a * u[2] + b * v[2]) / den,
        ]
    };
    let distributed = |exists: bool| {
        let d = q1 + q2 + compliance * q1 * q2;
        BranchSolution {
            kind: BranchKind::Distributed,
            rate: scaled(q2, n1, q1, n2, d),
            exists,
            existence_margin: d,
        }
    };
    let localized = |kind: BranchKind, q: f64, n: [f64; 3]| {
        let margin = compliance * q;
        BranchSolution {
            kind,
            rate: scaled(1.0, n, 0.0, n, 1.0 + margin),
            exists: margin > -1.0,
            existence_margin: margin,
        }
    };
    let hard = |h: f64| h < 1.0;
    let soft = |h: f64| h > 1.0;
    if p1.h == 1.0 && p2.h == 1.0 {
        return vec![BranchSolution {
            kind: BranchKind::PerfectFamily { theta_min: 0.0, theta_max: 1.0 },
            rate: perfect_family_rate(p1, p2, 0.5),
            exists: true,
            existence_margin: 0.0,
        }];
    }
    if hard(p1.h) && hard(p2.h) {
        return vec![distributed(true)];
    }
    if soft(p1.h) && soft(p2.h) {
        let d = q1 + q2 + compliance * q1 * q2;
        return vec![
            localized(BranchKind::Localized1, q1, n1),
            localized(BranchKind::Localized2, q2, n2),
            distributed(d < 0.0),
        ];
    }
    Vec::new()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointKind {
    Stable,
    Saddle,
    Unstable,
    /// Member of a continuum of fixed points; neutral along it.
    StableSet,
}

impl std::fmt::Display for FixedPointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FixedPointKind::Stable => "stable",
            FixedPointKind::Saddle => "saddle",
            FixedPointKind::Unstable => "unstable",
            FixedPointKind::StableSet => "stable-set",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub location: [f64; 2],
    pub residual: f64,
    pub kind: FixedPointKind,
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]` in the `(ã₁, ã₂)` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn size(&self) -> f64 {
        (self.x1 - self.x0).max(self.y1 - self.y0)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let tol = 1e-12 * self.size();
        p[0] >= self.x0 - tol && p[0] <= self.x1 + tol && p[1] >= self.y0 - tol && p[1] <= self.y1 + tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityChart {
    /// `(ã, T(ã))` samples.
    pub grid: Vec<([f64; 2], [f64; 2])>,
    pub fixed_points: Vec<FixedPoint>,
    /// Fixed points whose image has a spring at complete failure. These are
    /// collapsed states rather than evolution branches and are not classified.
    pub failure_points: Vec<[f64; 2]>,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChartError {
    #[error("charts need exactly two damage variables, got {0}")]
    UnsupportedDimension(usize),
    #[error("grid must have at least 2 points per side")]
    GridTooSmall,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Fixed points with residual below this are reported.
pub const FIXED_POINT_TOL: f64 = 1e-8;

struct ChartMap<'a> {
    ops: &'a AssembledOperators,
    prev: &'a SweepState,
    t: f64,
}

impl ChartMap<'_> {
    fn eval(&self, a: [f64; 2]) -> Result<[f64; 2], ProjectionError> {
        let mut map = SweepMap::new(self.ops);
        let (out, _) = map.apply(self.prev, self.t, &DenseVector::from_row_slice(&a))?;
        Ok([out[0], out[1]])
    }

    /// Whether the image state of `a` has a spring at complete failure.
    fn at_failure(&self, a: [f64; 2]) -> Result<bool, ProjectionError> {
        let guess = DenseVector::from_row_slice(&a);
        let (out, state) = SweepMap::new(self.ops).apply(self.prev, self.t, &guess)?;
        let eval = constraint_values(self.ops, self.t, &out, &state);
        Ok(!detect_failure(&state, &eval, &self.ops.springs).is_empty())
    }

    fn residual(&self, a: [f64; 2]) -> Result<(f64, [f64; 2]), ProjectionError> {
        let ta = self.eval(a)?;
        let f = [ta[0] - a[0], ta[1] - a[1]];
        Ok((f[0].abs().max(f[1].abs()), f))
    }

    fn jacobian(&self, a: [f64; 2], h: f64) -> Result<Matrix2<f64>, ProjectionError> {
        let mut j = Matrix2::zeros();
        for k in 0..2 {
            let mut ap = a;
            let mut am = a;
            ap[k] += h;
            am[k] -= h;
            let (tp, tm) = (self.eval(ap)?, self.eval(am)?);
            for i in 0..2 {
                j[(i, k)] = (tp[i] - tm[i]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    /// Damped Newton on `T(a) − a` with a minimum-norm step, which also
    /// converges onto a segment of fixed points.
    fn refine(&self, start: [f64; 2], h: f64, max_step: f64) -> Result<Option<(f64, [f64; 2])>, ProjectionError> {
        let mut a = start;
        let (mut r, mut f) = self.residual(a)?;
        for _ in 0..60 {
            if r < 1e-3 * FIXED_POINT_TOL {
                break;
            }
            let jf = self.jacobian(a, h)? - Matrix2::identity();
            let svd = jf.svd(true, true);
            let mut step = match svd.solve(&Vector2::new(-f[0], -f[1]), 1e-6 * svd.singular_values.max()) {
                Ok(s) => s,
                Err(_) => break,
            };
            if step.amax() > max_step {
                step *= max_step / step.amax();
            }
            let mut lambda = 1.0;
            let mut improved = false;
            while lambda > 1e-6 {
                let cand = [a[0] + lambda * step[0], a[1] + lambda * step[1]];
                let (rc, fc) = self.residual(cand)?;
                if rc < r {
                    a = cand;
                    r = rc;
                    f = fc;
                    improved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok(if r < FIXED_POINT_TOL { Some((r, a)) } else { None })
    }

    /// Fate of `T`-iterates started at `a* + δv`: −1 back to `a*`, +1 away,
    /// 0 neither.
    fn fate(&self, center: [f64; 2], dir: [f64; 2], delta: f64) -> Result<i32, ProjectionError> {
        let mut a = [center[0] + delta * dir[0], center[1] + delta * dir[1]];
        for _ in 0..400 {
            a = self.eval(a)?;
            let d = (a[0] - center[0]).abs().max((a[1] - center[1]).abs());
            if d > 10.0 * delta {
                return Ok(1);
            }
            if d < 1e-3 * delta {
                return Ok(-1);
            }
        }
        Ok(0)
    }

    fn classify(&self, a: [f64; 2], delta: f64, h: f64) -> Result<FixedPointKind, ProjectionError> {
        let j = self.jacobian(a, h)?;
        let mut dirs: Vec<[f64; 2]> = Vec::new();
        let tr = j.trace();
        let disc = tr * tr / 4.0 - j.determinant();
        if disc > 0.0 {
            for mu in [tr / 2.0 + disc.sqrt(), tr / 2.0 - disc.sqrt()] {
                let m = j - Matrix2::identity() * mu;
                // A null vector of the singular 2×2 matrix `m`.
                let v = if m.row(0).norm() >= m.row(1).norm() {
                    Vector2::new(-m[(0, 1)], m[(0, 0)])
                } else {
                    Vector2::new(-m[(1, 1)], m[(1, 0)])
                };
                if v.norm() > 0.0 {
                    let v = v.normalize();
                    dirs.push([v[0], v[1]]);
                }
            }
        }
        if dirs.len() < 2 {
            dirs = vec![[1.0, 0.0], [0.0, 1.0]];
        }
        let mut fates = Vec::new();
        for d in &dirs {
            fates.push(self.fate(a, *d, delta)?);
            fates.push(self.fate(a, [-d[0], -d[1]], delta)?);
        }
        // A direction counts as leaving if either sign leaves.
        let per_dir: Vec<i32> = fates.chunks(2).map(|c| c[0].max(c[1])).collect();
        Ok(if per_dir.iter().all(|&f| f == -1) {
            FixedPointKind::Stable
        } else if per_dir.iter().all(|&f| f == 1) {
            FixedPointKind::Unstable
        } else if per_dir.contains(&1) {
            FixedPointKind::Saddle
        } else {
            FixedPointKind::StableSet
        })
    }
}

/// Samples `T` on a `grid_n × grid_n` grid over `region`, refines every
/// local minimum of `‖T(ã) − ã‖∞` by Newton iteration, and classifies the
/// fixed points found by iterating `T` from small perturbations along the
/// eigendirections of its Jacobian.
pub fn stability_chart(
    ops: &AssembledOperators,
    prev: &SweepState,
    t_next: f64,
    region: Region,
    grid_n: usize,
) -> Result<StabilityChart, ChartError> {
    if ops.m() != 2 {
        return Err(ChartError::UnsupportedDimension(ops.m()));
    }
    if grid_n < 2 {
        return Err(ChartError::GridTooSmall);
    }
    let map = ChartMap { ops, prev, t: t_next };
    let coord = |i: usize, j: usize| -> [f64; 2] {
        [
            region.x0 + (region.x1 - region.x0) * i as f64 / (grid_n - 1) as f64,
            region.y0 + (region.y1 - region.y0) * j as f64 / (grid_n - 1) as f64,
        ]
    };
    let samples: Vec<([f64; 2], [f64; 2])> = (0..grid_n * grid_n)
        .into_par_iter()
        .map(|k| {
            let a = coord(k % grid_n, k / grid_n);
            map.eval(a).map(|ta| (a, ta))
        })
        .collect::<Result<_, _>>()?;
    let res: Vec<f64> = samples
        .iter()
        .map(|(a, ta)| (ta[0] - a[0]).abs().max((ta[1] - a[1]).abs()))
        .collect();

    let mut candidates = Vec::new();
    for j in 0..grid_n {
        for i in 0..grid_n {
            let k = j * grid_n + i;
            let mut is_min = true;
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || ni < 0 || nj < 0 || ni >= grid_n as i64 || nj >= grid_n as i64 {
                        continue;
                    }
                    if res[nj as usize * grid_n + ni as usize] < res[k] {
                        is_min = false;
                    }
                }
            }
            if is_min {
                candidates.push(samples[k].0);
            }
        }
    }

    let size = region.size();
    let fd_step = 1e-7 * size;
    let refined: Vec<Option<(f64, [f64; 2])>> = candidates
        .par_iter()
        .map(|c| map.refine(*c, fd_step, size))
        .collect::<Result<_, _>>()?;
    let spacing = size / (grid_n - 1) as f64;
    let mut points: Vec<(f64, [f64; 2])> = Vec::new();
    for (r, a) in refined.into_iter().flatten() {
        if !region.contains(a) {
            continue;
        }
        match points
            .iter_mut()
            .find(|(_, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()) < 0.5 * spacing)
        {
            Some(existing) => {
                if r < existing.0 {
                    *existing = (r, a);
                }
            }
            None => points.push((r, a)),
        }
    }
    points.sort_by(|p, q| p.1[0].total_cmp(&q.1[0]).then(p.1[1].total_cmp(&q.1[1])));
    let mut failure_points = Vec::new();
    let mut kept = Vec::new();
    for (r, a) in points {
        if map.at_failure(a)? {
            failure_points.push(a);
        } else {
            kept.push((r, a));
        }
    }
    let points = kept;
    let delta = 1e-4 * size;
    let fixed_points = points
        .par_iter()
        .map(|(r, a)| {
            map.classify(*a, delta, fd_step).map(|kind| FixedPoint {
                location: *a,
                residual: *r,
                kind,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StabilityChart {
        grid: samples,
        fixed_points,
        failure_points,
        region,
    })
}
