//! Implicit catch-up time stepping with an inner fixed-point iteration,
//! plus recovery of stress, strain, plastic strain and displacements.

use crate::lattice::{recover_displacements, AssembledOperators};
use crate::numlin::{DenseMatrix, DenseVector};
use crate::polyproj::ProjectionError;
use crate::sweep::{
    constraint_values, detect_failure, stress, t_map_full, time_offsets, ConstraintEval,
    FrozenSpring, FullState, SweepMap, SweepState, ACTIVE_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum TimePartition {
    Uniform(usize),
    /// Interior and final times; `t0` is prepended.
    Breakpoints(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// Damage of the previous accepted step.
    Previous,
    /// `max(2a^{j−1} − a^{j−2}, a^{j−1})`.
    Extrapolated,
    /// Previous damage plus `magnitude` times a fixed seeded vector `v` in
    /// `[0, 1)ᵐ`. With a spring permutation `P` (an involution such as a
    /// mirror reflection) the vector is replaced by `v − Pv`, so opposite
    /// magnitudes give perturbations that are images of each other under `P`.
    Perturbed {
        seed: u64,
        magnitude: f64,
        antisymmetric_under: Option<Vec<usize>>,
    },
    /// Per-step overrides `(step index, guess)`; other steps use `Previous`.
    Explicit(Vec<(usize, DenseVector)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailurePolicy {
    Halt,
    /// Holds a failed spring's damage and stress fixed and keeps going.
    /// This continuation is not part of the mechanical model.
    FreezeSpring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatchUpConfig {
    pub t0: f64,
    pub t_end: f64,
    pub partition: TimePartition,
    pub eps: f64,
    pub i_max: usize,
    pub r_div: f64,
    pub initial_value: InitialGuess,
    pub failure_policy: FailurePolicy,
}

impl CatchUpConfig {
    /// Uniform steps with default tolerances.
    pub fn uniform(t0: f64, t_end: f64, steps: usize) -> Self {
        CatchUpConfig {
            t0,
            t_end,
            partition: TimePartition::Uniform(steps),
            eps: 1e-10,
            i_max: 10_000,
            r_div: 1e6,
            initial_value: InitialGuess::Previous,
            failure_policy: FailurePolicy::Halt,
        }
    }

    pub fn validate(&self) -> Result<(), CatchUpError> {
        let mut problems = Vec::new();
        if !(self.t0 < self.t_end) {
            problems.push(format!("t0 = {} must be below T = {}", self.t0, self.t_end));
        }
        if !(self.eps > 0.0) {
            problems.push("eps must be positive".to_string());
        }
        if self.i_max < 1 {
            problems.push("i_max must be at least 1".to_string());
        }
        if !(self.r_div > 0.0) {
            problems.push("r_div must be positive".to_string());
        }
        match &self.partition {
            TimePartition::Uniform(0) => problems.push("step count must be positive".into()),
            TimePartition::Breakpoints(b) => {
                let mut last = self.t0;
                for &t in b {
                    if !(t > last) {
                        problems.push("breakpoints must increase strictly from t0".into());
                        break;
                    }
                    last = t;
                }
                if b.last().copied() != Some(self.t_end) {
                    problems.push("last breakpoint must equal T".into());
                }
            }
            _ => {}
        }
        if let InitialGuess::Perturbed { magnitude, antisymmetric_under, .. } = &self.initial_value {
            if !magnitude.is_finite() {
                problems.push("perturbation magnitude must be finite".into());
            }
            if let Some(perm) = antisymmetric_under {
                let mut seen = vec![false; perm.len()];
                let involution = perm.iter().enumerate().all(|(i, &j)| {
                    j < perm.len() && perm[j] == i && !std::mem::replace(&mut seen[j], true)
                });
                if !involution {
                    problems.push("perturbation permutation must be an involution".into());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CatchUpError::InvalidConfig(problems.join("; ")))
        }
    }

    /// `t_0 < t_1 < … < t_k = T`.
    pub fn times(&self) -> Vec<f64> {
        match &self.partition {
            TimePartition::Uniform(k) => {
                let span = self.t_end - self.t0;
                (0..=*k)
                    .map(|j| {
                        if j == *k {
                            self.t_end
                        } else {
                            self.t0 + span * (j as f64) / (*k as f64)
                        }
                    })
                    .collect()
            }
            TimePartition::Breakpoints(b) => {
                let mut t = vec![self.t0];
                t.extend_from_slice(b);
                t
            }
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum CatchUpError {
    #[error("initial stress is not self-equilibrated (distance to V: {residual:e})")]
    NotSelfStressed { residual: f64 },
    #[error("initial state violates the yield constraints (max g = {max_g:e})")]
    Infeasible { max_g: f64 },
    #[error("fixed-point iteration diverged at step {step} (t = {t})")]
    Diverged {
        step: usize,
        t: f64,
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("total stress needs d = 2, got d = {0}")]
    WrongDimension(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: SweepState,
    pub inner_iterations: usize,
    pub converged: bool,
    pub active_set: ConstraintEval,
    pub failed_springs: Vec<usize>,
}

/// Physical fields at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Fields {
    pub sigma: DenseVector,
    pub eps: DenseVector,
    pub p: DenseVector,
    pub x: DenseVector,
    pub zeta: DenseVector,
    /// False for springs with `s = 0`, whose plastic strain is not tracked.
    pub p_available: Vec<bool>,
    /// `‖Dφ·ζ − x‖∞`.
    pub compatibility_residual: f64,
    /// `‖R(ζ+ξ0) + r(t)‖∞`.
    pub constraint_residual: f64,
    pub equilibrium_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub step: usize,
    pub t: f64,
    pub state: SweepState,
    pub fields: Fields,
    pub inner_iterations: usize,
    pub total_stress: Option<f64>,
    pub constraints: ConstraintEval,
    /// Springs that reached complete failure at this step.
    pub failed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Completed,
    HaltedOnFailure { step: usize, springs: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("a trajectory holds at least the initial record")
    }

    pub fn failure_events(&self) -> Vec<(usize, usize)> {
        self.records
            .iter()
            .flat_map(|r| r.failed.iter().map(move |&i| (r.step, i)))
            .collect()
    }
}

/// Reduced initial state from a stress field: `y0 = σ0 + G·r(t0) − F·f(t0)`
/// must lie in 𝒱 and satisfy the yield constraints at `(t0, a0)`.
pub fn initial_state(
    ops: &AssembledOperators,
    sigma0: &DenseVector,
    a0: &DenseVector,
    t0: f64,
) -> Result<SweepState, CatchUpError> {
    let y0 = sigma0 + ops.g_r(t0) - ops.f_f(t0);
    let y_hat = &ops.p_v * &y0;
    let residual = (&ops.v * &y_hat - &y0).amax();
    if residual > 1e-8 {
        return Err(CatchUpError::NotSelfStressed { residual });
    }
    let state = SweepState { y_hat, a: a0.clone() };
    let eval = constraint_values(ops, t0, a0, &state);
    if eval.max_g() > ACTIVE_TOL {
        return Err(CatchUpError::Infeasible { max_g: eval.max_g() });
    }
    Ok(state)
}

/// The fixed seeded vector used by [`InitialGuess::Perturbed`].
pub fn perturbation_vector(seed: u64, m: usize) -> DenseVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseVector::from_iterator(m, (0..m).map(|_| rng.random::<f64>()))
}

impl InitialGuess {
    /// The constant offset added to the previous damage, if any.
    pub fn perturbation(&self, m: usize) -> Result<Option<DenseVector>, CatchUpError> {
        let InitialGuess::Perturbed { seed, magnitude, antisymmetric_under } = self else {
            return Ok(None);
        };
        let v = perturbation_vector(*seed, m);
        let v = match antisymmetric_under {
            None => v,
            Some(perm) if perm.len() == m => {
                DenseVector::from_iterator(m, (0..m).map(|i| v[i] - v[perm[i]]))
            }
            Some(perm) => {
                return Err(CatchUpError::InvalidConfig(format!(
                    "perturbation permutation has {} entries for {m} springs",
                    perm.len()
                )))
            }
        };
        Ok(Some(v * *magnitude))
    }
}

fn iterate(
    map: &mut SweepMap<'_>,
    prev: &SweepState,
    t: f64,
    guess: DenseVector,
    config: &CatchUpConfig,
) -> Result<(SweepState, usize, bool), ProjectionError> {
    let base = time_offsets(map.ops(), t);
    let mut a = guess;
    for it in 1..=config.i_max {
        let (a_new, full) = map.apply_with_base(prev, t, &base, &a)?;
        let norm = full.norm_inf();
        if !norm.is_finite() || norm > config.r_div {
            return Ok((full, it, false));
        }
        let change = (&a_new - &a).amax();
        if change < config.eps {
            return Ok((full, it, true));
        }
        a = a_new;
    }
    let (_, full) = map.apply_with_base(prev, t, &base, &a)?;
    Ok((full, config.i_max, false))
}

fn finish_step(
    ops: &AssembledOperators,
    t: f64,
    state: SweepState,
    inner_iterations: usize,
    converged: bool,
) -> StepResult {
    let active_set = constraint_values(ops, t, &state.a, &state);
    let failed_springs = detect_failure(&state, &active_set, &ops.springs);
    StepResult {
        state,
        inner_iterations,
        converged,
        active_set,
        failed_springs,
    }
}

/// One catch-up step from `prev` to `t_j`. The guess is `a_prev`, plus the
/// perturbation for [`InitialGuess::Perturbed`]; history-based strategies
/// need [`run`].
pub fn step(
    ops: &AssembledOperators,
    prev: &SweepState,
    t_j: f64,
    config: &CatchUpConfig,
) -> Result<StepResult, CatchUpError> {
    let guess = match config.initial_value.perturbation(ops.m())? {
        Some(d) => &prev.a + d,
        None => prev.a.clone(),
    };
    let mut map = SweepMap::new(ops);
    let (state, it, converged) = iterate(&mut map, prev, t_j, guess, config)?;
    let res = finish_step(ops, t_j, state, it, converged);
    if !converged {
        return Err(CatchUpError::Diverged {
            step: 0,
            t: t_j,
            partial: Box::new(Trajectory {
                records: Vec::new(),
                outcome: Outcome::Completed,
            }),
        });
    }
    Ok(res)
}

/// Vertical virial stress `(1/A) Σ σᵢ 𝒟ᵢ₂² φᵢ`.
pub fn total_stress(
    sigma: &DenseVector,
    directions: &DenseMatrix,
    rest_lengths: &DenseVector,
    area: f64,
) -> Result<f64, CatchUpError> {
    if directions.ncols() != 2 {
        return Err(CatchUpError::WrongDimension(directions.ncols()));
    }
    let sum: f64 = (0..sigma.len())
        .map(|i| sigma[i] * directions[(i, 1)] * directions[(i, 1)] * rest_lengths[i])
        .sum();
    Ok(sum / area)
}

/// Fields at `t` from the reduced state, integrating plastic strain from the
/// previous record with the sign of the stress at the end of the step.
pub fn recover_fields(
    ops: &AssembledOperators,
    state: &SweepState,
    prev: Option<(&SweepState, &Fields)>,
    t: f64,
) -> Fields {
    let m = ops.m();
    let sigma = stress(ops, t, &state.y_hat);
    let eps = sigma.component_div(&ops.stiffness);
    let mut p = DenseVector::zeros(m);
    let mut p_available = vec![true; m];
    for (i, sp) in ops.springs.iter().enumerate() {
        if sp.s == 0.0 {
            p_available[i] = false;
        }
    }
    if let Some((prev_state, prev_fields)) = prev {
        p.copy_from(&prev_fields.p);
        for (i, sp) in ops.springs.iter().enumerate() {
            let da = state.a[i] - prev_state.a[i];
            if sp.s > 0.0 && da != 0.0 && sigma[i] != 0.0 {
                p[i] += sigma[i].signum() * da / sp.s;
            }
        }
    }
    let x = &eps + &p;
    let rec = recover_displacements(ops, &x, &ops.displacement_load(t), &ops.xi0);
    let equilibrium_residual = ops.equilibrium_residual(&sigma, t);
    Fields {
        sigma,
        eps,
        p,
        x,
        zeta: rec.zeta,
        p_available,
        compatibility_residual: rec.compatibility_residual,
        constraint_residual: rec.constraint_residual,
        equilibrium_residual,
    }
}

fn make_record(
    ops: &AssembledOperators,
    step: usize,
    t: f64,
    state: SweepState,
    fields: Fields,
    inner_iterations: usize,
    constraints: ConstraintEval,
    failed: Vec<usize>,
) -> Record {
    let total = match ops.area {
        Some(area) if ops.dim == 2 => {
            total_stress(&fields.sigma, &ops.directions, &ops.rest_lengths, area).ok()
        }
        _ => None,
    };
    Record {
        step,
        t,
        state,
        fields,
        inner_iterations,
        total_stress: total,
        constraints,
        failed,
    }
}

/// Runs the catch-up scheme from `initial` at `config.t0`. Plastic strain
/// starts at zero.
pub fn run(
    ops: &AssembledOperators,
    initial: &SweepState,
    config: &CatchUpConfig,
) -> Result<Trajectory, CatchUpError> {
    run_with_plastic_strain(ops, initial, &DenseVector::zeros(ops.m()), config)
}

pub fn run_with_plastic_strain(
    ops: &AssembledOperators,
    initial: &SweepState,
    p0: &DenseVector,
    config: &CatchUpConfig,
) -> Result<Trajectory, CatchUpError> {
    config.validate()?;
    let times = config.times();
    let m = ops.m();
    let mut fields0 = recover_fields(ops, initial, None, times[0]);
    fields0.p.copy_from(p0);
    fields0.x = &fields0.eps + p0;
    let rec = recover_displacements(ops, &fields0.x, &ops.displacement_load(times[0]), &ops.xi0);
    fields0.zeta = rec.zeta;
    fields0.compatibility_residual = rec.compatibility_residual;
    fields0.constraint_residual = rec.constraint_residual;
    let eval0 = constraint_values(ops, times[0], &initial.a, initial);
    let mut records = vec![make_record(
        ops,
        0,
        times[0],
        initial.clone(),
        fields0,
        0,
        eval0,
        Vec::new(),
    )];

    let perturbation = config.initial_value.perturbation(m)?;
    let mut frozen: Vec<FrozenSpring> = Vec::new();
    let mut map = SweepMap::new(ops);

    for (j, &t) in times.iter().enumerate().skip(1) {
        let prev = records.last().unwrap();
        let guess = match &config.initial_value {
            InitialGuess::Previous => prev.state.a.clone(),
            InitialGuess::Extrapolated => {
                if records.len() >= 2 {
                    let older = &records[records.len() - 2].state.a;
                    let a1 = &prev.state.a;
                    DenseVector::from_iterator(
                        m,
                        (0..m).map(|i| (2.0 * a1[i] - older[i]).max(a1[i])),
                    )
                } else {
                    prev.state.a.clone()
                }
            }
            InitialGuess::Perturbed { .. } => {
                &prev.state.a + perturbation.as_ref().expect("perturbation is set")
            }
            InitialGuess::Explicit(overrides) => overrides
                .iter()
                .find(|(s, _)| *s == j)
                .map(|(_, a)| a.clone())
                .unwrap_or_else(|| prev.state.a.clone()),
        };
        let prev_state = prev.state.clone();
        let (state, it, converged) = iterate(&mut map, &prev_state, t, guess, config)?;
        if !converged {
            return Err(CatchUpError::Diverged {
                step: j,
                t,
                partial: Box::new(Trajectory {
                    records,
                    outcome: Outcome::Completed,
                }),
            });
        }
        let res = finish_step(ops, t, state, it, converged);
        let prev = records.last().unwrap();
        let fields = recover_fields(ops, &res.state, Some((&prev.state, &prev.fields)), t);
        let newly_failed: Vec<usize> = res
            .failed_springs
            .iter()
            .copied()
            .filter(|i| !frozen.iter().any(|f| f.index == *i))
            .collect();
        let sigma = fields.sigma.clone();
        let a_now = res.state.a.clone();
        records.push(make_record(
            ops,
            j,
            t,
            res.state,
            fields,
            it,
            res.active_set,
            newly_failed.clone(),
        ));
        if !newly_failed.is_empty() {
            match config.failure_policy {
                FailurePolicy::Halt => {
                    return Ok(Trajectory {
                        records,
                        outcome: Outcome::HaltedOnFailure {
                            step: j,
                            springs: newly_failed,
                        },
                    });
                }
                FailurePolicy::FreezeSpring => {
                    for &i in &newly_failed {
                        frozen.push(FrozenSpring {
                            index: i,
                            a: a_now[i],
                            sigma: sigma[i],
                        });
                    }
                    map = SweepMap::with_frozen(ops, &frozen);
                }
            }
        }
    }
    Ok(Trajectory {
        records,
        outcome: Outcome::Completed,
    })
}

/// Catch-up in ℝ²ᵐ with the self-stress constraint as equalities, using the
/// previous damage as guess. Returns `(t_j, state)` for every step.
pub fn run_unreduced(
    ops: &AssembledOperators,
    initial: &FullState,
    config: &CatchUpConfig,
) -> Result<Vec<(f64, FullState)>, CatchUpError> {
    config.validate()?;
    let times = config.times();
    let mut out = vec![(times[0], initial.clone())];
    for (j, &t) in times.iter().enumerate().skip(1) {
        let prev = out.last().unwrap().1.clone();
        let mut a = prev.a.clone();
        let mut accepted = None;
        for _ in 0..config.i_max {
            let (a_new, full) = t_map_full(ops, &prev, t, &a)?;
            let norm = full.y.amax().max(full.a.amax());
            if !norm.is_finite() || norm > config.r_div {
                break;
            }
            if (&a_new - &a).amax() < config.eps {
                accepted = Some(full);
                break;
            }
            a = a_new;
        }
        match accepted {
            Some(s) => out.push((t, s)),
            None => {
                return Err(CatchUpError::Diverged {
                    step: j,
                    t,
                    partial: Box::new(Trajectory {
                        records: Vec::new(),
                        outcome: Outcome::Completed,
                    }),
                })
            }
        }
    }
    Ok(out)
}
