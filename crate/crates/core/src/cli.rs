//! Scenario files, the `check`/`run`/`chart`/`oracle` commands, and the CSV
//! and SVG emitters.

use crate::catchup::{
    initial_state, run_with_plastic_strain, CatchUpConfig, CatchUpError, FailurePolicy, InitialGuess,
    Outcome, TimePartition, Trajectory,
};
use crate::lattice::{
    assemble, verify_assumptions, AssembledOperators, LatticeError, LatticeSpec, Loading, PiecewiseLinear,
    Spring,
};
use crate::numlin::{DenseMatrix, DenseVector};
use crate::scenarios::{
    branch_stress_rate, make_rectangular, make_single_spring, make_triangular, make_two_spring,
    make_two_spring_with_force, mirror_permutation, oracle_two_spring_branches, stability_chart, ChartError,
    Defect, Region,
};
use crate::spring::{classify, failure_damage, plasticity_modulus, PlasticityType, SpringParams};
use crate::sweep::{contraction_diagnostic, SweepState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub lattice: LatticeSection,
    /// Constraint rows of explicit lattices.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ConstraintEntry>,
    /// Nodal force programs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loads: Vec<LoadEntry>,
    pub solver: SolverSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatticeSection {
    Rectangular {
        cols: usize,
        rows: usize,
        spacing: f64,
        spring: SpringParams,
        drive: PiecewiseLinear,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        defect: Option<DefectSection>,
    },
    Triangular {
        rows: usize,
        row_nodes: usize,
        spacing: f64,
        spring: SpringParams,
        drive: PiecewiseLinear,
        #[serde(default)]
        boundary_row_springs: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        defect: Option<DefectSection>,
    },
    TwoSpring {
        springs: Vec<SpringParams>,
        drive: PiecewiseLinear,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        middle_force: Option<PiecewiseLinear>,
    },
    SingleSpring {
        spring: SpringParams,
        drive: PiecewiseLinear,
    },
    Explicit {
        dim: usize,
        nodes: Vec<Vec<f64>>,
        springs: Vec<ExplicitSpring>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        area: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSection {
    #[serde(default)]
    pub removed_nodes: Vec<[usize; 2]>,
    #[serde(default)]
    pub removed_springs: Vec<[[usize; 2]; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSpring {
    pub origin: usize,
    pub terminus: usize,
    pub params: SpringParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintEntry {
    pub node: usize,
    pub coord: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<PiecewiseLinear>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub node: usize,
    pub coord: usize,
    pub program: PiecewiseLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<f64>>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    #[serde(default = "default_r_div")]
    pub r_div: f64,
    #[serde(default)]
    pub guess: GuessEntry,
    #[serde(default)]
    pub failure_policy: PolicyEntry,
}

fn default_eps() -> f64 {
    1e-10
}

fn default_i_max() -> usize {
    10_000
}

fn default_r_div() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuessEntry {
    #[default]
    Previous,
    Extrapolated,
    Perturbed {
        seed: u64,
        magnitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        antisymmetric: Option<Symmetry>,
    },
    Explicit {
        overrides: Vec<GuessOverride>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// Reflection about the vertical line through the lattice centre.
    Mirror,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessOverride {
    pub step: usize,
    pub damage: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyEntry {
    #[default]
    Halt,
    FreezeSpring,
}

/// Initial stress, damage and plastic strain; omitted entries are zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damage: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plastic_strain: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_true")]
    pub spring_columns: bool,
    #[serde(default = "default_prefix")]
    pub svg_prefix: String,
    /// Snapshot times; four evenly spaced times when absent, none when empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg_times: Option<Vec<f64>>,
    #[serde(default)]
    pub svg_view: SvgView,
    #[serde(default = "default_magnification")]
    pub magnification: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub charts: Vec<ChartRequest>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            csv: default_csv(),
            spring_columns: true,
            svg_prefix: default_prefix(),
            svg_times: None,
            svg_view: SvgView::Damage,
            magnification: default_magnification(),
            charts: Vec::new(),
        }
    }
}

fn default_csv() -> String {
    "trajectory.csv".into()
}

fn default_prefix() -> String {
    "snapshot".into()
}

fn default_true() -> bool {
    true
}

fn default_magnification() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvgView {
    #[default]
    Damage,
    Stress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartRequest {
    pub step: usize,
    pub region: [f64; 4],
    pub grid: usize,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub spec: LatticeSpec,
    pub config: CatchUpConfig,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
pub struct ParseError {
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("lattice assumptions violated:\n  {}", .0.join("\n  "))]
    Assumptions(Vec<String>),
    #[error("catch-up diverged at step {step} (t = {t})")]
    Diverged { step: usize, t: f64 },
    #[error("complete failure of spring(s) {springs:?} at step {step}")]
    CompleteFailure { step: usize, springs: Vec<usize> },
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    CatchUp(#[from] CatchUpError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for invalid input, 2 for divergence, 3 for a complete-failure halt.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Diverged { .. } => 2,
            CliError::CompleteFailure { .. } => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn parse_scenario_file(text: &str) -> Result<ScenarioFile, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError {
            line: None,
            message: "empty scenario".into(),
        });
    }
    toml::from_str(text).map_err(|e| ParseError {
        line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
        message: e.message().to_string(),
    })
}

pub fn serialize_scenario(file: &ScenarioFile) -> String {
    toml::to_string(file).expect("scenario files serialize to TOML")
}

/// Parses, builds the lattice and solver configuration, and reports every
/// violated invariant at once.
pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    let file = parse_scenario_file(text)?;
    build_scenario(file)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text)
}

pub fn build_scenario(file: ScenarioFile) -> Result<Scenario, CliError> {
    let mut problems = Vec::new();
    let spec = build_spec(&file, &mut problems);
    let config = build_config(&file, spec.as_ref(), &mut problems);
    if let Some(spec) = &spec {
        let m = spec.n_springs();
        for (name, v) in [
            ("initial.sigma", &file.initial.sigma),
            ("initial.damage", &file.initial.damage),
            ("initial.plastic_strain", &file.initial.plastic_strain),
        ] {
            if let Some(v) = v {
                if v.len() != m {
                    problems.push(format!("{name} has {} entries for {m} springs", v.len()));
                }
            }
        }
        if let Some(d) = &file.initial.damage {
            if d.iter().any(|&a| !(a >= 0.0)) {
                problems.push("initial.damage must be nonnegative".into());
            }
        }
        for (i, c) in file.outputs.charts.iter().enumerate() {
            problems.extend(chart_request_problems(c).into_iter().map(|p| format!("outputs.charts[{i}]: {p}")));
        }
    }
    if !(file.outputs.magnification.is_finite()) {
        problems.push("outputs.magnification must be finite".into());
    }
    match (spec, config) {
        (Some(spec), Some(config)) if problems.is_empty() => Ok(Scenario { file, spec, config }),
        _ => Err(CliError::Validation(problems)),
    }
}

fn chart_request_problems(c: &ChartRequest) -> Vec<String> {
    let mut out = Vec::new();
    let [x0, y0, x1, y1] = c.region;
    if !(x0 < x1 && y0 < y1) || c.region.iter().any(|v| !v.is_finite()) {
        out.push("region must be x0 < x1, y0 < y1".into());
    }
    if c.grid < 2 {
        out.push("grid must be at least 2".into());
    }
    if c.step == 0 {
        out.push("step must be at least 1".into());
    }
    out
}

fn check_params(name: &str, p: &SpringParams, problems: &mut Vec<String>) {
    if let Err(e) = p.validate() {
        problems.push(format!("{name}: {e}"));
    }
}

fn check_program(name: &str, p: &PiecewiseLinear, problems: &mut Vec<String>) {
    if let Err(e) = p.validate() {
        problems.push(format!("{name}: {e}"));
    }
}

fn build_defect(d: &Option<DefectSection>) -> Option<Defect> {
    d.as_ref().map(|d| Defect {
        removed_nodes: d.removed_nodes.iter().map(|&[c, r]| (c, r)).collect(),
        removed_springs: d
            .removed_springs
            .iter()
            .map(|&[[c0, r0], [c1, r1]]| ((c0, r0), (c1, r1)))
            .collect(),
    })
}

fn build_spec(file: &ScenarioFile, problems: &mut Vec<String>) -> Option<LatticeSpec> {
    let before = problems.len();
    let generated = !matches!(file.lattice, LatticeSection::Explicit { .. });
    if generated && !file.constraints.is_empty() {
        problems.push("constraints are only allowed for explicit lattices".into());
    }
    let mut spec = match &file.lattice {
        LatticeSection::Rectangular { cols, rows, spacing, spring, drive, defect } => {
            if *cols < 2 || *rows < 2 {
                problems.push("rectangular lattices need at least 2 columns and 2 rows".into());
            }
            if !(*spacing > 0.0) {
                problems.push("spacing must be positive".into());
            }
            check_params("lattice.spring", spring, problems);
            check_program("lattice.drive", drive, problems);
            if problems.len() > before {
                return None;
            }
            make_rectangular(*cols, *rows, *spacing, *spring, build_defect(defect).as_ref(), drive.clone())
        }
        LatticeSection::Triangular { rows, row_nodes, spacing, spring, drive, boundary_row_springs, defect } => {
            if *rows < 2 || *row_nodes < 1 {
                problems.push("triangular lattices need at least 2 rows and 1 node per row".into());
            }
            if !(*spacing > 0.0) {
                problems.push("spacing must be positive".into());
            }
            check_params("lattice.spring", spring, problems);
            check_program("lattice.drive", drive, problems);
            if problems.len() > before {
                return None;
            }
            make_triangular(
                *rows,
                *row_nodes,
                *spacing,
                *spring,
                *boundary_row_springs,
                build_defect(defect).as_ref(),
                drive.clone(),
            )
        }
        LatticeSection::TwoSpring { springs, drive, middle_force } => {
            if springs.len() != 2 {
                problems.push(format!("two_spring needs 2 springs, got {}", springs.len()));
            }
            for (i, p) in springs.iter().enumerate() {
                check_params(&format!("lattice.springs[{i}]"), p, problems);
            }
            check_program("lattice.drive", drive, problems);
            if let Some(f) = middle_force {
                check_program("lattice.middle_force", f, problems);
            }
            if problems.len() > before {
                return None;
            }
            match middle_force {
                Some(f) => make_two_spring_with_force(springs[0], springs[1], drive.clone(), f.clone()),
                None => make_two_spring(springs[0], springs[1], drive.clone()),
            }
        }
        LatticeSection::SingleSpring { spring, drive } => {
            check_params("lattice.spring", spring, problems);
            check_program("lattice.drive", drive, problems);
            if problems.len() > before {
                return None;
            }
            make_single_spring(*spring, drive.clone())
        }
        LatticeSection::Explicit { dim, nodes, springs, area } => {
            if !(1..=3).contains(dim) {
                problems.push(format!("dim = {dim} must be 1, 2 or 3"));
                return None;
            }
            for (j, p) in nodes.iter().enumerate() {
                if p.len() != *dim {
                    problems.push(format!("lattice.nodes[{j}] has {} coordinates, expected {dim}", p.len()));
                }
            }
            for (i, s) in springs.iter().enumerate() {
                check_params(&format!("lattice.springs[{i}].params"), &s.params, problems);
            }
            let nd = dim * nodes.len();
            let mut r = DenseMatrix::zeros(file.constraints.len(), nd);
            let mut programs = Vec::new();
            for (i, c) in file.constraints.iter().enumerate() {
                if c.node >= nodes.len() || c.coord >= *dim {
                    problems.push(format!("constraints[{i}] refers to node {} coordinate {}", c.node, c.coord));
                    continue;
                }
                r[(i, c.node * dim + c.coord)] = 1.0;
                let p = c.program.clone().unwrap_or(PiecewiseLinear::constant(0.0));
                check_program(&format!("constraints[{i}].program"), &p, problems);
                programs.push(p);
            }
            if problems.len() > before {
                return None;
            }
            LatticeSpec {
                dim: *dim,
                positions: nodes.iter().flatten().copied().collect(),
                springs: springs
                    .iter()
                    .map(|s| Spring { origin: s.origin, terminus: s.terminus, params: s.params })
                    .collect(),
                constraints: r,
                loading: Loading { displacement: programs, forces: Vec::new() },
                area: *area,
            }
        }
    };
    for (i, l) in file.loads.iter().enumerate() {
        if l.node >= spec.n_nodes() || l.coord >= spec.dim {
            problems.push(format!("loads[{i}] refers to node {} coordinate {}", l.node, l.coord));
            continue;
        }
        check_program(&format!("loads[{i}].program"), &l.program, problems);
        spec.loading.forces.push((l.node * spec.dim + l.coord, l.program.clone()));
    }
    match spec.validate() {
        Err(LatticeError::InvalidSpec(list)) => problems.extend(list),
        Err(e) => problems.push(e.to_string()),
        Ok(()) => {}
    }
    (problems.len() == before).then_some(spec)
}

fn build_config(file: &ScenarioFile, spec: Option<&LatticeSpec>, problems: &mut Vec<String>) -> Option<CatchUpConfig> {
    let s = &file.solver;
    let partition = match (&s.steps, &s.breakpoints) {
        (Some(n), None) => TimePartition::Uniform(*n),
        (None, Some(b)) => TimePartition::Breakpoints(b.clone()),
        _ => {
            problems.push("solver needs exactly one of steps and breakpoints".into());
            return None;
        }
    };
    let initial_value = match &s.guess {
        GuessEntry::Previous => InitialGuess::Previous,
        GuessEntry::Extrapolated => InitialGuess::Extrapolated,
        GuessEntry::Perturbed { seed, magnitude, antisymmetric } => {
            let antisymmetric_under = match (antisymmetric, spec) {
                (Some(Symmetry::Mirror), Some(spec)) => match mirror_permutation(spec) {
                    Some(p) => Some(p),
                    None => {
                        problems.push("mirror-antisymmetric perturbation needs a mirror-symmetric lattice".into());
                        None
                    }
                },
                _ => None,
            };
            InitialGuess::Perturbed { seed: *seed, magnitude: *magnitude, antisymmetric_under }
        }
        GuessEntry::Explicit { overrides } => {
            if let Some(spec) = spec {
                for o in overrides {
                    if o.damage.len() != spec.n_springs() {
                        problems.push(format!("guess override for step {} has the wrong length", o.step));
                    }
                }
            }
            InitialGuess::Explicit(
                overrides
                    .iter()
                    .map(|o| (o.step, DenseVector::from_row_slice(&o.damage)))
                    .collect(),
            )
        }
    };
    let config = CatchUpConfig {
        t0: s.t0,
        t_end: s.t_end,
        partition,
        eps: s.eps,
        i_max: s.i_max,
        r_div: s.r_div,
        initial_value,
        failure_policy: match s.failure_policy {
            PolicyEntry::Halt => FailurePolicy::Halt,
            PolicyEntry::FreezeSpring => FailurePolicy::FreezeSpring,
        },
    };
    match config.validate() {
        Err(CatchUpError::InvalidConfig(msg)) => {
            problems.extend(msg.split("; ").map(|p| format!("solver: {p}")));
            None
        }
        Err(e) => {
            problems.push(e.to_string());
            None
        }
        Ok(()) => Some(config),
    }
}

impl Scenario {
    /// Replaces the seed of a perturbed initial guess.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let InitialGuess::Perturbed { seed: s, .. } = &mut self.config.initial_value {
            *s = seed;
        }
        if let GuessEntry::Perturbed { seed: s, .. } = &mut self.file.solver.guess {
            *s = seed;
        }
        self
    }

    pub fn assemble(&self) -> Result<AssembledOperators, CliError> {
        assemble(&self.spec).map_err(|e| match e {
            LatticeError::AssumptionsViolated(list) => CliError::Assumptions(list),
            LatticeError::InvalidSpec(list) => CliError::Validation(list),
            other => CliError::Validation(vec![other.to_string()]),
        })
    }

    fn initial_vectors(&self) -> (DenseVector, DenseVector, DenseVector) {
        let m = self.spec.n_springs();
        let v = |o: &Option<Vec<f64>>| o.as_ref().map_or(DenseVector::zeros(m), |v| DenseVector::from_row_slice(v));
        (v(&self.file.initial.sigma), v(&self.file.initial.damage), v(&self.file.initial.plastic_strain))
    }

    pub fn initial_state(&self, ops: &AssembledOperators) -> Result<SweepState, CliError> {
        let (sigma, a, _) = self.initial_vectors();
        initial_state(ops, &sigma, &a, self.config.t0).map_err(|e| CliError::Validation(vec![format!("initial: {e}")]))
    }

    /// Runs the catch-up scheme. A divergence still yields the partial
    /// trajectory, returned together with the error.
    pub fn simulate(&self, ops: &AssembledOperators) -> Result<(Trajectory, Option<CliError>), CliError> {
        let s0 = self.initial_state(ops)?;
        let (_, _, p0) = self.initial_vectors();
        match run_with_plastic_strain(ops, &s0, &p0, &self.config) {
            Ok(tr) => {
                let err = match &tr.outcome {
                    Outcome::Completed => None,
                    Outcome::HaltedOnFailure { step, springs } => Some(CliError::CompleteFailure {
                        step: *step,
                        springs: springs.clone(),
                    }),
                };
                Ok((tr, err))
            }
            Err(CatchUpError::Diverged { step, t, partial }) => Ok((*partial, Some(CliError::Diverged { step, t }))),
            Err(e) => Err(e.into()),
        }
    }
}

/// Prints dimensions, assumption flags and the spring classification.
/// Returns whether all assumptions hold.
pub fn cmd_check(scenario: &Scenario, out: &mut dyn Write) -> std::io::Result<bool> {
    let spec = &scenario.spec;
    let report = match verify_assumptions(spec) {
        Ok(r) => r,
        Err(e) => {
            writeln!(out, "error: {e}")?;
            return Ok(false);
        }
    };
    let d = report.dims;
    writeln!(out, "n = {}", d.n)?;
    writeln!(out, "m = {}", d.m)?;
    writeln!(out, "q = {}", d.q)?;
    writeln!(out, "dimU = {}", d.dim_u)?;
    writeln!(out, "dimV = {}", d.dim_v)?;
    let identity = d.dim_v as i64 == d.m as i64 - (d.n * spec.dim) as i64 + d.q as i64;
    writeln!(out, "dimV = m - n*d + q: {}", if identity { "ok" } else { "mismatch" })?;
    let flag = |ok: bool| if ok { "ok" } else { "FAIL" };
    writeln!(out, "constraint rank: {}", flag(report.rank_r_ok))?;
    writeln!(out, "kinematic determinacy: {}", flag(report.kinematic_determinacy_ok))?;
    writeln!(out, "self-stress nondegeneracy: {}", flag(report.self_stress_nondegenerate))?;
    writeln!(
        out,
        "condition numbers: R {:.3e}, (Dphi; R) {:.3e}",
        report.worst_condition_numbers[0], report.worst_condition_numbers[1]
    )?;
    let params: Vec<SpringParams> = spec.springs.iter().map(|s| s.params).collect();
    let h_max = contraction_diagnostic(&params);
    writeln!(out, "contraction diagnostic max|h| = {h_max}")?;
    if h_max >= 1.0 {
        writeln!(out, "warning: max|h| = {h_max} >= 1; a catch-up step may have several solutions")?;
    }
    for w in &report.warnings {
        writeln!(out, "warning: {w}")?;
    }
    let mut histogram: BTreeMap<PlasticityType, usize> = BTreeMap::new();
    for p in &params {
        if let Ok(kind) = classify(p) {
            *histogram.entry(kind).or_default() += 1;
        }
    }
    let parts: Vec<String> = histogram.iter().map(|(k, v)| format!("{k} {v}")).collect();
    writeln!(out, "springs: {}", parts.join(", "))?;
    for f in report.failures() {
        writeln!(out, "error: {f}")?;
    }
    Ok(report.all_ok())
}

/// Formats a float so that parsing it back gives the same value.
pub fn fmt_full(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn trajectory_csv(tr: &Trajectory, spring_columns: bool) -> String {
    let m = tr.records.first().map_or(0, |r| r.state.a.len());
    let mut s = String::from("t,step_index,inner_iterations,total_stress,failure_count");
    if spring_columns {
        for i in 1..=m {
            let _ = write!(s, ",a_{i}");
        }
        for i in 1..=m {
            let _ = write!(s, ",sigma_{i}");
        }
    }
    s.push('\n');
    let mut failures = 0;
    for r in &tr.records {
        failures += r.failed.len();
        let _ = write!(
            s,
            "{},{},{},{},{}",
            fmt_full(r.t),
            r.step,
            r.inner_iterations,
            fmt_full(r.total_stress.unwrap_or(f64::NAN)),
            failures
        );
        if spring_columns {
            for v in r.state.a.iter().chain(r.fields.sigma.iter()) {
                s.push(',');
                s.push_str(&fmt_full(*v));
            }
        }
        s.push('\n');
    }
    s
}

/// Snapshot times: the requested list, or four evenly spaced times.
pub fn snapshot_times(file: &ScenarioFile) -> Vec<f64> {
    match &file.outputs.svg_times {
        Some(t) => t.clone(),
        None => {
            let (t0, t1) = (file.solver.t0, file.solver.t_end);
            (1..=4).map(|k| t0 + (t1 - t0) * k as f64 / 4.0).collect()
        }
    }
}

fn lerp_rgb(a: [f64; 3], b: [f64; 3], u: f64) -> [u8; 3] {
    let c = |i: usize| (a[i] + (b[i] - a[i]) * u).round().clamp(0.0, 255.0) as u8;
    [c(0), c(1), c(2)]
}

const GREEN: [f64; 3] = [0.0, 160.0, 0.0];
const YELLOW: [f64; 3] = [230.0, 200.0, 0.0];
const RED: [f64; 3] = [220.0, 0.0, 0.0];

/// Springs drawn between displaced nodes `ξ0 + magnification·ζ`. Colours are
/// normalized by `scale` (the trajectory maximum of damage or |stress|).
pub fn render_svg(
    spec: &LatticeSpec,
    record: &crate::catchup::Record,
    view: SvgView,
    scale: f64,
    magnification: f64,
) -> String {
    let d = spec.dim;
    let points: Vec<(f64, f64)> = (0..spec.n_nodes())
        .map(|j| {
            let c = |k: usize| spec.positions[j * d + k] + magnification * record.fields.zeta[j * d + k];
            (c(0), if d >= 2 { c(1) } else { 0.0 })
        })
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let extent = (x1 - x0).max(y1 - y0).max(1e-12);
    let px = 800.0 / extent;
    let pad = 20.0;
    let width = (x1 - x0) * px + 2.0 * pad;
    let height = (y1 - y0) * px + 2.0 * pad;
    let active = record.constraints.active_springs();
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.3}" height="{height:.3}" viewBox="0 0 {width:.3} {height:.3}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, spring) in spec.springs.iter().enumerate() {
        let (xa, ya) = points[spring.origin];
        let (xb, yb) = points[spring.terminus];
        let u = if scale > 0.0 {
            match view {
                SvgView::Damage => record.state.a[i] / scale,
                SvgView::Stress => record.fields.sigma[i].abs() / scale,
            }
        } else {
            0.0
        }
        .clamp(0.0, 1.0);
        let [r, g, b] = match view {
            SvgView::Damage => lerp_rgb(GREEN, RED, u),
            SvgView::Stress if u < 0.5 => lerp_rgb(GREEN, YELLOW, 2.0 * u),
            SvgView::Stress => lerp_rgb(YELLOW, RED, 2.0 * u - 1.0),
        };
        let w = if active.contains(&i) { 5 } else { 2 };
        let _ = writeln!(
            s,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="rgb({r},{g},{b})" stroke-width="{w}"/>"#,
            (xa - x0) * px + pad,
            (y1 - ya) * px + pad,
            (xb - x0) * px + pad,
            (y1 - yb) * px + pad,
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub records: usize,
    pub files: Vec<PathBuf>,
    pub outcome: Outcome,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Writes the CSV trajectory and SVG snapshots into `out_dir`. Outputs are
/// written even when the run diverges or halts; the error is returned after.
pub fn cmd_run(scenario: &Scenario, out_dir: &Path, log: &mut dyn Write) -> Result<RunSummary, CliError> {
    let ops = scenario.assemble()?;
    let (tr, err) = scenario.simulate(&ops)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let outputs = &scenario.file.outputs;
    let mut files = Vec::new();
    let csv_path = out_dir.join(&outputs.csv);
    write_file(&csv_path, &trajectory_csv(&tr, outputs.spring_columns))?;
    files.push(csv_path);
    let scale = tr
        .records
        .iter()
        .map(|r| match outputs.svg_view {
            SvgView::Damage => r.state.a.amax(),
            SvgView::Stress => r.fields.sigma.amax(),
        })
        .fold(0.0, f64::max);
    let t_last = tr.last().t;
    for t in snapshot_times(&scenario.file) {
        if t > t_last + 1e-12 {
            continue;
        }
        let record = tr
            .records
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("trajectories contain the initial record");
        let path = out_dir.join(format!("{}_t{}.svg", outputs.svg_prefix, t));
        write_file(&path, &render_svg(&scenario.spec, record, outputs.svg_view, scale, outputs.magnification))?;
        files.push(path);
    }
    for (i, c) in outputs.charts.iter().enumerate() {
        let path = out_dir.join(format!("chart_{i}.csv"));
        let mut buf = Vec::new();
        chart_to(scenario, &ops, &tr, c, &mut buf)?;
        write_file(&path, &String::from_utf8_lossy(&buf))?;
        files.push(path);
    }
    let _ = writeln!(log, "{} records written to {}", tr.records.len(), out_dir.display());
    if let Some(e) = err {
        return Err(e);
    }
    Ok(RunSummary {
        records: tr.records.len(),
        files,
        outcome: tr.outcome,
    })
}

fn chart_to(
    scenario: &Scenario,
    ops: &AssembledOperators,
    tr: &Trajectory,
    req: &ChartRequest,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if ops.m() != 2 {
        return Err(ChartError::UnsupportedDimension(ops.m()).into());
    }
    let times = scenario.config.times();
    if req.step == 0 || req.step >= times.len() {
        return Err(CliError::Usage(format!("step must be in 1..={}", times.len() - 1)));
    }
    let prev = tr
        .records
        .get(req.step - 1)
        .ok_or_else(|| CliError::Usage(format!("the run stopped before step {}", req.step - 1)))?;
    let [x0, y0, x1, y1] = req.region;
    let chart = stability_chart(ops, &prev.state, times[req.step], Region { x0, y0, x1, y1 }, req.grid)?;
    let io = |e| io_err(Path::new("<chart>"))(e);
    writeln!(out, "kind,a1,a2,ta1,ta2,class").map_err(io)?;
    for (a, ta) in &chart.grid {
        writeln!(out, "sample,{},{},{},{},", fmt_full(a[0]), fmt_full(a[1]), fmt_full(ta[0]), fmt_full(ta[1]))
            .map_err(io)?;
    }
    for p in &chart.fixed_points {
        let [a1, a2] = p.location;
        writeln!(out, "fixed,{},{},{},{},{}", fmt_full(a1), fmt_full(a2), fmt_full(a1), fmt_full(a2), p.kind)
            .map_err(io)?;
    }
    for [a1, a2] in &chart.failure_points {
        writeln!(out, "failure,{},{},{},{},", fmt_full(*a1), fmt_full(*a2), fmt_full(*a1), fmt_full(*a2))
            .map_err(io)?;
    }
    Ok(())
}

/// Charts the per-step map of step `req.step`, starting from the state the
/// scenario reaches at the previous step.
pub fn cmd_chart(scenario: &Scenario, req: &ChartRequest, out: &mut dyn Write) -> Result<(), CliError> {
    let problems = chart_request_problems(req);
    if !problems.is_empty() {
        return Err(CliError::Usage(problems.join("; ")));
    }
    let ops = scenario.assemble()?;
    if ops.m() != 2 {
        return Err(ChartError::UnsupportedDimension(ops.m()).into());
    }
    let times = scenario.config.times();
    if req.step >= times.len() {
        return Err(CliError::Usage(format!("step must be in 1..={}", times.len() - 1)));
    }
    let mut truncated = scenario.clone();
    truncated.config.t_end = times[req.step - 1];
    truncated.config.partition = TimePartition::Breakpoints(times[1..req.step].to_vec());
    let tr = if req.step == 1 {
        let s0 = scenario.initial_state(&ops)?;
        let (_, _, p0) = scenario.initial_vectors();
        let mut one = scenario.config.clone();
        one.t_end = times[1];
        one.partition = TimePartition::Breakpoints(vec![times[1]]);
        run_with_plastic_strain(&ops, &s0, &p0, &one)?
    } else {
        let (tr, err) = truncated.simulate(&ops)?;
        if let Some(e) = err {
            return Err(e);
        }
        tr
    };
    chart_to(scenario, &ops, &tr, req, out)
}

pub const ORACLE_CASES: [&str; 6] = [
    "single-hardening",
    "single-perfect",
    "single-softening",
    "two-hardening",
    "two-perfect",
    "two-softening",
];

/// Prints the closed-form plastic rates of the single-spring and two-spring
/// toy systems (`k = s = 1`, `c0 = 0.01`, `h` = 0.8, 1 or 1.2).
pub fn cmd_oracle(case: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let (system, kind) = case
        .split_once('-')
        .ok_or_else(|| CliError::Usage(format!("unknown case {case}; expected one of {ORACLE_CASES:?}")))?;
    let h = match kind {
        "hardening" => 0.8,
        "perfect" => 1.0,
        "softening" => 1.2,
        _ => return Err(CliError::Usage(format!("unknown case {case}; expected one of {ORACLE_CASES:?}"))),
    };
    let p = SpringParams { k: 1.0, h, s: 1.0, c0: 0.01 };
    let io = |e| io_err(Path::new("<stdout>"))(e);
    match system {
        "single" => {
            let c = 1.0 / (1.0 + p.softening_ratio());
            writeln!(out, "single spring k = 1, h = {h}, s = 1, c0 = 0.01").map_err(io)?;
            writeln!(out, "upper facet: (y, a) = (y0 - c*k*dl, a0 + c*s*dl), c = {c}").map_err(io)?;
            writeln!(out, "lower facet: (y, a) = (y0 - c*k*dl, a0 - c*s*dl)").map_err(io)?;
            writeln!(out, "dsigma/dl = {}", plasticity_modulus(&p).map_err(|e| CliError::Usage(e.to_string()))?)
                .map_err(io)?;
            if let Some(a) = failure_damage(&p) {
                writeln!(out, "complete failure at a = {a}, elongation {} past yield", a / (c * p.s)).map_err(io)?;
            }
        }
        "two" => {
            writeln!(out, "two springs in series, k = 1, h = {h}, s = 1, c0 = 0.01").map_err(io)?;
            writeln!(out, "kind,exists,margin,dy/dl,da1/dl,da2/dl,dsigma/dl").map_err(io)?;
            for b in oracle_two_spring_branches(&p, &p) {
                let name = match b.kind {
                    crate::scenarios::BranchKind::Localized1 => "localized-1".to_string(),
                    crate::scenarios::BranchKind::Localized2 => "localized-2".to_string(),
                    crate::scenarios::BranchKind::Distributed => "distributed".to_string(),
                    crate::scenarios::BranchKind::PerfectFamily { theta_min, theta_max } => {
                        format!("perfect-family theta in [{theta_min}, {theta_max}] (theta = 0.5 shown)")
                    }
                };
                writeln!(
                    out,
                    "{name},{},{},{},{},{},{}",
                    b.exists,
                    b.existence_margin,
                    b.rate[0] + 0.0,
                    b.rate[1] + 0.0,
                    b.rate[2] + 0.0,
                    branch_stress_rate(&p, &p, &b.rate)
                )
                .map_err(io)?;
            }
        }
        _ => return Err(CliError::Usage(format!("unknown case {case}; expected one of {ORACLE_CASES:?}"))),
    }
    Ok(())
}
