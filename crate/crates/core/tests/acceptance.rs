//! One line per acceptance criterion; exits nonzero if any criterion fails.

mod common;

use lsm_sweep::catchup::{initial_state, run, run_unreduced, CatchUpConfig, InitialGuess, Outcome, Trajectory};
use lsm_sweep::cli::{cmd_check, load_scenario, Scenario};
use lsm_sweep::polyproj::{project, HalfspaceSet};
use std::path::{Path, PathBuf};
use lsm_sweep::lattice::{assemble, AssembledOperators, PiecewiseLinear};
use lsm_sweep::numlin::DenseVector;
use lsm_sweep::scenarios::{
    branch_stress_rate, mirror_permutation, make_single_spring, make_two_spring, oracle_two_spring_branches, stability_chart,
    BranchKind, FixedPointKind, Region,
};
use lsm_sweep::spring::{plasticity_modulus, SpringParams};
use lsm_sweep::sweep::{FullState, SweepState};
use std::time::Instant;

fn unit(h: f64) -> SpringParams {
    SpringParams { k: 1.0, h, s: 1.0, c0: 0.01 }
}

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, id: &str, name: &str, f: impl FnOnce() -> Result<String, String>) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS [{secs:7.2}s] {name}: {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("criterion {id:>2} FAIL [{secs:7.2}s] {name}: {detail}");
            }
        }
    }
}

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg) }
}

fn toy(h: f64) -> AssembledOperators {
    assemble(&make_two_spring(unit(h), unit(h), PiecewiseLinear::ramp(1.0, 1.0))).unwrap()
}

/// Both springs on their upper facet with no damage, at elongation 0.02.
fn symmetric_state(ops: &AssembledOperators) -> SweepState {
    let sigma = DenseVector::from_element(2, 0.01);
    initial_state(ops, &sigma, &DenseVector::zeros(2), 0.02).unwrap()
}

const MODULUS_TOL: f64 = 1e-6;
const FAILURE_TOL: f64 = 1e-6;
const RATE_REL_TOL: f64 = 0.02;
const STRESS_RATE_TOL: f64 = 1e-3;
const EQUIVALENCE_TOL: f64 = 1e-9;
const RATE_INDEPENDENCE_TOL: f64 = 1e-8;

fn criterion_2() -> Result<String, String> {
    let mut slopes = Vec::new();
    for (h, expected) in [(0.8, 1.0 / 6.0), (1.0, 0.0), (1.2, -0.25)] {
        let ops = assemble(&make_single_spring(unit(h), PiecewiseLinear::ramp(1.0, 1.0))).unwrap();
        let s0 = initial_state(&ops, &DenseVector::zeros(1), &DenseVector::zeros(1), 0.0).unwrap();
        let tr = run(&ops, &s0, &CatchUpConfig::uniform(0.0, 0.04, 1000)).map_err(|e| e.to_string())?;
        // Plastic phase: elongation from 0.02 to 0.04.
        let at = |l: f64| tr.records.iter().find(|r| (r.t - l).abs() < 1e-12).unwrap();
        let (r1, r2) = (at(0.02), at(0.04));
        let slope = (r2.fields.sigma[0] - r1.fields.sigma[0]) / (r2.t - r1.t);
        let oracle = plasticity_modulus(&unit(h)).unwrap();
        ensure(
            (slope - expected).abs() < MODULUS_TOL && (oracle - expected).abs() < 1e-15,
            format!("h = {h}: slope {slope}, expected {expected}"),
        )?;
        slopes.push(format!("h={h}: {slope:.9}"));
    }
    Ok(slopes.join(", "))
}

fn criterion_3() -> Result<String, String> {
    let ops = assemble(&make_single_spring(unit(1.2), PiecewiseLinear::ramp(1.0, 1.0))).unwrap();
    let s0 = initial_state(&ops, &DenseVector::zeros(1), &DenseVector::zeros(1), 0.0).unwrap();
    let tr = run(&ops, &s0, &CatchUpConfig::uniform(0.0, 0.1, 1000)).map_err(|e| e.to_string())?;
    let Outcome::HaltedOnFailure { step, .. } = tr.outcome else {
        return Err("run did not halt on failure".into());
    };
    let last = tr.last();
    let (a, sigma) = (last.state.a[0], last.fields.sigma[0]);
    ensure(
        (a - 0.05).abs() < FAILURE_TOL && sigma.abs() < FAILURE_TOL,
        format!("a = {a}, sigma = {sigma}"),
    )?;
    Ok(format!("halted at step {step}, l = {:.6}, a = {a:.9}, sigma = {sigma:.2e}", last.t))
}

fn criterion_4() -> Result<String, String> {
    let region = Region { x0: 0.0, y0: 0.0, x1: 0.05, y1: 0.05 };
    let mut summary = Vec::new();
    for h in [0.8, 1.0, 1.2] {
        let ops = toy(h);
        let chart = stability_chart(&ops, &symmetric_state(&ops), 0.03, region, 64).map_err(|e| e.to_string())?;
        let kinds: Vec<FixedPointKind> = chart.fixed_points.iter().map(|p| p.kind).collect();
        let count = |k| kinds.iter().filter(|&&x| x == k).count();
        let ok = match h {
            0.8 => kinds == [FixedPointKind::Stable],
            1.0 => {
                let pts: Vec<[f64; 2]> = chart.fixed_points.iter().map(|p| p.location).collect();
                pts.len() >= 5 && colinear(&pts, 1e-8) && count(FixedPointKind::StableSet) == pts.len()
            }
            _ => kinds.len() == 3 && count(FixedPointKind::Stable) == 2 && count(FixedPointKind::Saddle) == 1,
        };
        let desc = format!(
            "h={h}: [{}]",
            chart
                .fixed_points
                .iter()
                .map(|p| format!("{} ({:.5},{:.5})", p.kind, p.location[0], p.location[1]))
                .collect::<Vec<_>>()
                .join(" ")
        );
        ensure(ok, desc.clone())?;
        summary.push(if h == 1.0 { format!("h=1: {} colinear stable-set points", kinds.len()) } else { desc });
    }
    Ok(summary.join("; "))
}

fn colinear(pts: &[[f64; 2]], tol: f64) -> bool {
    let (p, q) = (pts[0], pts[pts.len() - 1]);
    let d = [q[0] - p[0], q[1] - p[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    len > 0.0
        && pts
            .iter()
            .all(|r| ((r[0] - p[0]) * d[1] - (r[1] - p[1]) * d[0]).abs() / len < tol)
}

fn criterion_5() -> Result<String, String> {
    let ops = toy(1.2);
    let s0 = symmetric_state(&ops);
    let branches = oracle_two_spring_branches(&unit(1.2), &unit(1.2));
    let rate_of = |k: BranchKind| branches.iter().find(|b| b.kind == k).unwrap().rate;
    let mut out = Vec::new();
    for (guess, kind) in [
        (InitialGuess::Previous, BranchKind::Distributed),
        (InitialGuess::Perturbed { seed: 7, magnitude: 1e-3, antisymmetric_under: None }, BranchKind::Localized1),
    ] {
        let mut config = CatchUpConfig::uniform(0.02, 0.03, 10);
        config.initial_value = guess;
        let tr = run(&ops, &s0, &config).map_err(|e| e.to_string())?;
        let last = tr.last();
        let da = [last.state.a[0] / 0.01, last.state.a[1] / 0.01];
        let expected = rate_of(kind);
        // Localization may pick either spring; compare the sorted rates.
        let (mut got, mut want) = (da, [expected[1], expected[2]]);
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        let rel = |g: f64, w: f64| if w == 0.0 { g.abs() } else { ((g - w) / w).abs() };
        ensure(
            rel(got[0], want[0]) < RATE_REL_TOL && rel(got[1], want[1]) < RATE_REL_TOL,
            format!("{kind:?}: rates {da:?}, expected {want:?}"),
        )?;
        let label = if kind == BranchKind::Distributed { "distributed" } else { "localized" };
        let mut line = format!("{label} rates ({:.5}, {:.5})", da[0], da[1]);
        if kind == BranchKind::Distributed {
            let dsigma = (last.fields.sigma[0] - 0.01) / 0.01;
            let series = 1.0 / (2.0 / plasticity_modulus(&unit(1.2)).unwrap());
            let oracle = branch_stress_rate(&unit(1.2), &unit(1.2), &expected);
            ensure(
                (dsigma + 0.125).abs() < STRESS_RATE_TOL && (series - oracle).abs() < 1e-12,
                format!("dsigma/dl = {dsigma}, series oracle {series}, branch oracle {oracle}"),
            )?;
            line.push_str(&format!(", dsigma/dl {dsigma:.6}"));
        }
        out.push(line);
    }
    Ok(out.join("; "))
}

fn criterion_6() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for h in [0.8, 1.0, 1.2] {
        let ops = toy(h);
        let s0 = initial_state(&ops, &DenseVector::zeros(2), &DenseVector::zeros(2), 0.0).unwrap();
        let config = CatchUpConfig::uniform(0.0, 0.04, 100);
        let reduced = run(&ops, &s0, &config).map_err(|e| e.to_string())?;
        let full0 = FullState { y: &ops.v * &s0.y_hat, a: s0.a.clone() };
        let full = run_unreduced(&ops, &full0, &config).map_err(|e| e.to_string())?;
        ensure(full.len() == reduced.records.len(), "record counts differ".into())?;
        for (r, (_, f)) in reduced.records.iter().zip(&full) {
            let dy = (&ops.v * &r.state.y_hat - &f.y).amax();
            let da = (&r.state.a - &f.a).amax();
            worst = worst.max(dy).max(da);
        }
    }
    ensure(worst < EQUIVALENCE_TOL, format!("max deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.3e} over 3 x 100 steps"))
}

fn criterion_11() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for h in [0.8, 1.0, 1.2] {
        let slow = assemble(&make_two_spring(unit(h), unit(h), PiecewiseLinear::ramp(0.01, 4.0))).unwrap();
        let fast = assemble(&make_two_spring(unit(h), unit(h), PiecewiseLinear::ramp(0.02, 2.0))).unwrap();
        let zero = DenseVector::zeros(2);
        let a = run(&slow, &initial_state(&slow, &zero, &zero, 0.0).unwrap(), &CatchUpConfig::uniform(0.0, 4.0, 200))
            .map_err(|e| e.to_string())?;
        let b = run(&fast, &initial_state(&fast, &zero, &zero, 0.0).unwrap(), &CatchUpConfig::uniform(0.0, 2.0, 200))
            .map_err(|e| e.to_string())?;
        ensure(a.records.len() == b.records.len(), "record counts differ".into())?;
        for (x, y) in a.records.iter().zip(&b.records) {
            worst = worst.max((&x.state.stacked() - &y.state.stacked()).amax());
        }
    }
    ensure(worst < RATE_INDEPENDENCE_TOL, format!("max deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.3e}"))
}

const DIMENSION_RUNTIME_SECS: f64 = 5.0;
const PROJECTION_CASES: u64 = 10_000;
const PROJECTION_TOL: f64 = 1e-8;
const KKT_TOL: f64 = 1e-9;
const FEASIBILITY_TOL: f64 = 1e-8;
const EQUILIBRIUM_TOL: f64 = 1e-8;
const CLOSURE_TOL: f64 = 1e-7;
const BAND_DAMAGE_SHARE: f64 = 0.8;
const BAND_SPRING_SHARE: f64 = 0.25;
const EVENT_RATIO: f64 = 2.78 / 1.36;
const EVENT_RATIO_REL_TOL: f64 = 0.15;
const MIRROR_REL_TOL: f64 = 0.1;
const PERFECT_SLOPE_SHARE: f64 = 0.05;

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn load(name: &str) -> Scenario {
    load_scenario(&scenario_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn simulate(s: &Scenario) -> Result<Trajectory, String> {
    let ops = s.assemble().map_err(|e| e.to_string())?;
    let (tr, err) = s.simulate(&ops).map_err(|e| e.to_string())?;
    match err {
        None | Some(lsm_sweep::cli::CliError::CompleteFailure { .. }) => Ok(tr),
        Some(e) => Err(e.to_string()),
    }
}

fn criterion_1() -> Result<String, String> {
    let start = Instant::now();
    let mut out = Vec::new();
    for name in ["toy_softening.scn", "rect_softening.scn", "tri.scn"] {
        let mut buf = Vec::new();
        let ok = cmd_check(&load(name), &mut buf).map_err(|e| e.to_string())?;
        let text = String::from_utf8(buf).unwrap();
        let value = |key: &str| -> usize {
            text.lines()
                .find_map(|l| l.strip_prefix(&format!("{key} = ")))
                .and_then(|v| v.parse().ok())
                .unwrap_or(usize::MAX)
        };
        let dims = (value("n"), value("m"), value("q"), value("dimV"));
        ensure(ok && text.contains("dimV = m - n*d + q: ok"), format!("{name}: check failed\n{text}"))?;
        if name == "rect_softening.scn" {
            ensure(dims == (150, 527, 21, 248), format!("rectangular dims {dims:?}"))?;
        }
        out.push(format!("{name} (n, m, q, dimV) = {dims:?}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < DIMENSION_RUNTIME_SECS, format!("took {secs:.2}s"))?;
    Ok(out.join("; "))
}

fn criterion_7() -> Result<String, String> {
    let mut worst = [0.0f64; 4];
    for seed in 0..PROJECTION_CASES {
        let c = common::random_case(seed);
        let set = HalfspaceSet::new(c.normals.clone(), c.offsets.clone()).map_err(|e| e.to_string())?;
        let r = project(&c.y, &set, &c.metric).map_err(|e| format!("seed {seed}: {e}"))?;
        let again = project(&r.point, &set, &c.metric).map_err(|e| e.to_string())?;
        let other = common::random_case(seed + PROJECTION_CASES).y;
        let other = if other.len() == c.y.len() { other } else { c.y.map(|v| -v) };
        let r2 = project(&other, &set, &c.metric).map_err(|e| e.to_string())?;
        let expansion = common::metric_norm(&c.metric, &(&r.point - &r2.point))
            - common::metric_norm(&c.metric, &(&c.y - &other));
        let brute = common::brute_force_projection(&c);
        worst[0] = worst[0].max((&again.point - &r.point).amax());
        worst[1] = worst[1].max(expansion);
        worst[2] = worst[2].max(r.kkt_residual);
        worst[3] = worst[3].max((&brute - &r.point).amax());
    }
    ensure(
        worst[0] < PROJECTION_TOL && worst[1] < PROJECTION_TOL && worst[2] < KKT_TOL && worst[3] < PROJECTION_TOL,
        format!("idempotence {:.1e}, expansion {:.1e}, kkt {:.1e}, brute force {:.1e}", worst[0], worst[1], worst[2], worst[3]),
    )?;
    Ok(format!(
        "{PROJECTION_CASES} cases: idempotence {:.1e}, expansion {:.1e}, kkt {:.1e}, brute force {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn criterion_8(runs: &[(String, Trajectory)]) -> Result<String, String> {
    let mut worst = [f64::NEG_INFINITY, 0.0, 0.0, 0.0];
    let mut records = 0;
    for (name, tr) in runs {
        for (i, r) in tr.records.iter().enumerate() {
            records += 1;
            worst[0] = worst[0].max(r.constraints.max_g());
            worst[1] = worst[1].max(r.fields.equilibrium_residual);
            worst[2] = worst[2].max(r.fields.compatibility_residual);
            worst[3] = worst[3].max(r.fields.constraint_residual);
            if i > 0 && (0..r.state.a.len()).any(|k| r.state.a[k] < tr.records[i - 1].state.a[k]) {
                return Err(format!("{name}: damage decreases at step {}", r.step));
            }
        }
    }
    ensure(
        worst[0] <= FEASIBILITY_TOL
            && worst[1] < EQUILIBRIUM_TOL
            && worst[2] < CLOSURE_TOL
            && worst[3] < CLOSURE_TOL,
        format!("max g {:.1e}, equilibrium {:.1e}, closure {:.1e}/{:.1e}", worst[0], worst[1], worst[2], worst[3]),
    )?;
    Ok(format!(
        "{} scenarios, {records} records: max g {:.1e}, equilibrium {:.1e}, closure {:.1e}/{:.1e}",
        runs.len(),
        worst[0],
        worst[1],
        worst[2],
        worst[3]
    ))
}

fn total_stress(tr: &Trajectory) -> Vec<(f64, f64)> {
    tr.records.iter().map(|r| (r.t, r.total_stress.unwrap_or(f64::NAN))).collect()
}

fn line_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let worst = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).abs()).fold(0.0, f64::max);
    (slope, my - slope * mx, worst)
}

fn criterion_9(scenario: &Scenario, plus: &Trajectory) -> Result<String, String> {
    let curve = total_stress(plus);
    let yield_idx = plus
        .records
        .iter()
        .position(|r| r.state.a.amax() > 0.0)
        .ok_or("no yielding")?;
    let peak_idx = (0..curve.len()).max_by(|&i, &j| curve[i].1.total_cmp(&curve[j].1)).unwrap();
    let (t_yield, t_peak) = (curve[yield_idx].0, curve[peak_idx].0);
    // (a) Three-phase shape.
    let (elastic_slope, _, elastic_dev) = line_fit(&curve[..yield_idx]);
    let rising = curve[..=peak_idx].windows(2).all(|w| w[1].1 > w[0].1);
    let falling = curve[peak_idx..].windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let plastic_slope = (curve[peak_idx].1 - curve[yield_idx].1) / (t_peak - t_yield);
    let tail_start = peak_idx + (curve.len() - peak_idx) / 3;
    let (post_slope, _, tail_dev) = line_fit(&curve[tail_start..]);
    let drop = curve[peak_idx].1 - curve.last().unwrap().1;
    ensure(
        elastic_dev < 1e-9 * elastic_slope.abs().max(1.0)
            && rising
            && falling
            && plastic_slope > 0.0
            && plastic_slope < elastic_slope
            && post_slope < 0.0
            && tail_dev < 0.01 * drop,
        format!(
            "shape: elastic dev {elastic_dev:.1e}, rising {rising}, falling {falling}, plastic slope {plastic_slope:.3e}, post slope {post_slope:.3e}, tail dev {tail_dev:.1e}"
        ),
    )?;
    // (b) Damage after the peak concentrates in a connected diagonal band.
    let a_peak = &plus.records[peak_idx].state.a;
    let a_end = &plus.last().state.a;
    let inc: Vec<f64> = (0..a_end.len()).map(|i| a_end[i] - a_peak[i]).collect();
    let total: f64 = inc.iter().sum();
    let mut order: Vec<usize> = (0..inc.len()).collect();
    order.sort_by(|&i, &j| inc[j].total_cmp(&inc[i]));
    let mut acc = 0.0;
    let mut band = Vec::new();
    for &i in &order {
        if acc >= BAND_DAMAGE_SHARE * total {
            break;
        }
        acc += inc[i];
        band.push(i);
    }
    let share = band.len() as f64 / inc.len() as f64;
    let spec = &scenario.spec;
    let mids: Vec<(f64, f64)> = band
        .iter()
        .map(|&i| {
            let s = &spec.springs[i];
            let p = |n: usize, k: usize| spec.positions[2 * n + k];
            ((p(s.origin, 0) + p(s.terminus, 0)) / 2.0, (p(s.origin, 1) + p(s.terminus, 1)) / 2.0)
        })
        .collect();
    // Springs in the same or diagonally adjacent cells count as neighbours.
    let spacing = lsm_sweep::lattice::rest_lengths(spec).map_err(|e| e.to_string())?.min();
    let reach = 2f64.sqrt() * spacing * (1.0 + 1e-9);
    let connected = {
        let mut reached = vec![false; band.len()];
        let mut stack = vec![0];
        reached[0] = true;
        while let Some(x) = stack.pop() {
            for y in 0..band.len() {
                let d = ((mids[x].0 - mids[y].0).powi(2) + (mids[x].1 - mids[y].1).powi(2)).sqrt();
                if !reached[y] && d <= reach {
                    reached[y] = true;
                    stack.push(y);
                }
            }
        }
        reached.iter().all(|&r| r)
    };
    let (band_slope, _, _) = line_fit(&mids);
    let diagonal = band_slope.abs() > 0.3 && band_slope.abs() < 3.0;
    ensure(
        share <= BAND_SPRING_SHARE && connected && diagonal,
        format!("band: {} springs ({share:.3}), connected {connected}, slope {band_slope:.2}", band.len()),
    )?;
    // (c) Event-time ratio.
    let ratio = t_peak / t_yield;
    ensure(
        ((ratio - EVENT_RATIO) / EVENT_RATIO).abs() < EVENT_RATIO_REL_TOL,
        format!("t_peak/t_yield = {t_peak}/{t_yield} = {ratio:.3}"),
    )?;
    // (d) Opposite perturbation gives the mirrored band.
    let mut minus_scenario = scenario.clone();
    if let InitialGuess::Perturbed { magnitude, .. } = &mut minus_scenario.config.initial_value {
        *magnitude = -*magnitude;
    } else {
        return Err("rect_softening must use a perturbed guess".into());
    }
    let minus = simulate(&minus_scenario)?;
    let perm = mirror_permutation(spec).ok_or("lattice is not mirror symmetric")?;
    let b = &minus.last().state.a;
    let mirrored = DenseVector::from_iterator(perm.len(), perm.iter().map(|&j| a_end[j]));
    let mirror_diff = (b - &mirrored).norm() / a_end.norm();
    let unmirrored_diff = (b - a_end).norm() / a_end.norm();
    ensure(
        mirror_diff < MIRROR_REL_TOL,
        format!("mirror difference {mirror_diff:.3e} (unmirrored {unmirrored_diff:.3})"),
    )?;
    Ok(format!(
        "yield t={t_yield:.2}, peak t={t_peak:.2}, ratio {ratio:.3}; band {} springs ({:.1}%) carrying {:.1}% with slope {band_slope:.2}; mirror difference {mirror_diff:.1e} (unmirrored {unmirrored_diff:.2})",
        band.len(),
        100.0 * share,
        100.0 * acc / total
    ))
}

fn criterion_10(perfect: &Trajectory, hardening: &Trajectory) -> Result<String, String> {
    let mut out = Vec::new();
    for (name, tr, want_positive) in [("h=1.0", perfect, false), ("h=0.9", hardening, true)] {
        let curve = total_stress(tr);
        let yield_idx = tr.records.iter().position(|r| r.state.a.amax() > 0.0).ok_or("no yielding")?;
        let (elastic, _, _) = line_fit(&curve[..yield_idx]);
        let tail = &curve[curve.len() * 4 / 5..];
        let (slope, _, _) = line_fit(tail);
        let ok = if want_positive { slope > 0.0 } else { slope.abs() < PERFECT_SLOPE_SHARE * elastic };
        let failures = tr.failure_events().len();
        ensure(
            ok && failures == 0,
            format!("{name}: post-yield slope {slope:.3e} vs elastic {elastic:.3e}, {failures} failures"),
        )?;
        out.push(format!("{name}: post-yield slope {:.2e} of elastic", slope / elastic));
    }
    Ok(out.join("; "))
}

fn main() {
    let mut report = Report { failures: 0 };
    report.check("1", "dimension identities", criterion_1);
    report.check("2", "single-spring plasticity modulus", criterion_2);
    report.check("3", "single-spring complete failure", criterion_3);
    report.check("4", "two-spring fixed-point charts", criterion_4);
    report.check("5", "two-spring branch rates", criterion_5);
    report.check("6", "reduced and unreduced schemes agree", criterion_6);
    report.check("7", "projection property suite", criterion_7);

    let names = [
        "toy_softening.scn",
        "toy_hardening.scn",
        "toy_perfect.scn",
        "single_softening.scn",
        "rect_softening.scn",
        "rect_hardening.scn",
        "rect_perfect.scn",
        "tri.scn",
    ];
    let mut runs = Vec::new();
    let mut run_errors = Vec::new();
    for name in names {
        match simulate(&load(name)) {
            Ok(tr) => runs.push((name.to_string(), tr)),
            Err(e) => run_errors.push(format!("{name}: {e}")),
        }
    }
    let find = |n: &str| runs.iter().find(|(m, _)| m == n).map(|(_, t)| t);
    report.check("8", "trajectory invariants of bundled scenarios", || {
        ensure(run_errors.is_empty(), run_errors.join("; "))?;
        criterion_8(&runs)
    });
    report.check("9", "rectangular softening shear band", || {
        criterion_9(&load("rect_softening.scn"), find("rect_softening.scn").ok_or("run failed")?)
    });
    report.check("10", "hardening and perfect lattices", || {
        criterion_10(
            find("rect_perfect.scn").ok_or("run failed")?,
            find("rect_hardening.scn").ok_or("run failed")?,
        )
    });
    report.check("11", "rate independence", criterion_11);
    if report.failures > 0 {
        println!("{} criteria failed", report.failures);
        std::process::exit(1);
    }
}
