use lsm_sweep::catchup::Outcome;
use lsm_sweep::cli::{
    cmd_chart, cmd_run, load_scenario, parse_scenario, parse_scenario_file, serialize_scenario, ChartRequest,
    CliError,
};
use std::path::{Path, PathBuf};
use std::process::Command;

const BUNDLED: [&str; 8] = [
    "toy_softening",
    "toy_hardening",
    "toy_perfect",
    "single_softening",
    "rect_softening",
    "rect_hardening",
    "rect_perfect",
    "tri",
];

const RANK_DEFICIENT: &str = r#"
[lattice]
generator = "explicit"
dim = 1
nodes = [[0.0], [1.0], [2.0]]
springs = [
    { origin = 0, terminus = 1, params = { k = 1.0, h = 0.8, s = 1.0, c0 = 0.01 } },
    { origin = 1, terminus = 2, params = { k = 1.0, h = 0.8, s = 1.0, c0 = 0.01 } },
]

[[constraints]]
node = 0
coord = 0

[[constraints]]
node = 0
coord = 0

[[constraints]]
node = 2
coord = 0
program = { times = [0.0, 1.0], values = [0.0, 0.01] }

[solver]
t_end = 1.0
steps = 10
"#;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn"))
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lsm-sweep"))
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn bundled_scenarios_round_trip() {
    for name in BUNDLED {
        let text = std::fs::read_to_string(bundled(name)).unwrap();
        let file = parse_scenario_file(&text).unwrap();
        let again = parse_scenario_file(&serialize_scenario(&file)).unwrap();
        assert_eq!(file, again, "{name}");
    }
}

#[test]
fn csv_values_reread_exactly() {
    let scenario = load_scenario(&bundled("toy_softening")).unwrap();
    let ops = scenario.assemble().unwrap();
    let (tr, err) = scenario.simulate(&ops).unwrap();
    assert!(err.is_none());
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&scenario, dir.path(), &mut std::io::sink()).unwrap();
    let (header, rows) = read_csv(&dir.path().join("trajectory.csv"));
    assert_eq!(rows.len(), tr.records.len());
    let (a1, s2) = (column(&header, "a_1"), column(&header, "sigma_2"));
    for (row, rec) in rows.iter().zip(&tr.records) {
        assert_eq!(row[0], rec.t);
        assert_eq!(row[a1], rec.state.a[0]);
        assert_eq!(row[s2], rec.fields.sigma[1]);
    }
}

#[test]
fn toy_softening_snapshot_matches_golden() {
    let scenario = load_scenario(&bundled("toy_softening")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_run(&scenario, dir.path(), &mut std::io::sink()).unwrap();
    assert_eq!(summary.outcome, Outcome::Completed);
    let svg = std::fs::read_to_string(dir.path().join("snapshot_t4.svg")).unwrap();
    let golden = include_str!("golden/toy_softening_t4.svg");
    assert_eq!(svg, golden);
}

#[test]
fn snapshots_are_well_formed() {
    let scenario = load_scenario(&bundled("toy_hardening")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_run(&scenario, dir.path(), &mut std::io::sink()).unwrap();
    let svgs: Vec<_> = summary.files.iter().filter(|p| p.extension().is_some_and(|e| e == "svg")).collect();
    assert_eq!(svgs.len(), 2);
    for path in svgs {
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("<?xml"));
        let body = text.split_once("?>").unwrap().1;
        let mut stack = Vec::new();
        for tag in body.split('<').skip(1).map(|t| t.split('>').next().unwrap()) {
            let name = tag.trim_start_matches('/').split_whitespace().next().unwrap();
            if tag.ends_with('/') {
                continue;
            } else if tag.starts_with('/') {
                assert_eq!(stack.pop(), Some(name.to_owned()), "{}", path.display());
            } else {
                stack.push(name.to_owned());
            }
        }
        assert!(stack.is_empty());
    }
}

#[test]
fn hardening_csv_slope() {
    let scenario = load_scenario(&bundled("toy_hardening")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&scenario, dir.path(), &mut std::io::sink()).unwrap();
    let (header, rows) = read_csv(&dir.path().join("trajectory.csv"));
    let sigma = column(&header, "sigma_1");
    // l = 0.01 t; plastic from t = 2 with d sigma / d l = 1/12.
    let after: Vec<&Vec<f64>> = rows.iter().filter(|r| r[0] >= 2.5).collect();
    for w in after.windows(2) {
        let slope = (w[1][sigma] - w[0][sigma]) / (0.01 * (w[1][0] - w[0][0]));
        assert!((slope - 1.0 / 12.0).abs() < 1e-8, "{slope}");
    }
}

#[test]
fn zero_load_keeps_every_column_constant() {
    let text = std::fs::read_to_string(bundled("toy_hardening"))
        .unwrap()
        .replace("values = [0.0, 0.04]", "values = [0.0, 0.0]");
    let scenario = parse_scenario(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&scenario, dir.path(), &mut std::io::sink()).unwrap();
    let (header, rows) = read_csv(&dir.path().join("trajectory.csv"));
    let skip = [0, column(&header, "step_index"), column(&header, "inner_iterations")];
    for col in (0..header.len()).filter(|c| !skip.contains(c)) {
        let first = rows[0][col];
        assert!(rows.iter().all(|r| r[col] == first || (r[col].is_nan() && first.is_nan())), "{}", header[col]);
    }
}

#[test]
fn chart_region_without_fixed_points() {
    let scenario = load_scenario(&bundled("toy_hardening")).unwrap();
    let mut out = Vec::new();
    let req = ChartRequest { step: 150, region: [0.04, 0.04, 0.05, 0.05], grid: 8 };
    cmd_chart(&scenario, &req, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("sample,")).count(), 64);
    assert!(!text.lines().any(|l| l.starts_with("fixed,")));
}

#[test]
fn chart_rejects_lattices() {
    let scenario = load_scenario(&bundled("rect_hardening")).unwrap();
    let req = ChartRequest { step: 1, region: [0.0, 0.0, 1.0, 1.0], grid: 4 };
    assert!(matches!(cmd_chart(&scenario, &req, &mut Vec::new()), Err(CliError::Chart(_))));
}

#[test]
fn empty_file_is_a_parse_error() {
    assert!(matches!(parse_scenario(""), Err(CliError::Parse(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.scn");
    std::fs::write(&path, "").unwrap();
    let out = binary().arg("check").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rank_deficient_constraints_fail_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.scn");
    std::fs::write(&path, RANK_DEFICIENT).unwrap();
    for args in [vec!["check"], vec!["run", "--out", dir.path().join("o").to_str().unwrap()]] {
        let out = binary().args(&args).arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(1));
        let text = String::from_utf8_lossy(&out.stdout) + String::from_utf8_lossy(&out.stderr);
        assert!(text.contains("constraint rank: R does not have full row rank"), "{text}");
    }
}

#[test]
fn complete_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args(["run", "--out", dir.path().to_str().unwrap()])
        .arg(bundled("single_softening"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let (_, rows) = read_csv(&dir.path().join("trajectory.csv"));
    assert_eq!(rows.len(), 501);
}

#[test]
fn oracle_command_prints_rates() {
    let out = binary().args(["oracle", "two-softening"]).output().unwrap();
    assert!(out.status.success());
    assert!(!out.stdout.is_empty());
}
