use std::path::{Path, PathBuf};

use mida_cli::scenario::ScenarioConfig;
use mida_cli::{run_cli, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn mida(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(std::iter::once("mida").chain(args.iter().copied()), &mut out, &mut err);
    Output { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TWO_AGENT: &str = r#"
schema_version = 1
g = 1

[[buyers]]
kind = "unit-demand"
values = [7]

[[sellers]]
type = 0
marginals = [1]
"#;

const TWO_TYPES: &str = r#"
schema_version = 1
g = 2

[[buyers]]
kind = "unit-demand"
values = [9, "15/2"]

[[buyers]]
kind = "additive"
values = [6, 5]

[[buyers]]
kind = "table"
table = [{ bundle = [0], value = 8 }, { bundle = [1], value = 7 }, { bundle = [0, 1], value = 12 }]

[[sellers]]
type = 0
marginals = [3, 2]

[[sellers]]
type = 1
marginals = [4, 1]

[[sellers]]
type = 1
marginals = [2]
"#;

#[test]
fn check_accepts_valid_and_names_dmr_violations() {
    let dir = tempfile::tempdir().unwrap();
    let ok = mida(&["check", s(&write(dir.path(), "ok.toml", TWO_TYPES))]);
    assert_eq!(ok.code, EXIT_OK, "{}", ok.stderr);
    assert!(ok.stdout.contains("6 agents, 0 invalid"));

    let bad = TWO_AGENT.replace("marginals = [1]", "marginals = [1, 9]");
    let res = mida(&["check", s(&write(dir.path(), "bad.toml", &bad))]);
    assert_eq!(res.code, EXIT_VALIDATION);
    assert!(res.stderr.contains("DMR VIOLATED"), "{}", res.stderr);
}

#[test]
fn check_reports_complements_with_a_price_pair() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
schema_version = 1
g = 2

[[buyers]]
kind = "table"
table = [{ bundle = [0], value = 0 }, { bundle = [1], value = 0 }, { bundle = [0, 1], value = 10 }]
"#;
    let res = mida(&["check", s(&write(dir.path(), "c.toml", text))]);
    assert_eq!(res.code, EXIT_VALIDATION);
    assert!(res.stderr.contains("GS VIOLATED: demands {0,1} at ("), "{}", res.stderr);
    // the same file is refused by the solver unless explicitly allowed
    let path = dir.path().join("c.toml");
    assert_eq!(mida(&["solve", s(&path)]).code, EXIT_VALIDATION);
    assert_eq!(mida(&["solve", s(&path), "--allow-non-gs"]).code, EXIT_OK);
}

#[test]
fn solve_prints_minimal_price_and_gain() {
    let dir = tempfile::tempdir().unwrap();
    let res = mida(&["solve", s(&write(dir.path(), "two.toml", TWO_AGENT))]);
    assert_eq!(res.code, EXIT_OK);
    assert!(res.stdout.starts_with("prices: (1)\ngain: 6\n"), "{}", res.stdout);
    assert!(res.stderr.starts_with("wall time: "));
}

#[test]
fn solve_empty_market_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let res = mida(&["solve", s(&write(dir.path(), "empty.toml", "schema_version = 1\ng = 2\n"))]);
    assert_eq!(res.code, EXIT_OK);
    assert!(res.stdout.starts_with("prices: (0, 0)\ngain: 0\n"), "{}", res.stdout);

    let csv = dir.path().join("eq.csv");
    let res = mida(&["solve", s(&write(dir.path(), "t.toml", TWO_TYPES)), "--csv", s(&csv)]);
    assert_eq!(res.code, EXIT_OK);
    assert_eq!(
        std::fs::read_to_string(csv).unwrap(),
        "type,price_num,price_den,k,gain_num,gain_den\n0,5,1,2,10,1\n1,7,2,2,9,1\n"
    );
}

#[test]
fn run_reports_degenerate_flags_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let res = mida(&["run", s(&write(dir.path(), "two.toml", TWO_AGENT)), "--seed", "1"]);
    assert_eq!(res.code, EXIT_OK);
    assert!(res.stdout.contains("degenerate: R true L true"));

    let path = write(dir.path(), "t.toml", TWO_TYPES);
    let res = mida(&["run", s(&path), "--seed", "1", "--emit-diagnostics"]);
    assert_eq!(res.code, EXIT_OK);
    for needle in ["R type 0: delta ", "|Bx-| ", "d+ ", "loss type 1: k 2", "sellers drop highest-valued units first"] {
        assert!(res.stdout.contains(needle), "missing {needle:?} in\n{}", res.stdout);
    }
    let again = mida(&["run", s(&path), "--seed", "1", "--emit-diagnostics"]);
    assert_eq!(res.stdout, again.stdout);
}

#[test]
fn experiment_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "t.toml", TWO_TYPES);
    let res = mida(&["experiment", s(&path), "--trials", "10", "--seed", "4"]);
    assert_eq!(res.code, EXIT_OK);
    let lines: Vec<&str> = res.stdout.split('\n').collect();
    assert_eq!(lines.len(), 12, "header, 10 rows and the trailing newline");
    assert_eq!(
        lines[0],
        "scenario_id,trial,seed,gft_mida_num,gft_mida_den,gft_opt_num,gft_opt_den,ratio_decimal_15sig,degenerate_R,degenerate_L,k_0,k_1,deals_lost_0,deals_lost_1"
    );
    assert!(lines[1].starts_with("t,0,4,"));
    assert!(!res.stdout.contains('\r'));

    let out = dir.path().join("r.csv");
    let res = mida(&["experiment", s(&path), "--trials", "10", "--seed", "4", "--out", s(&out)]);
    assert_eq!(res.code, EXIT_OK);
    assert!(res.stdout.contains("scenario t: 10 trials from seed 4"));
    assert_eq!(std::fs::read_to_string(out).unwrap(), mida(&["experiment", s(&path), "--trials", "10", "--seed", "4"]).stdout);
}

#[test]
fn experiment_scaling_list_gives_one_block_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
schema_version = 1
g = 1

[generator]
kind = "calibrated"
family = "unit-demand"
targets = [10]
max_units = 1

[experiment]
trials = 5
seed = 2
k_scaling = [10, 20]
"#;
    let res = mida(&["experiment", s(&write(dir.path(), "sc.toml", text))]);
    assert_eq!(res.code, EXIT_OK, "{}", res.stderr);
    let ids: Vec<&str> = res.stdout.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, [vec!["sc-k10"; 5], vec!["sc-k20"; 5]].concat());
}

#[test]
fn reproduce_examples() {
    let res = mida(&["reproduce", "mcafee-sbb"]);
    assert_eq!(res.code, EXIT_OK);
    assert!(res.stdout.contains("trader gain = 2(k-1)eps: 99/500"));
    let res = mida(&["reproduce", "mcafee-sbb", "--k", "10", "--eps", "1/100"]);
    assert!(res.stdout.contains("9/50"), "{}", res.stdout);
    assert_eq!(mida(&["reproduce", "naive-multiunit"]).code, EXIT_OK);
    assert_eq!(mida(&["reproduce", "demand-supply-interaction"]).code, EXIT_OK);
    assert_eq!(mida(&["reproduce", "nothing"]).code, EXIT_USAGE);
}

#[test]
fn usage_and_parse_errors() {
    assert_eq!(mida(&[]).code, EXIT_USAGE);
    assert_eq!(mida(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(mida(&["run", "x.toml", "--seed", "minus-one"]).code, EXIT_USAGE);
    assert_eq!(mida(&["--help"]).code, EXIT_OK);

    let dir = tempfile::tempdir().unwrap();
    let res = mida(&["solve", s(&write(dir.path(), "typo.toml", &TWO_AGENT.replace("values", "valuez")))]);
    assert_eq!(res.code, EXIT_VALIDATION);
    assert!(res.stderr.contains("line 7"), "{}", res.stderr);
    let res = mida(&["solve", s(&write(dir.path(), "zero.toml", &TWO_AGENT.replace("[7]", "[\"7/0\"]")))]);
    assert_eq!(res.code, EXIT_VALIDATION);
    assert!(res.stderr.contains("buyers[0].values[0]"), "{}", res.stderr);
    let res = mida(&["solve", s(&write(dir.path(), "v2.toml", &TWO_AGENT.replace("schema_version = 1", "schema_version = 2")))]);
    assert_eq!(res.code, EXIT_VALIDATION);
    assert_eq!(mida(&["solve", "/definitely/not/here.toml"]).code, EXIT_VALIDATION);
}

#[test]
fn scenario_files_round_trip() {
    for text in [TWO_AGENT, TWO_TYPES] {
        let config = ScenarioConfig::parse(text).unwrap();
        let serialized = config.to_toml();
        let again = ScenarioConfig::parse(&serialized).unwrap();
        assert_eq!(config, again);
        assert_eq!(again.to_toml(), serialized);
    }
}

#[test]
fn bundled_scenarios_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for name in ["two-agent", "two-types", "random-gs", "scaling"] {
        let path = root.join(format!("{name}.toml"));
        assert_eq!(mida(&["check", s(&path)]).code, EXIT_OK, "{name}");
    }
    for name in ["non-dmr-seller", "complements"] {
        assert_eq!(mida(&["check", s(&root.join(format!("{name}.toml")))]).code, EXIT_VALIDATION, "{name}");
    }
}
