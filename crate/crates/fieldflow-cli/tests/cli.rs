use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fieldflow_cli::config::ScenarioConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fieldflow"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

const KG_ZERO_STEPS: &str = r#"
scenario = "klein_gordon"
[grid]
axes = [{ cells = 32 }]
[initial]
phi = ["cos(2*pi*x1)"]
[time]
dt_over_h = 0.25
steps = 0
"#;

#[test]
fn zero_steps_write_the_initial_energy_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kg.toml", KG_ZERO_STEPS);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("diagnostics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&header[..4], ["t", "energy", "energy_matter", "energy_gauge"]);
    assert!(column(&header, &rows, "energy")[0] > 0.0);
}

#[test]
fn maxwell_plane_wave_conserves_energy_with_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(Path::new("../../configs/maxwell.toml"), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("diagnostics.csv"));
    let expected = [
        "t",
        "energy",
        "energy_matter",
        "energy_gauge",
        "power_interior",
        "power_interaction_gauge",
        "power_interaction_matter",
        "balance_residual",
        "local_balance_residual",
        "boundary_residual",
        "charge_1",
        "charge_residual",
        "bianchi_residual",
        "bianchi_rate_residual",
        "rep_difference",
    ];
    assert_eq!(header, expected);
    let energy = column(&header, &rows, "energy");
    let e0 = energy[0];
    assert!(energy.iter().all(|e| ((e - e0) / e0).abs() < 1e-3), "{energy:?}");
}

#[test]
fn boundary_power_is_nonzero_only_on_the_driven_face() {
    let text = r#"
scenario = "su2_yang_mills"
[grid]
axes = [{ cells = 8, periodic = false }, { cells = 8, periodic = false }]
[initial]
a = ["0.1*sin(pi*x1)", "0", "0", "0", "0.1", "0"]
[[forces.boundary]]
sector = "gauge"
face = "x2_upper"
values = ["0.5*sin(2*t)", "0.2", "0"]
[time]
dt_over_h = 0.25
steps = 20
"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ym.toml", text);
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let (header, rows) = read_csv(&out.join("diagnostics.csv"));
    for face in ["x1_lower", "x1_upper", "x2_lower", "x2_upper"] {
        let p = column(&header, &rows, &format!("power_boundary_{face}"));
        let nonzero = p.iter().any(|v| v.abs() > 1e-12);
        assert_eq!(nonzero, face == "x2_upper", "{face}: {p:?}");
    }
}

#[test]
fn identical_configs_give_identical_bytes_and_the_manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new("../../configs/ymh.toml");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run(cfg, &a, &[]).status.success());
    assert!(run(cfg, &b, &[]).status.success());
    let diag = |d: &Path| fs::read(d.join("diagnostics.csv")).unwrap();
    assert_eq!(diag(&a), diag(&b));
    assert_eq!(fs::read(a.join("manifest.toml")).unwrap(), fs::read(b.join("manifest.toml")).unwrap());

    assert!(run(&a.join("manifest.toml"), &c, &[]).status.success());
    assert_eq!(diag(&a), diag(&c));
    let manifest = ScenarioConfig::load(&a.join("manifest.toml")).unwrap();
    let table = manifest.manifest.unwrap();
    assert_eq!(table["version"].as_str(), Some(env!("CARGO_PKG_VERSION")));
}

#[test]
fn seed_override_changes_noisy_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new("../../configs/ymh.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(cfg, &a, &[]).status.success());
    assert!(run(cfg, &b, &["--seed", "99"]).status.success());
    assert_ne!(fs::read(a.join("diagnostics.csv")).unwrap(), fs::read(b.join("diagnostics.csv")).unwrap());
}

#[test]
fn snapshots_are_opt_in() {
    let text = KG_ZERO_STEPS.replace("steps = 0", "steps = 4") + "[output]\nevery = 2\nsnapshots = true\n";
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kg.toml", &text);
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let mut names: Vec<String> = fs::read_dir(out.join("snapshots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["matter_q_000000.csv", "matter_q_000002.csv", "matter_q_000004.csv", "matter_v_000000.csv", "matter_v_000002.csv", "matter_v_000004.csv"]
    );
    let (_, rows) = read_csv(&out.join("diagnostics.csv"));
    assert_eq!(rows.len(), 3);

    let plain = write_config(dir.path(), "plain.toml", KG_ZERO_STEPS);
    let out2 = dir.path().join("plain");
    assert!(run(&plain, &out2, &[]).status.success());
    assert!(!out2.join("snapshots").exists());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        KG_ZERO_STEPS.replace("scenario = \"klein_gordon\"", "scenario = \"nope\""),
        KG_ZERO_STEPS.replace("cos(2*pi*x1)", "cos(2*pi*y)"),
        KG_ZERO_STEPS.to_string() + "[[forces.boundary]]\nsector = \"matter\"\nface = \"x1_upper\"\nvalues = [\"1\"]\n",
        KG_ZERO_STEPS.replace("[time]", "[time]\nbogus = 1"),
        KG_ZERO_STEPS.replace("axes = [{ cells = 32 }]", "axes = [{ cells = 32 }]\nmetric = [\"cos(2*pi*x1)\"]"),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.toml"), text);
        let o = run(&cfg, &dir.path().join("out"), &[]);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&dir.path().join("missing.toml"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin().arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cfl_violation_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = KG_ZERO_STEPS.replace("dt_over_h = 0.25\nsteps = 0", "dt_over_h = 2.0\nsteps = 3");
    let cfg = write_config(dir.path(), "cfl.toml", &text);
    let o = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn studies_write_a_table_and_exit_four_when_a_target_is_missed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    let o = run(Path::new("../../configs/rod.toml"), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("convergence.csv"));
    assert_eq!(&header[..4], ["diagnostic", "target", "slope", "passed"]);
    let balance = rows.iter().find(|r| r[0] == "balance").unwrap();
    assert!(balance[2].parse::<f64>().unwrap() >= 1.7);

    let text = KG_ZERO_STEPS.replace("steps = 0", "steps = 8").replace("{ cells = 32 }", "{ cells = 32, periodic = false }")
        + "[study]\naxis = \"dt\"\nlevels = [8, 16, 32]\ndiagnostics = [\"divergence\"]\n";
    let cfg = write_config(dir.path(), "miss.toml", &text);
    let o = run(&cfg, &dir.path().join("miss"), &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stdout));

    let o = run(&cfg, &dir.path().join("few"), &["--levels", "8,16"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configurations_parse() {
    for entry in fs::read_dir("../../configs").unwrap() {
        let path = entry.unwrap().path();
        ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
