//! Acceptance criterion 11: CLI determinism and the documented exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn ned() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ned"))
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

struct Fixture {
    dir: PathBuf,
}

impl Fixture {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("ned-acceptance-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

fn scalar_system(fx: &Fixture) -> PathBuf {
    let p = fx.path("sys.json");
    write(
        &p,
        r#"{"dim": 1, "A": [["lambda0"]], "params": {"lambda0": -1.0}}"#,
    );
    p
}

fn a2_perturbation(fx: &Fixture) -> PathBuf {
    let p = fx.path("pert.json");
    write(
        &p,
        r#"{"f": ["0.1*exp(-2*t)*sin(x1)"], "L_f": 0.1, "beta": 1.0, "K0": 0.0, "class": "A2"}"#,
    );
    p
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn criterion_11_cli_determinism_and_exit_codes() {
    let fx = Fixture::new("c11");
    let sys = scalar_system(&fx);
    let pert = a2_perturbation(&fx);

    // Two pipeline runs must produce byte-identical outputs.
    for out in ["run1", "run2"] {
        let status = ned()
            .args([
                "pipeline",
                "--system",
                sys.to_str().unwrap(),
                "--perturbation",
                pert.to_str().unwrap(),
                "--method",
                "picard",
                "--n-points",
                "4",
                "--t-max",
                "12",
                "--step",
                "0.1",
                "--out",
                fx.path(out).to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success(), "pipeline run failed");
    }
    let a = dir_contents(&fx.path("run1"));
    let b = dir_contents(&fx.path("run2"));
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(b.iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between runs");
    }

    // Exit 2: file that does not parse.
    let bad = fx.path("bad.json");
    write(&bad, r#"{"dim": 1, "A": [["2^3"]], "params": {}}"#);
    let st = ned()
        .args([
            "certify",
            "--system",
            bad.to_str().unwrap(),
            "--out",
            fx.path("o2").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2), "parse error must exit 2");

    // Exit 2: empty shift grid.
    let st = ned()
        .args([
            "spectrum",
            "--system",
            sys.to_str().unwrap(),
            "--lambda-min=1.0",
            "--lambda-max=-1.0",
            "--step",
            "0.1",
            "--out",
            fx.path("o2b").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2), "empty grid must exit 2");

    // Exit 3: expansion is not certifiable.
    let grow = fx.path("grow.json");
    write(&grow, r#"{"dim": 1, "A": [["1"]], "params": {}}"#);
    let st = ned()
        .args([
            "certify",
            "--system",
            grow.to_str().unwrap(),
            "--out",
            fx.path("o3").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(3), "expansion must exit 3");

    // Exit 4: contraction ratio K L_f / alpha >= 1, message cites the bound.
    let big = fx.path("big.json");
    write(
        &big,
        r#"{"f": ["1.5*sin(x1)"], "L_f": 1.5, "beta": 0.0, "K0": 0.0, "class": "A2"}"#,
    );
    let st = ned()
        .args([
            "linearize",
            "--system",
            sys.to_str().unwrap(),
            "--perturbation",
            big.to_str().unwrap(),
            "--method",
            "picard",
            "--out",
            fx.path("o4").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(4), "contraction ratio must exit 4");
    let msg = String::from_utf8_lossy(&st.stderr);
    assert!(
        msg.contains("K L_f / alpha"),
        "diagnostic must cite the violated bound: {msg}"
    );

    println!("[PASS] criterion 11: byte-identical pipeline outputs; exit codes 2/3/4 verified");
}

#[test]
fn linearize_produces_identity_columns_for_zero_perturbation() {
    let fx = Fixture::new("ident");
    let sys = scalar_system(&fx);
    let zero = fx.path("zero.json");
    write(
        &zero,
        r#"{"f": ["0"], "L_f": 0.0, "beta": 0.0, "K0": 0.0, "class": "A2"}"#,
    );
    for method in ["picard", "crossing"] {
        let out = fx.path(&format!("out-{method}"));
        let st = ned()
            .args([
                "linearize",
                "--system",
                sys.to_str().unwrap(),
                "--perturbation",
                zero.to_str().unwrap(),
                "--method",
                method,
                "--n-points",
                "4",
                "--t-max",
                "10",
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(st.success());
        let csv = fs::read_to_string(out.join("mapped_points.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            let (xi, h) = (cells[1], cells[2]);
            assert!(
                (xi - h).abs() <= 1e-6 * (1.0 + xi.abs()),
                "{method}: H != id on zero perturbation: xi={xi}, h={h}"
            );
        }
    }
}

#[test]
fn picard_offset_matches_closed_form_through_the_cli() {
    // x' = -x with f = 0.5: H(tau, xi) - xi = 0.5 (1 - e^{-tau}).
    let fx = Fixture::new("offset");
    let sys = scalar_system(&fx);
    let constf = fx.path("const.json");
    write(
        &constf,
        r#"{"f": ["0.5"], "L_f": 0.0, "beta": 0.0, "K0": 0.5, "class": "A1"}"#,
    );
    let pts = fx.path("pts.csv");
    write(&pts, "1.0,2.0\n1.0,-0.7\n2.5,1.3\n");
    let out = fx.path("out");
    let st = ned()
        .args([
            "linearize",
            "--system",
            sys.to_str().unwrap(),
            "--perturbation",
            constf.to_str().unwrap(),
            "--method",
            "picard",
            "--points",
            pts.to_str().unwrap(),
            "--t-max",
            "12",
            "--tol",
            "1e-10",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let csv = fs::read_to_string(out.join("mapped_points.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let (tau, xi, h) = (cells[0], cells[1], cells[2]);
        let exact = xi + 0.5 * (1.0 - (-tau).exp());
        assert!((h - exact).abs() <= 1e-7, "H({tau}, {xi}) = {h}, want {exact}");
    }
}

#[test]
fn crossing_time_column_matches_closed_form_through_the_cli() {
    let fx = Fixture::new("tcol");
    let sys = scalar_system(&fx);
    let zero = fx.path("zero.json");
    write(
        &zero,
        r#"{"f": ["0"], "L_f": 0.0, "beta": 0.0, "K0": 0.0, "class": "A2"}"#,
    );
    let pts = fx.path("pts.csv");
    write(&pts, "0.0,2.0\n1.0,2.0\n0.5,-1.6\n");
    let out = fx.path("out");
    let st = ned()
        .args([
            "linearize",
            "--system",
            sys.to_str().unwrap(),
            "--perturbation",
            zero.to_str().unwrap(),
            "--method",
            "crossing",
            "--points",
            pts.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let csv = fs::read_to_string(out.join("mapped_points.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let (tau, xi, t_cross) = (cells[0], cells[1], cells[3]);
        let exact = tau + (2.0 * xi * xi).ln() / 2.0;
        assert!(
            (t_cross - exact).abs() <= 1e-8,
            "T({tau}, {xi}) = {t_cross}, want {exact}"
        );
    }
}
