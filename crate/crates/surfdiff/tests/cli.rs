//! End-to-end command dispatch: output files, exit codes, reproducibility.

use surfdiff::cli::main_with_args;
use surfdiff::stabilizer::StabilizerField;

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("surfdiff_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.ini");
    std::fs::write(&path, body).unwrap();
    path
}

fn args(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

const BOX2D_CFG: &str = "\
[shape]
kind = box2d
a = 2.0
b = 1.0
h = 0.125

[model]
family = cubic
beta = 0.125

[stabilizer]
kind = constant
value = 1.0

[time]
t_final = 0.01
";

#[test]
fn run_writes_outputs_and_is_byte_reproducible() {
    let dir = tmp_dir("run_repro");
    let cfg = write_config(&dir, BOX2D_CFG);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let code = main_with_args(&args(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "0x5EED",
        ]));
        assert_eq!(code, 0);
        assert!(out.join("config.echo").exists());
        assert!(out.join("diag.csv").exists());
        assert!(out.join("mesh_final.poly2d").exists());
    }
    let a = std::fs::read(out_a.join("diag.csv")).unwrap();
    let b = std::fs::read(out_b.join("diag.csv")).unwrap();
    assert_eq!(a, b, "reruns must be byte-identical");
    let a = std::fs::read(out_a.join("mesh_final.poly2d")).unwrap();
    let b = std::fs::read(out_b.join("mesh_final.poly2d")).unwrap();
    assert_eq!(a, b);
    // the echo re-parses to the same effective config
    let echoed = std::fs::read_to_string(out_a.join("config.echo")).unwrap();
    let reparsed = surfdiff::config::parse_config_text(&echoed).unwrap();
    let original = surfdiff::config::parse_config(
        &cfg,
        &[("output.dir".into(), out_a.to_str().unwrap().into())],
    )
    .unwrap();
    assert_eq!(reparsed, original);
}

#[test]
fn unknown_key_and_bad_usage_exit_2() {
    let dir = tmp_dir("usage");
    let cfg = write_config(&dir, &format!("{BOX2D_CFG}unknown_thing = 3\n"));
    let code = main_with_args(&args(&["run", "--config", cfg.to_str().unwrap()]));
    assert_eq!(code, 2);
    assert_eq!(main_with_args(&args(&["frobnicate"])), 2);
    assert_eq!(main_with_args(&args(&["run"])), 2);
    let code = main_with_args(&args(&["run", "--config", "/nonexistent/path.ini"]));
    assert_eq!(code, 2);
}

#[test]
fn unstable_model_exits_1() {
    let dir = tmp_dir("unstable");
    // beta = 0.5 violates gamma(-n) < 2 gamma(n) at n = -e_i
    let cfg = write_config(
        &dir,
        "\
[shape]
kind = cuboid
a = 2.0
b = 1.0
c = 1.0
h = 0.5

[model]
family = cubic
beta = 0.5

[time]
t_final = 0.01
",
    );
    let out = dir.join("out");
    let code = main_with_args(&args(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 1);
}

#[test]
fn k0_table_command_writes_parseable_table() {
    let dir = tmp_dir("k0table");
    let cfg = write_config(
        &dir,
        "\
[shape]
kind = cuboid
a = 2.0
b = 1.0
c = 1.0
h = 0.5

[model]
family = signriemannian
a = 2.5
b = 1.5

[stabilizer]
n_euler = 10
",
    );
    let out = dir.join("out");
    let code = main_with_args(&args(&[
        "k0-table",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let table = StabilizerField::<3>::load_table(out.join("k0.table")).unwrap();
    let StabilizerField::Table { values, n_theta, n_phi, .. } = table else {
        panic!("expected a table");
    };
    assert_eq!((n_theta, n_phi), (20, 21));
    assert_eq!(values.len(), 20 * 21);
    assert!(values.iter().all(|v| *v >= 0.0));
    let header = std::fs::read_to_string(out.join("k0.table")).unwrap();
    assert!(header.starts_with("K0TABLE d=3 model=signriemannian(a=2.5,b=1.5)"));
}

#[test]
fn converge_command_writes_table_with_dash_first_row() {
    let dir = tmp_dir("converge");
    let cfg = write_config(
        &dir,
        "\
[shape]
kind = ellipse
rx = 1.0
ry = 0.6
h = 0.2

[model]
family = isotropic

[stabilizer]
kind = constant
value = 0.0

[time]
t_final = 0.01

[output]
levels = 2
h_ref = 0.025
resolution = 512
",
    );
    let out = dir.join("out");
    let code = main_with_args(&args(&[
        "converge",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "h,tau,error,order");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",-"));
    assert!(!lines[2].ends_with(",-"));
}

#[test]
fn conserve_command_emits_diag_rows() {
    let dir = tmp_dir("conserve");
    let cfg = write_config(&dir, BOX2D_CFG);
    let out = dir.join("out");
    let code = main_with_args(&args(&[
        "conserve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("diag.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,V,W,dV_rel,W_rel,newton_iters");
    assert!(lines.len() > 2);
    // dV_rel column stays tiny
    for line in &lines[1..] {
        let dv: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(dv.abs() < 1e-11);
    }
    assert!(!out.join("mesh_final.poly2d").exists());
}

#[test]
fn check_command_passes_on_valid_config() {
    let dir = tmp_dir("check");
    let cfg = write_config(&dir, BOX2D_CFG);
    let out = dir.join("out");
    let code = main_with_args(&args(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
}

#[test]
fn run_cuboid_writes_off_mesh() {
    let dir = tmp_dir("run3d");
    let cfg = write_config(
        &dir,
        "\
[shape]
kind = cuboid
a = 2.0
b = 1.0
c = 1.0
h = 0.5

[model]
family = cubic
beta = 0.125

[stabilizer]
kind = constant
value = 0.5

[time]
t_final = 0.04
",
    );
    let out = dir.join("out");
    let code = main_with_args(&args(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let mesh = surfdiff::mesh::SimplexSurface::<3>::load_off(out.join("mesh_final.off")).unwrap();
    // volume still that of the initial cuboid
    assert!((mesh.enclosed_volume().unwrap() - 2.0).abs() < 1e-9);
    let text = std::fs::read_to_string(out.join("diag.csv")).unwrap();
    assert!(text.lines().count() >= 3);
}
