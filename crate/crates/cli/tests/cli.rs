use std::path::Path;
use std::process::{Command, Output};

use mrhs::sparse::{gen_poisson_5pt, write_matrix_market};

fn mrhs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrhs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn results_section(report: &Path) -> String {
    let text = std::fs::read_to_string(report).unwrap();
    text.split("[timings]").next().unwrap().to_string()
}

fn table(report: &Path) -> toml::Table {
    std::fs::read_to_string(report).unwrap().parse().unwrap()
}

#[test]
fn converge_mode_reaches_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mrhs(&[
        "solve", "--matrix", "poisson5:64,64", "--m", "2", "--method", "ibicgstab", "--tol", "1e-8",
        "--seed", "5", "--out", out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(&dir.path().join("report.toml"));
    let results = t["results"].as_table().unwrap();
    assert_eq!(results["status"].as_str(), Some("converged"));
    for r in results["relative_true_residual"].as_array().unwrap() {
        assert!(r.as_float().unwrap() <= 1e-8 * 1.01);
    }
    let csv = std::fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    let iters = results["iterations"].as_integer().unwrap() as usize;
    assert_eq!(csv.lines().count(), iters + 2);
    assert!(csv.starts_with("iteration,col0,col1\n"));
}

#[test]
fn invalid_method_lists_valid_ids() {
    let o = mrhs(&["solve", "--method", "gmres"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for id in ["bicgstab", "ibicgstab", "pipebicgstab", "pbicgstab", "rbicgstab", "ppipebicgstab"] {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(mrhs(&["solve", "--m"]).status.code(), Some(1));
    assert_eq!(mrhs(&["model", "--p", "4..1"]).status.code(), Some(1));
    assert_eq!(mrhs(&["solve", "--method", "pbicgstab", "--precond", "none"]).status.code(), Some(1));
    assert_eq!(mrhs(&["--help"]).status.code(), Some(0));
}

#[test]
fn breakdown_exits_with_two_and_keeps_report() {
    let dir = tempfile::tempdir().unwrap();
    // skew-symmetric: (r0, A r0) = 0 at the first step
    let mtx = dir.path().join("skew.mtx");
    std::fs::write(
        &mtx,
        "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 1.0\n2 1 -1.0\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = mrhs(&[
        "solve", "--matrix", &format!("file:{}", mtx.display()), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(&out.join("report.toml"));
    assert_eq!(t["results"]["status"].as_str(), Some("breakdown"));
    assert!(t["results"]["breakdown"].as_str().unwrap().contains("iteration 0"));
}

#[test]
fn identical_runs_give_identical_results() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (k, d) in dirs.iter().enumerate() {
        let threads = if k == 0 { "1" } else { "3" };
        let o = mrhs(&[
            "solve", "--preset", "table2", "--m", "3", "--method", "ppipebicgstab", "--seed", "11",
            "--threads", threads, "--out", d.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let (a, b) = (dirs[0].path(), dirs[1].path());
    assert_eq!(results_section(&a.join("report.toml")), results_section(&b.join("report.toml")));
    assert_eq!(
        std::fs::read(a.join("residuals.csv")).unwrap(),
        std::fs::read(b.join("residuals.csv")).unwrap()
    );
}

#[test]
fn matrix_market_round_trip_solves_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mtx = dir.path().join("p.mtx");
    let a = gen_poisson_5pt(20, 20).unwrap();
    write_matrix_market(&a, std::fs::File::create(&mtx).unwrap()).unwrap();
    let gen = dir.path().join("gen");
    let file = dir.path().join("file");
    for (m, out) in [("poisson5:20,20".to_string(), &gen), (format!("file:{}", mtx.display()), &file)] {
        let o = mrhs(&["solve", "--matrix", &m, "--m", "2", "--seed", "1", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(
        std::fs::read(gen.join("residuals.csv")).unwrap(),
        std::fs::read(file.join("residuals.csv")).unwrap()
    );
    assert_eq!(table(&gen.join("report.toml"))["results"], table(&file.join("report.toml"))["results"]);
}

#[test]
fn config_file_drives_the_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "matrix = \"poisson7:8,8,8\"\nm = 2\nmethod = \"rbicgstab\"\nprecond = \"synthetic:4\"\nmode = \"fixed:5\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = mrhs(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(&out.join("report.toml"));
    assert_eq!(t["results"]["status"].as_str(), Some("completed"));
    assert_eq!(t["results"]["iterations"].as_integer(), Some(5));
    // two applications per iteration plus setup, four transfers each
    let traffic = &t["results"]["traffic"];
    assert_eq!(traffic["precond_transfers"].as_integer(), Some(4 * traffic["precond_applications"].as_integer().unwrap()));
    std::fs::write(&cfg, "matrix = \"poisson7:8,8,8\"\nbogus = 1\n").unwrap();
    let o = mrhs(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn model_csv_has_one_row_per_point() {
    let o = mrhs(&[
        "model", "--machine", "lomonosov", "--methods", "unpreconditioned", "--p", "1..4",
        "--gamma", "1,0.5,0",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,p,gamma,alpha,m,bw_mode,T_seconds,R"));
    assert_eq!(lines.count(), 3 * 4 * 3);
}

#[test]
fn model_accepts_machine_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    std::fs::write(&path, mrhs::perfmodel::MachineModel::lomonosov2().to_toml_string()).unwrap();
    let o = mrhs(&["model", "--machine", path.to_str().unwrap(), "--p", "2", "--problem", "table5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 7);
}

#[test]
fn bench_fusion_prints_three_runs() {
    let o = mrhs(&["bench-fusion", "--n", "10000", "--reps", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("results match: true"));
    let transfers: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with(['1', '2', '3']))
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    assert_eq!(transfers, ["9", "5", "5"]);
}
