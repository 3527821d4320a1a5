use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hidden-vi"));
    c.env_remove("HIDDEN_VI_THREADS");
    c
}

fn run_config(dir: &Path, json: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, json).unwrap();
    bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(k).unwrap().to_string())
        .collect()
}

#[test]
fn list_shows_seven_experiments_with_figures() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 7);
    let out = bin().args(["list", "--json"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let arr = v.as_array().unwrap();
    assert_eq!(arr.len(), 7);
    let pennies = arr.iter().find(|e| e["name"] == "pennies").unwrap();
    assert_eq!(pennies["figure"], "Fig. 1");
}

#[test]
fn verify_passes_and_is_deterministic() {
    let a = bin().arg("verify").output().unwrap();
    let b = bin().arg("verify").output().unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn verify_names_the_corrupted_suite() {
    let out = bin()
        .args(["verify", "--corrupt-jacobian"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("jacobian_finite_difference"), "{err}");
}

#[test]
fn counterexample_growth_column_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(
        dir.path(),
        r#"{"experiment":"counterexample","params":{"eta":0.1,"steps":200}}"#,
        &[],
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("out/growth.csv")).unwrap();
    assert!(csv.starts_with("iter,norm,growth_factor\n"));
    let g = (1.0f64 + 0.01).sqrt();
    for v in column(&csv, "growth_factor").iter().skip(1) {
        assert!((v.parse::<f64>().unwrap() - g).abs() <= 1e-9);
    }
    assert!(dir.path().join("out/divergence/run_0000.csv").exists());
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn pennies_gn_distance_is_monotone_after_ten_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment":"pennies","params":{"t_outer":2000,"solvers":[
        {"label":"gn1","strategy":{"kind":{"kind":"gn"},"stop":{"fixed_steps":1},"rank_tol":1e-12}}]}}"#;
    let out = run_config(dir.path(), cfg, &[]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("out/gn1/run_0000.csv")).unwrap();
    assert!(csv.starts_with(
        "iter,dist_sq,loss_anchor,loss_final,loss_ratio,inner_steps,grad_evals,alpha_flag,wall_ms\n"
    ));
    let d: Vec<f64> = column(&csv, "dist_sq")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert!(d[10..].windows(2).all(|w| w[1] <= w[0]));
    assert!(*d.last().unwrap() < 1e-8);
}

#[test]
fn rps_hundred_seeds_produce_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment":"rps","seeds":100,"master_seed":3,"params":{"t_outer":50,"solvers":[
        {"label":"gd1","strategy":{"kind":{"kind":"gd","lr":1.0},"stop":{"fixed_steps":1},"rank_tol":1e-12}}]}}"#;
    let out = run_config(dir.path(), cfg, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let agg = std::fs::read_to_string(dir.path().join("out/gd1/aggregate.csv")).unwrap();
    assert!(agg.starts_with("iter,mean_dist_sq,ci_lo,ci_hi,n_runs\n"));
    assert_eq!(agg.lines().count(), 52);
    assert!(column(&agg, "n_runs").iter().all(|n| n == "100"));
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 100);
    assert_eq!(manifest["master_seed"], 3);
}

#[test]
fn output_bytes_independent_of_threads_and_reruns() {
    let cfg = r#"{"experiment":"pennies","seeds":6,"params":{"t_outer":100,"coefficients":null,"theta_init":null}}"#;
    let read = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = run_config(dir.path(), cfg, &["--threads", threads, "--seed", "11"]);
        assert!(out.status.success());
        let mut files = Vec::new();
        for label in ["gn1", "lm1", "gd1", "gd10", "gd100"] {
            for i in 0..6 {
                files.push(
                    std::fs::read(dir.path().join(format!("out/{label}/run_{i:04}.csv"))).unwrap(),
                );
            }
            files.push(
                std::fs::read(dir.path().join(format!("out/{label}/aggregate.csv"))).unwrap(),
            );
        }
        files
    };
    let a = read("1");
    assert_eq!(a, read("3"));
    assert_eq!(a, read("1"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in [
        "not json",
        r#"{"experiment":"pennies","params":{"eta":0}}"#,
        r#"{"experiment":"unknown","params":{}}"#,
    ] {
        let out = run_config(dir.path(), cfg, &[]);
        assert_eq!(out.status.code(), Some(2), "{cfg}");
    }
    let out = bin()
        .args(["run", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn blowup_exits_three_and_keeps_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment":"pbe-linear","params":{"n_states":20,"feature_dim":5,"warmup":100,
        "iterations":3000,"inner_steps":[1,50],"lr_scale":1e4}}"#;
    let out = run_config(dir.path(), cfg, &[]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("out/m50/run_0000.csv")).unwrap();
    assert!(csv.lines().count() < 3002);
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        hidden_vi_core::ExperimentConfig::from_json(&text).unwrap();
        n += 1;
    }
    assert!(n >= 7);
}
