use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const ARCH: &str = r#"{"layers": 12, "width": 1024, "ffn_ratio": 4, "activation_rate": 0.25, "gqa": 4}"#;
const WORKED: [&str; 10] =
    ["--peak-flops", "10TOPS", "--bandwidth", "50GB/s", "--memory", "4GB", "--t-dec", "100ms", "--seq-out", "10"];

fn codesign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codesign")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", stderr(o));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn file(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn predict_loss_terms_sum_to_total() {
    let dir = TempDir::new().unwrap();
    let arch = file(&dir, "arch.json", ARCH);
    let v = json(&codesign(&["predict-loss", "--arch", &arch, "--coeffs", "paper-appendix-c"]));
    let total = v["loss"].as_f64().unwrap();
    let sum: f64 = v["terms"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
    assert!((sum - total).abs() < 1e-12 * total);
    assert_eq!(v["terms"]["irreducible"], 2.53);
}

#[test]
fn coefficients_from_file() {
    let dir = TempDir::new().unwrap();
    let arch = file(&dir, "arch.json", ARCH);
    let preset = json(&codesign(&["predict-loss", "--arch", &arch]));
    let coeffs = r#"{"kappa_l": 9.96, "kappa_rho": 0.031, "kappa_d": 500.0, "kappa_m": 0.2, "alpha_l": 1.63,
        "alpha_rho": 1.09, "alpha_r": 0.17, "alpha_m": 0.05, "beta_1": -0.33, "beta_2": 0.97, "l_inf": 3.53}"#;
    let path = file(&dir, "c.json", coeffs);
    let shifted = json(&codesign(&["predict-loss", "--arch", &arch, "--coeffs", &path]));
    let diff = shifted["loss"].as_f64().unwrap() - preset["loss"].as_f64().unwrap();
    assert!((diff - 1.0).abs() < 1e-12);
    let bad = file(&dir, "bad.json", &coeffs.replace("500.0", "0.0"));
    assert_eq!(code(&codesign(&["predict-loss", "--arch", &arch, "--coeffs", &bad])), 3);
}

#[test]
fn input_errors_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let malformed = file(&dir, "bad.json", "{\"layers\": 12,\n \"width\": }");
    let o = codesign(&["predict-loss", "--arch", &malformed]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2 column"), "{}", stderr(&o));

    let rho0 = file(&dir, "rho0.json", &ARCH.replace("0.25", "0"));
    let o = codesign(&["predict-loss", "--arch", &rho0]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("activation_rate"), "{}", stderr(&o));

    let unknown = file(&dir, "extra.json", &ARCH.replace("}", ", \"depth\": 3}"));
    assert_eq!(code(&codesign(&["predict-loss", "--arch", &unknown])), 2);
    assert_eq!(code(&codesign(&["predict-loss", "--arch", "/nonexistent/arch.json"])), 2);
    assert_eq!(code(&codesign(&["predict-loss"])), 2);
    assert_eq!(code(&codesign(&["solve", "--peak-flops", "10TOPS"])), 2);

    let arch = file(&dir, "arch.json", ARCH);
    let o = codesign(&["predict-latency", "--arch", &arch, "--hardware", "jetson-orin-like", "--memory", "4GiB"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("binary units"));
    let o = codesign(&["predict-latency", "--arch", &arch, "--hardware", "jetson-orin-like", "--batch", "0"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn latency_modes_precision_and_phases() {
    let dir = TempDir::new().unwrap();
    let arch = file(&dir, "arch.json", ARCH);
    let run = |extra: &[&str]| {
        let mut args = vec!["predict-latency", "--arch", &arch, "--hardware", "jetson-orin-like"];
        args.extend_from_slice(extra);
        json(&codesign(&args))
    };
    let closed = run(&["--mode", "closed-form"]);
    let full = run(&["--mode", "full"]);
    assert!(full["prefill_latency_s"].as_f64().unwrap() >= closed["prefill_latency_s"].as_f64().unwrap());

    let weights = |v: &Value| -> f64 {
        v["decode"]["per_layer"].as_array().unwrap().iter().map(|op| op["bytes_weights"].as_f64().unwrap()).sum()
    };
    let fp16 = run(&["--mode", "full", "--precision", "fp16"]);
    let int8 = run(&["--mode", "full", "--precision", "int8"]);
    assert_eq!(weights(&fp16), 2.0 * weights(&int8));

    let no_decode = run(&["--seq-out", "0"]);
    assert!(no_decode.get("decode").is_none());
    assert!(no_decode.get("prefill").is_some());
    assert_eq!(no_decode["decode_latency_s"], 0.0);

    let o = codesign(&["predict-latency", "--arch", &arch, "--hardware", "jetson-orin-like", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("op,phase,flops,bytes_w,bytes_a,bytes_kv,latency_s\n"));
}

#[test]
fn worked_example_budgets_and_regimes() {
    let mut args = vec!["regime"];
    args.extend_from_slice(&WORKED);
    let active = json(&codesign(&args));
    assert_eq!(active["budgets"]["m_bar_d"], 5e8);
    assert_eq!(active["eta"], 0.125);
    args.extend_from_slice(&["--method", "ratio"]);
    let ratio = json(&codesign(&args));
    assert_eq!(ratio["label"], "memory_only");
    assert_eq!(ratio["case"], "d2");
}

#[test]
fn solve_worked_example_with_verification() {
    let mut args = vec!["solve", "--method", "ratio", "--verify"];
    args.extend_from_slice(&WORKED);
    let v = json(&codesign(&args));
    assert_eq!(v["case"], "d2");
    let gap = v["verification"]["relative_loss_gap"].as_f64().unwrap();
    assert!(gap.abs() < 1e-3, "{gap}");
    assert!(v["theta_snapped"]["layers"].is_number());
    assert!(v["loss_snapped"].is_number());

    let mut args = vec!["solve", "--case", "d2", "--width", "1536"];
    args.extend_from_slice(&WORKED);
    assert_eq!(json(&codesign(&args))["theta"]["d"], 1536.0);
}

#[test]
fn p3_outside_validity_exits_4() {
    let o = codesign(&[
        "solve", "--case", "p3", "--peak-flops", "10TOPS", "--bandwidth", "50GB/s", "--memory", "4GB", "--t-pre", "10s",
    ]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("eta_p"), "{}", stderr(&o));
}

#[test]
fn pareto_is_reproducible_and_writes_files() {
    let dir = TempDir::new().unwrap();
    let args = |seed: &str, threads: &str| {
        codesign(&[
            "pareto", "--hardware", "jetson-orin-like", "--objective", "decode", "--precision", "fp16",
            "--seed", seed, "--initial", "200", "--threads", threads,
        ])
    };
    let a = args("7", "1");
    let b = args("7", "3");
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);

    let out = dir.path().join("frontiers");
    let o = codesign(&["pareto", "--hardware", "jetson-orin-like", "--out", out.to_str().unwrap(), "--two-column"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for objective in ["prefill", "decode", "total"] {
        for precision in ["fp16", "int8"] {
            let text = fs::read_to_string(out.join(format!("frontier_{objective}_{precision}.csv"))).unwrap();
            assert!(text.starts_with("latency_s,loss\n"));
            assert!(text.lines().count() > 2);
        }
    }

    let single = dir.path().join("one.json");
    let o = codesign(&[
        "pareto", "--hardware", "jetson-orin-like", "--objective", "total", "--precision", "int8", "--enumerate",
        "--format", "json", "--out", single.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let f: Value = serde_json::from_str(&fs::read_to_string(&single).unwrap()).unwrap();
    assert!(f["points"].as_array().unwrap().iter().all(|p| p["precision"] == "int8"));

    let o = codesign(&["pareto", "--hardware", "jetson-orin-like"]);
    assert_eq!(code(&o), 2);
    let o = codesign(&["pareto", "--hardware", "jetson-orin-like", "--memory", "1MB", "--objective", "decode", "--precision", "fp16"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn synthetic_fit_round_trip() {
    let dir = TempDir::new().unwrap();
    let runs = dir.path().join("runs.csv");
    let runs = runs.to_str().unwrap();
    assert_eq!(code(&codesign(&["synth-runs", "--seed", "11", "--out", runs])), 0);
    let coeffs = dir.path().join("fitted.json");
    let v = json(&codesign(&["fit", "--runs", runs, "--seed", "11", "--out", coeffs.to_str().unwrap()]));
    assert!(v["report"]["validation_r2"].as_f64().unwrap() > 0.99);
    assert!(Path::new(&coeffs).is_file());

    let arch = file(&dir, "arch.json", ARCH);
    let o = codesign(&["predict-loss", "--arch", &arch, "--coeffs", coeffs.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let v = json(&codesign(&["fit", "--runs", runs, "--holdout", "0", "--starts", "2"]));
    assert!(v["report"].get("validation_r2").is_none());
    assert_eq!(v["report"]["n_validation"], 0);

    let text = fs::read_to_string(runs).unwrap();
    let few: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
    let few = file(&dir, "few.csv", &few);
    assert_eq!(code(&codesign(&["fit", "--runs", &few])), 3);
}
