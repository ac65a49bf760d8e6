use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gbqknn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbqknn"))
        .args(args)
        .env_remove("GBQKNN_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn blobs(dir: &TempDir, name: &str, seed: &str, extra: &[&str]) -> String {
    let file = path(dir, name);
    let mut args = vec![
        "make-blobs",
        "--n-per-class",
        "120",
        "--separation",
        "10",
        "--seed",
        seed,
        "--format",
        "csv",
        "--output",
        &file,
    ];
    args.extend_from_slice(extra);
    let out = gbqknn(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    file
}

#[test]
fn build_then_classify_and_search() {
    let dir = TempDir::new().unwrap();
    let train = blobs(&dir, "train.csv", "1", &[]);
    let model = path(&dir, "model.bin");
    let summary = json(&gbqknn(&[
        "build", "--input", &train, "--output", &model, "--k", "3",
    ]));
    assert_eq!(summary["points"], 240);
    assert_eq!(summary["config"]["k"], 3);
    assert!(Path::new(&model).exists());

    let report = json(&gbqknn(&["classify", "--index", &model, "--input", &train]));
    assert_eq!(report["queries"], 240);
    assert!(report["accuracy"].as_f64().unwrap() >= 0.95);

    let found = json(&gbqknn(&[
        "search", "--index", &model, "--input", &train, "--k", "2",
    ]));
    let rows = found.as_array().unwrap();
    assert_eq!(rows.len(), 240);
    assert!(rows.iter().all(|r| {
        let n = r["neighbors"].as_array().unwrap().len();
        (1..=2).contains(&n) && r["similarity_evals"].as_u64().unwrap() >= 1
    }));

    let csv = gbqknn(&[
        "search", "--index", &model, "--input", &train, "--format", "csv",
    ]);
    assert_eq!(code(&csv), 0);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("query,rank,ball,label,dissimilarity"));
}

#[test]
fn point_files_round_trip_through_build() {
    let dir = TempDir::new().unwrap();
    let points = blobs(&dir, "points.txt", "2", &["--bits", "6"]);
    let first = std::fs::read_to_string(&points).unwrap();
    assert!(first.starts_with('{'));

    let model = path(&dir, "model.bin");
    let summary = json(&gbqknn(&["build", "--input", &points, "--output", &model]));
    assert_eq!(summary["config"]["bits"], 6);
    let report = json(&gbqknn(&[
        "classify", "--index", &model, "--input", &points,
    ]));
    assert!(report["accuracy"].as_f64().unwrap() >= 0.95);

    // the point file fixes the bit width
    let clash = gbqknn(&[
        "build", "--input", &points, "--output", &model, "--bits", "8",
    ]);
    assert_eq!(code(&clash), 1);
}

#[test]
fn gen_balls_reports_cover() {
    let dir = TempDir::new().unwrap();
    let data = blobs(&dir, "d.csv", "3", &[]);
    let report = json(&gbqknn(&[
        "gen-balls",
        "--input",
        &data,
        "--purity-threshold",
        "0.9",
    ]));
    let balls = report["balls"].as_array().unwrap();
    let members: u64 = balls
        .iter()
        .map(|b| b["member_count"].as_u64().unwrap())
        .sum();
    assert_eq!(members, 240);
    assert!(balls.iter().all(|b| b["purity"].as_f64().unwrap() >= 0.9));

    let csv = gbqknn(&["gen-balls", "--input", &data, "--format", "csv"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "id,label,purity,member_count,radius,center_0,center_1"
    );
}

#[test]
fn sampled_queries_on_exact_model() {
    let dir = TempDir::new().unwrap();
    let data = blobs(&dir, "d.csv", "4", &[]);
    let model = path(&dir, "m.bin");
    json(&gbqknn(&["build", "--input", &data, "--output", &model]));
    let a = gbqknn(&[
        "classify",
        "--index",
        &model,
        "--input",
        &data,
        "--backend",
        "sampled",
        "--shots",
        "2000",
    ]);
    let b = gbqknn(&[
        "classify",
        "--index",
        &model,
        "--input",
        &data,
        "--backend",
        "sampled",
        "--shots",
        "2000",
    ]);
    assert_eq!(json(&a), json(&b));
    let bad = gbqknn(&[
        "classify", "--index", &model, "--input", &data, "--shots", "10",
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn config_file_and_flags_merge() {
    let dir = TempDir::new().unwrap();
    let data = blobs(&dir, "d.csv", "5", &[]);
    let config = path(&dir, "fit.json");
    std::fs::write(&config, r#"{"k": 7, "purity_threshold": 0.8, "seed": 11}"#).unwrap();
    let model = path(&dir, "m.bin");
    let summary = json(&gbqknn(&[
        "build", "--input", &data, "--output", &model, "--config", &config, "--k", "2",
    ]));
    assert_eq!(summary["config"]["k"], 2);
    assert_eq!(summary["config"]["purity_threshold"], 0.8);
    assert_eq!(summary["config"]["seed"], 11);

    let out = Command::new(env!("CARGO_BIN_EXE_gbqknn"))
        .args(["build", "--input", &data, "--output", &model])
        .env("GBQKNN_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(json(&out)["config"]["seed"], 99);
}

#[test]
fn bench_is_reproducible_apart_from_timings() {
    let run = || {
        let mut v = json(&gbqknn(&[
            "bench",
            "--targets",
            "32,64",
            "--seeds",
            "1,2",
            "--queries",
            "10",
        ]));
        for r in v["records"].as_array_mut().unwrap() {
            let r = r.as_object_mut().unwrap();
            r.remove("build_ms");
            r.remove("search_us_mean");
        }
        v
    };
    let first = run();
    assert_eq!(first["records"].as_array().unwrap().len(), 4);
    assert_eq!(first, run());

    let csv = gbqknn(&[
        "bench",
        "--targets",
        "32",
        "--seeds",
        "1",
        "--queries",
        "5",
        "--format",
        "csv",
    ]);
    assert_eq!(String::from_utf8(csv.stdout).unwrap().lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = blobs(&dir, "d.csv", "6", &[]);
    let model = path(&dir, "m.bin");

    assert_eq!(code(&gbqknn(&["--help"])), 0);
    assert_eq!(code(&gbqknn(&["--version"])), 0);
    assert_eq!(code(&gbqknn(&[])), 1);
    assert_eq!(code(&gbqknn(&["frobnicate"])), 1);
    assert_eq!(code(&gbqknn(&["build", "--input", &data])), 1);
    assert_eq!(
        code(&gbqknn(&[
            "build",
            "--input",
            &data,
            "--output",
            &model,
            "--purity-threshold",
            "0.4"
        ])),
        1
    );
    assert_eq!(
        code(&gbqknn(&[
            "build", "--input", &data, "--output", &model, "--bits", "0"
        ])),
        1
    );

    assert_eq!(
        code(&gbqknn(&[
            "build",
            "--input",
            &path(&dir, "absent.csv"),
            "--output",
            &model
        ])),
        2
    );
    let broken = path(&dir, "broken.csv");
    std::fs::write(&broken, "f0,f1,label\n1.0,2.0,0\n1.5,oops,1\n").unwrap();
    let out = gbqknn(&["build", "--input", &broken, "--output", &model]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let junk = path(&dir, "junk.bin");
    std::fs::write(&junk, b"not a model").unwrap();
    assert_eq!(
        code(&gbqknn(&["classify", "--index", &junk, "--input", &data])),
        2
    );

    json(&gbqknn(&["build", "--input", &data, "--output", &model]));
    let wide = path(&dir, "wide.csv");
    std::fs::write(&wide, "a,b,c,label\n1,2,3,0\n").unwrap();
    assert_eq!(
        code(&gbqknn(&["classify", "--index", &model, "--input", &wide])),
        2
    );
}
