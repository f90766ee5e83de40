use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn extinct(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_extinct"))
        .args(args)
        .current_dir(dir)
        .env_remove("EXTINCT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = extinct(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str], dir: &Path) -> i32 {
    extinct(args, dir).status.code().expect("exit code")
}

fn json_file(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn csv_column(p: impl AsRef<Path>, col: usize) -> Vec<String> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().to_string())
        .collect()
}

fn taus(p: impl AsRef<Path>) -> Vec<f64> {
    csv_column(p, 1)
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().unwrap())
        .collect()
}

fn flat(dir: &Path, m: usize) -> String {
    let name = format!("flat{m}.json");
    ok(&["gen-dist", "--m", &m.to_string(), "--out", &name], dir);
    name
}

fn write_dist(dir: &Path, name: &str, p: &[f64]) -> String {
    let v = serde_json::json!({ "p": p, "m": p.len(), "entropy_norm": null, "gen_seed": null });
    std::fs::write(dir.join(name), v.to_string()).unwrap();
    name.to_string()
}

fn tmp() -> TempDir {
    tempfile::tempdir().unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn gen_dist_full_entropy_is_flat() {
    let d = tmp();
    let f = flat(d.path(), 5);
    let v = json_file(d.path().join(&f));
    for p in v["p"].as_array().unwrap() {
        assert!((p.as_f64().unwrap() - 0.2).abs() < 1e-15);
    }
    assert!(d.path().join("flat5.json.meta.json").exists());
}

#[test]
fn gen_dist_hits_entropy_target() {
    let d = tmp();
    ok(
        &[
            "gen-dist",
            "--m",
            "100",
            "--entropy",
            "0.90",
            "--seed",
            "42",
            "--out",
            "d.json",
        ],
        d.path(),
    );
    let v = json_file(d.path().join("d.json"));
    let p: Vec<f64> = v["p"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let h: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>() / 100f64.ln();
    assert!((h - 0.9).abs() <= 1e-4, "{h}");
}

#[test]
fn gen_dist_rejects_single_state() {
    let d = tmp();
    assert_eq!(code(&["gen-dist", "--m", "1"], d.path()), 2);
    assert_eq!(code(&["gen-dist", "--m", "4", "--entropy", "1.5"], d.path()), 2);
}

#[test]
fn predict_flat_means() {
    let d = tmp();
    for (m, want) in [(2usize, 2000.0 * 2f64.ln()), (3, 2000.0 * (4.0f64 / 3.0).ln())] {
        let f = flat(d.path(), m);
        let r = stdout_json(&ok(
            &["predict", "--dist", &f, "--n-samples", "1000", "--mean"],
            d.path(),
        ));
        assert!(rel(r["mean"]["value"].as_f64().unwrap(), want) < 1e-9);
    }
}

#[test]
fn predict_points_quantiles_and_csv() {
    let d = tmp();
    let f = flat(d.path(), 2);
    ok(
        &[
            "predict",
            "--dist",
            &f,
            "--n-samples",
            "1000",
            "--tau",
            "100,1000,5000",
            "--quantiles",
            "0.5",
            "--out",
            "r.json",
            "--cdf-out",
            "cdf.csv",
        ],
        d.path(),
    );
    let r = json_file(d.path().join("r.json"));
    assert!(r["mean"].is_null());
    assert_eq!(r["config"]["schema_version"], 1);
    let pts = r["points"].as_array().unwrap();
    assert_eq!(pts.len(), 3);
    let cdf: Vec<f64> = pts.iter().map(|p| p["cdf"].as_f64().unwrap()).collect();
    assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
    // S(tau) = (1 - exp(-1000/tau))^2
    let s1000 = (1.0 - (-1.0f64).exp()).powi(2);
    assert!((cdf[1] - (1.0 - s1000)).abs() < 1e-14);
    let q = r["quantiles"][0]["tau"].as_f64().unwrap();
    let median = 1000.0 / -(1.0 - 0.5f64.sqrt()).ln();
    assert!(rel(q, median) < 1e-8);

    let text = std::fs::read_to_string(d.path().join("cdf.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("tau,cdf,pdf"));
    assert_eq!(text.lines().count(), 4);
    assert!(d.path().join("cdf.csv.meta.json").exists());
}

#[test]
fn predict_rejects_bad_input() {
    let d = tmp();
    let f = flat(d.path(), 3);
    assert_eq!(
        code(
            &["predict", "--dist", &f, "--n-samples", "1000", "--tau", "0"],
            d.path()
        ),
        2
    );
    assert_eq!(code(&["predict", "--dist", &f, "--n-samples", "0"], d.path()), 2);
    assert_eq!(
        code(&["predict", "--dist", "missing.json", "--n-samples", "10"], d.path()),
        2
    );
    let z = write_dist(d.path(), "z.json", &[0.5, 0.5, 0.0]);
    assert_eq!(code(&["predict", "--dist", &z, "--n-samples", "10"], d.path()), 2);
    assert_eq!(
        code(
            &[
                "predict",
                "--dist",
                &f,
                "--n-samples",
                "10",
                "--max-subdivisions",
                "0",
                "--rel-tol",
                "1e-300"
            ],
            d.path()
        ),
        3
    );
}

#[test]
fn baxter_three_state_example() {
    let d = tmp();
    let f = write_dist(d.path(), "p.json", &[0.5, 0.3, 0.2]);
    let r = stdout_json(&ok(&["baxter", "--dist", &f, "--n-samples", "1000"], d.path()));
    // 2N [-(sum of p ln p over singletons) + (same over pairs)]; the full set contributes 1 ln 1 = 0
    let (a, b, c) = (0.5f64, 0.3f64, 0.2f64);
    let f_ = |x: f64| x * x.ln();
    let hand = 2000.0 * (-(f_(a) + f_(b) + f_(c)) + f_(a + b) + f_(a + c) + f_(b + c));
    let exact = r["exact_mean"].as_f64().unwrap();
    assert!(rel(exact, hand) < 1e-13);
    assert!((exact - 509.79).abs() < 0.01);
    assert!(r["rel_diff"].as_f64().unwrap() <= 1e-6);
    assert_eq!(r["subsets"], 7);
}

#[test]
fn baxter_flat_ten_matches_closed_form_and_predict() {
    let d = tmp();
    let f = flat(d.path(), 10);
    let r = stdout_json(&ok(&["baxter", "--dist", &f, "--n-samples", "777"], d.path()));
    let exact = r["exact_mean"].as_f64().unwrap();
    assert!(rel(exact, r["closed_form_mean"].as_f64().unwrap()) <= 1e-10);
    let p = stdout_json(&ok(&["predict", "--dist", &f, "--n-samples", "777"], d.path()));
    assert!(rel(p["mean"]["value"].as_f64().unwrap(), exact) <= 1e-6);
}

#[test]
fn baxter_cost_guard() {
    let d = tmp();
    let f = flat(d.path(), 31);
    assert_eq!(code(&["baxter", "--dist", &f, "--n-samples", "100"], d.path()), 4);
}

#[test]
fn sim_single_sample_goes_extinct_at_once() {
    let d = tmp();
    let f = flat(d.path(), 2);
    ok(
        &[
            "sim",
            "resample",
            "--dist",
            &f,
            "--n-samples",
            "1",
            "--trials",
            "100",
            "--out",
            "s.csv",
        ],
        d.path(),
    );
    let t = taus(d.path().join("s.csv"));
    assert_eq!(t.len(), 100);
    assert!(t.iter().all(|&x| x == 1.0));
    let meta = json_file(d.path().join("s.csv.meta.json"));
    assert_eq!(meta["trials"], 100);
    assert_eq!(meta["censored"], 0);
    assert_eq!(meta["config"]["command"]["sim"]["kind"], "resample");
}

#[test]
fn sim_two_samples_is_geometric() {
    let d = tmp();
    let f = flat(d.path(), 2);
    ok(
        &[
            "sim",
            "resample",
            "--dist",
            &f,
            "--n-samples",
            "2",
            "--trials",
            "10000",
            "--seed",
            "4",
            "--out",
            "s.csv",
        ],
        d.path(),
    );
    let t = taus(d.path().join("s.csv"));
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    assert!((mean - 2.0).abs() <= 0.05, "{mean}");
}

#[test]
fn sim_sde_mean_near_law() {
    let d = tmp();
    let f = flat(d.path(), 2);
    ok(
        &[
            "sim",
            "sde",
            "--dist",
            &f,
            "--n-samples",
            "1000",
            "--trials",
            "1000",
            "--seed",
            "77",
            "--out",
            "s.csv",
        ],
        d.path(),
    );
    let t = taus(d.path().join("s.csv"));
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    assert!(rel(mean, 2000.0 * 2f64.ln()) <= 0.10, "{mean}");
}

#[test]
fn sim_all_censored_fails() {
    let d = tmp();
    let f = flat(d.path(), 2);
    let args = [
        "sim",
        "resample",
        "--dist",
        &f,
        "--n-samples",
        "100000",
        "--trials",
        "5",
        "--max-steps",
        "2",
        "--out",
        "s.csv",
    ];
    assert_eq!(code(&args, d.path()), 3);
    assert_eq!(csv_column(d.path().join("s.csv"), 3), vec!["true"; 5]);
    assert_eq!(
        code(
            &[
                "sim",
                "resample",
                "--dist",
                &f,
                "--n-samples",
                "10",
                "--trials",
                "0",
                "--out",
                "t.csv"
            ],
            d.path()
        ),
        2
    );
}

#[test]
fn compare_exact_quantiles_agree() {
    let d = tmp();
    let f = flat(d.path(), 4);
    let n = 400;
    let qs: Vec<String> = (0..n).map(|i| format!("{}", (i as f64 + 0.5) / n as f64)).collect();
    let r = stdout_json(&ok(
        &[
            "predict",
            "--dist",
            &f,
            "--n-samples",
            "500",
            "--quantiles",
            &qs.join(","),
        ],
        d.path(),
    ));
    let mut csv = String::from("trial,tau,extinct_state,censored\n");
    for (i, q) in r["quantiles"].as_array().unwrap().iter().enumerate() {
        csv.push_str(&format!("{i},{},0,false\n", q["tau"].as_f64().unwrap()));
    }
    std::fs::write(d.path().join("q.csv"), csv).unwrap();
    let c = stdout_json(&ok(
        &["compare", "--samples", "q.csv", "--dist", &f, "--n-samples", "500"],
        d.path(),
    ));
    assert!(c["d_stat"].as_f64().unwrap() <= 0.5 / n as f64 + 1e-9);
    assert!(c["p_value"].as_f64().unwrap() > 0.999);
    assert_eq!(c["mode"], "one_sample");
}

#[test]
fn compare_large_n_agrees_small_n_breaks_down() {
    let d = tmp();
    let f10 = flat(d.path(), 10);
    ok(
        &[
            "sim",
            "resample",
            "--dist",
            &f10,
            "--n-samples",
            "10000",
            "--trials",
            "1000",
            "--seed",
            "2025",
            "--out",
            "a.csv",
        ],
        d.path(),
    );
    ok(
        &[
            "compare",
            "--samples",
            "a.csv",
            "--out",
            "a.json",
            "--overlay-out",
            "ov.csv",
        ],
        d.path(),
    );
    let a = json_file(d.path().join("a.json"));
    assert!(a["p_value"].as_f64().unwrap() >= 0.05, "{a}");
    assert!(a["z"].as_f64().unwrap().is_finite());
    let ov = std::fs::read_to_string(d.path().join("ov.csv")).unwrap();
    assert_eq!(ov.lines().next(), Some("tau,ecdf,theory_cdf"));

    let f5 = flat(d.path(), 5);
    ok(
        &[
            "sim",
            "resample",
            "--dist",
            &f5,
            "--n-samples",
            "50",
            "--trials",
            "1000",
            "--seed",
            "505",
            "--out",
            "b.csv",
        ],
        d.path(),
    );
    let b = stdout_json(&ok(
        &["compare", "--samples", "b.csv", "--dist", &f5, "--n-samples", "50"],
        d.path(),
    ));
    assert!(b["p_value"].as_f64().unwrap() < 0.05, "{b}");
}

#[test]
fn compare_two_sample_and_mismatch() {
    let d = tmp();
    let f = flat(d.path(), 3);
    for (out, seed) in [("a.csv", "1"), ("b.csv", "2")] {
        ok(
            &[
                "sim",
                "resample",
                "--dist",
                &f,
                "--n-samples",
                "200",
                "--trials",
                "300",
                "--seed",
                seed,
                "--out",
                out,
            ],
            d.path(),
        );
    }
    let c = stdout_json(&ok(
        &[
            "compare",
            "--samples",
            "a.csv",
            "--samples-b",
            "b.csv",
            "--overlay-out",
            "o.csv",
        ],
        d.path(),
    ));
    assert_eq!(c["mode"], "two_sample");
    let self_cmp = stdout_json(&ok(
        &["compare", "--samples", "a.csv", "--samples-b", "a.csv"],
        d.path(),
    ));
    assert_eq!(self_cmp["d_stat"], 0.0);
    assert_eq!(self_cmp["p_value"], 1.0);

    assert_eq!(
        code(&["compare", "--samples", "a.csv", "--n-samples", "201"], d.path()),
        2
    );
    let other = flat(d.path(), 4);
    assert_eq!(code(&["compare", "--samples", "a.csv", "--dist", &other], d.path()), 2);
    std::fs::write(d.path().join("bad.csv"), "x,y\n1,2\n").unwrap();
    assert_eq!(
        code(
            &["compare", "--samples", "bad.csv", "--dist", &f, "--n-samples", "200"],
            d.path()
        ),
        2
    );
    assert_eq!(
        code(
            &["compare", "--samples", "nope.csv", "--dist", &f, "--n-samples", "200"],
            d.path()
        ),
        2
    );
}

#[test]
fn grid_single_cell() {
    let d = tmp();
    ok(
        &["grid", "--m-list", "2", "--n-list", "100", "--out", "g.csv"],
        d.path(),
    );
    let text = std::fs::read_to_string(d.path().join("g.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("m,n,mean_sim,mean_theory,z"));
    let z: f64 = csv_column(d.path().join("g.csv"), 4)[0].parse().unwrap();
    assert!(z.abs() <= 3.0, "{z}");
}

#[test]
fn grid_compatibility_at_moderate_entropy() {
    let d = tmp();
    ok(
        &[
            "grid",
            "--m-list",
            "5,10",
            "--n-list",
            "1000,10000",
            "--entropy",
            "0.95",
            "--out",
            "g.csv",
        ],
        d.path(),
    );
    let z: Vec<f64> = csv_column(d.path().join("g.csv"), 4)
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(z.len(), 4);
    assert!(z.iter().all(|z| z.abs() <= 1.0), "{z:?}");
}

#[test]
fn grid_failed_cells_are_marked() {
    let d = tmp();
    // M = 1 cannot be generated; the other cell still runs.
    ok(
        &[
            "grid",
            "--m-list",
            "1,2",
            "--n-list",
            "50",
            "--dists-per-cell",
            "2",
            "--out",
            "g.csv",
        ],
        d.path(),
    );
    let z = csv_column(d.path().join("g.csv"), 4);
    assert_eq!(z[0], "NaN");
    assert!(z[1].parse::<f64>().unwrap().is_finite());
    let meta = json_file(d.path().join("g.csv.meta.json"));
    assert_eq!(meta["failed_cells"].as_array().unwrap().len(), 1);
}

#[test]
fn grid_empty_list_is_rejected() {
    let d = tmp();
    assert_eq!(
        code(&["grid", "--m-list", "", "--n-list", "100", "--out", "g.csv"], d.path()),
        2
    );
    let cfg = serde_json::json!({
        "schema_version": 1,
        "command": { "grid": {
            "m_list": [], "n_list": [100], "entropy": 1.0, "dists_per_cell": 1,
            "trials_per_dist": 10, "seed": 0, "max_steps": 1000, "out": "g.csv"
        }}
    });
    std::fs::write(d.path().join("c.json"), cfg.to_string()).unwrap();
    assert_eq!(code(&["run", "--config", "c.json"], d.path()), 2);
}

#[test]
fn markov_two_states() {
    let d = tmp();
    ok(
        &[
            "markov",
            "--states",
            "2",
            "--entropy",
            "1.0",
            "--n-samples",
            "10",
            "--runs",
            "20",
            "--seed",
            "3",
            "--out",
            "m.csv",
            "--report",
            "r.json",
            "--chain-out",
            "c.json",
        ],
        d.path(),
    );
    let r = json_file(d.path().join("r.json"));
    assert_eq!(r["states"], 2);
    let want = 20.0 * 2f64.ln();
    assert!(rel(r["predicted_mean"]["value"].as_f64().unwrap(), want) < 1e-9);
    let o = &r["outcomes"];
    let total =
        o["collapsed"].as_u64().unwrap() + o["pre_collapsed"].as_u64().unwrap() + o["censored"].as_u64().unwrap();
    assert_eq!(total, 20);
    assert!(o["collapsed"].as_u64().unwrap() > 0);
    assert!(r["ks"]["p_value"].as_f64().unwrap().is_finite());
    assert_eq!(csv_column(d.path().join("m.csv"), 0).len(), 20);
    assert_eq!(json_file(d.path().join("c.json"))["m"], 2);
}

#[test]
fn markov_thirty_states_report() {
    // The distributional comparison at this scale is part of the
    // acceptance suite; here the report contents are checked.
    let d = tmp();
    let args = [
        "markov",
        "--states",
        "30",
        "--entropy",
        "0.85",
        "--n-samples",
        "1000",
        "--runs",
        "100",
        "--seed",
        "7",
        "--out",
        "m.csv",
    ];
    let r = stdout_json(&ok(&args, d.path()));
    assert!((r["stationary_entropy"].as_f64().unwrap() - 0.85).abs() <= 1e-3);
    assert_eq!(r["stationary"].as_array().unwrap().len(), 30);
    assert_eq!(
        r["empirical"]["count"].as_u64().unwrap() + r["outcomes"]["censored"].as_u64().unwrap(),
        100
    );
    let predicted = r["predicted_mean"]["value"].as_f64().unwrap();
    assert!(predicted > 0.0 && r["ks"]["mode"] == "one_sample");
    // The collapse CSV is itself comparable against the law.
    let c = stdout_json(&ok(&["compare", "--samples", "m.csv"], d.path()));
    assert_eq!(c["d_stat"], r["ks"]["d_stat"]);
    assert!(rel(c["theory_mean"].as_f64().unwrap(), predicted) < 1e-12);
}

#[test]
fn markov_single_state_is_rejected() {
    let d = tmp();
    assert_eq!(
        code(
            &[
                "markov",
                "--states",
                "1",
                "--entropy",
                "1.0",
                "--n-samples",
                "10",
                "--out",
                "m.csv"
            ],
            d.path()
        ),
        2
    );
    assert_eq!(
        code(
            &[
                "markov",
                "--states",
                "5",
                "--entropy",
                "1.0",
                "--n-samples",
                "3",
                "--out",
                "m.csv"
            ],
            d.path()
        ),
        2
    );
}

#[test]
fn config_replays_from_sidecar() {
    let d = tmp();
    let f = flat(d.path(), 3);
    ok(
        &[
            "sim",
            "sde",
            "--dist",
            &f,
            "--n-samples",
            "300",
            "--trials",
            "50",
            "--seed",
            "9",
            "--out",
            "a.csv",
        ],
        d.path(),
    );
    let first = std::fs::read(d.path().join("a.csv")).unwrap();
    std::fs::remove_file(d.path().join("a.csv")).unwrap();
    ok(&["run", "--config", "a.csv.meta.json"], d.path());
    assert_eq!(std::fs::read(d.path().join("a.csv")).unwrap(), first);

    // A bare config round-trips through JSON.
    let meta = json_file(d.path().join("a.csv.meta.json"));
    std::fs::write(d.path().join("c.json"), meta["config"].to_string()).unwrap();
    ok(&["run", "--config", "c.json"], d.path());
    assert_eq!(std::fs::read(d.path().join("a.csv")).unwrap(), first);
}

#[test]
fn config_rejects_unknown_fields_and_versions() {
    let d = tmp();
    let base = serde_json::json!({
        "schema_version": 1,
        "command": { "gen-dist": { "m": 3, "entropy": 1.0, "seed": 0, "out": null } }
    });
    let write = |name: &str, v: &Value| {
        std::fs::write(d.path().join(name), v.to_string()).unwrap();
        name.to_string()
    };
    let good = write("good.json", &base);
    ok(&["run", "--config", &good], d.path());

    let mut extra = base.clone();
    extra["command"]["gen-dist"]["colour"] = "blue".into();
    assert_eq!(code(&["run", "--config", &write("x.json", &extra)], d.path()), 2);
    let mut top = base.clone();
    top["notes"] = "hi".into();
    assert_eq!(code(&["run", "--config", &write("t.json", &top)], d.path()), 2);
    let mut ver = base;
    ver["schema_version"] = 2.into();
    assert_eq!(code(&["run", "--config", &write("v.json", &ver)], d.path()), 2);
}

#[test]
fn thread_count_does_not_change_results() {
    let d = tmp();
    let f = flat(d.path(), 6);
    let mut outputs: Vec<PathBuf> = Vec::new();
    for threads in ["1", "4"] {
        let out = format!("t{threads}.csv");
        ok(
            &[
                "--threads",
                threads,
                "sim",
                "resample",
                "--dist",
                &f,
                "--n-samples",
                "500",
                "--trials",
                "200",
                "--seed",
                "5",
                "--out",
                &out,
            ],
            d.path(),
        );
        outputs.push(d.path().join(out));
    }
    assert_eq!(std::fs::read(&outputs[0]).unwrap(), std::fs::read(&outputs[1]).unwrap());

    let env_run = Command::new(env!("CARGO_BIN_EXE_extinct"))
        .args([
            "markov",
            "--states",
            "4",
            "--entropy",
            "0.9",
            "--n-samples",
            "50",
            "--runs",
            "30",
            "--seed",
            "2",
            "--out",
            "e.csv",
        ])
        .current_dir(d.path())
        .env("EXTINCT_THREADS", "3")
        .output()
        .unwrap();
    assert!(env_run.status.success());
    ok(
        &[
            "--threads",
            "1",
            "markov",
            "--states",
            "4",
            "--entropy",
            "0.9",
            "--n-samples",
            "50",
            "--runs",
            "30",
            "--seed",
            "2",
            "--out",
            "f.csv",
        ],
        d.path(),
    );
    assert_eq!(
        std::fs::read(d.path().join("e.csv")).unwrap(),
        std::fs::read(d.path().join("f.csv")).unwrap()
    );
    assert_eq!(code(&["--threads", "0", "gen-dist", "--m", "3"], d.path()), 2);
}
