use std::fs;
use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};
use slfv::stats::LimitCase;
use slfv_cli::{load_config, parse_config, plot_rows, prepare, read_manifest, run, Kind, PlotError, RunOptions, RunStatus, View};
use tempfile::TempDir;

const SMALL: &str = r#"
[small]
atoms = [[1.0, 1.0]]
impact = { kind = "point", u = 1.0 }
"#;

fn pair_time(replicates: usize) -> String {
    format!("kind = \"pair-time\"\nseed = 11\nreplicates = {replicates}\nsides = [8.0, 10.0]\n{SMALL}")
}

fn opts(out: &Path, threads: usize) -> RunOptions {
    RunOptions {
        out: out.to_path_buf(),
        seed: 11,
        threads: Some(threads),
        resume: false,
        stop_after: None,
    }
}

fn run_src(src: &str, o: &RunOptions) -> RunStatus {
    let cfg = parse_config(src).unwrap();
    let job = prepare(&cfg).unwrap();
    run(&job, &cfg, o).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn minimal_small_only_config_is_kingman_small() {
    let cfg = parse_config(&pair_time(10)).unwrap();
    assert_eq!(cfg.kind, Kind::PairTime);
    assert_eq!(cfg.case, Some(LimitCase::KingmanSmall));
    assert_eq!(cfg.seed, Some(11));
}

#[test]
fn impact_above_one_is_rejected() {
    let src = pair_time(10).replace("u = 1.0", "u = 1.5");
    let err = parse_config(&src).unwrap_err();
    assert_eq!(err.0.len(), 1);
    assert!(err.0[0].line.is_some());
}

#[test]
fn full_size_large_events_need_radius_below_one_over_root_two() {
    let large = r#"
[large]
atoms = [[0.8, 1.0]]
impact = { kind = "point", u = 0.5 }
[regime]
psi = { power = 1.0 }
rho = { power = 2.0 }
"#;
    let err = parse_config(&format!("{}{large}", pair_time(10))).unwrap_err();
    assert!(err.to_string().contains("1/sqrt(2)"), "{err}");
    let ok = large.replace("0.8", "0.7");
    parse_config(&format!("{}{ok}", pair_time(10))).unwrap();
}

#[test]
fn every_validation_error_is_reported_with_its_line() {
    let src = "kind = \"pair-time\"\nreplicates = -3\nsides = [8.0, -1.0]\n[small]\natoms = [[1.0, 1.0]]\nimpact = { kind = \"point\", u = 2.0 }\n";
    let err = parse_config(src).unwrap_err();
    let lines: Vec<Option<usize>> = err.0.iter().map(|e| e.line).collect();
    assert_eq!(lines, vec![Some(2), Some(3), Some(4)], "{err}");
    assert!(err.to_string().starts_with("line 2: "));
}

#[test]
fn parse_errors_carry_a_line_number() {
    let err = parse_config("kind = \"pair-time\"\nreplicates = 3\nsides = [8.0\n").unwrap_err();
    assert_eq!(err.0.len(), 1);
    assert!(err.0[0].line.is_some(), "{err}");
    let err = parse_config("kind = \"pair-time\"\nreplicates = 1\nsides = [8.0]\ncolour = 3\n").unwrap_err();
    assert_eq!(err.0[0].line, Some(4), "{err}");
}

#[test]
fn unknown_kind_and_mismatched_table_are_rejected() {
    let err = parse_config(&pair_time(1).replace("pair-time", "pair-timing")).unwrap_err();
    assert!(err.to_string().contains("pair-timing"));
    let src = format!("{}\n[block-count]\nn = 2\ntimes = [0.1]\n", pair_time(1));
    assert!(parse_config(&src).is_err());
}

#[test]
fn large_events_without_regime_are_rejected() {
    let src = format!("{}\n[large]\natoms = [[0.25, 1.0]]\nimpact = {{ kind = \"point\", u = 0.5 }}\n", pair_time(1));
    let err = parse_config(&src).unwrap_err();
    assert!(err.to_string().contains("[regime]"), "{err}");
}

#[test]
fn missing_file_is_a_validation_error() {
    assert!(load_config(Path::new("/nonexistent/config.toml")).is_err());
}

#[test]
fn zero_replicates_write_a_manifest_only() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    let RunStatus::Complete(m) = run_src(&pair_time(0), &opts(&out, 1)) else {
        panic!("zero replicates should finish");
    };
    assert!(m.files.is_empty());
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["manifest.json"]);
}

#[test]
fn manifest_hashes_every_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    run_src(&pair_time(5), &opts(&out, 1));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.kind, "pair-time");
    assert_eq!(m.seed, 11);
    assert_eq!(m.replicates, 5);
    let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(paths, vec!["config.toml", "rows.csv", "summary.json"]);
    for f in &m.files {
        let bytes = read(&out, &f.path);
        assert_eq!(f.bytes, bytes.len() as u64);
        assert_eq!(f.sha256, hex::encode(Sha256::digest(&bytes)));
    }
    assert_eq!(m.config_sha256, hex::encode(Sha256::digest(pair_time(5).as_bytes())));
    assert!(!out.join("progress.jsonl").exists());
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_src(&pair_time(12), &opts(&a, 1));
    run_src(&pair_time(12), &opts(&b, 1));
    assert_eq!(read(&a, "rows.csv"), read(&b, "rows.csv"));
    assert_eq!(read(&a, "summary.json"), read(&b, "summary.json"));
    let c = dir.path().join("c");
    let mut o = opts(&c, 1);
    o.seed = 12;
    run_src(&pair_time(12), &o);
    assert_ne!(read(&a, "rows.csv"), read(&c, "rows.csv"));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_src(&pair_time(40), &opts(&a, 1));
    run_src(&pair_time(40), &opts(&b, 3));
    assert_eq!(read(&a, "rows.csv"), read(&b, "rows.csv"));
    assert_eq!(read(&a, "summary.json"), read(&b, "summary.json"));
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let dir = TempDir::new().unwrap();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    run_src(&pair_time(30), &opts(&full, 1));

    let mut o = opts(&part, 1);
    o.stop_after = Some(17);
    assert_eq!(run_src(&pair_time(30), &o), RunStatus::Interrupted { done: 17, total: 60 });
    assert!(!part.join("manifest.json").exists());

    // A torn final line, as left by a crash mid-write, is recomputed.
    let progress = part.join("progress.jsonl");
    let mut text = fs::read_to_string(&progress).unwrap();
    text.push_str("{\"k\":17,\"row\":{\"si");
    fs::write(&progress, text).unwrap();

    o.stop_after = None;
    let cfg = parse_config(&pair_time(30)).unwrap();
    let job = prepare(&cfg).unwrap();
    let err = run(&job, &cfg, &o).unwrap_err();
    assert!(err.to_string().contains("--resume"));

    o.resume = true;
    assert!(matches!(run_src(&pair_time(30), &o), RunStatus::Complete(_)));
    assert_eq!(read(&full, "rows.csv"), read(&part, "rows.csv"));
    assert_eq!(read(&full, "summary.json"), read(&part, "summary.json"));
    assert!(!progress.exists());
}

#[test]
fn resume_refuses_a_different_seed() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    let mut o = opts(&out, 1);
    o.stop_after = Some(3);
    run_src(&pair_time(10), &o);
    o.resume = true;
    o.stop_after = None;
    o.seed = 99;
    let cfg = parse_config(&pair_time(10)).unwrap();
    let job = prepare(&cfg).unwrap();
    assert!(run(&job, &cfg, &o).is_err());
}

#[test]
fn finished_directory_is_not_overwritten() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    run_src(&pair_time(2), &opts(&out, 1));
    let cfg = parse_config(&pair_time(2)).unwrap();
    let job = prepare(&cfg).unwrap();
    assert!(run(&job, &cfg, &opts(&out, 1)).is_err());
    let mut o = opts(&out, 1);
    o.resume = true;
    assert!(matches!(run(&job, &cfg, &o).unwrap(), RunStatus::Complete(_)));
}

#[test]
fn survival_and_ks_views_of_pair_times() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    run_src(&pair_time(25), &opts(&out, 1));
    assert_eq!(View::Survival.header(), ["L", "t_normalized", "empirical_survival", "exp_minus_t"]);
    assert_eq!(View::KsTrend.header(), ["L", "ks_stat", "n_replicates"]);
    let rows = plot_rows(&out, View::Survival).unwrap();
    assert_eq!(rows.len(), 50);
    for side in ["8.0", "10.0"] {
        let mine: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == side).collect();
        assert_eq!(mine.len(), 25);
        let t: Vec<f64> = mine.iter().map(|r| r[1].parse().unwrap()).collect();
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(mine.last().unwrap()[2], "0");
        for r in &mine {
            let (t, e): (f64, f64) = (r[1].parse().unwrap(), r[3].parse().unwrap());
            assert!((e - (-t).exp()).abs() < 1e-12);
        }
    }
    let ks = plot_rows(&out, View::KsTrend).unwrap();
    assert_eq!(ks.len(), 2);
    assert_eq!(ks[0][2], "25");
    let d: f64 = ks[0][1].parse().unwrap();
    assert!((0.0..=1.0).contains(&d));
}

#[test]
fn empty_artifact_gives_header_only_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    run_src(&pair_time(0), &opts(&out, 1));
    let mut buf = Vec::new();
    slfv_cli::emit_plotdata(&out, View::Survival, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "L,t_normalized,empirical_survival,exp_minus_t\n");
}

#[test]
fn view_needs_a_matching_kind() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    run_src(&pair_time(0), &opts(&out, 1));
    assert!(matches!(plot_rows(&out, View::MergerHist), Err(PlotError::WrongKind { .. })));
    assert!(matches!(plot_rows(&out, View::BlockCount), Err(PlotError::WrongKind { .. })));
    assert!(plot_rows(&dir.path().join("missing"), View::Survival).is_err());
}

#[test]
fn block_count_view_has_one_row_per_time_and_count() {
    let src = format!("kind = \"block-count\"\nreplicates = 10\nsides = [24.0]\n{SMALL}\n[block-count]\nn = 3\ntimes = [0.1, 0.4]\n");
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    run_src(&src, &opts(&out, 1));
    let rows = plot_rows(&out, View::BlockCount).unwrap();
    assert_eq!(rows.len(), 6);
    for t in ["0.1", "0.4"] {
        let p: f64 = rows.iter().filter(|r| r[1] == t).map(|r| r[3].parse::<f64>().unwrap()).sum();
        assert!((p - 1.0).abs() < 1e-12);
    }
}

#[test]
fn merger_histogram_scales_expected_to_observed_total() {
    let src = r#"
kind = "first-merger"
replicates = 20
sides = [64.0]
thinning = "affected"
[small]
atoms = [[20.0, 0.02]]
impact = { kind = "point", u = 1e-5 }
[large]
atoms = [[0.25, 1.0]]
impact = { kind = "point", u = 0.5 }
[regime]
psi = { power = 1.0 }
rho = { power = 2.0, log_power = 2.0 }
[first-merger]
n = 4
"#;
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    run_src(src, &opts(&out, 1));
    let rows = plot_rows(&out, View::MergerHist).unwrap();
    let sizes: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(sizes, ["2", "3", "4"]);
    let obs: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    let exp: f64 = rows.iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert!((obs - exp).abs() < 1e-9);
}

#[test]
fn genealogy_run_writes_event_logs() {
    let src = format!("kind = \"genealogy\"\nreplicates = 2\nsides = [10.0]\n{SMALL}\n[genealogy]\nn = 3\n");
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    let RunStatus::Complete(m) = run_src(&src, &opts(&out, 1)) else {
        panic!()
    };
    let logs: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).filter(|p| p.starts_with("events/")).collect();
    assert_eq!(logs, ["events/L10-r000000.jsonl", "events/L10-r000001.jsonl"]);
    let text = fs::read_to_string(out.join(logs[0])).unwrap();
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert!(text.lines().count() >= 3);
}

#[test]
fn forward_run_writes_binary_and_csv_fields() {
    let src = format!(
        "kind = \"forward-run\"\nreplicates = 1\nsides = [8.0]\n{SMALL}\n[forward-run]\ncells = 16\nfield = {{ kind = \"checkerboard\", block = 4 }}\ntime = 0.2\n"
    );
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    run_src(&src, &opts(&out, 1));
    let bin = fs::read(out.join("fields/r000000.bin")).unwrap();
    assert_eq!(&bin[..8], b"SLFVTF01");
    assert_eq!(f64::from_le_bytes(bin[8..16].try_into().unwrap()), 8.0);
    assert_eq!(u32::from_le_bytes(bin[16..20].try_into().unwrap()), 16);
    assert_eq!(u32::from_le_bytes(bin[20..24].try_into().unwrap()), 2);
    assert_eq!(bin.len(), 24 + 16 * 16 * 2 * 8);
    assert!(out.join("fields/r000000.csv").exists());
}

#[test]
fn other_kinds_run_to_completion() {
    let configs = [
        format!("kind = \"hitting-time\"\nreplicates = 4\nsides = [16.0]\n{SMALL}\n[hitting-time]\ntarget = {{ scale = 2.0 }}\n"),
        format!("kind = \"short-window\"\nreplicates = 4\nsides = [16.0]\n{SMALL}\n[short-window]\nradius = 2.0\nwindow_end = {{ power = 2.0, loglog_power = 1.0 }}\nwindow_width = {{ scale = 0.5, power = 2.0, log_power = -1.0 }}\n"),
        format!("kind = \"duality\"\nreplicates = 4\nsides = [8.0]\n{SMALL}\n[duality]\ncells = 32\nfield = {{ kind = \"checkerboard\", block = 4 }}\npoints = [[0.125, 0.125], [1.125, 0.125]]\npatterns = [[0, 0], [0, 1], [1, 1]]\ntime = 1.0\n"),
        format!("kind = \"limit-sample\"\nreplicates = 4\nsides = [16.0]\n{SMALL}\n[limit-sample]\nprocess = \"kingman\"\nn = 4\ntimes = [0.1, 0.5]\n"),
    ];
    let dir = TempDir::new().unwrap();
    for (i, src) in configs.iter().enumerate() {
        let out = dir.path().join(i.to_string());
        assert!(matches!(run_src(src, &opts(&out, 1)), RunStatus::Complete(_)), "{src}");
        let rows = fs::read_to_string(out.join("rows.csv")).unwrap();
        assert!(rows.lines().count() > 1, "{src}");
    }
}

fn slfv() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_slfv"));
    c.env_remove("SLFV_SEED").env_remove("SLFV_THREADS");
    c
}

#[test]
fn binary_exit_codes() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("good.toml");
    let bad = dir.path().join("bad.toml");
    fs::write(&good, pair_time(3)).unwrap();
    fs::write(&bad, pair_time(3).replace("u = 1.0", "u = 3.0")).unwrap();

    let v = slfv().args(["validate", "--config"]).arg(&good).output().unwrap();
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains("small events"));
    let v = slfv().args(["validate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(v.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&v.stderr).contains("line "));

    let out = dir.path().join("out");
    let r = slfv().args(["run", "--config"]).arg(&good).arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let r = slfv().args(["run", "--config"]).arg(&bad).arg("--out").arg(dir.path().join("x")).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
    let r = slfv().args(["run", "--config"]).arg(&good).arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
    let r = slfv()
        .args(["run", "--threads", "0", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(2));

    let p = slfv().args(["plotdata", "--view", "ks-trend", "--out"]).arg(&out).output().unwrap();
    assert_eq!(p.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&p.stdout).starts_with("L,ks_stat,n_replicates\n"));
    let p = slfv().args(["plotdata", "--view", "merger-hist", "--out"]).arg(&out).output().unwrap();
    assert_eq!(p.status.code(), Some(1));
    let p = slfv().args(["plotdata", "--view", "survival", "--out"]).arg(dir.path().join("none")).output().unwrap();
    assert_eq!(p.status.code(), Some(2));
}

#[test]
fn environment_overrides_seed_and_threads() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, pair_time(6)).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let r = slfv()
        .env("SLFV_SEED", "4242")
        .env("SLFV_THREADS", "2")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0));
    let m = read_manifest(&a).unwrap();
    let threads = if cfg!(feature = "parallel") { 2 } else { 1 };
    assert_eq!((m.seed, m.threads), (4242, threads));
    let r = slfv()
        .env("SLFV_SEED", "4242")
        .args(["run", "--seed", "5", "--threads", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0));
    let m = read_manifest(&b).unwrap();
    assert_eq!((m.seed, m.threads), (5, 1));
    assert_ne!(read(&a, "rows.csv"), read(&b, "rows.csv"));
}

#[test]
fn binary_interrupt_and_resume() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, pair_time(8)).unwrap();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    let run_to = |out: &Path, extra: &[&str]| {
        slfv()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(extra)
            .output()
            .unwrap()
    };
    assert_eq!(run_to(&full, &[]).status.code(), Some(0));
    let r = run_to(&part, &["--stop-after", "5"]);
    assert_eq!(r.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&r.stdout).contains("--resume"));
    assert_eq!(run_to(&part, &["--resume"]).status.code(), Some(0));
    assert_eq!(read(&full, "rows.csv"), read(&part, "rows.csv"));
}

#[test]
fn shipped_configs_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = slfv_cli::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            slfv_cli::prepare(&cfg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 9);
}
