use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use lrlindblad::CMatrix64;
use lrlindblad_cli::output::{read_dump, write_dump, Cell, CsvTable};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lrlindblad"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn read_csv(path: &Path) -> CsvTable {
    CsvTable::read(fs::read(path).unwrap().as_slice()).unwrap()
}

fn reals(t: &CsvTable, col: &str) -> Vec<Option<f64>> {
    t.column(col)
        .unwrap()
        .into_iter()
        .map(|c| match c {
            Cell::Real(x) => Some(x),
            Cell::Int(k) => Some(k as f64),
            Cell::Missing => None,
        })
        .collect()
}

#[test]
fn version_prints_package_version() {
    let out = run(&["version"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("lrlindblad {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn validate_reports_errors_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.cfg");
    fs::write(&empty, "").unwrap();
    let out = run(&["validate", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("`mode`") && err.contains("`model.kind`") && err.contains("`time.t_end`"), "{err}");

    let out = run(&["validate", config("fig2.cfg").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("theta_max = 0.001") && text.contains("revival_time = 48.66"), "{text}");

    let out = run(&["run", "--config", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_reference_state_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let twice = CMatrix64::identity(2, 2);
    let records: Vec<(f64, &CMatrix64)> = (0..21).map(|k| (k as f64 * 0.1, &twice)).collect();
    let dump = dir.path().join("bad.bin");
    write_dump(fs::File::create(&dump).unwrap(), &records).unwrap();
    let text = fs::read_to_string(config("matrix.cfg"))
        .unwrap()
        .replace("mode = \"full\"", &format!("mode = \"lowrank\"\n[solver]\nreference = {:?}", dump.display().to_string()));
    let cfg = dir.path().join("lr.cfg");
    fs::write(&cfg, text).unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trace"));
}

#[test]
fn smoke_config_runs_all_modes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path();
    let smoke = config("smoke.cfg");
    let mut elapsed = Duration::ZERO;
    for mode in ["full", "lowrank", "mc", "cv"] {
        let start = Instant::now();
        let out = run(&["run", "--config", smoke.to_str().unwrap(), "--mode", mode, "--out", out_dir.join(mode).to_str().unwrap()]);
        elapsed += start.elapsed();
        assert!(out.status.success(), "{mode}: {}", String::from_utf8_lossy(&out.stderr));
        let t = read_csv(&out_dir.join(mode).join(format!("{mode}.csv")));
        assert_eq!(t.rows.len(), 21);
        let time = reals(&t, "t_normalized");
        assert!(time.windows(2).all(|w| w[0] < w[1]));
        // Excited qubit at t = 0.
        assert!((reals(&t, "pe")[0].unwrap() - 1.0).abs() < 1e-12, "{mode}");
        let manifest = fs::read_to_string(out_dir.join(mode).join("manifest.txt")).unwrap();
        assert!(manifest.contains(&format!("mode = {mode}")) && manifest.contains("seed = 7"), "{manifest}");
    }
    assert!(elapsed < Duration::from_secs(10), "{elapsed:?}");

    let lr = read_csv(&out_dir.join("lowrank/lowrank.csv"));
    assert_eq!(lr.column("rank_m").unwrap()[0], Cell::Int(1));
    assert!(reals(&lr, "err_lr").iter().all(Option::is_none));
    let cv = read_csv(&out_dir.join("cv/cv.csv"));
    assert!(reals(&cv, "lambda").iter().all(|l| l.is_some_and(f64::is_finite)));
    let dump = read_dump(fs::File::open(out_dir.join("full/states.bin")).unwrap()).unwrap();
    assert_eq!(dump.len(), 21);
    assert_eq!(dump[0].1.shape(), (4, 4));
}

#[test]
fn reference_dump_fills_lowrank_errors() {
    let dir = tempfile::tempdir().unwrap();
    let smoke = config("smoke.cfg");
    let full = dir.path().join("full");
    assert!(run(&["run", "--config", smoke.to_str().unwrap(), "--mode", "full", "--out", full.to_str().unwrap()]).status.success());
    let text = fs::read_to_string(&smoke)
        .unwrap()
        .replace("dt_sde = 2e-4", &format!("dt_sde = 2e-4\nreference = {:?}", full.join("states.bin").display().to_string()));
    let cfg = dir.path().join("lr.cfg");
    fs::write(&cfg, text).unwrap();
    let lr = dir.path().join("lr");
    for mode in ["lowrank", "mc"] {
        let out = run(&["run", "--config", cfg.to_str().unwrap(), "--mode", mode, "--out", lr.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let t = read_csv(&lr.join("lowrank.csv"));
    let err = reals(&t, "err_lr");
    assert_eq!(err[0], Some(0.0));
    assert!(err.iter().all(|e| e.is_some_and(|e| e < 1e-2)), "{err:?}");
    // Same errors as with a freshly computed reference.
    let fresh = dir.path().join("fresh");
    assert!(run(&["run", "--config", smoke.to_str().unwrap(), "--out", fresh.to_str().unwrap()]).status.success());
    assert_eq!(read_csv(&fresh.join("mc.csv")), read_csv(&lr.join("mc.csv")));

    let short = dir.path().join("short.cfg");
    fs::write(&short, fs::read_to_string(&cfg).unwrap().replace("n_output = 21", "n_output = 11")).unwrap();
    let out = run(&["run", "--config", short.to_str().unwrap(), "--mode", "lowrank", "--out", lr.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runs_are_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let smoke = config("smoke.cfg");
    let go = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["run", "--config", smoke.to_str().unwrap(), "--mode", "cv", "--out", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(run(&args).status.success());
        (fs::read(out_dir.join("cv.csv")).unwrap(), fs::read_to_string(out_dir.join("manifest.txt")).unwrap())
    };
    let (a, ma) = go("a", &[]);
    let (b, mb) = go("b", &[]);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let (c, mc) = go("c", &["--seed", "8"]);
    assert_ne!(a, c);
    assert_ne!(ma, mc);
    assert!(mc.contains("seed = 8"));
}

#[test]
fn bundled_configs_validate() {
    for name in ["fig1.cfg", "fig2.cfg", "fig3.cfg", "smoke.cfg", "matrix.cfg"] {
        let out = run(&["validate", config(name).to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["validate", config("fig3.cfg").to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("trajectories = 400") && text.contains("cv_rank = 2"));
}

#[test]
fn matrix_model_leaves_population_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "--config", config("matrix.cfg").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("full.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("0.0000000000000000e0,,1.0000000000000000e0"), "{text}");
}
