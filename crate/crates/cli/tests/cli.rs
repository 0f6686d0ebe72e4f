use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/synthetic_500.csv")
}

fn supertrend(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supertrend"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SUPERTREND_DATA_URL")
        .env("SUPERTREND_CACHE_DIR", cwd.join("cache"))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&supertrend(&["--help"], dir.path())), 0);
    assert_eq!(code(&supertrend(&["backtest"], dir.path())), 1);
    assert_eq!(code(&supertrend(&["frobnicate"], dir.path())), 1);
    let csv = fixture();
    let csv = csv.to_str().unwrap();
    assert_eq!(code(&supertrend(&["backtest", "--csv", csv, "--period", "1"], dir.path())), 1);
    assert_eq!(code(&supertrend(&["optimize", "--csv", csv, "--period-bounds", "30,5"], dir.path())), 1);
    assert_eq!(code(&supertrend(&["optimize", "--csv", csv, "--split", "1.5"], dir.path())), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = supertrend(&["backtest", "--csv", "nope.csv"], dir.path());
    assert_eq!(code(&missing), 2);
    let short = dir.path().join("short.csv");
    fs::write(&short, "Date,Open,High,Low,Close,Adj Close,Volume\n2020-01-02,1,2,0.5,1.5,1.5,10\n").unwrap();
    assert_eq!(code(&supertrend(&["backtest", "--csv", short.to_str().unwrap()], dir.path())), 2);
    let fetch = supertrend(&["fetch", "--symbol", "X", "--start", "2020-01-01", "--end", "2021-01-01"], dir.path());
    assert_eq!(code(&fetch), 2);
}

#[test]
fn backtest_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bt");
    let o = supertrend(&["backtest", "--csv", fixture().to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("Metric,Value\nOverall P/L %,"));
    for f in ["metrics.csv", "metrics.json", "signals.csv", "equity.csv", "equity.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("Total Trades,7\n"));
}

#[test]
fn optimize_is_reproducible_and_feeds_compare_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = fixture();
    let run = |out: &str| {
        let o = supertrend(
            &["optimize", "--csv", csv.to_str().unwrap(), "--n-iter", "6", "--seed", "4", "--out", out],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        o
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(stdout(&a), stdout(&b));
    let (ra, rb) = (dir.path().join("a/synthetic_500"), dir.path().join("b/synthetic_500"));
    let mut names: Vec<_> = fs::read_dir(&ra).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 12);
    for name in &names {
        assert_eq!(fs::read(ra.join(name)).unwrap(), fs::read(rb.join(name)).unwrap(), "{name:?}");
    }
    let log = fs::read_to_string(ra.join("iteration_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 5 + 6);

    let bt = dir.path().join("bt");
    let o = supertrend(&["backtest", "--csv", csv.to_str().unwrap(), "--out", bt.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    let o = supertrend(
        &[
            "compare",
            "--default",
            bt.join("metrics.csv").to_str().unwrap(),
            "--optimized",
            ra.join("summary.json").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("symbol,slice,max_profit_default,max_profit_optimized,improvement,improvement_pct\n"));
    assert!(text.contains("synthetic_500,train,"));

    fs::remove_file(ra.join("convergence.svg")).unwrap();
    let o = supertrend(&["report", "--run-dir", ra.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(ra.join("convergence.svg")).unwrap(), fs::read(rb.join("convergence.svg")).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("# quick run\ncsv = {}\nn_iter = 9\nn-init = 3\nseed = 1\n", fixture().display())).unwrap();
    let o = supertrend(&["optimize", "--config", cfg.to_str().unwrap(), "--n-iter", "2", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(dir.path().join("o/synthetic_500/iteration_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3 + 2);
    assert!(stdout(&o).contains("\"seed\": 1"));
}
