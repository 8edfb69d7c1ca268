use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "[problem]\nd = 1\n\n[grid]\nN = 4\n\n[training]\nepochs = 2\niterations = 10\nbatch_size = 16\nbn_calibration_batches = 4\n\n[experiment]\nn_runs = 2\neval_samples = 50\n";

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.toml"), config).unwrap();
        Sandbox { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn command(&self, sub: &str, out: &str) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_spde"));
        c.arg(sub)
            .arg("--config")
            .arg(self.path("c.toml"))
            .arg("--out")
            .arg(self.path(out))
            .arg("--quiet")
            .env_remove("SPDE_SEED")
            .env_remove("SPDE_OUT");
        c
    }

    fn run(&self, sub: &str, out: &str, extra: &[&str]) -> Output {
        self.command(sub, out).args(extra).output().unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn run_writes_one_row_per_bpath_and_a_footer() {
    let s = Sandbox::new(TINY);
    let o = s.run("run", "a", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(&s.path("a/report.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7, "{csv}");
    assert!(lines[0].starts_with("bpath,averaged_approx,exact_solution"));
    for (i, l) in lines[1..6].iter().enumerate() {
        assert!(l.starts_with(&format!("{i},")), "{l}");
    }
    assert!(lines[6].starts_with("relative_l2,,,,"));
    for f in ["report.json", "manifest.json", "log.jsonl", "config.toml"] {
        assert!(s.path("a").join(f).is_file(), "{f}");
    }
    assert!(s.path("a/checkpoints/bpath_004/run_001").is_dir());
    let manifest: serde_json::Value = serde_json::from_str(&read(&s.path("a/manifest.json"))).unwrap();
    assert_eq!(manifest["master_seed"], 2024);
    assert_eq!(manifest["run_seeds"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn same_seed_gives_identical_reports() {
    let s = Sandbox::new(TINY);
    for out in ["a", "b"] {
        let o = s.run("run", out, &["--seed", "7", "--workers", "1", "--no-checkpoints"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["report.csv", "report.json"] {
        assert_eq!(fs::read(s.path("a").join(f)).unwrap(), fs::read(s.path("b").join(f)).unwrap(), "{f}");
    }
    let o = s.run("run", "c", &["--seed", "8", "--no-checkpoints"]);
    assert_eq!(code(&o), 0);
    assert_ne!(read(&s.path("a/report.csv")), read(&s.path("c/report.csv")));
}

#[test]
fn environment_overrides_seed_and_output() {
    let s = Sandbox::new(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_spde"))
        .args(["run", "--quiet", "--no-checkpoints", "--config"])
        .arg(s.path("c.toml"))
        .env("SPDE_SEED", "7")
        .env("SPDE_OUT", s.path("env"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = s.run("run", "flag", &["--seed", "7", "--no-checkpoints"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(&s.path("env/report.csv")), read(&s.path("flag/report.csv")));

    let o = s.command("run", "x").env("SPDE_SEED", "seven").output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("SPDE_SEED"));
}

#[test]
fn missing_step_count_exits_with_two() {
    let s = Sandbox::new("[problem]\nd = 1\n");
    let o = s.run("run", "a", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grid.N"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_with_two() {
    let s = Sandbox::new(&format!("{TINY}\n[output]\nfolder = \"x\"\n"));
    let o = s.run("run", "a", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("folder"), "{}", stderr(&o));
}

#[test]
fn bad_value_reports_its_line() {
    let s = Sandbox::new("[problem]\nd = 1\n[grid]\nN = -4\n");
    let o = s.run("run", "a", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn zero_workers_is_a_config_error() {
    let s = Sandbox::new(TINY);
    assert_eq!(code(&s.run("run", "a", &["--workers", "0"])), 2);
}

#[test]
fn training_failure_exits_with_three_and_keeps_the_report() {
    let s = Sandbox::new(&TINY.replace("batch_size = 16", "batch_size = 16\ninitial_rate = 1e300"));
    let o = s.run("run", "a", &["--no-checkpoints"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let csv = read(&s.path("a/report.csv"));
    assert!(csv.lines().last().unwrap().ends_with(",10"), "{csv}");
}

#[test]
fn help_lists_every_config_key() {
    let o = Command::new(env!("CARGO_BIN_EXE_spde")).args(["run", "--help"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for (k, _) in spde_cli::CONFIG_KEYS {
        assert!(text.contains(k), "{k} missing from help");
    }
}

#[test]
fn selftest_slope_is_one() {
    let s = Sandbox::new(TINY);
    let o = s.run("convergence", "a", &["--selftest-slope"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = String::from_utf8(o.stdout).unwrap();
    let slope: f64 = line.trim().strip_prefix("synthetic slope ").unwrap().parse().unwrap();
    assert!((slope - 1.0).abs() <= 1e-6);
}

#[test]
fn convergence_needs_three_step_counts() {
    let s = Sandbox::new(TINY);
    let o = s.run("convergence", "a", &["--n-list", "8"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n_list"));
    assert_eq!(code(&s.run("convergence", "a", &["--n-list", "8,16"])), 2);
}

#[test]
fn regression_convergence_writes_the_table_and_slope() {
    let cfg = format!(
        "{TINY}\n[regression]\ndegree = 3\nsamples = 4000\n\n[convergence]\nn_list = [2, 4, 8]\nn_bpaths = 3\n"
    )
    .replace("n_runs = 2", "n_runs = 2\ncorrector = \"regression\"");
    let s = Sandbox::new(&cfg);
    let o = s.run("convergence", "a", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().last().unwrap().starts_with("slope "), "{stdout}");
    let csv = read(&s.path("a/convergence.csv"));
    assert_eq!(csv.lines().count(), 4, "{csv}");
}

#[test]
fn figure_at_the_last_node_is_the_terminal_condition() {
    let s = Sandbox::new(TINY);
    let o = s.run("figure", "a", &["--step", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(&s.path("a/figure_step_004.csv"));
    let mut rows = 0;
    for l in csv.lines().skip(1) {
        let v: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[2], v[3], "{l}");
        rows += 1;
    }
    assert_eq!(rows, 50);
}

#[test]
fn figure_reads_a_saved_solution() {
    let s = Sandbox::new(TINY);
    assert_eq!(code(&s.run("run", "a", &[])), 0);
    let sol = s.path("a/checkpoints/bpath_000/run_000");
    let o = s.run("figure", "f", &["--step", "1", "--solution", sol.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(&s.path("f/figure_step_001.csv"));
    assert!(csv.lines().nth(1).unwrap().starts_with("0.25,"), "{csv}");
}

#[test]
fn figure_rejects_bad_steps_and_missing_solutions() {
    let s = Sandbox::new(TINY);
    let o = s.run("figure", "a", &["--step", "5"]);
    assert_eq!(code(&o), 2);
    let missing = s.path("nowhere");
    let o = s.run("figure", "a", &["--step", "1", "--solution", missing.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}
