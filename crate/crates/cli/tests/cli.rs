use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, out: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    let text = format!(
        "name = \"tiny\"\noutput_dir = {:?}\nseeds = [0, 1]\nepisodes = 4\ncheckpoint_every = 2000\neval_episodes = 2\n{extra}",
        out.display().to_string()
    );
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_twice_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a/nested", "b"]
        .iter()
        .map(|sub| {
            let out = tmp.path().join(sub);
            let cfg = write_config(tmp.path(), &out, "");
            let o = aoc(&["train", &cfg]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for file in ["seed-0/episodes.csv", "seed-1/episodes.csv", "seed-1/checkpoints.csv", "summary.csv"] {
        let a = fs::read(runs[0].join(file)).unwrap();
        let b = fs::read(runs[1].join(file)).unwrap();
        assert!(!a.is_empty(), "{file} is empty");
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    assert!(runs[0].join("manifest.json").is_file());

    let o = aoc(&["report", runs[0].to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(runs[0].join("report/curve.csv")).unwrap();
    assert!(curve.lines().count() > 1);
}

#[test]
fn invalid_config_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "name = \"x\"\noutput_dir = \"out\"\nseeds = []\nepisodes = 1\n").unwrap();
    let o = aoc(&["train", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    let gamma = write_config(tmp.path(), &tmp.path().join("g"), "[agent]\ngamma = 1.5\n");
    let o = aoc(&["train", &gamma]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn report_on_empty_dir_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = aoc(&["report", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn sweep_without_grid_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("s"), "");
    let o = aoc(&["sweep", &cfg]);
    assert!(!o.status.success());
}

#[test]
fn transfer_without_section_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("t"), "");
    let o = aoc(&["transfer", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("transfer"));
}

#[test]
fn printed_defaults_load_back() {
    let o = aoc(&["defaults", "--name", "demo"]);
    assert!(o.status.success());
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("d.toml");
    fs::write(&path, &o.stdout).unwrap();
    let cfg = aoc_core::harness::RunConfig::load(&path).unwrap();
    assert_eq!(cfg.name, "demo");
    assert_eq!(cfg.agent.w1, 4.0);
}

#[test]
fn readme_config_example_loads() {
    let readme = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let start = readme.find("```toml\n").expect("toml block") + "```toml\n".len();
    let block = &readme[start..start + readme[start..].find("```").unwrap()];
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("readme.toml");
    fs::write(&path, block).unwrap();
    let cfg = aoc_core::harness::RunConfig::load(&path).unwrap();
    // The example spells out the defaults.
    let defaults = aoc_core::harness::RunConfig::new("demo", "runs/demo", vec![0, 1, 2, 3, 4], 30_000);
    assert_eq!(cfg.agent, defaults.agent);
    assert_eq!(cfg.env, defaults.env);
    assert!(cfg.transfer.is_some() && cfg.sweep.is_some());
}
