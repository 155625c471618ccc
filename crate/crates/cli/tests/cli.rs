use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
name = "tiny"
output_dir = "ignored-by-override"
seeds = [3, 5]

[env]
image_size = 16
episode_len = 8
distractors = 1

[model]
latent_dim = 4
embed_dim = 4
hidden = 8
encoder = [{ channels = 4, kernel = 4, stride = 2 }, { channels = 8, kernel = 4, stride = 2 }]
nce_horizons = [1]

[planner]
horizon = 2
population = 6
elites = 2
iterations = 2

[schedule]
seed_episodes = 1
episodes = 2
train_steps = 2
batch_size = 2
chunk_len = 4
"#;

fn miro(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miro"))
        .args(args)
        .env("MIRO_OUTPUT_ROOT", root)
        .current_dir(root)
        .output()
        .expect("spawn miro")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_plot_report_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    let out = miro(&["run", &cfg], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("tiny");
    for f in ["metrics-seed3.csv", "metrics-seed5.csv", "params-seed3.ckpt", "params-seed5.ckpt", "manifest.toml"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert!(!tmp.path().join("ignored-by-override").exists());

    let glob = format!("{}/tiny/metrics-*.csv", tmp.path().display());
    let svg = tmp.path().join("curves.svg");
    let out = miro(&["plot", &glob, "--out", svg.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("miro, distractors 1 (n=2)"));

    let out = miro(&["report", &glob], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("warning:"), "3-episode runs are shorter than the window:\n{text}");
    assert!(text.lines().any(|l| l.starts_with("miro") && l.contains(" 2 ")), "{text}");
}

#[test]
fn parallel_flag_matches_sequential_output() {
    let tmp = TempDir::new().unwrap();
    let seq = write_config(tmp.path(), "seq.toml", TINY);
    let par = write_config(tmp.path(), "par.toml", &TINY.replace("name = \"tiny\"", "name = \"tinypar\"\nparallel = true"));
    assert!(miro(&["run", &seq], tmp.path()).status.success());
    let out = miro(&["run", &par], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in [3, 5] {
        let a = std::fs::read_to_string(tmp.path().join(format!("tiny/metrics-seed{seed}.csv"))).unwrap();
        let b = std::fs::read_to_string(tmp.path().join(format!("tinypar/metrics-seed{seed}.csv"))).unwrap();
        assert_eq!(a.replace("tiny-seed", "tinypar-seed"), b);
    }
    let manifest = std::fs::read_to_string(tmp.path().join("tinypar/manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"complete\""));
}

#[test]
fn bad_config_reports_line_and_fails() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "name = \"x\"\n[schedule]\nepisodes = 1\nepsiodes = 2\n");
    let out = miro(&["run", &cfg], tmp.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.toml:4:") && err.contains("epsiodes"), "{err}");
}

#[test]
fn unmatched_glob_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let out = miro(&["report", &format!("{}/nothing-*.csv", tmp.path().display())], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("no files match"));
}
