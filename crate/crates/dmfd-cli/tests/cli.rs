//! End-to-end tests of the `dmfd` binary: the full gen-demos → train →
//! eval → plot pipeline on a miniature budget, plus resume semantics and
//! the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn dmfd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmfd"))
        .args(args)
        .current_dir(cwd)
        .env("DMFD_THREADS", "1")
        .output()
        .expect("spawn dmfd")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        stdout(out),
        stderr(out)
    );
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

const TINY_CONFIG: &str = r#"
[env]
task = "straighten_rope"
horizon = 5

[agent]
hidden_width = 16
batch_size = 8
replay_capacity = 2000

[run]
budget_steps = 40
eval_every = 20
eval_episodes = 2
final_eval_episodes = 2
bc_epochs = 2
seeds = [0]
"#;

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY_CONFIG).unwrap();

    // Demonstrations. The filter is disabled so three episodes suffice.
    let out = dmfd(
        &[
            "gen-demos",
            "--config",
            "tiny.toml",
            "--out",
            "demos.bin",
            "--episodes",
            "3",
            "--seed",
            "7",
            "--filter",
            "-10",
        ],
        root,
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("3 episodes"), "{}", stdout(&out));
    assert!(root.join("demos.bin").exists());

    // Refuses to overwrite without --force, allows it with.
    let out = dmfd(
        &[
            "gen-demos", "--config", "tiny.toml", "--out", "demos.bin", "--episodes", "3",
            "--filter", "-10",
        ],
        root,
    );
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("--force"), "{}", stderr(&out));

    // Train the full method for one seed.
    let out = dmfd(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--dataset",
            "demos.bin",
            "--out",
            "run1",
        ],
        root,
    );
    assert_ok(&out);
    assert!(root.join("run1/config.toml").exists());
    let metrics = read(&root.join("run1/seed0/metrics.csv"));
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 3, "{metrics}");
    assert!(lines[0].starts_with("step,"));
    assert!(lines[1].starts_with("20,"));
    assert!(lines[2].starts_with("40,"));
    assert!(root.join("run1/seed0/checkpoint_latest.json").exists());
    assert!(root.join("run1/seed0/checkpoint_final.json").exists());

    // A second run into the same directory is refused without --force.
    let out = dmfd(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--dataset",
            "demos.bin",
            "--out",
            "run1",
        ],
        root,
    );
    assert_exit(&out, 2);

    // Same seed, fresh directory: byte-identical metrics.
    let out = dmfd(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--dataset",
            "demos.bin",
            "--out",
            "run2",
        ],
        root,
    );
    assert_ok(&out);
    assert_eq!(metrics, read(&root.join("run2/seed0/metrics.csv")));

    // Evaluate the final checkpoint.
    let out = dmfd(
        &[
            "eval",
            "run1/seed0/checkpoint_final.json",
            "--episodes",
            "3",
            "--seed",
            "5",
            "--out",
            "evaldir",
        ],
        root,
    );
    assert_ok(&out);
    let episodes = read(&root.join("evaldir/episodes.csv"));
    assert_eq!(episodes.lines().count(), 4, "{episodes}");
    assert!(episodes.starts_with("episode,p_start,p_end,p_hat\n"));
    let summary = read(&root.join("evaldir/summary.toml"));
    assert!(summary.contains("mean"), "{summary}");

    // Checkpoint/config mismatch is a config error.
    let mismatched = TINY_CONFIG.replace("hidden_width = 16", "hidden_width = 24");
    std::fs::write(root.join("other.toml"), mismatched).unwrap();
    let out = dmfd(
        &[
            "eval",
            "run1/seed0/checkpoint_final.json",
            "--config",
            "other.toml",
        ],
        root,
    );
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));

    // Aggregate both runs into curves.
    let out = dmfd(
        &["plot", "dmfd=run1", "run2", "--out", "plots"],
        root,
    );
    assert_ok(&out);
    let curves = read(&root.join("plots/curves.csv"));
    assert!(curves.starts_with("label,step,mean,"));
    assert!(curves.contains("\ndmfd,20,"));
    assert!(curves.contains("\nrun2,40,"));
    let svg = read(&root.join("plots/curves.svg"));
    assert!(svg.contains("<polyline"));
}

#[test]
fn resumed_training_continues_step_numbering_without_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY_CONFIG).unwrap();
    let short = TINY_CONFIG.replace("budget_steps = 40", "budget_steps = 20");
    std::fs::write(root.join("short.toml"), short).unwrap();

    let out = dmfd(
        &[
            "gen-demos", "--config", "tiny.toml", "--out", "demos.bin", "--episodes", "3",
            "--seed", "7", "--filter", "-10",
        ],
        root,
    );
    assert_ok(&out);

    // 20-step run, then resume to 40 under the full config.
    let out = dmfd(
        &[
            "train", "--config", "short.toml", "--dataset", "demos.bin", "--out", "halves",
        ],
        root,
    );
    assert_ok(&out);
    let short_metrics = read(&root.join("halves/seed0/metrics.csv"));
    assert_eq!(short_metrics.lines().count(), 2, "{short_metrics}");

    let out = dmfd(
        &[
            "train", "--config", "tiny.toml", "--dataset", "demos.bin", "--out", "halves",
            "--resume",
        ],
        root,
    );
    assert_ok(&out);

    // Step numbering continues without gaps and the completed prefix is
    // untouched.
    let resumed = read(&root.join("halves/seed0/metrics.csv"));
    assert!(resumed.starts_with(&short_metrics), "{resumed}");
    let steps: Vec<&str> = resumed
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(steps, ["20", "40"], "{resumed}");

    // Resuming a complete run is a no-op that reports completion.
    let out = dmfd(
        &[
            "train", "--config", "tiny.toml", "--dataset", "demos.bin", "--out", "halves",
            "--resume",
        ],
        root,
    );
    assert_ok(&out);
    assert!(
        stdout(&out).contains("already complete"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn baselines_and_ablations_run_on_miniature_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY_CONFIG).unwrap();
    let out = dmfd(
        &[
            "gen-demos", "--config", "tiny.toml", "--out", "demos.bin", "--episodes", "3",
            "--seed", "7", "--filter", "-10",
        ],
        root,
    );
    assert_ok(&out);

    // Behavior cloning writes its loss curve and a single metrics row.
    let out = dmfd(
        &[
            "train", "--config", "tiny.toml", "--baseline", "bc_state", "--dataset",
            "demos.bin", "--out", "bc",
        ],
        root,
    );
    assert_ok(&out);
    let metrics = read(&root.join("bc/seed0/metrics.csv"));
    assert_eq!(metrics.lines().count(), 2, "{metrics}");
    assert!(metrics.lines().nth(1).unwrap().starts_with("40,"));
    assert_eq!(read(&root.join("bc/seed0/bc_loss.csv")).lines().count(), 3);

    // SAC ignores the dataset entirely; it trains without one.
    let out = dmfd(
        &[
            "train", "--config", "tiny.toml", "--baseline", "sac", "--out", "sac",
        ],
        root,
    );
    assert_ok(&out);
    assert!(root.join("sac/seed0/checkpoint_final.json").exists());

    // The full method without a dataset is a config error naming the flag.
    let out = dmfd(
        &["train", "--config", "tiny.toml", "--out", "nodata"],
        root,
    );
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("--dataset"), "{}", stderr(&out));

    // Entropy ablation: two cells, one seed each.
    let out = dmfd(
        &[
            "ablate", "entropy", "--config", "tiny.toml", "--seed", "0", "--dataset",
            "demos.bin", "--out", "abl",
        ],
        root,
    );
    assert_ok(&out);
    for cell in ["entropy_on", "entropy_off"] {
        assert!(root.join(format!("abl/{cell}/config.toml")).exists());
        let m = read(&root.join(format!("abl/{cell}/seed0/metrics.csv")));
        assert_eq!(m.lines().count(), 3, "{m}");
    }

    // Unknown ablation names list the valid set.
    let out = dmfd(
        &[
            "ablate", "dropout", "--config", "tiny.toml", "--dataset", "demos.bin", "--out",
            "abl2",
        ],
        root,
    );
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("dataset_size"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Unknown key, with its path in the message.
    std::fs::write(root.join("bad.toml"), "[agent]\ngama = 0.9\n").unwrap();
    let out = dmfd(
        &["train", "--config", "bad.toml", "--out", "x"],
        root,
    );
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("gama"), "{}", stderr(&out));

    // Out-of-range value, naming the key.
    std::fs::write(root.join("range.toml"), "[agent]\np_eta = 1.5\n").unwrap();
    let out = dmfd(
        &["train", "--config", "range.toml", "--out", "x"],
        root,
    );
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("p_eta"), "{}", stderr(&out));

    // Misaligned budget.
    std::fs::write(
        root.join("align.toml"),
        "[run]\nbudget_steps = 41\neval_every = 20\n",
    )
    .unwrap();
    let out = dmfd(
        &["train", "--config", "align.toml", "--out", "x"],
        root,
    );
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("multiple"), "{}", stderr(&out));
}
