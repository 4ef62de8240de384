//! End-to-end tests of the command-line binary: artifact layout, exit
//! codes, determinism across reruns, and error reporting.

use std::path::Path;
use std::process::{Command, Output};

use bohp::fd::GradCheckReport;
use bohp::io::{read_curve_csv, read_json, write_json, Manifest, ModelDoc};
use bohp::plastic::{HebbianState, Layer, Network, PlasticLayerParams};
use bohp::tasks::{EpisodeScript, TaskKind, Target, CLASSIFICATION_EPISODE_STEPS};

fn bohp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bohp"))
        .args(args)
        .env_remove("BOHP_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Tiny but complete training invocation used by the artifact tests.
fn train_small(out: &Path) -> Output {
    bohp(&[
        "train",
        "--task",
        "completion",
        "--n",
        "4",
        "--episodes",
        "30",
        "--freeze-last",
        "10",
        "--runs",
        "2",
        "--seed",
        "42",
        "--out",
        path_str(out),
    ])
}

#[test]
fn train_writes_reloadable_artifacts() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("run");
    let o = train_small(&out);
    assert!(o.status.success(), "stderr: {}", stderr(&o));
    assert!(
        stdout(&o).contains("2/2 runs completed"),
        "stdout: {}",
        stdout(&o)
    );
    assert!(stdout(&o).contains("frozen-phase error median:"));

    let curve = read_curve_csv(&out.join("curve.csv")).expect("curve parses");
    assert_eq!(curve.len(), 30, "one row per episode");
    assert_eq!(curve[0].0, 0);
    assert_eq!(curve[29].0, 29);

    let manifest: Manifest = read_json(&out.join("manifest.json")).expect("manifest parses");
    assert_eq!(manifest.n_runs, 2);
    assert_eq!(manifest.seeds, vec![42, 43]);
    assert_eq!(manifest.completed_runs, 2);
    assert!(manifest.diverged.is_empty());
    assert!(manifest.frozen_error_median.is_some());
    assert_eq!(manifest.config.n, 4);
    assert_eq!(manifest.config.episodes_total, 30);

    for i in 0..2 {
        let path = out.join(format!("model_{i:02}.json"));
        let doc: ModelDoc = read_json(&path).expect("model parses");
        doc.to_network::<f64>().expect("model reloads");
    }
}

#[test]
fn identical_invocations_write_identical_bytes() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train_small(&a).status.success());
    assert!(train_small(&b).status.success());
    for name in ["curve.csv", "manifest.json", "model_00.json", "model_01.json"] {
        let left = std::fs::read(a.join(name)).expect("first copy");
        let right = std::fs::read(b.join(name)).expect("second copy");
        assert_eq!(left, right, "{name} differs between identical runs");
    }
}

#[test]
fn train_reports_divergence_with_failing_exit() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("run");
    // An initialization this wide overflows the first forward pass.
    let o = bohp(&[
        "train",
        "--task",
        "completion",
        "--n",
        "4",
        "--episodes",
        "5",
        "--freeze-last",
        "1",
        "--runs",
        "2",
        "--seed",
        "0",
        "--init-scale",
        "8.9e307",
        "--out",
        path_str(&out),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("diverged"), "stderr: {}", stderr(&o));

    let manifest: Manifest = read_json(&out.join("manifest.json")).expect("manifest parses");
    assert_eq!(manifest.completed_runs, 0);
    assert_eq!(manifest.diverged.len(), 2);
    assert!(manifest.frozen_error_median.is_none());
}

#[test]
fn gradcheck_small_suite_passes_and_writes_report() {
    let dir = tempfile::tempdir().expect("tempdir");
    let o = bohp(&[
        "gradcheck",
        "--instances",
        "10",
        "--seed",
        "7",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(o.status.success(), "stderr: {}", stderr(&o));
    assert!(stdout(&o).contains("PASS"), "stdout: {}", stdout(&o));

    let report: GradCheckReport =
        read_json(&dir.path().join("gradcheck.json")).expect("report parses");
    assert!(report.summary.pass);
    assert!(report.summary.params_checked > 0);
    assert_eq!(report.entries.len(), report.summary.params_checked);
}

#[test]
fn gradcheck_rejects_an_empty_suite() {
    let o = bohp(&["gradcheck", "--instances", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("empty suite"), "stderr: {}", stderr(&o));
}

#[test]
fn summarize_classifies_a_handcrafted_model() {
    // Strong diagonal weights, strong off-diagonal plasticity: the routing
    // report should call every input matched and every cross connection
    // plastic.
    let net: Network<f64> = Network::new(vec![Layer::Plastic {
        params: PlasticLayerParams {
            w: vec![vec![1.0, 0.001], vec![0.001, 1.0]],
            alpha: vec![vec![0.0, 0.5], vec![-0.5, 0.0]],
            b: vec![0.0, 0.0],
        },
        state: HebbianState::new(2, 2, 0.5).expect("valid gamma"),
    }])
    .expect("valid network");
    let doc = ModelDoc::from_network(&net, TaskKind::Completion, 0);

    let dir = tempfile::tempdir().expect("tempdir");
    let model = dir.path().join("model.json");
    write_json(&model, &doc).expect("model written");

    let o = bohp(&["summarize", path_str(&model), "--out", path_str(dir.path())]);
    assert!(o.status.success(), "stderr: {}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("fixed-excitatory"), "table: {text}");
    assert!(text.contains("plastic-excitatory"), "table: {text}");
    assert!(text.contains("plastic-inhibitory"), "table: {text}");
    assert!(
        text.contains("identity routing: 2/2 inputs"),
        "table: {text}"
    );
    assert!(text.contains("2/2 cross connections plastic"), "table: {text}");
    assert!(dir.path().join("summary.json").is_file());
}

#[test]
fn summarize_reports_malformed_json_with_location() {
    let dir = tempfile::tempdir().expect("tempdir");
    let model = dir.path().join("model.json");
    std::fs::write(&model, "{ this is not json").expect("file written");
    let o = bohp(&["summarize", path_str(&model)]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("malformed"), "stderr: {err}");
    assert!(err.contains("model.json"), "stderr: {err}");
}

#[test]
fn summarize_reports_missing_file_path() {
    let o = bohp(&["summarize", "/nonexistent/model.json"]);
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("/nonexistent/model.json"),
        "stderr: {}",
        stderr(&o)
    );
}

fn dump_episode(task: &str, n: &str, seed: &str) -> EpisodeScript<f64> {
    let o = bohp(&["dump-episode", "--task", task, "--n", n, "--seed", seed]);
    assert!(o.status.success(), "stderr: {}", stderr(&o));
    serde_json::from_str(&stdout(&o)).expect("script parses")
}

#[test]
fn dumped_completion_episode_has_study_and_cue_steps() {
    let ep = dump_episode("completion", "8", "3");
    assert_eq!(ep.kind, TaskKind::Completion);
    assert_eq!(ep.steps.len(), 2);
    assert!(!ep.steps[0].loss_active, "study step carries no loss");
    assert!(ep.steps[1].loss_active, "cue step is scored");
    assert_eq!(ep.steps[0].input.len(), 8);
    match ep.steps[1].target.as_ref().expect("cue step has a target") {
        Target::Vector(t) => assert_eq!(t.len(), 8),
        other => panic!("completion target should be a vector, got {other:?}"),
    }
}

#[test]
fn dumped_classification_episodes_have_the_documented_shape() {
    let ep = dump_episode("oneshot", "6", "4");
    assert_eq!(ep.steps.len(), CLASSIFICATION_EPISODE_STEPS);
    for (i, step) in ep.steps.iter().enumerate() {
        assert_eq!(step.input.len(), 8, "pattern plus two label lines");
        let suffix = &step.input[6..];
        if i < 2 {
            assert!(!step.loss_active, "instruction step {i} is unscored");
            assert_eq!(suffix.iter().sum::<f64>(), 1.0, "instruction carries a label");
        } else {
            assert!(step.loss_active, "query step {i} is scored");
            assert_eq!(suffix, &[0.0, 0.0], "queries carry no label");
            assert!(matches!(step.target, Some(Target::Class(_))));
        }
    }

    let ep = dump_episode("reversal", "6", "5");
    assert_eq!(ep.steps.len(), CLASSIFICATION_EPISODE_STEPS);
    for i in [10, 11] {
        assert!(!ep.steps[i].loss_active, "re-instruction step {i} is unscored");
        let suffix = &ep.steps[i].input[6..];
        assert_eq!(suffix.iter().sum::<f64>(), 1.0);
    }
    // The re-instruction presents the original patterns with swapped labels.
    let original: Vec<&[f64]> = vec![&ep.steps[0].input[..6], &ep.steps[1].input[..6]];
    for i in [10, 11] {
        let pattern = &ep.steps[i].input[..6];
        assert!(original.contains(&pattern), "step {i} reuses a studied pattern");
    }
    assert_ne!(
        ep.steps[0].input[6..],
        ep.steps[10].input[6..],
        "labels swap at the reversal"
    );
    for step in &ep.steps[12..] {
        assert!(step.loss_active, "post-reversal queries are scored");
    }
}

#[test]
fn seed_env_var_matches_the_flag() {
    let via_flag = bohp(&["dump-episode", "--task", "oneshot", "--n", "6", "--seed", "9"]);
    let via_env = Command::new(env!("CARGO_BIN_EXE_bohp"))
        .args(["dump-episode", "--task", "oneshot", "--n", "6"])
        .env("BOHP_SEED", "9")
        .output()
        .expect("binary runs");
    assert!(via_flag.status.success() && via_env.status.success());
    assert_eq!(via_flag.stdout, via_env.stdout);
}
