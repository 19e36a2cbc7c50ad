//! End-to-end runs of the command-line interface.

use std::fs;
use std::path::Path;

use graphlog::checkpoint::Checkpoint;
use graphlog::cli::run;
use graphlog::config::TrainConfig;
use graphlog::eval::MetricReport;

const SPEC: &str = "branching = [2, 2]\ngraphs_per_leaf = 12\nseed = 3\n";

fn config() -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.model.layers = 2;
    c.model.hidden = 8;
    c.pretrain.batch_size = 16;
    c.pretrain.epochs_joint = 2;
    c.global.k_per_layer = vec![2, 4];
    c.finetune.epochs = 3;
    c
}

fn graphlog(args: &[&str]) -> i32 {
    run(std::iter::once("graphlog").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a small dataset and a config file; returns (data dir, config path).
fn setup(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = root.join("spec.toml");
    fs::write(&spec, SPEC).unwrap();
    let data = root.join("data");
    assert_eq!(
        graphlog(&["generate", "--spec", s(&spec), "--out", s(&data)]),
        0
    );
    let cfg = root.join("train.toml");
    fs::write(&cfg, config().to_toml()).unwrap();
    (data, cfg)
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    for f in ["manifest.json", "graphs.jsonl", "config.toml"] {
        assert!(data.join(f).is_file(), "{f}");
    }

    let run1 = dir.path().join("run1");
    assert_eq!(
        graphlog(&[
            "pretrain",
            "--data",
            s(&data),
            "--out",
            s(&run1),
            "--config",
            s(&cfg)
        ]),
        0
    );
    for f in ["ckpt", "metrics.csv", "config.toml", "diagnostics.json"] {
        assert!(run1.join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(run1.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,loss_local,loss_global,monitored_mb_loglik,lr\n"));
    // 48 graphs in batches of 16 over three epochs
    assert_eq!(metrics.lines().count(), 1 + 9);

    let ckpt = run1.join("ckpt");
    assert_eq!(
        graphlog(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)]),
        0
    );
    let report = MetricReport::read(&run1.join("report.json")).unwrap();
    let resolved =
        TrainConfig::from_toml(&fs::read_to_string(run1.join("config.toml")).unwrap()).unwrap();
    assert_eq!(report.config_hash, resolved.hash());
    assert!(report.nmi.is_some());

    let ft = dir.path().join("ft");
    assert_eq!(
        graphlog(&[
            "finetune",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&data),
            "--out",
            s(&ft),
            "--mode",
            "probe"
        ]),
        0
    );
    for f in ["ckpt", "report.json", "finetune_loss.csv", "config.toml"] {
        assert!(ft.join(f).is_file(), "{f}");
    }
    let ft_report = MetricReport::read(&ft.join("report.json")).unwrap();
    assert_eq!(ft_report.per_task_auc.len(), 4);
    assert!(fs::read_to_string(ft.join("config.toml"))
        .unwrap()
        .contains("mode = \"probe\""));
    // the fine-tuned checkpoint carries its head into eval
    assert_eq!(
        graphlog(&[
            "eval",
            "--checkpoint",
            s(&ft.join("ckpt")),
            "--data",
            s(&data)
        ]),
        0
    );
    assert_eq!(
        MetricReport::read(&ft.join("report.json"))
            .unwrap()
            .per_task_auc,
        ft_report.per_task_auc
    );

    let emb = dir.path().join("emb");
    assert_eq!(
        graphlog(&[
            "embed",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&data),
            "--out",
            s(&emb)
        ]),
        0
    );
    let csv = fs::read_to_string(emb.join("embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 49);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 3 + 8);

    let proj = dir.path().join("proj");
    assert_eq!(
        graphlog(&[
            "project",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&data),
            "--out",
            s(&proj)
        ]),
        0
    );
    let plot = fs::read_to_string(proj.join("plot.csv")).unwrap();
    assert_eq!(
        plot.lines().next().unwrap(),
        "x,y,leaf_label,is_prototype,layer"
    );
    let sizes: usize = Checkpoint::load(&ckpt)
        .unwrap()
        .model
        .forest
        .unwrap()
        .sizes()
        .iter()
        .sum();
    assert_eq!(
        plot.lines()
            .skip(1)
            .filter(|l| l.split(',').nth(3) == Some("1"))
            .count(),
        sizes
    );
    assert_eq!(plot.lines().count(), 1 + 48 + sizes);
}

#[test]
fn resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        graphlog(&[
            "pretrain",
            "--data",
            s(&data),
            "--out",
            s(&a),
            "--config",
            s(&cfg),
            "--seed",
            "9"
        ]),
        0
    );
    let resolved = a.join("config.toml");
    assert_eq!(
        graphlog(&[
            "pretrain",
            "--data",
            s(&data),
            "--out",
            s(&b),
            "--config",
            s(&resolved)
        ]),
        0
    );
    for f in ["ckpt", "metrics.csv", "config.toml", "diagnostics.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn generator_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(graphlog(&["generate", "--out", s(&a), "--seed", "5"]), 0);
    assert_eq!(
        graphlog(&[
            "generate",
            "--spec",
            s(&a.join("config.toml")),
            "--out",
            s(&b)
        ]),
        0
    );
    assert_eq!(
        fs::read(a.join("graphs.jsonl")).unwrap(),
        fs::read(b.join("graphs.jsonl")).unwrap()
    );
}

#[test]
fn missing_data_is_exit_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("nope");
    assert_eq!(
        graphlog(&["pretrain", "--data", s(&missing), "--out", s(&out)]),
        2
    );
    assert!(!out.exists());
}

#[test]
fn usage_errors_are_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        graphlog(&["pretrain", "--data", "x", "--out", s(&out), "--bogus"]),
        1
    );
    assert_eq!(graphlog(&["frobnicate"]), 1);
    assert_eq!(graphlog(&["pretrain", "--out", s(&out)]), 1);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[pretrain]\nbatch_size = 1\n").unwrap();
    assert_eq!(
        graphlog(&[
            "pretrain",
            "--data",
            "x",
            "--out",
            s(&out),
            "--config",
            s(&bad)
        ]),
        1
    );
    fs::write(&bad, "unknown_key = 3\n").unwrap();
    assert_eq!(
        graphlog(&[
            "pretrain",
            "--data",
            "x",
            "--out",
            s(&out),
            "--config",
            s(&bad)
        ]),
        1
    );
    assert!(!out.exists());
}

#[test]
fn numeric_failure_under_strict_mode_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let mut c = config();
    c.pretrain.lr = 1e300;
    let cfg = dir.path().join("hot.toml");
    fs::write(&cfg, c.to_toml()).unwrap();
    let out = dir.path().join("run");
    let args = [
        "pretrain",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--config",
        s(&cfg),
        "--strict-numerics",
    ];
    assert_eq!(graphlog(&args), 3);
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let ck = dir.path().join("ckpt");
    fs::write(&ck, b"GLOG garbage").unwrap();
    assert_eq!(
        graphlog(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]),
        2
    );
}
