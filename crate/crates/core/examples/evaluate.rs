//! Evaluation utilities: rank-based ROC-AUC with ties, clustering agreement,
//! and a 2-d projection of graphs and prototypes written as CSV.
//!
//! cargo run --release --example evaluate -- [plot.csv]

use std::path::PathBuf;

use graphlog::config::TrainConfig;
use graphlog::data::{generate_synthetic, SyntheticSpec};
use graphlog::eval::{cluster_metrics, plot_csv, roc_auc};
use graphlog::trainer::{evaluate, projection, Pretrainer};

fn main() -> graphlog::Result<()> {
    // tied scores count half a win
    let scores = [0.9, 0.7, 0.7, 0.4, 0.7, 0.1];
    let labels = [true, true, false, true, false, false];
    println!("AUC {:?}", roc_auc(&scores, &labels));
    println!(
        "AUC with one class {:?}",
        roc_auc(&scores[..2], &labels[..2])
    );

    let (nmi, purity) = cluster_metrics(&[0, 0, 1, 1, 2, 2], &[5, 5, 6, 6, 6, 6]);
    println!("over-split clustering: NMI {nmi:.3}, purity {purity:.3}");

    let ds = generate_synthetic(&SyntheticSpec {
        branching: vec![2, 2],
        graphs_per_leaf: 30,
        seed: 4,
        ..SyntheticSpec::default()
    })?;
    let mut cfg = TrainConfig::desk();
    cfg.global.k_per_layer = vec![2, 4];
    cfg.pretrain.epochs_joint = 4;
    let mut t = Pretrainer::new(cfg.clone(), &ds.graphs, &ds.schema())?;
    t.run()?;

    let (report, warnings) = evaluate(&t.model, &ds.graphs, &cfg)?;
    println!("{}", report.to_json());
    for w in warnings {
        println!("warning: {w}");
    }

    let rows = projection(&t.model, &ds.graphs, 64)?;
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("graphlog-plot.csv"));
    std::fs::write(&out, plot_csv(&rows))?;
    println!(
        "{} points ({} prototypes) written to {}",
        rows.len(),
        rows.iter().filter(|r| r.is_prototype).count(),
        out.display()
    );
    Ok(())
}
