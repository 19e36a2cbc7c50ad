//! Full pre-training: a local-only warm-up epoch, forest initialization by
//! k-means, then joint local + global EM steps.
//!
//! cargo run --release --example pretrain

use graphlog::config::TrainConfig;
use graphlog::data::{generate_synthetic, SyntheticSpec};
use graphlog::eval::cluster_metrics;
use graphlog::trainer::{leaf_classes, Phase, Pretrainer};

fn main() -> graphlog::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec {
        graphs_per_leaf: 40,
        seed: 1,
        ..SyntheticSpec::default()
    })?;
    let mut cfg = TrainConfig::desk();
    cfg.global.k_per_layer = vec![4, 8];
    cfg.pretrain.batch_size = 40;
    cfg.pretrain.epochs_joint = 5;

    let mut t = Pretrainer::new(cfg, &ds.graphs, &ds.schema())?;
    println!(
        "{} graphs, {} epochs ({} local-only)",
        ds.len(),
        t.total_epochs(),
        t.local_epochs()
    );
    while let Some(r) = t.step()? {
        if r.step % 8 == 0
            || r.phase == Phase::Joint && t.diagnostics.as_ref().is_some_and(|d| d.steps() == 1)
        {
            println!("{}", r.csv_row());
        }
    }

    let forest = t.model.forest.as_ref().unwrap();
    let diag = t.diagnostics.as_ref().unwrap();
    println!(
        "forest sizes {:?}, {} EM steps",
        forest.sizes(),
        diag.steps()
    );
    println!("bottom-layer usage {:?}", diag.usage.last().unwrap());
    println!(
        "running log-likelihood per graph {:.3}",
        diag.running_loglik()
    );

    let h = t.model.embed(&ds.graphs, 64)?;
    let (nmi, purity) = cluster_metrics(
        &t.model.bottom_assignments(&h)?,
        &leaf_classes(&ds.graphs).unwrap(),
    );
    println!("nearest-prototype clustering vs planted leaves: NMI {nmi:.3}, purity {purity:.3}");
    Ok(())
}
