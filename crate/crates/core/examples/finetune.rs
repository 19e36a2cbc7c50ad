//! Pre-train, then fit a downstream head two ways: full fine-tuning and a
//! linear probe on the frozen encoder.
//!
//! cargo run --release --example finetune

use graphlog::config::{FinetuneMode, TrainConfig};
use graphlog::data::{generate_synthetic, Split, SyntheticSpec};
use graphlog::trainer::{finetune, Pretrainer};

fn main() -> graphlog::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec {
        graphs_per_leaf: 40,
        seed: 2,
        ..SyntheticSpec::default()
    })?;
    let (train, test) = (ds.subset(Split::Train), ds.subset(Split::Test));

    let mut cfg = TrainConfig::desk();
    cfg.global.k_per_layer = vec![4, 8];
    cfg.pretrain.epochs_joint = 4;
    cfg.finetune.epochs = 30;
    cfg.finetune.lr = 1e-2;
    let mut pre = Pretrainer::new(cfg.clone(), &ds.graphs, &ds.schema())?;
    pre.run()?;

    for mode in [FinetuneMode::Full, FinetuneMode::Probe] {
        cfg.finetune.mode = mode;
        let out = finetune(&pre.model, &train, &test, &cfg)?;
        let r = &out.report;
        println!(
            "{mode:?}: loss {:.4} -> {:.4}, test mean AUC {:.3}, accuracy {:.3}",
            out.epoch_loss[0],
            out.epoch_loss.last().unwrap(),
            r.mean_auc.unwrap_or(f64::NAN),
            r.accuracy.unwrap_or(f64::NAN)
        );
        for w in &out.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
