//! Interrupt pre-training mid-epoch, save a checkpoint, resume from it and
//! check the result is bit-identical to an uninterrupted run.
//!
//! cargo run --release --example checkpoint_resume

use graphlog::checkpoint::Checkpoint;
use graphlog::config::TrainConfig;
use graphlog::data::{generate_synthetic, SyntheticSpec};
use graphlog::trainer::Pretrainer;

fn main() -> graphlog::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec {
        branching: vec![2, 2],
        graphs_per_leaf: 20,
        seed: 3,
        ..SyntheticSpec::default()
    })?;
    let mut cfg = TrainConfig::desk();
    cfg.global.k_per_layer = vec![2, 4];
    cfg.pretrain.batch_size = 16;
    cfg.pretrain.epochs_joint = 3;

    let mut full = Pretrainer::new(cfg.clone(), &ds.graphs, &ds.schema())?;
    full.run()?;

    let path = std::env::temp_dir().join("graphlog-example.ckpt");
    let mut first = Pretrainer::new(cfg, &ds.graphs, &ds.schema())?;
    first.run_steps(8)?;
    first.checkpoint().save(&path)?;
    println!(
        "stopped at {:?}, checkpoint {} bytes",
        first.progress,
        std::fs::metadata(&path)?.len()
    );

    let ck = Checkpoint::load(&path)?;
    let mut resumed = Pretrainer::from_checkpoint(ck, &ds.graphs, &ds.schema())?;
    resumed.run()?;

    let same = full.checkpoint().to_bytes() == resumed.checkpoint().to_bytes();
    println!("resumed run matches the uninterrupted one bit for bit: {same}");
    Ok(())
}
