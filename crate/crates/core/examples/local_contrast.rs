//! Local-instance contrast: graphs against their masked counterparts, and
//! node neighbourhoods against the same nodes after masking.
//!
//! cargo run --example local_contrast

use graphlog::data::{generate_synthetic, SyntheticSpec};
use graphlog::gin::GinParams;
use graphlog::graph::{mask_attributes, GraphBatch, MaskMode};
use graphlog::local::{local_loss, LocalBatchView, LocalConfig};
use graphlog::optim::{Adam, AdamConfig};
use graphlog::rng::{substream, Purpose};
use graphlog::tensor::{ParamSet, Tape};

fn main() -> graphlog::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec {
        branching: vec![2, 2],
        graphs_per_leaf: 4,
        ..SyntheticSpec::default()
    })?;
    let schema = ds.schema();
    let mut params = ParamSet::new();
    let gin = GinParams::init(
        &mut params,
        &schema,
        2,
        32,
        &mut substream(0, Purpose::Init, 0, 0),
    )?;
    let ids = gin.param_ids();
    let cfg = LocalConfig::default();
    let mut adam = Adam::new(AdamConfig::default());

    let batch = GraphBatch::new(&ds.graphs)?;
    for step in 0..30u64 {
        let mut rng = substream(0, Purpose::Mask, step, 0);
        let masked: Vec<_> = ds
            .graphs
            .iter()
            .map(|g| mask_attributes(g, 0.3, MaskMode::Node, &schema, &mut rng))
            .collect();
        let masked = GraphBatch::new(&masked)?;

        let mut tape = Tape::new();
        let clean = gin.encode(&mut tape, &params, &batch)?;
        let noisy = gin.encode(&mut tape, &params, &masked)?;
        let view = LocalBatchView {
            graphs: clean.graphs,
            graphs_masked: noisy.graphs,
            nodes: clean.nodes,
            nodes_masked: noisy.nodes,
            offsets: batch.graph_offsets().to_vec(),
        };
        let loss = local_loss(
            &mut tape,
            &view,
            &cfg,
            &mut substream(0, Purpose::Local, step, 0),
        )?;
        if step % 5 == 0 {
            println!(
                "step {step:>2}: graph {:+.4}  sub {:+.4}",
                tape.item(loss.graph),
                tape.item(loss.sub)
            );
        }
        params.zero_grad();
        tape.backward(loss.total, &mut params)?;
        adam.step(&mut params, &ids, 5e-3, false)?;
    }
    Ok(())
}
