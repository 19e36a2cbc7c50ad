//! Encode graphs with the GIN encoder and show that graph embeddings ignore
//! node order.
//!
//! cargo run --example gin_encoder

use graphlog::gin::GinParams;
use graphlog::graph::{AttrSchema, Graph, GraphBatch};
use graphlog::rng::{substream, Purpose};
use graphlog::tensor::{ParamSet, Tape};

fn main() -> graphlog::Result<()> {
    let schema = AttrSchema {
        node_vocab: vec![4],
        edge_vocab: vec![2],
    };
    // a triangle with a tail, and the same graph with its nodes relabelled
    let g = Graph::new(
        4,
        &[(0, 1), (1, 2), (2, 0), (2, 3)],
        vec![vec![0], vec![1], vec![2], vec![3]],
        vec![vec![0], vec![0], vec![1], vec![1]],
    )?;
    let h = Graph::new(
        4,
        &[(3, 2), (2, 1), (1, 3), (1, 0)],
        vec![vec![3], vec![2], vec![1], vec![0]],
        vec![vec![0], vec![0], vec![1], vec![1]],
    )?;
    let path = Graph::new(
        3,
        &[(0, 1), (1, 2)],
        vec![vec![0], vec![1], vec![2]],
        vec![vec![0], vec![0]],
    )?;

    let mut params = ParamSet::new();
    let gin = GinParams::init(
        &mut params,
        &schema,
        3,
        16,
        &mut substream(1, Purpose::Init, 0, 0),
    )?;
    println!("{} layers, {} parameters", gin.num_layers(), params.numel());

    let batch = GraphBatch::new([&g, &h, &path])?;
    let mut tape = Tape::new();
    let enc = gin.encode(&mut tape, &params, &batch)?;
    let emb = tape.value(enc.graphs);
    println!(
        "node embeddings {:?}, graph embeddings {:?}",
        tape.shape(enc.nodes),
        emb.shape()
    );

    let gap = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    println!(
        "relabelled copy differs by {:.1e}",
        gap(emb.row(0), emb.row(1))
    );
    println!("the path differs by {:.3}", gap(emb.row(0), emb.row(2)));

    // the no-tape path used for whole-dataset embedding agrees
    let direct = gin.embed_graphs(&params, &[g, h, path], 2)?;
    println!(
        "chunked embedding agrees to {:.1e}",
        gap(direct.data(), emb.data())
    );
    Ok(())
}
