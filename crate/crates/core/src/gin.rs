//! GIN encoder: categorical embedding tables, sum aggregation with edge
//! embeddings added to neighbour messages, two-layer MLP updates and a mean
//! readout.
//!
//! Layer `l` computes
//! `h_v = MLP_l(h_v + sum_{u in N(v)} (h_u + e_uv))` with `eps = 0`, where
//! `MLP_l(x) = relu(x W1 + b1) W2 + b2`. The final-layer `h_v` is the
//! subgraph embedding of the `L`-hop ego-network around `v`; the graph
//! embedding is the mean of its nodes' final-layer embeddings.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{AttrSchema, Graph, GraphBatch};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

/// Standard deviation of the embedding table initialisation.
pub const EMBED_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct GinLayer {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Handles into a [`ParamSet`] describing one GIN encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct GinParams {
    pub schema: AttrSchema,
    pub hidden: usize,
    /// One `(vocab + 1) x d` table per node attribute slot.
    pub node_tables: Vec<ParamId>,
    /// One `(vocab + 1) x d` table per edge attribute slot.
    pub edge_tables: Vec<ParamId>,
    pub layers: Vec<GinLayer>,
}

/// Output of [`GinParams::encode`].
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[num_nodes, d]` final-layer node (subgraph) embeddings.
    pub nodes: Var,
    /// `[num_graphs, d]` mean-pooled graph embeddings.
    pub graphs: Var,
}

impl GinParams {
    /// Registers freshly initialised encoder parameters in `params`.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        schema: &AttrSchema,
        layers: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init_with_std(params, schema, layers, hidden, EMBED_INIT_STD, rng)
    }

    /// As [`GinParams::init`] with an explicit embedding-table std.
    pub fn init_with_std<R: Rng + ?Sized>(
        params: &mut ParamSet,
        schema: &AttrSchema,
        layers: usize,
        hidden: usize,
        table_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return Err(Error::invalid(
                "GIN needs at least one layer and a positive width",
            ));
        }
        let normal =
            Normal::new(0.0, table_std).map_err(|e| Error::invalid(format!("table std: {e}")))?;
        let bound = 1.0 / (hidden as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        let table = |params: &mut ParamSet, name: String, rows: usize, rng: &mut R| {
            let data = (0..rows * hidden).map(|_| normal.sample(rng)).collect();
            params.add(
                name,
                Tensor::matrix(rows, hidden, data).expect("positive dims"),
            )
        };
        let node_tables = schema
            .node_vocab
            .iter()
            .enumerate()
            .map(|(s, &v)| table(params, format!("gin.node_table.{s}"), v + 1, rng))
            .collect();
        let edge_tables = schema
            .edge_vocab
            .iter()
            .enumerate()
            .map(|(s, &v)| table(params, format!("gin.edge_table.{s}"), v + 1, rng))
            .collect();
        let affine = |params: &mut ParamSet, name: String, shape: Vec<usize>, rng: &mut R| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| uniform.sample(rng)).collect();
            params.add(name, Tensor::new(shape, data).expect("positive dims"))
        };
        let layers = (0..layers)
            .map(|l| GinLayer {
                w1: affine(
                    params,
                    format!("gin.layer{l}.w1"),
                    vec![hidden, hidden],
                    rng,
                ),
                b1: affine(params, format!("gin.layer{l}.b1"), vec![hidden], rng),
                w2: affine(
                    params,
                    format!("gin.layer{l}.w2"),
                    vec![hidden, hidden],
                    rng,
                ),
                b2: affine(params, format!("gin.layer{l}.b2"), vec![hidden], rng),
            })
            .collect();
        Ok(Self {
            schema: schema.clone(),
            hidden,
            node_tables,
            edge_tables,
            layers,
        })
    }

    /// Rebinds to parameters registered earlier under the names `init` uses.
    pub fn attach(
        params: &ParamSet,
        schema: &AttrSchema,
        layers: usize,
        hidden: usize,
    ) -> Result<Self> {
        let find = |name: String, shape: &[usize]| -> Result<ParamId> {
            let id = params
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.get(id).shape()
                )));
            }
            Ok(id)
        };
        let node_tables = (schema.node_vocab.iter().enumerate())
            .map(|(s, &v)| find(format!("gin.node_table.{s}"), &[v + 1, hidden]))
            .collect::<Result<_>>()?;
        let edge_tables = (schema.edge_vocab.iter().enumerate())
            .map(|(s, &v)| find(format!("gin.edge_table.{s}"), &[v + 1, hidden]))
            .collect::<Result<_>>()?;
        let layers = (0..layers)
            .map(|l| {
                Ok(GinLayer {
                    w1: find(format!("gin.layer{l}.w1"), &[hidden, hidden])?,
                    b1: find(format!("gin.layer{l}.b1"), &[hidden])?,
                    w2: find(format!("gin.layer{l}.w2"), &[hidden, hidden])?,
                    b2: find(format!("gin.layer{l}.b2"), &[hidden])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schema: schema.clone(),
            hidden,
            node_tables,
            edge_tables,
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Every parameter handle, in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .node_tables
            .iter()
            .chain(&self.edge_tables)
            .copied()
            .collect();
        for l in &self.layers {
            ids.extend([l.w1, l.b1, l.w2, l.b2]);
        }
        ids
    }

    fn check_attrs(&self, batch: &GraphBatch) -> Result<()> {
        if batch.node_slots() != self.schema.node_slots() {
            return Err(Error::invalid(format!(
                "batch has {} node slots, encoder expects {}",
                batch.node_slots(),
                self.schema.node_slots()
            )));
        }
        for v in 0..batch.num_nodes() {
            for (slot, &vocab) in self.schema.node_vocab.iter().enumerate() {
                let value = batch.node_attr(v, slot);
                if value > vocab {
                    return Err(Error::AttributeOutOfRange {
                        node: v,
                        slot,
                        value,
                        rows: vocab + 1,
                    });
                }
            }
        }
        if batch.num_edges() > 0 && batch.edge_slots() != self.schema.edge_slots() {
            return Err(Error::invalid(format!(
                "batch has {} edge slots, encoder expects {}",
                batch.edge_slots(),
                self.schema.edge_slots()
            )));
        }
        for e in 0..batch.num_edges() {
            for (slot, &vocab) in self.schema.edge_vocab.iter().enumerate() {
                let value = batch.edge_attr(e, slot);
                if value > vocab {
                    return Err(Error::invalid(format!(
                        "edge {e} ({} -> {}), slot {slot}: attribute index {value} out of range (table has {} rows)",
                        batch.edge_src()[e],
                        batch.edge_dst()[e],
                        vocab + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Records the forward pass of the encoder on `tape`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        batch: &GraphBatch,
    ) -> Result<Encoded> {
        self.check_attrs(batch)?;
        let n = batch.num_nodes();

        let mut h: Option<Var> = None;
        for (slot, &table) in self.node_tables.iter().enumerate() {
            let t = tape.param(params, table)?;
            let idx: Vec<usize> = (0..n).map(|v| batch.node_attr(v, slot)).collect();
            let rows = tape.row_gather(t, &idx)?;
            h = Some(match h {
                Some(acc) => tape.add(acc, rows)?,
                None => rows,
            });
        }
        let mut h = match h {
            Some(h) => h,
            None => tape.constant(Tensor::zeros(vec![n, self.hidden]))?,
        };

        let m = batch.num_edges();
        let mut edge_emb: Option<Var> = None;
        if m > 0 {
            for (slot, &table) in self.edge_tables.iter().enumerate() {
                let t = tape.param(params, table)?;
                let idx: Vec<usize> = (0..m).map(|e| batch.edge_attr(e, slot)).collect();
                let rows = tape.row_gather(t, &idx)?;
                edge_emb = Some(match edge_emb {
                    Some(acc) => tape.add(acc, rows)?,
                    None => rows,
                });
            }
        }

        for layer in &self.layers {
            let pre = if m > 0 {
                let mut msg = tape.row_gather(h, batch.edge_src())?;
                if let Some(e) = edge_emb {
                    msg = tape.add(msg, e)?;
                }
                let agg = tape.row_scatter_add(msg, batch.edge_dst(), n)?;
                tape.add(h, agg)?
            } else {
                h
            };
            let (w1, b1) = (tape.param(params, layer.w1)?, tape.param(params, layer.b1)?);
            let (w2, b2) = (tape.param(params, layer.w2)?, tape.param(params, layer.b2)?);
            let z = tape.matmul(pre, w1)?;
            let z = tape.add_row(z, b1)?;
            let z = tape.relu(z)?;
            let z = tape.matmul(z, w2)?;
            h = tape.add_row(z, b2)?;
        }

        let num_graphs = batch.num_graphs();
        let sums = tape.row_scatter_add(h, batch.node_graph(), num_graphs)?;
        let inv: Vec<f64> = (0..num_graphs)
            .map(|g| 1.0 / batch.graph_size(g) as f64)
            .collect();
        let graphs = tape.scale_rows(sums, &inv)?;
        Ok(Encoded { nodes: h, graphs })
    }

    /// Graph embeddings of `graphs` as an `[M, d]` tensor, without recording
    /// gradients. Chunks are encoded independently, so the result does not
    /// depend on the thread count.
    pub fn embed_graphs(
        &self,
        params: &ParamSet,
        graphs: &[Graph],
        chunk: usize,
    ) -> Result<Tensor> {
        let chunk = chunk.max(1);
        let parts: Vec<Vec<f64>> = graphs
            .par_chunks(chunk)
            .map(|c| -> Result<Vec<f64>> {
                let batch = GraphBatch::new(c)?;
                let mut tape = Tape::new();
                let enc = self.encode(&mut tape, params, &batch)?;
                Ok(tape.value(enc.graphs).data().to_vec())
            })
            .collect::<Result<_>>()?;
        Tensor::matrix(graphs.len(), self.hidden, parts.concat())
    }
}
