//! Local-instance objectives: contrast correlated graph / subgraph pairs
//! against negatives built by substitution, using raw cosine similarity
//! differences (no temperature).

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Embeddings of a batch `G` and its masked counterpart `G'`. Row `i` of
/// `graphs` and row `i` of `graphs_masked` form a correlated pair; the same
/// holds for node rows.
#[derive(Clone, Debug)]
pub struct LocalBatchView {
    pub graphs: Var,
    pub graphs_masked: Var,
    pub nodes: Var,
    pub nodes_masked: Var,
    /// Node prefix sums per graph, length `num_graphs + 1`.
    pub offsets: Vec<usize>,
}

impl LocalBatchView {
    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalConfig {
    /// Negatives drawn per positive pair.
    pub neg_per_positive: usize,
    /// Node positives sampled per graph: `min(num_nodes, nodes_per_graph)`.
    pub nodes_per_graph: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            neg_per_positive: 1,
            nodes_per_graph: 8,
        }
    }
}

/// Negative graph pairs `(j, i)`: embedding of graph `j` in `G` against graph `i` in `G'`.
pub fn sample_graph_negatives<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::invalid(
            "graph loss needs at least two graphs in the batch",
        ));
    }
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        for _ in 0..k {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            out.push((j, i));
        }
    }
    Ok(out)
}

/// Sampled subgraph positives (node indices into the batch) and negatives
/// `(v, w)`: node `v` of `G` against node `w != v` of `G'`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubgraphPairs {
    pub positives: Vec<usize>,
    pub negatives: Vec<(usize, usize)>,
    /// Negatives that had to come from another graph because the positive's graph has one node.
    pub fallbacks: usize,
}

pub fn sample_subgraph_pairs<R: Rng + ?Sized>(
    offsets: &[usize],
    cfg: &LocalConfig,
    rng: &mut R,
) -> SubgraphPairs {
    let n_graphs = offsets.len() - 1;
    let mut pairs = SubgraphPairs::default();
    for g in 0..n_graphs {
        let (base, size) = (offsets[g], offsets[g + 1] - offsets[g]);
        let take = size.min(cfg.nodes_per_graph);
        let mut chosen = index::sample(rng, size, take).into_vec();
        chosen.sort_unstable();
        for u in chosen {
            let v = base + u;
            pairs.positives.push(v);
            for _ in 0..cfg.neg_per_positive {
                if size >= 2 {
                    let mut w = rng.random_range(0..size - 1);
                    if w >= u {
                        w += 1;
                    }
                    pairs.negatives.push((v, base + w));
                } else if n_graphs >= 2 {
                    let mut h = rng.random_range(0..n_graphs - 1);
                    if h >= g {
                        h += 1;
                    }
                    let w = offsets[h] + rng.random_range(0..offsets[h + 1] - offsets[h]);
                    pairs.negatives.push((v, w));
                    pairs.fallbacks += 1;
                }
            }
        }
    }
    pairs
}

/// `mean(s(neg)) - mean(s(pos))` over the given rows.
fn contrast(
    tape: &mut Tape,
    a: Var,
    b: Var,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> Result<Var> {
    let (pa, pb): (Vec<usize>, Vec<usize>) = positives.iter().copied().unzip();
    let xa = tape.row_gather(a, &pa)?;
    let xb = tape.row_gather(b, &pb)?;
    let pos = tape.cosine_rows(xa, xb)?;
    let pos = tape.mean(pos)?;
    if negatives.is_empty() {
        return tape.scale(pos, -1.0);
    }
    let (na, nb): (Vec<usize>, Vec<usize>) = negatives.iter().copied().unzip();
    let ya = tape.row_gather(a, &na)?;
    let yb = tape.row_gather(b, &nb)?;
    let neg = tape.cosine_rows(ya, yb)?;
    let neg = tape.mean(neg)?;
    tape.sub(neg, pos)
}

/// Graph-level loss for explicit negative pairs.
pub fn graph_loss_with(
    tape: &mut Tape,
    view: &LocalBatchView,
    negatives: &[(usize, usize)],
) -> Result<Var> {
    let positives: Vec<_> = (0..view.num_graphs()).map(|i| (i, i)).collect();
    contrast(tape, view.graphs, view.graphs_masked, &positives, negatives)
}

/// Subgraph-level loss for explicit pairs.
pub fn subgraph_loss_with(
    tape: &mut Tape,
    view: &LocalBatchView,
    pairs: &SubgraphPairs,
) -> Result<Var> {
    let positives: Vec<_> = pairs.positives.iter().map(|&v| (v, v)).collect();
    contrast(
        tape,
        view.nodes,
        view.nodes_masked,
        &positives,
        &pairs.negatives,
    )
}

/// Mean over positives of `s(h_{G_j}, h_{G'_i}) - s(h_{G_i}, h_{G'_i})`, with
/// `j != i` drawn uniformly from the batch.
pub fn graph_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    view: &LocalBatchView,
    cfg: &LocalConfig,
    rng: &mut R,
) -> Result<Var> {
    let negatives = sample_graph_negatives(view.num_graphs(), cfg.neg_per_positive, rng)?;
    graph_loss_with(tape, view, &negatives)
}

/// Same contrast over node (subgraph) embeddings; negatives stay inside the
/// positive's graph unless that graph has a single node.
pub fn subgraph_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    view: &LocalBatchView,
    cfg: &LocalConfig,
    rng: &mut R,
) -> Result<Var> {
    let pairs = sample_subgraph_pairs(&view.offsets, cfg, rng);
    subgraph_loss_with(tape, view, &pairs)
}

#[derive(Clone, Copy, Debug)]
pub struct LocalLoss {
    pub total: Var,
    pub graph: Var,
    pub sub: Var,
}

/// `L_graph + L_sub`.
pub fn local_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    view: &LocalBatchView,
    cfg: &LocalConfig,
    rng: &mut R,
) -> Result<LocalLoss> {
    let graph = graph_loss(tape, view, cfg, rng)?;
    let sub = subgraph_loss(tape, view, cfg, rng)?;
    let total = tape.add(graph, sub)?;
    Ok(LocalLoss { total, graph, sub })
}
