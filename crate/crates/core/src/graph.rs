//! Attributed undirected graphs, disjoint-union batching and attribute masking.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary size of every categorical attribute slot. Index `vocab[s]`
/// itself is reserved as the mask token for slot `s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrSchema {
    pub node_vocab: Vec<usize>,
    pub edge_vocab: Vec<usize>,
}

impl AttrSchema {
    pub fn node_slots(&self) -> usize {
        self.node_vocab.len()
    }

    pub fn edge_slots(&self) -> usize {
        self.edge_vocab.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    #[default]
    Node,
    Edge,
}

/// An undirected graph stored as symmetric directed pairs: directed edges
/// `2i` and `2i + 1` are the two orientations of undirected edge `i` and
/// share attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_attrs: Vec<Vec<usize>>,
    edge_attrs: Vec<Vec<usize>>,
    /// Per-task binary labels; `None` entries are missing.
    pub label: Option<Vec<Option<bool>>>,
    /// Class path from the coarsest level down to the leaf class, when known.
    pub classes: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from undirected edges listed once.
    pub fn new(
        num_nodes: usize,
        undirected: &[(usize, usize)],
        node_attrs: Vec<Vec<usize>>,
        undirected_attrs: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::invalid("graph must have at least one node"));
        }
        if node_attrs.len() != num_nodes {
            return Err(Error::invalid(format!(
                "{} node attribute rows for {num_nodes} nodes",
                node_attrs.len()
            )));
        }
        if undirected_attrs.len() != undirected.len() {
            return Err(Error::invalid(format!(
                "{} edge attribute rows for {} edges",
                undirected_attrs.len(),
                undirected.len()
            )));
        }
        let mut edges = Vec::with_capacity(undirected.len() * 2);
        let mut edge_attrs = Vec::with_capacity(undirected.len() * 2);
        for (&(u, v), a) in undirected.iter().zip(undirected_attrs) {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::invalid(format!("self loop at node {u}")));
            }
            edges.push((u, v));
            edges.push((v, u));
            edge_attrs.push(a.clone());
            edge_attrs.push(a);
        }
        let g = Self {
            num_nodes,
            edges,
            node_attrs,
            edge_attrs,
            label: None,
            classes: None,
        };
        g.check_slot_widths()?;
        Ok(g)
    }

    fn check_slot_widths(&self) -> Result<()> {
        let kv = self.node_attrs[0].len();
        if self.node_attrs.iter().any(|a| a.len() != kv) {
            return Err(Error::invalid("node attribute rows differ in width"));
        }
        if let Some(first) = self.edge_attrs.first() {
            if self.edge_attrs.iter().any(|a| a.len() != first.len()) {
                return Err(Error::invalid("edge attribute rows differ in width"));
            }
        }
        Ok(())
    }

    pub fn with_label(mut self, label: Vec<Option<bool>>) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_classes(mut self, classes: Vec<usize>) -> Self {
        self.classes = Some(classes);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Directed edges (each undirected edge appears in both orientations).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_undirected_edges(&self) -> usize {
        self.edges.len() / 2
    }

    /// Undirected edges in storage order, as `(u, v)` with the orientation they were given.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().step_by(2).copied()
    }

    pub fn undirected_edge_attrs(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.edge_attrs.iter().step_by(2).map(Vec::as_slice)
    }

    pub fn node_attrs(&self) -> &[Vec<usize>] {
        &self.node_attrs
    }

    pub fn edge_attrs(&self) -> &[Vec<usize>] {
        &self.edge_attrs
    }

    pub fn node_attrs_mut(&mut self) -> &mut [Vec<usize>] {
        &mut self.node_attrs
    }

    /// Sets the attributes of undirected edge `i` (both orientations).
    pub fn set_edge_attrs(&mut self, i: usize, attrs: Vec<usize>) {
        self.edge_attrs[2 * i + 1] = attrs.clone();
        self.edge_attrs[2 * i] = attrs;
    }

    /// Neighbour lists derived from the directed edge list.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
        }
        adj
    }

    /// Checks structure and every attribute against `schema`.
    pub fn validate(&self, schema: &AttrSchema, index: usize) -> Result<()> {
        let bad = |msg: String| Error::InvalidGraph { graph: index, msg };
        if !self.edges.len().is_multiple_of(2) {
            return Err(bad("odd number of directed edges".into()));
        }
        for (pair, attrs) in self
            .edges
            .chunks_exact(2)
            .zip(self.edge_attrs.chunks_exact(2))
        {
            let ((u, v), (a, b)) = (pair[0], pair[1]);
            if u >= self.num_nodes || v >= self.num_nodes {
                return Err(bad(format!("edge ({u}, {v}) out of range")));
            }
            if (a, b) != (v, u) || attrs[0] != attrs[1] {
                return Err(bad(format!("edge ({u}, {v}) lacks a symmetric twin")));
            }
        }
        for (v, attrs) in self.node_attrs.iter().enumerate() {
            check_slots(attrs, &schema.node_vocab).map_err(|(slot, value)| {
                bad(format!(
                    "node {v} slot {slot}: value {value} outside vocabulary {}",
                    schema.node_vocab[slot]
                ))
            })?;
            if attrs.len() != schema.node_slots() {
                return Err(bad(format!(
                    "node {v} has {} slots, expected {}",
                    attrs.len(),
                    schema.node_slots()
                )));
            }
        }
        for (e, attrs) in self.edge_attrs.iter().enumerate() {
            if attrs.len() != schema.edge_slots() {
                return Err(bad(format!(
                    "edge {} has {} slots, expected {}",
                    e / 2,
                    attrs.len(),
                    schema.edge_slots()
                )));
            }
            check_slots(attrs, &schema.edge_vocab).map_err(|(slot, value)| {
                bad(format!(
                    "edge {} slot {slot}: value {value} outside vocabulary {}",
                    e / 2,
                    schema.edge_vocab[slot]
                ))
            })?;
        }
        Ok(())
    }
}

/// Returns the first (slot, value) that is neither in range nor the mask index.
fn check_slots(attrs: &[usize], vocab: &[usize]) -> std::result::Result<(), (usize, usize)> {
    for (slot, (&a, &v)) in attrs.iter().zip(vocab).enumerate() {
        if a > v {
            return Err((slot, a));
        }
    }
    Ok(())
}

/// Number of entities masked at `rate`: `floor(rate * count)`. The small
/// slack absorbs representation error such as `0.3 * 10 = 2.9999...`.
pub fn mask_count(rate: f64, count: usize) -> usize {
    ((rate * count as f64) + 1e-9).floor() as usize
}

/// Returns a copy of `g` in which `floor(rate * count)` uniformly chosen
/// nodes (or undirected edges) have every attribute slot set to the mask index.
pub fn mask_attributes<R: Rng + ?Sized>(
    g: &Graph,
    rate: f64,
    mode: MaskMode,
    schema: &AttrSchema,
    rng: &mut R,
) -> Graph {
    debug_assert!((0.0..=1.0).contains(&rate));
    let mut out = g.clone();
    match mode {
        MaskMode::Node => {
            let k = mask_count(rate, g.num_nodes);
            for v in index::sample(rng, g.num_nodes, k) {
                out.node_attrs[v].clone_from(&schema.node_vocab);
            }
        }
        MaskMode::Edge => {
            let m = g.num_undirected_edges();
            let k = mask_count(rate, m);
            for e in index::sample(rng, m, k) {
                out.set_edge_attrs(e, schema.edge_vocab.clone());
            }
        }
    }
    out
}

/// `(g, g')` where `g'` is `g` with attributes masked; node `v` of `g`
/// corresponds to node `v` of `g'`.
pub fn make_correlated_pair<R: Rng + ?Sized>(
    g: &Graph,
    rate: f64,
    mode: MaskMode,
    schema: &AttrSchema,
    rng: &mut R,
) -> (Graph, Graph) {
    (g.clone(), mask_attributes(g, rate, mode, schema, rng))
}

/// Disjoint union of several graphs with node and edge indices shifted.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    node_slots: usize,
    edge_slots: usize,
    /// Flat `[num_nodes, node_slots]`.
    node_attrs: Vec<usize>,
    edge_src: Vec<usize>,
    edge_dst: Vec<usize>,
    /// Flat `[num_edges, edge_slots]`.
    edge_attrs: Vec<usize>,
    graph_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    node_graph: Vec<usize>,
    labels: Vec<Option<Vec<Option<bool>>>>,
    classes: Vec<Option<Vec<usize>>>,
}

impl GraphBatch {
    pub fn new<'a, I>(graphs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Graph>,
    {
        let graphs: Vec<&Graph> = graphs.into_iter().collect();
        let first = graphs
            .first()
            .ok_or_else(|| Error::invalid("cannot batch an empty sequence of graphs"))?;
        let node_slots = first.node_attrs[0].len();
        let edge_slots = graphs
            .iter()
            .find_map(|g| g.edge_attrs.first())
            .map_or(0, Vec::len);
        let mut b = Self {
            node_slots,
            edge_slots,
            node_attrs: Vec::new(),
            edge_src: Vec::new(),
            edge_dst: Vec::new(),
            edge_attrs: Vec::new(),
            graph_offsets: vec![0],
            edge_offsets: vec![0],
            node_graph: Vec::new(),
            labels: Vec::new(),
            classes: Vec::new(),
        };
        for (gi, g) in graphs.into_iter().enumerate() {
            let base = *b.graph_offsets.last().unwrap();
            if g.node_attrs[0].len() != node_slots
                || g.edge_attrs.first().is_some_and(|a| a.len() != edge_slots)
            {
                return Err(Error::InvalidGraph {
                    graph: gi,
                    msg: "attribute slot count differs from the rest of the batch".into(),
                });
            }
            for attrs in &g.node_attrs {
                b.node_attrs.extend_from_slice(attrs);
            }
            for (&(u, v), attrs) in g.edges.iter().zip(&g.edge_attrs) {
                b.edge_src.push(base + u);
                b.edge_dst.push(base + v);
                b.edge_attrs.extend_from_slice(attrs);
            }
            b.node_graph.extend(std::iter::repeat_n(gi, g.num_nodes));
            b.graph_offsets.push(base + g.num_nodes);
            b.edge_offsets.push(b.edge_src.len());
            b.labels.push(g.label.clone());
            b.classes.push(g.classes.clone());
        }
        Ok(b)
    }

    pub fn num_graphs(&self) -> usize {
        self.graph_offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        *self.graph_offsets.last().unwrap()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn node_slots(&self) -> usize {
        self.node_slots
    }

    pub fn edge_slots(&self) -> usize {
        self.edge_slots
    }

    /// Prefix sums of node counts; `graph_offsets()[i]..graph_offsets()[i+1]` are graph `i`'s nodes.
    pub fn graph_offsets(&self) -> &[usize] {
        &self.graph_offsets
    }

    /// Source graph of every node.
    pub fn node_graph(&self) -> &[usize] {
        &self.node_graph
    }

    pub fn node_attr(&self, node: usize, slot: usize) -> usize {
        self.node_attrs[node * self.node_slots + slot]
    }

    pub fn edge_attr(&self, edge: usize, slot: usize) -> usize {
        self.edge_attrs[edge * self.edge_slots + slot]
    }

    pub fn edge_src(&self) -> &[usize] {
        &self.edge_src
    }

    pub fn edge_dst(&self) -> &[usize] {
        &self.edge_dst
    }

    pub fn graph_size(&self, g: usize) -> usize {
        self.graph_offsets[g + 1] - self.graph_offsets[g]
    }

    /// Splits the batch back into its source graphs.
    pub fn unbatch(&self) -> Vec<Graph> {
        (0..self.num_graphs())
            .map(|gi| {
                let (n0, n1) = (self.graph_offsets[gi], self.graph_offsets[gi + 1]);
                let (e0, e1) = (self.edge_offsets[gi], self.edge_offsets[gi + 1]);
                Graph {
                    num_nodes: n1 - n0,
                    edges: (e0..e1)
                        .map(|e| (self.edge_src[e] - n0, self.edge_dst[e] - n0))
                        .collect(),
                    node_attrs: (n0..n1)
                        .map(|v| {
                            self.node_attrs[v * self.node_slots..(v + 1) * self.node_slots].to_vec()
                        })
                        .collect(),
                    edge_attrs: (e0..e1)
                        .map(|e| {
                            self.edge_attrs[e * self.edge_slots..(e + 1) * self.edge_slots].to_vec()
                        })
                        .collect(),
                    label: self.labels[gi].clone(),
                    classes: self.classes[gi].clone(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> AttrSchema {
        AttrSchema {
            node_vocab: vec![5, 3],
            edge_vocab: vec![4],
        }
    }

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        let attrs = (0..n).map(|i| vec![i % 5, i % 3]).collect();
        let eattrs = (1..n).map(|i| vec![i % 4]).collect();
        Graph::new(n, &edges, attrs, eattrs).unwrap()
    }

    fn masked_nodes(g: &Graph, s: &AttrSchema) -> usize {
        g.node_attrs()
            .iter()
            .filter(|a| **a == s.node_vocab)
            .count()
    }

    #[test]
    fn thirty_percent_of_ten_nodes() {
        let s = schema();
        let g = path(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = mask_attributes(&g, 0.3, MaskMode::Node, &s, &mut rng);
        assert_eq!(masked_nodes(&m, &s), 3);
        assert_eq!(m.edges(), g.edges());
        m.validate(&s, 0).unwrap();
    }

    #[test]
    fn zero_rate_and_tiny_graph() {
        let s = schema();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = path(7);
        assert_eq!(mask_attributes(&g, 0.0, MaskMode::Node, &s, &mut rng), g);
        let one = path(1);
        assert_eq!(
            masked_nodes(
                &mask_attributes(&one, 0.3, MaskMode::Node, &s, &mut rng),
                &s
            ),
            0
        );
    }

    #[test]
    fn edge_mask_keeps_twins_consistent() {
        let s = schema();
        let g = path(11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = mask_attributes(&g, 0.3, MaskMode::Edge, &s, &mut rng);
        m.validate(&s, 0).unwrap();
        let masked = m
            .edge_attrs()
            .iter()
            .filter(|a| **a == s.edge_vocab)
            .count();
        assert_eq!(masked, 2 * 3);
        assert_eq!(m.node_attrs(), g.node_attrs());
    }

    #[test]
    fn correlated_pair_is_deterministic() {
        let s = schema();
        let g = path(20);
        let a = make_correlated_pair(
            &g,
            0.3,
            MaskMode::Node,
            &s,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        let b = make_correlated_pair(
            &g,
            0.3,
            MaskMode::Node,
            &s,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        assert_eq!(a, b);
        assert_eq!(a.0, g);
        assert_eq!(masked_nodes(&a.1, &s), 6);
        assert_eq!(a.1.num_nodes(), g.num_nodes());
    }

    #[test]
    fn batch_offsets() {
        let (a, b) = (path(3), path(3));
        let bt = GraphBatch::new([&a, &b]).unwrap();
        assert_eq!(bt.graph_offsets(), &[0, 3, 6]);
        let single = GraphBatch::new([&a]).unwrap();
        assert_eq!(single.graph_offsets(), &[0, 3]);
        assert_eq!(single.unbatch(), vec![a.clone()]);
        assert!(GraphBatch::new(std::iter::empty()).is_err());
    }

    #[test]
    fn node_graph_map_matches_prefix_sums() {
        let gs = [path(2), path(5), path(1)];
        let bt = GraphBatch::new(&gs).unwrap();
        // brute force: graph i owns sizes[..i].sum() .. sizes[..=i].sum()
        let sizes = [2, 5, 1];
        let mut expected = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            expected.extend(std::iter::repeat_n(i, n));
        }
        assert_eq!(bt.node_graph(), expected.as_slice());
        assert_eq!(expected, vec![0, 0, 1, 1, 1, 1, 1, 2]);
        for e in 0..bt.num_edges() {
            assert_eq!(
                bt.node_graph()[bt.edge_src()[e]],
                bt.node_graph()[bt.edge_dst()[e]]
            );
        }
    }

    #[test]
    fn validation_rejects_out_of_vocab() {
        let s = schema();
        let g = Graph::new(2, &[(0, 1)], vec![vec![6, 0], vec![0, 0]], vec![vec![0]]).unwrap();
        let err = g.validate(&s, 7).unwrap_err().to_string();
        assert!(err.contains("graph 7") && err.contains("slot 0"), "{err}");
        // the mask index itself is legal
        let g = Graph::new(2, &[(0, 1)], vec![vec![5, 3], vec![0, 0]], vec![vec![4]]).unwrap();
        g.validate(&s, 0).unwrap();
    }
}
