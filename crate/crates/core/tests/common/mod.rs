#![allow(dead_code)]

use graphlog::forest::PrototypeForest;
use graphlog::graph::{AttrSchema, Graph};
use graphlog::tensor::{ParamId, ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - n| / max(|a|, |n|, 1e-3)`: relative error, absolute below the floor.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Max relative error between backprop and central differences over every
/// element of `ids`. `f` must be deterministic in the parameter values.
pub fn grad_check<F>(params: &mut ParamSet, ids: &[ParamId], f: F) -> f64
where
    F: Fn(&mut Tape, &ParamSet) -> Var,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, params);
    tape.backward(loss, params).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| params.get(id).grad().unwrap().to_vec())
        .collect();
    let value = |p: &ParamSet| {
        let mut t = Tape::new();
        let l = f(&mut t, p);
        t.item(l)
    };
    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        for j in 0..params.get(id).numel() {
            let x = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = x + FD_STEP;
            let up = value(params);
            params.get_mut(id).data_mut()[j] = x - FD_STEP;
            let down = value(params);
            params.get_mut(id).data_mut()[j] = x;
            worst = worst.max(rel_err(analytic[k][j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn normal_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal_vec(rng, n)).unwrap()
}

/// `sum(v * r)` for a fixed random `r`: a generic scalar readout.
pub fn contract(tape: &mut Tape, v: Var, r: &Tensor) -> Var {
    let c = tape.constant(r.clone()).unwrap();
    let m = tape.mul(v, c).unwrap();
    tape.sum(m).unwrap()
}

pub fn schema() -> AttrSchema {
    AttrSchema {
        node_vocab: vec![5, 3],
        edge_vocab: vec![3],
    }
}

/// Random connected graph: a random tree plus up to `n / 2` extra edges.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, schema: &AttrSchema) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for _ in 0..n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !edges.contains(&(a, b)) && !edges.contains(&(b, a)) {
            edges.push((a, b));
        }
    }
    let node_attrs = (0..n)
        .map(|_| {
            schema
                .node_vocab
                .iter()
                .map(|&v| rng.random_range(0..v))
                .collect()
        })
        .collect();
    let edge_attrs = edges
        .iter()
        .map(|_| {
            schema
                .edge_vocab
                .iter()
                .map(|&v| rng.random_range(0..v))
                .collect()
        })
        .collect();
    Graph::new(n, &edges, node_attrs, edge_attrs).unwrap()
}

/// Relabels nodes: node `v` of `g` becomes node `perm[v]`.
pub fn permute_graph(g: &Graph, perm: &[usize]) -> Graph {
    let n = g.num_nodes();
    let mut node_attrs = vec![Vec::new(); n];
    for v in 0..n {
        node_attrs[perm[v]] = g.node_attrs()[v].clone();
    }
    let edges: Vec<(usize, usize)> = g
        .undirected_edges()
        .map(|(a, b)| (perm[a], perm[b]))
        .collect();
    let edge_attrs: Vec<Vec<usize>> = g.undirected_edge_attrs().map(<[usize]>::to_vec).collect();
    Graph::new(n, &edges, node_attrs, edge_attrs).unwrap()
}

/// Random forest with the given layer sizes (top first); every internal
/// prototype gets at least one child.
pub fn random_forest<R: Rng>(
    params: &mut ParamSet,
    rng: &mut R,
    sizes: &[usize],
    d: usize,
) -> PrototypeForest {
    let vectors: Vec<Vec<Vec<f64>>> = sizes
        .iter()
        .map(|&m| (0..m).map(|_| normal_vec(rng, d)).collect())
        .collect();
    let mut parent = vec![Vec::new()];
    for l in 1..sizes.len() {
        let above = sizes[l - 1];
        assert!(
            sizes[l] >= above,
            "each layer must be at least as wide as the one above"
        );
        let mut p: Vec<usize> = (0..sizes[l])
            .map(|i| {
                if i < above {
                    i
                } else {
                    rng.random_range(0..above)
                }
            })
            .collect();
        for i in (1..p.len()).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        parent.push(p);
    }
    PrototypeForest::from_parts(params, vectors, parent).unwrap()
}
