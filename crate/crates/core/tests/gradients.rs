//! Backprop against central finite differences, 100 random trials per group.

mod common;

use common::*;
use graphlog::em::{e_step_sample, nce_loss_with, sample_negatives, NegativeWeighting};
use graphlog::gin::GinParams;
use graphlog::graph::{mask_attributes, GraphBatch, MaskMode};
use graphlog::local::{
    graph_loss_with, sample_graph_negatives, sample_subgraph_pairs, subgraph_loss_with,
    LocalBatchView, LocalConfig,
};
use graphlog::tensor::{ParamSet, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(100)
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn elementwise_ops(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, n) = (r.random_range(1..5), r.random_range(1..5));
        let mut p = ParamSet::new();
        let a = p.add("a", normal_tensor(&mut r, &[m, n]));
        let b = p.add("b", normal_tensor(&mut r, &[m, n]));
        // bounded exponent: a huge loss would swamp the differences of small terms
        let k: f64 = r.random_range(-0.5..0.5);
        let ro = normal_tensor(&mut r, &[m, n]);
        let err = grad_check(&mut p, &[a, b], |t, p| {
            let (x, y) = (t.param(p, a).unwrap(), t.param(p, b).unwrap());
            let s = t.add(x, y).unwrap();
            let d = t.sub(s, y).unwrap();
            let q = t.mul(d, y).unwrap();
            let z = t.scale(q, k).unwrap();
            let e = t.exp(z).unwrap();
            contract(t, e, &ro)
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn log_on_positive_inputs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..6);
        let mut p = ParamSet::new();
        let a = p.add("a", Tensor::vector((0..n).map(|_| r.random_range(0.2..3.0)).collect()));
        let ro = normal_tensor(&mut r, &[n]);
        let err = grad_check(&mut p, &[a], |t, p| {
            let x = t.param(p, a).unwrap();
            let l = t.log(x).unwrap();
            contract(t, l, &ro)
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn affine_and_relu(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let mut p = ParamSet::new();
        let x = p.add("x", normal_tensor(&mut r, &[m, k]));
        let w = p.add("w", normal_tensor(&mut r, &[k, n]));
        let b = p.add("b", normal_tensor(&mut r, &[n]));
        let ro = normal_tensor(&mut r, &[m, n]);
        // keep pre-activations away from the kink
        let probe = {
            let mut t = Tape::new();
            let (xv, wv, bv) = (t.param(&p, x).unwrap(), t.param(&p, w).unwrap(), t.param(&p, b).unwrap());
            let z = t.matmul(xv, wv).unwrap();
            let z = t.add_row(z, bv).unwrap();
            t.value(z).data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
        };
        prop_assume!(probe > 1e-3);
        let err = grad_check(&mut p, &[x, w, b], |t, p| {
            let (xv, wv, bv) = (t.param(p, x).unwrap(), t.param(p, w).unwrap(), t.param(p, b).unwrap());
            let z = t.matmul(xv, wv).unwrap();
            let z = t.add_row(z, bv).unwrap();
            let h = t.relu(z).unwrap();
            contract(t, h, &ro)
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn row_indexing_and_reductions(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, c) = (r.random_range(1..5), r.random_range(1..4));
        let idx: Vec<usize> = (0..r.random_range(1..7)).map(|_| r.random_range(0..m)).collect();
        let out_rows = r.random_range(1..4);
        let dst: Vec<usize> = (0..m).map(|_| r.random_range(0..out_rows)).collect();
        let w: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
        let mut p = ParamSet::new();
        let a = p.add("a", normal_tensor(&mut r, &[m, c]));
        let b = p.add("b", normal_tensor(&mut r, &[m, c]));
        let (r1, r2, r3) = (normal_tensor(&mut r, &[c]), normal_tensor(&mut r, &[c]), normal_tensor(&mut r, &[2 * m, c]));
        let ro = normal_tensor(&mut r, &[out_rows, c]);
        let err = grad_check(&mut p, &[a, b], |t, p| {
            let (x, y) = (t.param(p, a).unwrap(), t.param(p, b).unwrap());
            let g = t.row_gather(x, &idx).unwrap();
            let gm = t.mean_rows(g).unwrap();
            let s = t.row_scatter_add(y, &dst, out_rows).unwrap();
            let sc = t.scale_rows(x, &w).unwrap();
            let ss = t.sum_rows(sc).unwrap();
            let cat = t.concat_rows(x, y).unwrap();
            let l1 = contract(t, gm, &r1);
            let l2 = contract(t, s, &ro);
            let l3 = contract(t, ss, &r2);
            let l4 = contract(t, cat, &r3);
            let a12 = t.add(l1, l2).unwrap();
            let a34 = t.add(l3, l4).unwrap();
            t.add(a12, a34).unwrap()
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn norms_dots_and_cosines(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, c) = (r.random_range(1..5), r.random_range(2..5));
        let mut p = ParamSet::new();
        let a = p.add("a", normal_tensor(&mut r, &[m, c]));
        let b = p.add("b", normal_tensor(&mut r, &[m, c]));
        let u = p.add("u", normal_tensor(&mut r, &[c]));
        let v = p.add("v", normal_tensor(&mut r, &[c]));
        let (r1, r2, r3) = (normal_tensor(&mut r, &[m]), normal_tensor(&mut r, &[m]), normal_tensor(&mut r, &[m]));
        let err = grad_check(&mut p, &[a, b, u, v], |t, p| {
            let (x, y) = (t.param(p, a).unwrap(), t.param(p, b).unwrap());
            let (uu, vv) = (t.param(p, u).unwrap(), t.param(p, v).unwrap());
            let n = t.l2_norm_rows(x).unwrap();
            let d = t.dot_rows(x, y).unwrap();
            let cs = t.cosine_rows(x, y).unwrap();
            let s = t.cosine_similarity(uu, vv).unwrap();
            let l1 = contract(t, n, &r1);
            let l2 = contract(t, d, &r2);
            let l3 = contract(t, cs, &r3);
            let a12 = t.add(l1, l2).unwrap();
            let a123 = t.add(a12, l3).unwrap();
            t.add(a123, s).unwrap()
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn softmax_and_mean(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, c) = (r.random_range(1..4), r.random_range(1..6));
        let mut p = ParamSet::new();
        let a = p.add("a", normal_tensor(&mut r, &[m, c]));
        let ro = normal_tensor(&mut r, &[m, c]);
        let err = grad_check(&mut p, &[a], |t, p| {
            let x = t.param(p, a).unwrap();
            let s = t.softmax(x).unwrap();
            let c = t.constant(ro.clone()).unwrap();
            let w = t.mul(s, c).unwrap();
            t.mean(w).unwrap()
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn masked_logistic_loss(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, c) = (r.random_range(1..5), r.random_range(1..4));
        let targets: Vec<f64> = (0..m * c).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect();
        let mut mask: Vec<bool> = (0..m * c).map(|_| r.random_bool(0.7)).collect();
        mask[0] = true;
        let mut p = ParamSet::new();
        let a = p.add("a", normal_tensor(&mut r, &[m, c]));
        let err = grad_check(&mut p, &[a], |t, p| {
            let x = t.param(p, a).unwrap();
            t.bce_with_logits(x, &targets, &mask).unwrap()
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, c) = (r.random_range(1..5), r.random_range(1..9));
        let x = normal_tensor(&mut r, &[m, c]);
        let scale: f64 = r.random_range(0.1..50.0);
        let x = Tensor::new(vec![m, c], x.data().iter().map(|v| v * scale).collect()).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x).unwrap();
        let s = t.softmax(xv).unwrap();
        for i in 0..m {
            let row = t.value(s).row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn gin_graph_readout(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = schema();
        let n = r.random_range(1..=10);
        let g = random_graph(&mut r, n, &s);
        let mut p = ParamSet::new();
        let gin = GinParams::init_with_std(&mut p, &s, 2, 4, 0.5, &mut r).unwrap();
        let batch = GraphBatch::new([&g]).unwrap();
        let ids = gin.param_ids();
        let err = grad_check(&mut p, &ids, |t, p| {
            let e = gin.encode(t, p, &batch).unwrap();
            t.sum(e.graphs).unwrap()
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn local_losses_through_the_encoder(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = schema();
        let sizes = [r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4)];
        let graphs: Vec<_> = sizes.iter().map(|&n| random_graph(&mut r, n, &s)).collect();
        let masked: Vec<_> = graphs.iter().map(|g| mask_attributes(g, 0.3, MaskMode::Node, &s, &mut r)).collect();
        let (b, bm) = (GraphBatch::new(&graphs).unwrap(), GraphBatch::new(&masked).unwrap());
        let lc = LocalConfig { neg_per_positive: 2, nodes_per_graph: 3 };
        let gneg = sample_graph_negatives(graphs.len(), lc.neg_per_positive, &mut r).unwrap();
        let pairs = sample_subgraph_pairs(b.graph_offsets(), &lc, &mut r);
        let mut p = ParamSet::new();
        let gin = GinParams::init_with_std(&mut p, &s, 2, 4, 0.5, &mut r).unwrap();
        let ids = gin.param_ids();
        let err = grad_check(&mut p, &ids, |t, p| {
            let e = gin.encode(t, p, &b).unwrap();
            let em = gin.encode(t, p, &bm).unwrap();
            let view = LocalBatchView {
                graphs: e.graphs,
                graphs_masked: em.graphs,
                nodes: e.nodes,
                nodes_masked: em.nodes,
                offsets: b.graph_offsets().to_vec(),
            };
            let lg = graph_loss_with(t, &view, &gneg).unwrap();
            let ls = subgraph_loss_with(t, &view, &pairs).unwrap();
            t.add(lg, ls).unwrap()
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }

    #[test]
    fn nce_loss_in_embeddings_and_prototypes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(2..5);
        let depth = r.random_range(1..=3);
        let mut sizes = vec![r.random_range(2..4)];
        for _ in 1..depth {
            let last = *sizes.last().unwrap();
            sizes.push(last + r.random_range(0..3));
        }
        let n = r.random_range(1..5);
        let mut p = ParamSet::new();
        let forest = random_forest(&mut p, &mut r, &sizes, d);
        let h = p.add("h", normal_tensor(&mut r, &[n, d]));
        let chains: Vec<_> = (0..n)
            .map(|i| e_step_sample(p.get(h).row(i), &forest, &p, 1.0, &mut r).unwrap())
            .collect();
        let negatives = sample_negatives(&forest, &chains, &mut r).unwrap();
        let weighting = if r.random_bool(0.5) { NegativeWeighting::Mean } else { NegativeWeighting::Sum };
        let mut ids = vec![h];
        ids.extend_from_slice(forest.param_ids());
        let err = grad_check(&mut p, &ids, |t, p| {
            let hv = t.param(p, h).unwrap();
            nce_loss_with(t, hv, &chains, negatives.clone(), &forest, p, weighting).unwrap().loss
        });
        prop_assert!(err < GRAD_TOL, "max rel err {err}");
    }
}
