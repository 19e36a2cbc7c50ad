//! Online EM over the prototype forest: top-down posterior sampling of a
//! latent chain per graph (E-step) and the NCE surrogate for the M-step.
//!
//! The energy of a graph embedding `h` and a chain `z^1..z^Lp` is
//! `f = sum_l s(h, z^l) + sum_l s(z^l, z^{l+1})` with cosine similarity `s`.
//! Likelihoods stay unnormalized; the partition function is never formed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{uniform_other, PrototypeForest};
use crate::rng::{substream, Purpose};
use crate::tensor::{cosine, softmax, ParamSet, Tape, Tensor, Var};

/// A sampled root-to-leaf path of prototype indices, top layer first.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentChain {
    pub indices: Vec<usize>,
    /// Sum of the per-layer categorical log-probabilities of the draw.
    pub log_prob: f64,
}

/// Draws `i` with probability `p[i]`.
fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

/// Samples a chain top-down: the top layer from `softmax(s(c, h) / T)` over
/// all top prototypes, every lower layer over the children of the node just
/// drawn.
pub fn e_step_sample<R: Rng + ?Sized>(
    h: &[f64],
    forest: &PrototypeForest,
    params: &ParamSet,
    temperature: f64,
    rng: &mut R,
) -> Result<LatentChain> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "e_step_sample",
            context: Some("graph embedding".into()),
        });
    }
    let mut indices = Vec::with_capacity(forest.depth());
    let mut log_prob = 0.0;
    let top: Vec<usize> = (0..forest.sizes()[0]).collect();
    let mut candidates: &[usize] = &top;
    for l in 0..forest.depth() {
        if candidates.is_empty() {
            return Err(Error::Forest(format!(
                "prototype {} of layer {} has no children",
                indices[l - 1],
                l - 1
            )));
        }
        let logits: Vec<f64> = candidates
            .iter()
            .map(|&i| cosine(h, forest.prototype(params, l, i)) / temperature)
            .collect();
        let p = softmax(&logits);
        let k = categorical(&p, rng);
        log_prob += p[k].ln();
        let chosen = candidates[k];
        indices.push(chosen);
        candidates = forest.children(l, chosen);
    }
    Ok(LatentChain { indices, log_prob })
}

/// E-step for every row of `h` (detached values), one chain per graph. Graph
/// `n` draws from its own substream keyed by `(seed, step, n)`, so results do
/// not depend on the thread count.
pub fn e_step_batch(
    h: &Tensor,
    forest: &PrototypeForest,
    params: &ParamSet,
    temperature: f64,
    seed: u64,
    step: u64,
) -> Result<Vec<LatentChain>> {
    (0..h.rows())
        .into_par_iter()
        .map(|n| {
            let mut rng = substream(seed, Purpose::EStep, step, n as u64);
            e_step_sample(h.row(n), forest, params, temperature, &mut rng)
        })
        .collect()
}

/// Energy of a single (graph, chain) pair from plain vectors.
pub fn energy_value(h: &[f64], chain: &[&[f64]]) -> f64 {
    let down: f64 = chain.iter().map(|z| cosine(h, z)).sum();
    let across: f64 = chain.windows(2).map(|w| cosine(w[0], w[1])).sum();
    down + across
}

/// Differentiable energy of one embedding `h` (shape `[d]`) and `Lp` prototype vectors.
pub fn energy(tape: &mut Tape, h: Var, chain: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = chain.split_first() else {
        return Err(Error::invalid("energy needs at least one prototype"));
    };
    let mut f = tape.cosine_similarity(h, first)?;
    for &z in rest {
        let s = tape.cosine_similarity(h, z)?;
        f = tape.add(f, s)?;
    }
    for w in chain.windows(2) {
        let s = tape.cosine_similarity(w[0], w[1])?;
        f = tape.add(f, s)?;
    }
    Ok(f)
}

/// Row-wise energies `[R]` of `h[rows[r]]` against `chains[r]`, where
/// `layers[l]` is the tape node holding layer `l`'s prototype matrix.
pub fn energy_rows(
    tape: &mut Tape,
    h: Var,
    rows: &[usize],
    layers: &[Var],
    chains: &[Vec<usize>],
) -> Result<Var> {
    let hg = tape.row_gather(h, rows)?;
    let mut f: Option<Var> = None;
    let mut prev: Option<Var> = None;
    for (l, &layer) in layers.iter().enumerate() {
        let idx: Vec<usize> = chains.iter().map(|c| c[l]).collect();
        let z = tape.row_gather(layer, &idx)?;
        let mut term = tape.cosine_rows(hg, z)?;
        if let Some(p) = prev {
            let link = tape.cosine_rows(p, z)?;
            term = tape.add(term, link)?;
        }
        f = Some(match f {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
        prev = Some(z);
    }
    f.ok_or_else(|| Error::invalid("energy needs at least one layer"))
}

/// How the negative energies of one positive are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeWeighting {
    /// Average over the substitutable layers.
    #[default]
    Mean,
    /// Sum over the substitutable layers.
    Sum,
}

/// Output of the NCE surrogate, with the negatives it drew.
#[derive(Clone, Debug)]
pub struct NceLoss {
    pub loss: Var,
    /// Energies of the positive pairs, `[N]`.
    pub positive_energy: Var,
    /// `negatives[n]` lists one chain per substitutable layer of positive `n`.
    pub negatives: Vec<Vec<Vec<usize>>>,
}

/// Layers that have more than one prototype and so admit a substitution.
pub fn substitutable_layers(forest: &PrototypeForest) -> Vec<usize> {
    (0..forest.depth())
        .filter(|&l| forest.sizes()[l] > 1)
        .collect()
}

/// Negative chains for each positive: for every substitutable layer `k`, the
/// positive with layer `k` replaced by a uniformly drawn different prototype
/// of that layer. Connectivity is not enforced.
pub fn sample_negatives<R: Rng + ?Sized>(
    forest: &PrototypeForest,
    chains: &[LatentChain],
    rng: &mut R,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let layers = substitutable_layers(forest);
    if layers.is_empty() {
        return Err(Error::Forest(
            "every layer has a single prototype; no negative chain exists".into(),
        ));
    }
    Ok(chains
        .iter()
        .map(|c| {
            layers
                .iter()
                .map(|&k| {
                    let mut neg = c.indices.clone();
                    neg[k] = uniform_other(forest.sizes()[k], neg[k], rng);
                    neg
                })
                .collect()
        })
        .collect())
}

/// NCE loss for explicit negatives:
/// `-(1/N) sum_n [ f(h_n, z_n) - w * sum_k f(h_n, z_n^(k)) ]` with `w = 1/K`
/// for [`NegativeWeighting::Mean`] and `w = 1` for `Sum`.
pub fn nce_loss_with(
    tape: &mut Tape,
    h: Var,
    chains: &[LatentChain],
    negatives: Vec<Vec<Vec<usize>>>,
    forest: &PrototypeForest,
    params: &ParamSet,
    weighting: NegativeWeighting,
) -> Result<NceLoss> {
    let n = chains.len();
    if n == 0 || tape.value(h).rows() != n || negatives.len() != n {
        return Err(Error::invalid(
            "NCE loss needs one chain and one negative set per embedding row",
        ));
    }
    for c in chains {
        forest.check_chain(&c.indices)?;
    }
    let per = negatives[0].len();
    if per == 0 || negatives.iter().any(|v| v.len() != per) {
        return Err(Error::invalid(
            "every positive needs the same positive number of negatives",
        ));
    }
    let layers: Vec<Var> = forest
        .param_ids()
        .iter()
        .map(|&id| tape.param(params, id))
        .collect::<Result<_>>()?;
    let pos_chains: Vec<Vec<usize>> = chains.iter().map(|c| c.indices.clone()).collect();
    let pos_rows: Vec<usize> = (0..n).collect();
    let f_pos = energy_rows(tape, h, &pos_rows, &layers, &pos_chains)?;

    let neg_chains: Vec<Vec<usize>> = negatives.iter().flatten().cloned().collect();
    let neg_rows: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, per)).collect();
    let f_neg = energy_rows(tape, h, &neg_rows, &layers, &neg_chains)?;

    // mean over all N*K negatives equals (1/N) sum_n (1/K) sum_k
    let neg = tape.mean(f_neg)?;
    let neg = match weighting {
        NegativeWeighting::Mean => neg,
        NegativeWeighting::Sum => tape.scale(neg, per as f64)?,
    };
    let pos = tape.mean(f_pos)?;
    let loss = tape.sub(neg, pos)?;
    Ok(NceLoss {
        loss,
        positive_energy: f_pos,
        negatives,
    })
}

/// NCE surrogate of the global objective with freshly drawn negatives.
pub fn nce_global_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Var,
    chains: &[LatentChain],
    forest: &PrototypeForest,
    params: &ParamSet,
    weighting: NegativeWeighting,
    rng: &mut R,
) -> Result<NceLoss> {
    let negatives = sample_negatives(forest, chains, rng)?;
    nce_loss_with(tape, h, chains, negatives, forest, params, weighting)
}

/// Mini-batch monitor `sum_n f(h_n, z_n)`: the unnormalized complete-data
/// log-likelihood of the sampled chains. No gradients.
pub fn monitored_mb_loglik(
    h: &Tensor,
    chains: &[LatentChain],
    forest: &PrototypeForest,
    params: &ParamSet,
) -> Result<f64> {
    if h.rows() != chains.len() {
        return Err(Error::invalid("one chain per embedding row required"));
    }
    let mut total = 0.0;
    for (n, c) in chains.iter().enumerate() {
        let vecs = forest.chain_vectors(params, &c.indices)?;
        total += energy_value(h.row(n), &vecs);
    }
    Ok(total)
}

/// Running EM statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmDiagnostics {
    pub nce_loss: Vec<f64>,
    /// Mean positive energy per step, i.e. the step's `Q~ / N`.
    pub mean_energy: Vec<f64>,
    /// `usage[l][i]`: how often prototype `i` of layer `l` was sampled.
    pub usage: Vec<Vec<u64>>,
}

impl EmDiagnostics {
    pub fn new(forest: &PrototypeForest) -> Self {
        Self {
            usage: forest.sizes().iter().map(|&m| vec![0; m]).collect(),
            ..Self::default()
        }
    }

    pub fn record(&mut self, nce_loss: f64, monitored: f64, chains: &[LatentChain]) {
        let n = chains.len() as f64;
        self.nce_loss.push(nce_loss);
        self.mean_energy.push(monitored / n);
        for c in chains {
            for (l, &i) in c.indices.iter().enumerate() {
                self.usage[l][i] += 1;
            }
        }
    }

    pub fn steps(&self) -> usize {
        self.nce_loss.len()
    }

    /// Mean of `Q~/N` over all recorded steps.
    pub fn running_loglik(&self) -> f64 {
        let n = self.mean_energy.len().max(1) as f64;
        self.mean_energy.iter().sum::<f64>() / n
    }

    /// Trailing moving average of `Q~/N` ending at step `end` (1-based, inclusive).
    pub fn moving_average(&self, end: usize, window: usize) -> Option<f64> {
        if end > self.mean_energy.len() || window == 0 || window > end {
            return None;
        }
        let w = &self.mean_energy[end - window..end];
        Some(w.iter().sum::<f64>() / window as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two top prototypes with two children each.
    fn small_forest(params: &mut ParamSet) -> PrototypeForest {
        let top = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let bottom = vec![
            vec![1.0, 0.2, 0.0],
            vec![1.0, -0.3, 0.5],
            vec![0.1, 1.0, 0.0],
            vec![-0.2, 1.0, 0.4],
        ];
        PrototypeForest::from_parts(params, vec![top, bottom], vec![vec![], vec![0, 0, 1, 1]])
            .unwrap()
    }

    #[test]
    fn identical_prototypes_give_uniform_chains() {
        let mut params = ParamSet::new();
        let v = vec![vec![vec![1.0, 1.0]; 3], vec![vec![1.0, 1.0]; 6]];
        let f = PrototypeForest::from_parts(&mut params, v, vec![vec![], vec![0, 0, 1, 1, 2, 2]])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = e_step_sample(&[0.3, -2.0], &f, &params, 1.0, &mut rng).unwrap();
        assert!((c.log_prob - (1.0f64 / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn chains_are_connected_with_nonpositive_log_prob() {
        let mut params = ParamSet::new();
        let f = small_forest(&mut params);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = e_step_sample(&h, &f, &params, 0.5, &mut rng).unwrap();
            f.check_chain(&c.indices).unwrap();
            assert!(c.log_prob <= 0.0);
        }
    }

    #[test]
    fn low_temperature_concentrates() {
        let mut params = ParamSet::new();
        let f = small_forest(&mut params);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // P(top 0) = 1 / (1 + exp(-100)) at T = 0.01
        let hits = (0..10_000)
            .filter(|_| {
                e_step_sample(&[1.0, 0.0, 0.0], &f, &params, 0.01, &mut rng)
                    .unwrap()
                    .indices[0]
                    == 0
            })
            .count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn energy_of_coincident_unit_vectors() {
        let mut tape = Tape::new();
        let u = Tensor::vector(vec![0.6, 0.8]);
        let h = tape.constant(u.clone()).unwrap();
        let z1 = tape.constant(u.clone()).unwrap();
        let z2 = tape.constant(u).unwrap();
        let f = energy(&mut tape, h, &[z1, z2]).unwrap();
        assert!((tape.item(f) - 3.0).abs() < 1e-15);
        let single = energy(&mut tape, h, &[z1]).unwrap();
        assert!((tape.item(single) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn energy_scalar_oracle_lp3() {
        let h = [0.4, -1.1, 0.3];
        let z = [[1.0, 0.5, -0.2], [0.0, -0.7, 0.9], [0.3, 0.3, 0.3]];
        let c = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let expected =
            c(&h, &z[0]) + c(&h, &z[1]) + c(&h, &z[2]) + c(&z[0], &z[1]) + c(&z[1], &z[2]);
        let mut tape = Tape::new();
        let hv = tape.constant(Tensor::vector(h.to_vec())).unwrap();
        let zv: Vec<Var> = z
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())).unwrap())
            .collect();
        let f = energy(&mut tape, hv, &zv).unwrap();
        assert!((tape.item(f) - expected).abs() < 1e-14);
        let refs: Vec<&[f64]> = z.iter().map(|r| &r[..]).collect();
        assert!((energy_value(&h, &refs) - expected).abs() < 1e-14);
    }

    #[test]
    fn equal_energies_give_zero_loss() {
        let mut params = ParamSet::new();
        let v = vec![vec![vec![1.0, 0.0]; 2], vec![vec![1.0, 0.0]; 2]];
        let f = PrototypeForest::from_parts(&mut params, v, vec![vec![], vec![0, 1]]).unwrap();
        let chains = vec![LatentChain {
            indices: vec![0, 0],
            log_prob: 0.0,
        }];
        let mut tape = Tape::new();
        let h = tape
            .constant(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap())
            .unwrap();
        let out = nce_global_loss(
            &mut tape,
            h,
            &chains,
            &f,
            &params,
            NegativeWeighting::Mean,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(tape.item(out.loss), 0.0);
    }

    #[test]
    fn single_prototype_layers_are_skipped() {
        let mut params = ParamSet::new();
        let v = vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let f = PrototypeForest::from_parts(&mut params, v, vec![vec![], vec![0, 0]]).unwrap();
        let chains = vec![LatentChain {
            indices: vec![0, 1],
            log_prob: 0.0,
        }];
        let negs = sample_negatives(&f, &chains, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(negs, vec![vec![vec![0, 0]]]);

        let mut params = ParamSet::new();
        let v = vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]];
        let f = PrototypeForest::from_parts(&mut params, v, vec![vec![], vec![0]]).unwrap();
        let chains = vec![LatentChain {
            indices: vec![0, 0],
            log_prob: 0.0,
        }];
        assert!(sample_negatives(&f, &chains, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn nce_matches_scalar_recomputation() {
        let mut params = ParamSet::new();
        let f = small_forest(&mut params);
        let hs = vec![vec![0.9, 0.1, -0.2], vec![-0.3, 0.8, 0.5]];
        let chains = vec![
            LatentChain {
                indices: vec![0, 1],
                log_prob: 0.0,
            },
            LatentChain {
                indices: vec![1, 2],
                log_prob: 0.0,
            },
        ];
        for weighting in [NegativeWeighting::Mean, NegativeWeighting::Sum] {
            let mut tape = Tape::new();
            let h = tape.constant(Tensor::from_rows(&hs).unwrap()).unwrap();
            let out = nce_global_loss(
                &mut tape,
                h,
                &chains,
                &f,
                &params,
                weighting,
                &mut ChaCha8Rng::seed_from_u64(4),
            )
            .unwrap();
            let vecs = |c: &[usize]| -> Vec<Vec<f64>> {
                c.iter()
                    .enumerate()
                    .map(|(l, &i)| f.prototype(&params, l, i).to_vec())
                    .collect()
            };
            let fe = |h: &[f64], c: &[usize]| {
                let v = vecs(c);
                let r: Vec<&[f64]> = v.iter().map(|x| &x[..]).collect();
                energy_value(h, &r)
            };
            let w = if weighting == NegativeWeighting::Mean {
                0.5
            } else {
                1.0
            };
            let mut expected = 0.0;
            for n in 0..2 {
                let negs = &out.negatives[n];
                assert_eq!(negs.len(), 2);
                for (k, neg) in negs.iter().enumerate() {
                    let diff: Vec<usize> =
                        (0..2).filter(|&l| neg[l] != chains[n].indices[l]).collect();
                    assert_eq!(diff, vec![k]);
                }
                expected -= fe(&hs[n], &chains[n].indices)
                    - w * negs.iter().map(|c| fe(&hs[n], c)).sum::<f64>();
            }
            expected /= 2.0;
            assert!(
                (tape.item(out.loss) - expected).abs() < 1e-14,
                "{weighting:?}"
            );
        }
    }

    #[test]
    fn monitor_is_additive() {
        let mut params = ParamSet::new();
        let f = small_forest(&mut params);
        let c = LatentChain {
            indices: vec![1, 3],
            log_prob: 0.0,
        };
        let h1 = Tensor::from_rows(&[vec![0.2, 0.7, 0.1]]).unwrap();
        let one = monitored_mb_loglik(&h1, std::slice::from_ref(&c), &f, &params).unwrap();
        let vecs = f.chain_vectors(&params, &c.indices).unwrap();
        assert_eq!(one, energy_value(h1.row(0), &vecs));
        let h2 = Tensor::from_rows(&[vec![0.2, 0.7, 0.1], vec![0.2, 0.7, 0.1]]).unwrap();
        let two = monitored_mb_loglik(&h2, &[c.clone(), c], &f, &params).unwrap();
        assert_eq!(two, 2.0 * one);
    }
}
