//! Hierarchical prototypes: layered trees of trainable vectors, initialized
//! bottom-up by k-means with pruning of under-populated clusters.
//!
//! Layer 0 is the top (coarsest) layer; the last layer is the bottom. The
//! tree topology is frozen after initialization and only the vectors train.

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{cosine, ParamId, ParamSet, Tensor};

/// Output of one k-means run.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Within-cluster SSE of the final (pruned) clustering.
    pub sse: f64,
    /// SSE after every assignment step of Lloyd's iterations, before pruning.
    pub history: Vec<f64>,
    /// Number of centers discarded for having fewer than two points.
    pub pruned: usize,
}

impl KMeansResult {
    /// SSE of the unpruned Lloyd solution.
    pub fn lloyd_sse(&self) -> f64 {
        *self.history.last().expect("at least one assignment step")
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.centers.len()];
        for &a in &self.assignment {
            c[a] += 1;
        }
        c
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn mean_of<'a>(points: impl Iterator<Item = &'a Vec<f64>>, d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    let mut n = 0usize;
    for p in points {
        m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        n += 1;
    }
    m.iter_mut().for_each(|a| *a /= n as f64);
    m
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, Vec::len);
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid(
            "k-means points must share a positive dimension",
        ));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "kmeans",
            context: None,
        });
    }
    Ok(d)
}

/// k-means++ seeding. Stops early when every remaining point coincides
/// with a chosen center.
fn seed_centers<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..points.len());
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        // guard against rounding landing on a zero-weight tail
        while d2[pick] <= 0.0 {
            pick -= 1;
        }
        centers.push(points[pick].clone());
        let c = centers.last().unwrap();
        for (p, w) in points.iter().zip(d2.iter_mut()) {
            *w = w.min(sq_dist(p, c));
        }
    }
    centers
}

/// One k-means run: k-means++ seeding, at most `iters` Lloyd iterations,
/// then pruning of centers with fewer than two points. Orphaned points move
/// to their nearest surviving center and the survivors' means are
/// recomputed. If nothing survives, a single mean center is returned.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    if points.len() < 2 || k == 0 {
        return Err(Error::invalid(format!(
            "k-means needs m >= 2 and k >= 1 (got m={}, k={k})",
            points.len()
        )));
    }
    let d = check_points(points)?;
    let mut centers = seed_centers(points, k.min(points.len()), rng);
    let mut assignment = vec![0; points.len()];
    let mut history = Vec::new();
    for it in 0..=iters {
        let mut sse = 0.0;
        let mut changed = it == 0;
        for (p, a) in points.iter().zip(assignment.iter_mut()) {
            let (j, dist) = nearest(p, &centers);
            changed |= j != *a;
            *a = j;
            sse += dist;
        }
        history.push(sse);
        if !changed || it == iters {
            break;
        }
        for (j, c) in centers.iter_mut().enumerate() {
            if assignment.contains(&j) {
                *c = mean_of(
                    points
                        .iter()
                        .zip(&assignment)
                        .filter(|(_, &a)| a == j)
                        .map(|(p, _)| p),
                    d,
                );
            }
        }
    }

    let mut counts = vec![0usize; centers.len()];
    assignment.iter().for_each(|&a| counts[a] += 1);
    let survivors: Vec<usize> = (0..centers.len()).filter(|&j| counts[j] >= 2).collect();
    let pruned = centers.len() - survivors.len();
    if survivors.is_empty() {
        let c = mean_of(points.iter(), d);
        let sse = points.iter().map(|p| sq_dist(p, &c)).sum();
        return Ok(KMeansResult {
            centers: vec![c],
            assignment: vec![0; points.len()],
            sse,
            history,
            pruned,
        });
    }
    if pruned == 0 {
        let sse = *history.last().unwrap();
        return Ok(KMeansResult {
            centers,
            assignment,
            sse,
            history,
            pruned,
        });
    }
    let kept: Vec<Vec<f64>> = survivors.iter().map(|&j| centers[j].clone()).collect();
    let assignment: Vec<usize> = points.iter().map(|p| nearest(p, &kept).0).collect();
    let centers: Vec<Vec<f64>> = (0..kept.len())
        .map(|j| {
            mean_of(
                points
                    .iter()
                    .zip(&assignment)
                    .filter(|(_, &a)| a == j)
                    .map(|(p, _)| p),
                d,
            )
        })
        .collect();
    let sse = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum();
    Ok(KMeansResult {
        centers,
        assignment,
        sse,
        history,
        pruned,
    })
}

/// Best of `restarts` independent runs by Lloyd SSE (first wins ties).
pub fn kmeans_restarts<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    iters: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let r = kmeans(points, k, iters, rng)?;
        if best.as_ref().is_none_or(|b| r.lloyd_sse() < b.lloyd_sse()) {
            best = Some(r);
        }
    }
    Ok(best.unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForestInit {
    pub iters: usize,
    /// Minimum number of restarts.
    pub restarts: usize,
    /// Small inputs get extra restarts until `restarts * m` reaches this.
    /// k-means++ seeding can miss the optimal basin on a dozen points many
    /// times in a row, and restarts there cost almost nothing.
    pub point_budget: usize,
}

impl ForestInit {
    pub fn restarts_for(&self, m: usize) -> usize {
        self.restarts.max(self.point_budget / m.max(1))
    }
}

impl Default for ForestInit {
    fn default() -> Self {
        Self {
            iters: 100,
            restarts: 10,
            point_budget: 8192,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeForest {
    dim: usize,
    layers: Vec<ParamId>,
    sizes: Vec<usize>,
    /// `parent[l][i]` for `l >= 1`; `parent[0]` is empty.
    parent: Vec<Vec<usize>>,
    children: Vec<Vec<Vec<usize>>>,
}

impl PrototypeForest {
    /// Registers the layer matrices in `params` and checks the topology.
    /// `vectors[l]` holds the prototypes of layer `l` (top first); `parent[l]`
    /// is empty for `l == 0`.
    pub fn from_parts(
        params: &mut ParamSet,
        vectors: Vec<Vec<Vec<f64>>>,
        parent: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if vectors.is_empty() || vectors.len() != parent.len() {
            return Err(Error::Forest(
                "layer and parent lists must be non-empty and equally long".into(),
            ));
        }
        let dim = vectors[0].first().map_or(0, Vec::len);
        let mut tensors = Vec::with_capacity(vectors.len());
        for (l, rows) in vectors.iter().enumerate() {
            if rows.is_empty() || dim == 0 || rows.iter().any(|v| v.len() != dim) {
                return Err(Error::Forest(format!(
                    "layer {l} is empty or has mismatched widths"
                )));
            }
            tensors.push(Tensor::from_rows(rows).expect("checked widths"));
        }
        let sizes: Vec<usize> = vectors.iter().map(Vec::len).collect();
        let children = Self::topology(&sizes, &parent)?;
        let layers = tensors
            .into_iter()
            .enumerate()
            .map(|(l, t)| params.add(format!("forest.layer{l}"), t))
            .collect();
        Ok(Self {
            dim,
            layers,
            sizes,
            parent,
            children,
        })
    }

    /// Rebinds to layer matrices already registered as `forest.layer{l}`.
    pub fn attach(params: &ParamSet, parent: Vec<Vec<usize>>) -> Result<Self> {
        let layers: Vec<ParamId> = (0..parent.len())
            .map(|l| {
                params
                    .find(&format!("forest.layer{l}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing prototype layer {l}")))
            })
            .collect::<Result<_>>()?;
        let Some(&first) = layers.first() else {
            return Err(Error::Forest("a forest needs at least one layer".into()));
        };
        let dim = params.get(first).cols();
        let mut sizes = Vec::with_capacity(layers.len());
        for (l, &id) in layers.iter().enumerate() {
            let t = params.get(id);
            if t.shape().len() != 2 || t.cols() != dim {
                return Err(Error::Forest(format!(
                    "prototype layer {l} has shape {:?}",
                    t.shape()
                )));
            }
            sizes.push(t.rows());
        }
        let children = Self::topology(&sizes, &parent)?;
        Ok(Self {
            dim,
            layers,
            sizes,
            parent,
            children,
        })
    }

    fn topology(sizes: &[usize], parent: &[Vec<usize>]) -> Result<Vec<Vec<Vec<usize>>>> {
        let mut children: Vec<Vec<Vec<usize>>> =
            sizes.iter().map(|&m| vec![Vec::new(); m]).collect();
        if !parent[0].is_empty() {
            return Err(Error::Forest("top layer cannot have parents".into()));
        }
        for l in 1..sizes.len() {
            if parent[l].len() != sizes[l] {
                return Err(Error::Forest(format!(
                    "layer {l}: {} parents for {} prototypes",
                    parent[l].len(),
                    sizes[l]
                )));
            }
            for (i, &p) in parent[l].iter().enumerate() {
                if p >= sizes[l - 1] {
                    return Err(Error::Forest(format!(
                        "layer {l} prototype {i}: parent {p} out of range"
                    )));
                }
                children[l - 1][p].push(i);
            }
        }
        for l in 0..sizes.len() - 1 {
            if let Some(i) = children[l].iter().position(Vec::is_empty) {
                return Err(Error::Forest(format!(
                    "internal prototype {i} of layer {l} has no children"
                )));
            }
        }
        Ok(children)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layer_param(&self, l: usize) -> ParamId {
        self.layers[l]
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.layers
    }

    pub fn parent(&self, l: usize, i: usize) -> Option<usize> {
        (l > 0).then(|| self.parent[l][i])
    }

    pub fn parents(&self, l: usize) -> &[usize] {
        &self.parent[l]
    }

    pub fn children(&self, l: usize, i: usize) -> &[usize] {
        if l + 1 == self.depth() {
            &[]
        } else {
            &self.children[l][i]
        }
    }

    pub fn prototype<'a>(&self, params: &'a ParamSet, l: usize, i: usize) -> &'a [f64] {
        params.get(self.layers[l]).row(i)
    }

    /// Index of the bottom prototype with the highest cosine similarity to `h` (first on ties).
    pub fn nearest_bottom(&self, params: &ParamSet, h: &[f64]) -> usize {
        let l = self.depth() - 1;
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..self.sizes[l] {
            let s = cosine(h, self.prototype(params, l, i));
            if s > best.1 {
                best = (i, s);
            }
        }
        best.0
    }

    /// Whether every layer has a single prototype, so no negative chain can differ from a positive.
    pub fn is_trivial(&self) -> bool {
        self.sizes.iter().all(|&m| m == 1)
    }

    /// Checks a chain's length, ranges and parent links.
    pub fn check_chain(&self, chain: &[usize]) -> Result<()> {
        if chain.len() != self.depth() {
            return Err(Error::Forest(format!(
                "chain has {} entries, forest depth is {}",
                chain.len(),
                self.depth()
            )));
        }
        for (l, &i) in chain.iter().enumerate() {
            if i >= self.sizes[l] {
                return Err(Error::Forest(format!(
                    "chain index {i} out of range at layer {l}"
                )));
            }
            if l > 0 && self.parent[l][i] != chain[l - 1] {
                return Err(Error::Forest(format!(
                    "broken chain: prototype {i} of layer {l} is not a child of {} at layer {}",
                    chain[l - 1],
                    l - 1
                )));
            }
        }
        Ok(())
    }

    /// The prototype vectors addressed by a connected chain, top first.
    pub fn chain_vectors<'a>(
        &self,
        params: &'a ParamSet,
        chain: &[usize],
    ) -> Result<Vec<&'a [f64]>> {
        self.check_chain(chain)?;
        Ok(chain
            .iter()
            .enumerate()
            .map(|(l, &i)| self.prototype(params, l, i))
            .collect())
    }

    /// Prototype vectors of layer `l` as owned rows.
    pub fn layer_vectors(&self, params: &ParamSet, l: usize) -> Vec<Vec<f64>> {
        (0..self.sizes[l])
            .map(|i| self.prototype(params, l, i).to_vec())
            .collect()
    }

    /// Verifies parent/children consistency and that the registered tensors still match the recorded sizes.
    pub fn check_well_formed(&self, params: &ParamSet) -> Result<()> {
        for l in 0..self.depth() {
            let t = params.get(self.layers[l]);
            if t.dims2() != (self.sizes[l], self.dim) {
                return Err(Error::Forest(format!(
                    "layer {l} tensor has shape {:?}",
                    t.shape()
                )));
            }
            if l + 1 < self.depth() {
                let mut seen = vec![false; self.sizes[l + 1]];
                for (i, kids) in self.children[l].iter().enumerate() {
                    if kids.is_empty() {
                        return Err(Error::Forest(format!(
                            "orphan-free check failed: prototype {i} of layer {l} is childless"
                        )));
                    }
                    for &c in kids {
                        if self.parent[l + 1][c] != i || seen[c] {
                            return Err(Error::Forest(format!(
                                "children of layer {l} do not partition layer {}",
                                l + 1
                            )));
                        }
                        seen[c] = true;
                    }
                }
                if seen.iter().any(|s| !s) {
                    return Err(Error::Forest(format!(
                        "layer {} has prototypes without a parent",
                        l + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Builds a forest from graph embeddings. `k_per_layer` is listed top first;
/// clustering runs bottom-up, each layer clustering the centers below it.
/// A layer left with a single prototype yields single-prototype layers above it.
pub fn init_forest<R: Rng + ?Sized>(
    params: &mut ParamSet,
    embeddings: &[Vec<f64>],
    k_per_layer: &[usize],
    init: &ForestInit,
    rng: &mut R,
) -> Result<(PrototypeForest, Vec<KMeansResult>)> {
    if embeddings.len() < 2 {
        return Err(Error::Forest(format!(
            "need at least 2 graph embeddings, got {}",
            embeddings.len()
        )));
    }
    if k_per_layer.is_empty() || k_per_layer.contains(&0) {
        return Err(Error::Forest(
            "k_per_layer must be non-empty with positive entries".into(),
        ));
    }
    let depth = k_per_layer.len();
    let mut vectors = vec![Vec::new(); depth];
    let mut parent = vec![Vec::new(); depth];
    let mut runs = Vec::new();
    let mut points = embeddings.to_vec();
    for l in (0..depth).rev() {
        let (centers, assignment) = if points.len() >= 2 {
            let r = kmeans_restarts(
                &points,
                k_per_layer[l],
                init.iters,
                init.restarts_for(points.len()),
                rng,
            )?;
            let out = (r.centers.clone(), r.assignment.clone());
            runs.push(r);
            out
        } else {
            (points.clone(), vec![0; points.len()])
        };
        if centers.is_empty() {
            return Err(Error::Forest(format!(
                "layer {l} collapsed to no prototypes"
            )));
        }
        if l + 1 < depth {
            parent[l + 1] = assignment;
        }
        vectors[l] = centers.clone();
        points = centers;
    }
    runs.reverse();
    let forest = PrototypeForest::from_parts(params, vectors, parent)?;
    Ok((forest, runs))
}

/// Uniform draw from `0..m` excluding `skip`; requires `m >= 2`.
pub(crate) fn uniform_other<R: Rng + ?Sized>(m: usize, skip: usize, rng: &mut R) -> usize {
    let j = Uniform::new(0, m - 1).expect("m >= 2").sample(rng);
    if j >= skip {
        j + 1
    } else {
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    fn pts(v: &[(f64, f64)]) -> Vec<Vec<f64>> {
        v.iter().map(|&(a, b)| vec![a, b]).collect()
    }

    #[test]
    fn two_blobs() {
        let p = pts(&[(0.0, 0.0), (0.0, 1.0), (10.0, 10.0), (10.0, 11.0)]);
        let r = kmeans_restarts(&p, 2, 50, 3, &mut rng(0)).unwrap();
        let mut c = r.centers.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 10.5]]);
        assert_eq!(r.sse, 1.0);
    }

    #[test]
    fn k_one_is_the_mean() {
        let p = pts(&[(1.0, 2.0), (3.0, 6.0), (5.0, 1.0)]);
        let r = kmeans(&p, 1, 10, &mut rng(3)).unwrap();
        assert_eq!(r.centers, vec![vec![3.0, 3.0]]);
    }

    #[test]
    fn singleton_cluster_is_pruned() {
        let mut p = vec![vec![0.0, 0.0]; 5];
        p.push(vec![9.0, 9.0]);
        let r = kmeans(&p, 2, 20, &mut rng(1)).unwrap();
        assert_eq!(r.pruned, 1);
        assert_eq!(r.centers.len(), 1);
        assert_eq!(r.counts(), vec![6]);
        // the unpruned Lloyd optimum isolates the outlier
        assert_eq!(r.lloyd_sse(), 0.0);
    }

    #[test]
    fn identical_points_give_one_center() {
        let p = vec![vec![2.0, -1.0]; 7];
        let r = kmeans(&p, 3, 10, &mut rng(2)).unwrap();
        assert_eq!(r.centers, vec![vec![2.0, -1.0]]);
        assert!(r.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn all_singletons_fall_back_to_mean() {
        let p = pts(&[(0.0, 0.0), (4.0, 0.0), (0.0, 8.0)]);
        let r = kmeans(&p, 3, 10, &mut rng(0)).unwrap();
        assert_eq!(r.pruned, 3);
        assert_eq!(r.centers.len(), 1);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(kmeans(&pts(&[(0.0, 0.0)]), 1, 5, &mut rng(0)).is_err());
        assert!(kmeans(&pts(&[(0.0, 0.0), (1.0, 1.0)]), 0, 5, &mut rng(0)).is_err());
    }

    #[test]
    fn flat_forest_has_no_parents() {
        let mut params = ParamSet::new();
        let p = pts(&[(0.0, 0.0), (0.0, 0.1), (5.0, 5.0), (5.0, 5.1)]);
        let (f, _) =
            init_forest(&mut params, &p, &[2], &ForestInit::default(), &mut rng(0)).unwrap();
        assert_eq!(f.depth(), 1);
        assert_eq!(f.parent(0, 0), None);
        assert_eq!(f.chain_vectors(&params, &[1]).unwrap().len(), 1);
    }

    #[test]
    fn chain_connectivity_is_checked() {
        let mut params = ParamSet::new();
        let v = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.1], vec![0.9, 0.0], vec![0.0, 0.9]],
        ];
        let f = PrototypeForest::from_parts(&mut params, v, vec![vec![], vec![0, 0, 1]]).unwrap();
        f.check_well_formed(&params).unwrap();
        assert_eq!(f.children(0, 0), &[0, 1]);
        assert_eq!(
            f.chain_vectors(&params, &[1, 2]).unwrap(),
            vec![&[0.0, 1.0][..], &[0.0, 0.9][..]]
        );
        assert!(f.chain_vectors(&params, &[1, 0]).is_err());
        assert!(f.chain_vectors(&params, &[0]).is_err());
    }

    #[test]
    fn childless_internal_prototype_is_rejected() {
        let mut params = ParamSet::new();
        let v = vec![vec![vec![1.0], vec![2.0]], vec![vec![1.0]]];
        assert!(PrototypeForest::from_parts(&mut params, v, vec![vec![], vec![0]]).is_err());
    }
}
