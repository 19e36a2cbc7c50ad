//! Evaluation metrics and plot output: rank-based ROC-AUC, clustering
//! agreement (NMI, purity) and a deterministic 2D PCA projection.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve: `P(pos > neg) + 0.5 P(tie)`, from rank sums
/// with average ranks on ties. `None` when a class is absent or a score is
/// not finite.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    if scores.iter().any(|s| !s.is_finite()) {
        return None;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, kept integral
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average, (i + j + 2) / 2
        let avg2 = (i + j + 2) as u64;
        let pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        rank2_pos += avg2 * pos;
        i = j + 1;
    }
    let u2 = rank2_pos - n_pos * (n_pos + 1);
    Some(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Normalized mutual information (arithmetic-mean normalization) and purity
/// of a clustering against reference labels.
pub fn cluster_metrics(assignments: &[usize], labels: &[usize]) -> (f64, f64) {
    assert_eq!(assignments.len(), labels.len(), "one label per assignment");
    let n = assignments.len() as f64;
    if assignments.is_empty() {
        return (0.0, 0.0);
    }
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut a_count: HashMap<usize, usize> = HashMap::new();
    let mut l_count: HashMap<usize, usize> = HashMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *joint.entry((a, l)).or_default() += 1;
        *a_count.entry(a).or_default() += 1;
        *l_count.entry(l).or_default() += 1;
    }
    let entropy = |c: &HashMap<usize, usize>| -> f64 {
        c.values().map(|&k| k as f64 / n).map(|p| -p * p.ln()).sum()
    };
    let (ha, hl) = (entropy(&a_count), entropy(&l_count));
    let mut mi = 0.0;
    let mut entries: Vec<_> = joint.iter().collect();
    entries.sort();
    for (&(a, l), &k) in entries {
        let p = k as f64 / n;
        mi += p * (p * n * n / (a_count[&a] as f64 * l_count[&l] as f64)).ln();
    }
    let nmi = if ha + hl == 0.0 {
        1.0
    } else {
        (2.0 * mi / (ha + hl)).clamp(0.0, 1.0)
    };
    let mut best: HashMap<usize, usize> = HashMap::new();
    for (&(a, _), &k) in &joint {
        let e = best.entry(a).or_default();
        *e = (*e).max(k);
    }
    let purity = best.values().sum::<usize>() as f64 / n;
    (nmi, purity)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and the matching unit eigenvectors.
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    let scale: f64 = m
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..d).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Top-two principal axes of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Variance along each component (covariance normalized by `m - 1`).
    pub explained_variance: [f64; 2],
}

impl Pca {
    /// Fits the projection. Each component is oriented so that its
    /// largest-magnitude entry is positive (first such entry on ties).
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let m = points.len();
        let d = points.first().map_or(0, Vec::len);
        if m < 2 || d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::invalid(
                "PCA needs at least two points of equal positive dimension",
            ));
        }
        let mut mean = vec![0.0; d];
        for p in points {
            mean.iter_mut().zip(p).for_each(|(a, b)| *a += b / m as f64);
        }
        let mut cov = vec![vec![0.0; d]; d];
        for p in points {
            let c: Vec<f64> = p.iter().zip(&mean).map(|(a, b)| a - b).collect();
            for i in 0..d {
                for j in i..d {
                    cov[i][j] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i][j] /= (m - 1) as f64;
                cov[j][i] = cov[i][j];
            }
        }
        let (values, vectors) = symmetric_eigen(&cov);
        let orient = |mut v: Vec<f64>| {
            let mut best = 0;
            for (i, x) in v.iter().enumerate() {
                if x.abs() > v[best].abs() {
                    best = i;
                }
            }
            if v[best] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        let mut vecs = vectors.into_iter();
        let c1 = orient(vecs.next().unwrap());
        let c2 = orient(vecs.next().unwrap_or_else(|| vec![0.0; d]));
        let var2 = values.get(1).copied().unwrap_or(0.0).max(0.0);
        Ok(Self {
            mean,
            components: [c1, c2],
            explained_variance: [values[0].max(0.0), var2],
        })
    }

    pub fn project(&self, p: &[f64]) -> [f64; 2] {
        let c: Vec<f64> = p.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let dot = |v: &[f64]| c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        [dot(&self.components[0]), dot(&self.components[1])]
    }
}

/// Projects every point onto its top-two principal components.
pub fn pca_project(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let pca = Pca::fit(points)?;
    Ok(points.iter().map(|p| pca.project(p)).collect())
}

/// One row of plot output.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub x: f64,
    pub y: f64,
    pub leaf_label: Option<usize>,
    pub is_prototype: bool,
    /// Forest layer of a prototype (0 = top).
    pub layer: Option<usize>,
}

/// CSV with header `x,y,leaf_label,is_prototype,layer`; absent values are empty.
pub fn plot_csv(rows: &[PlotRow]) -> String {
    let mut out = String::from("x,y,leaf_label,is_prototype,layer\n");
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.x,
            r.y,
            opt(r.leaf_label),
            u8::from(r.is_prototype),
            opt(r.layer)
        );
    }
    out
}

/// Evaluation summary written next to every evaluated run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Per-task ROC-AUC; `None` for tasks with a single class in the evaluated split.
    pub per_task_auc: Vec<Option<f64>>,
    /// Mean over defined tasks.
    pub mean_auc: Option<f64>,
    /// Top-1 accuracy when every label vector is one-hot.
    pub accuracy: Option<f64>,
    pub nmi: Option<f64>,
    pub purity: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn set_aucs(&mut self, aucs: Vec<Option<f64>>) {
        let defined: Vec<f64> = aucs.iter().flatten().copied().collect();
        self.mean_auc =
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        self.per_task_auc = aucs;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}
