//! Dataset files and the planted-hierarchy synthetic generator.
//!
//! A dataset is a directory holding `manifest.json` and `graphs.jsonl`, one
//! graph object per line. The byte layout is documented in `docs/FORMATS.md`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttrSchema, Graph};
use crate::rng::{substream, Purpose};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPHS_FILE: &str = "graphs.jsonl";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub node_vocab: Vec<usize>,
    pub edge_vocab: Vec<usize>,
    pub num_graphs: usize,
    pub num_tasks: Option<usize>,
    pub splits: SplitCounts,
    /// Branching factors of the planted hierarchy, for generated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<Vec<usize>>,
}

impl DatasetManifest {
    pub fn schema(&self) -> AttrSchema {
        AttrSchema {
            node_vocab: self.node_vocab.clone(),
            edge_vocab: self.edge_vocab.clone(),
        }
    }
}

/// One line of `graphs.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    edges: Vec<[usize; 2]>,
    node_attrs: Vec<Vec<usize>>,
    edge_attrs: Vec<Vec<usize>>,
    label: Option<Vec<Option<u8>>>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub graphs: Vec<Graph>,
    pub splits: Vec<Split>,
}

impl Dataset {
    /// Builds a dataset and its manifest from graphs and split tags.
    pub fn new(
        schema: &AttrSchema,
        graphs: Vec<Graph>,
        splits: Vec<Split>,
        hierarchy: Option<Vec<usize>>,
    ) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Dataset("a dataset needs at least one graph".into()));
        }
        if graphs.len() != splits.len() {
            return Err(Error::Dataset("one split tag per graph required".into()));
        }
        let count = |s| splits.iter().filter(|&&x| x == s).count();
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            node_vocab: schema.node_vocab.clone(),
            edge_vocab: schema.edge_vocab.clone(),
            num_graphs: graphs.len(),
            num_tasks: graphs[0].label.as_ref().map(Vec::len),
            splits: SplitCounts {
                train: count(Split::Train),
                valid: count(Split::Valid),
                test: count(Split::Test),
            },
            hierarchy,
        };
        let ds = Self {
            manifest,
            graphs,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn schema(&self) -> AttrSchema {
        self.manifest.schema()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn subset(&self, split: Split) -> Vec<Graph> {
        self.indices(split)
            .into_iter()
            .map(|i| self.graphs[i].clone())
            .collect()
    }

    /// Leaf class of every graph (last entry of its class path), if all have one.
    pub fn leaf_classes(&self) -> Option<Vec<usize>> {
        self.graphs
            .iter()
            .map(|g| g.classes.as_ref().and_then(|c| c.last().copied()))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.version != FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported format version {}",
                m.version
            )));
        }
        if m.num_graphs != self.graphs.len() {
            return Err(Error::Dataset(format!(
                "manifest lists {} graphs, file has {}",
                m.num_graphs,
                self.graphs.len()
            )));
        }
        let count = |s| self.splits.iter().filter(|&&x| x == s).count();
        let found = SplitCounts {
            train: count(Split::Train),
            valid: count(Split::Valid),
            test: count(Split::Test),
        };
        if found != m.splits {
            return Err(Error::Dataset(format!(
                "split counts {found:?} disagree with manifest {:?}",
                m.splits
            )));
        }
        let schema = self.schema();
        for (i, g) in self.graphs.iter().enumerate() {
            g.validate(&schema, i)?;
            strict_vocab(g, &schema, i)?;
            let arity = g.label.as_ref().map(Vec::len);
            if arity != m.num_tasks {
                return Err(Error::InvalidGraph {
                    graph: i,
                    msg: format!(
                        "label arity {arity:?} differs from manifest task count {:?}",
                        m.num_tasks
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Data files may not contain the reserved mask index.
fn strict_vocab(g: &Graph, schema: &AttrSchema, index: usize) -> Result<()> {
    for (v, attrs) in g.node_attrs().iter().enumerate() {
        for (slot, (&a, &vocab)) in attrs.iter().zip(&schema.node_vocab).enumerate() {
            if a >= vocab {
                return Err(Error::InvalidGraph {
                    graph: index,
                    msg: format!(
                        "node {v} slot {slot}: value {a} outside vocabulary of size {vocab}"
                    ),
                });
            }
        }
    }
    for (e, attrs) in g.undirected_edge_attrs().enumerate() {
        for (slot, (&a, &vocab)) in attrs.iter().zip(&schema.edge_vocab).enumerate() {
            if a >= vocab {
                return Err(Error::InvalidGraph {
                    graph: index,
                    msg: format!(
                        "edge {e} slot {slot}: value {a} outside vocabulary of size {vocab}"
                    ),
                });
            }
        }
    }
    Ok(())
}

fn to_record(g: &Graph, split: Split) -> GraphRecord {
    GraphRecord {
        n: g.num_nodes(),
        edges: g.undirected_edges().map(|(u, v)| [u, v]).collect(),
        node_attrs: g.node_attrs().to_vec(),
        edge_attrs: g.undirected_edge_attrs().map(<[usize]>::to_vec).collect(),
        label: g
            .label
            .as_ref()
            .map(|l| l.iter().map(|x| x.map(u8::from)).collect()),
        split,
        classes: g.classes.clone(),
    }
}

fn from_record(r: GraphRecord) -> std::result::Result<(Graph, Split), String> {
    let edges: Vec<(usize, usize)> = r.edges.iter().map(|e| (e[0], e[1])).collect();
    let mut g = Graph::new(r.n, &edges, r.node_attrs, r.edge_attrs).map_err(|e| e.to_string())?;
    if let Some(label) = r.label {
        let label = label
            .into_iter()
            .map(|x| match x {
                None => Ok(None),
                Some(0) => Ok(Some(false)),
                Some(1) => Ok(Some(true)),
                Some(v) => Err(format!("label entries must be 0, 1 or null, got {v}")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        g = g.with_label(label);
    }
    if let Some(c) = r.classes {
        g = g.with_classes(c);
    }
    Ok((g, r.split))
}

/// Writes `manifest.json` and `graphs.jsonl` into `dir`, creating it.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest =
        serde_json::to_string_pretty(&ds.manifest).map_err(|e| Error::Dataset(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
    let mut out = std::io::BufWriter::new(fs::File::create(dir.join(GRAPHS_FILE))?);
    for (g, &s) in ds.graphs.iter().zip(&ds.splits) {
        let line =
            serde_json::to_string(&to_record(g, s)).map_err(|e| Error::Dataset(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let gpath = dir.join(GRAPHS_FILE);
    for p in [&mpath, &gpath] {
        if !p.is_file() {
            return Err(Error::Dataset(format!("missing {}", p.display())));
        }
    }
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(&mpath)?).map_err(|e| Error::Parse {
            path: mpath.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
    let text = fs::read_to_string(&gpath)?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.iter().all(|l| l.trim().is_empty()) {
        return Err(Error::Dataset(format!(
            "{} contains no graphs",
            gpath.display()
        )));
    }
    let parse_err = |path: &PathBuf, line: usize, msg: String| Error::Parse {
        path: path.clone(),
        line,
        msg,
    };
    let parsed: Vec<(Graph, Split)> = lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let rec: GraphRecord =
                serde_json::from_str(line).map_err(|e| parse_err(&gpath, i + 1, e.to_string()))?;
            from_record(rec).map_err(|m| parse_err(&gpath, i + 1, m))
        })
        .collect::<Result<_>>()?;
    let (graphs, splits) = parsed.into_iter().unzip();
    let ds = Dataset {
        manifest,
        graphs,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

/// Parameters of the planted-hierarchy generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub levels: usize,
    /// Children per node at each level, top first; the product is the leaf count.
    pub branching: Vec<usize>,
    pub graphs_per_leaf: usize,
    pub motif_min: usize,
    pub motif_max: usize,
    /// Expected noise edges as a fraction of motif edges.
    pub edge_noise: f64,
    /// Probability of replacing each attribute value.
    pub attr_noise: f64,
    pub node_types: usize,
    pub edge_types: usize,
    /// Fractions of each leaf class assigned to train and valid; the rest is test.
    pub train_frac: f64,
    pub valid_frac: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            levels: 2,
            branching: vec![4, 2],
            graphs_per_leaf: 100,
            motif_min: 6,
            motif_max: 10,
            edge_noise: 0.1,
            attr_noise: 0.1,
            node_types: 16,
            edge_types: 4,
            train_frac: 0.8,
            valid_frac: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_leaves(&self) -> usize {
        self.branching.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synthetic spec: {m}")));
        if self.levels == 0 || self.branching.len() != self.levels || self.branching.contains(&0) {
            return bad("branching needs one positive factor per level");
        }
        if self.motif_min < 2 {
            return bad("motif size must be at least 2");
        }
        if self.motif_max < self.motif_min {
            return bad("motif_max must be >= motif_min");
        }
        if self.graphs_per_leaf == 0 || self.node_types < 2 || self.edge_types == 0 {
            return bad("graphs_per_leaf, node_types (>= 2) and edge_types must be positive");
        }
        for r in [self.edge_noise, self.attr_noise] {
            if !(0.0..=1.0).contains(&r) {
                return bad("noise rates must lie in [0, 1]");
            }
        }
        if self.train_frac < 0.0 || self.valid_frac < 0.0 || self.train_frac + self.valid_frac > 1.0
        {
            return bad("split fractions must be non-negative and sum to at most 1");
        }
        Ok(())
    }

    /// Ancestor path of a leaf: the class index at each level, top first.
    pub fn class_path(&self, leaf: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.levels);
        let mut below: usize = self.num_leaves();
        for &b in &self.branching {
            below /= b;
            path.push(leaf / below);
        }
        path
    }
}

/// Attribute palettes for the internal nodes at depth `levels - 1`, i.e. the
/// parents of leaves. Each level splits its palette among its children,
/// disjointly while enough types remain.
fn palettes<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Vec<Vec<usize>> {
    let mut current = vec![(0..spec.node_types).collect::<Vec<_>>()];
    for &b in &spec.branching[..spec.levels - 1] {
        let mut next = Vec::with_capacity(current.len() * b);
        for pal in &current {
            let mut p = pal.clone();
            p.shuffle(rng);
            if p.len() >= 2 * b {
                let size = p.len() / b;
                next.extend(p.chunks(size).take(b).map(<[usize]>::to_vec));
            } else {
                let size = (p.len() / b).max(2).min(p.len());
                for _ in 0..b {
                    p.shuffle(rng);
                    next.push(p[..size].to_vec());
                }
            }
        }
        current = next;
    }
    current
}

struct Motif {
    n: usize,
    edges: Vec<(usize, usize)>,
    node_attrs: Vec<Vec<usize>>,
    edge_attrs: Vec<Vec<usize>>,
}

/// Random connected graph: a random tree plus about `n / 3` extra edges.
fn motif<R: Rng + ?Sized>(spec: &SyntheticSpec, palette: &[usize], rng: &mut R) -> Motif {
    let n = rng.random_range(spec.motif_min..=spec.motif_max);
    let mut adj = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        adj[u][v] = true;
        adj[v][u] = true;
        edges.push((u, v));
    }
    for _ in 0..n / 3 {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v && !adj[u][v] {
            adj[u][v] = true;
            adj[v][u] = true;
            edges.push((u.min(v), u.max(v)));
        }
    }
    let node_attrs = (0..n)
        .map(|_| vec![palette[rng.random_range(0..palette.len())]])
        .collect();
    let edge_attrs = edges
        .iter()
        .map(|_| vec![rng.random_range(0..spec.edge_types)])
        .collect();
    Motif {
        n,
        edges,
        node_attrs,
        edge_attrs,
    }
}

fn flip<R: Rng + ?Sized>(value: usize, vocab: usize, rate: f64, rng: &mut R) -> usize {
    if vocab < 2 || rate == 0.0 || !rng.random_bool(rate) {
        return value;
    }
    let j = rng.random_range(0..vocab - 1);
    if j >= value {
        j + 1
    } else {
        j
    }
}

fn noisy_copy<R: Rng + ?Sized>(spec: &SyntheticSpec, m: &Motif, rng: &mut R) -> Result<Graph> {
    let mut edges = m.edges.clone();
    let mut edge_attrs: Vec<Vec<usize>> = m
        .edge_attrs
        .iter()
        .map(|a| vec![flip(a[0], spec.edge_types, spec.attr_noise, rng)])
        .collect();
    let extra = if spec.edge_noise > 0.0 {
        Binomial::new(m.edges.len() as u64, spec.edge_noise)
            .expect("rate in [0, 1]")
            .sample(rng) as usize
    } else {
        0
    };
    let mut adj = vec![vec![false; m.n]; m.n];
    for &(u, v) in &edges {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    let free = m.n * (m.n - 1) / 2 - edges.len();
    for _ in 0..extra.min(free) {
        loop {
            let (u, v) = (rng.random_range(0..m.n), rng.random_range(0..m.n));
            if u != v && !adj[u][v] {
                adj[u][v] = true;
                adj[v][u] = true;
                edges.push((u.min(v), u.max(v)));
                edge_attrs.push(vec![rng.random_range(0..spec.edge_types)]);
                break;
            }
        }
    }
    let node_attrs = m
        .node_attrs
        .iter()
        .map(|a| vec![flip(a[0], spec.node_types, spec.attr_noise, rng)])
        .collect();
    Graph::new(m.n, &edges, node_attrs, edge_attrs)
}

/// Generates a labeled dataset whose leaf classes are noisy copies of
/// class motifs; sibling leaves draw node types from a shared palette.
/// Labels are the one-hot leaf class and `classes` holds the ancestor path.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = substream(spec.seed, Purpose::Generator, 0, 0);
    let pals = palettes(spec, &mut rng);
    let leaves = spec.num_leaves();
    let per_parent = spec.branching[spec.levels - 1];
    let motifs: Vec<Motif> = (0..leaves)
        .map(|leaf| motif(spec, &pals[leaf / per_parent], &mut rng))
        .collect();

    let mut items: Vec<(Graph, Split)> = Vec::with_capacity(leaves * spec.graphs_per_leaf);
    let n = spec.graphs_per_leaf;
    let n_train = (spec.train_frac * n as f64 + 1e-9).floor() as usize;
    let n_valid = (spec.valid_frac * n as f64 + 1e-9).floor() as usize;
    for (leaf, m) in motifs.iter().enumerate() {
        let label: Vec<Option<bool>> = (0..leaves).map(|c| Some(c == leaf)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut split_of = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            split_of[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
        }
        for s in split_of {
            let g = noisy_copy(spec, m, &mut rng)?
                .with_label(label.clone())
                .with_classes(spec.class_path(leaf));
            items.push((g, s));
        }
    }
    items.shuffle(&mut rng);
    let (graphs, splits) = items.into_iter().unzip();
    let schema = AttrSchema {
        node_vocab: vec![spec.node_types],
        edge_vocab: vec![spec.edge_types],
    };
    Dataset::new(&schema, graphs, splits, Some(spec.branching.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            graphs_per_leaf: 10,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn class_arithmetic() {
        let spec = SyntheticSpec::default();
        assert_eq!(spec.num_leaves(), 8);
        let parents: std::collections::BTreeSet<usize> =
            (0..8).map(|l| spec.class_path(l)[0]).collect();
        assert_eq!(parents.len(), 4);
        assert_eq!(spec.class_path(5), vec![2, 5]);
    }

    #[test]
    fn zero_noise_copies_are_identical() {
        let spec = SyntheticSpec {
            edge_noise: 0.0,
            attr_noise: 0.0,
            ..small_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let leaves = ds.leaf_classes().unwrap();
        for c in 0..8 {
            let members: Vec<&Graph> = ds
                .graphs
                .iter()
                .zip(&leaves)
                .filter(|(_, &l)| l == c)
                .map(|(g, _)| g)
                .collect();
            assert_eq!(members.len(), 10);
            assert!(members.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn labels_follow_the_hierarchy() {
        let spec = small_spec();
        let ds = generate_synthetic(&spec).unwrap();
        for g in &ds.graphs {
            let path = g.classes.as_ref().unwrap();
            assert_eq!(path[0], path[1] / 2);
            let label = g.label.as_ref().unwrap();
            assert_eq!(label.iter().position(|x| *x == Some(true)), Some(path[1]));
        }
        assert_eq!(
            ds.manifest.splits,
            SplitCounts {
                train: 64,
                valid: 8,
                test: 8
            }
        );
    }

    #[test]
    fn motif_size_below_two_is_rejected() {
        let spec = SyntheticSpec {
            motif_min: 1,
            ..small_spec()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small_spec()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn generator_is_byte_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_dataset(a.path(), &generate_synthetic(&small_spec()).unwrap()).unwrap();
        save_dataset(b.path(), &generate_synthetic(&small_spec()).unwrap()).unwrap();
        for f in [MANIFEST_FILE, GRAPHS_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small_spec()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        fs::write(dir.path().join(GRAPHS_FILE), "").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small_spec()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let text = fs::read_to_string(dir.path().join(GRAPHS_FILE)).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = "{\"n\": 2,".into();
        fs::write(dir.path().join(GRAPHS_FILE), lines.join("\n")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_vocabulary_names_the_graph() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small_spec()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let text = fs::read_to_string(dir.path().join(GRAPHS_FILE)).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut rec: serde_json::Value = serde_json::from_str(&lines[4]).unwrap();
        rec["node_attrs"][0][0] = serde_json::json!(99);
        lines[4] = rec.to_string();
        fs::write(dir.path().join(GRAPHS_FILE), lines.join("\n")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::InvalidGraph { graph, msg }) => {
                assert_eq!(graph, 4);
                assert!(msg.contains("99"), "{msg}");
            }
            other => panic!("expected vocabulary error, got {other:?}"),
        }
    }
}
