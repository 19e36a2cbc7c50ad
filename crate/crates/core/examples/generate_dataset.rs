//! Generate a planted-hierarchy dataset, inspect it and write it to disk.
//!
//! cargo run --example generate_dataset -- [out_dir]

use std::collections::BTreeMap;
use std::path::PathBuf;

use graphlog::data::{generate_synthetic, load_dataset, save_dataset, Split, SyntheticSpec};

fn main() -> graphlog::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("graphlog-synthetic"));

    // two coarse classes, each split into three leaves
    let spec = SyntheticSpec {
        branching: vec![2, 3],
        graphs_per_leaf: 40,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec)?;
    println!("{} graphs, {} leaf classes", ds.len(), spec.num_leaves());
    for split in [Split::Train, Split::Valid, Split::Test] {
        println!("  {split:?}: {}", ds.indices(split).len());
    }

    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for g in &ds.graphs {
        *sizes.entry(g.num_nodes()).or_default() += 1;
    }
    println!("node counts: {sizes:?}");

    let g = &ds.graphs[0];
    println!(
        "graph 0: {} nodes, {} edges, class path {:?}, labels {:?}",
        g.num_nodes(),
        g.num_undirected_edges(),
        g.classes.as_ref().unwrap(),
        g.label.as_ref().unwrap()
    );
    for leaf in 0..spec.num_leaves() {
        println!("  leaf {leaf} sits under {:?}", spec.class_path(leaf));
    }

    save_dataset(&out, &ds)?;
    let back = load_dataset(&out)?;
    assert_eq!(back.graphs, ds.graphs);
    println!("wrote and reloaded {}", out.display());
    Ok(())
}
