//! k-means with pruning, then a prototype forest built bottom-up from
//! clustered points.
//!
//! cargo run --example kmeans_forest

use graphlog::forest::{init_forest, kmeans, ForestInit};
use graphlog::rng::{substream, Purpose};
use graphlog::tensor::ParamSet;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn main() -> graphlog::Result<()> {
    let mut rng = substream(3, Purpose::KMeans, 0, 0);
    let noise = Normal::new(0.0, 0.15).unwrap();

    // six sites in two groups of three, plus a stray point
    let sites = [
        (0.0, 0.0),
        (1.0, 0.0),
        (0.0, 1.0),
        (6.0, 6.0),
        (7.0, 6.0),
        (6.0, 7.0),
    ];
    let mut points: Vec<Vec<f64>> = Vec::new();
    for &(x, y) in &sites {
        for _ in 0..20 {
            points.push(vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)]);
        }
    }
    points.push(vec![30.0, -30.0]);

    let r = kmeans(&points, 8, 100, &mut rng)?;
    println!("k=8: {} centers kept, {} pruned, Lloyd SSE {:.3}, SSE once the stray point is reassigned {:.1}", r.centers.len(), r.pruned, r.lloyd_sse(), r.sse);
    println!(
        "SSE by iteration: {:?}",
        r.history
            .iter()
            .map(|s| (s * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );

    let mut params = ParamSet::new();
    let (forest, runs) = init_forest(
        &mut params,
        &points[..120],
        &[2, 6],
        &ForestInit::default(),
        &mut rng,
    )?;
    println!(
        "forest sizes {:?} (bottom run pruned {})",
        forest.sizes(),
        runs[1].pruned
    );
    for i in 0..forest.sizes()[0] {
        let top = forest.prototype(&params, 0, i);
        println!("top {i} at ({:.2}, {:.2})", top[0], top[1]);
        for &j in forest.children(0, i) {
            let c = forest.prototype(&params, 1, j);
            println!("  leaf {j} at ({:.2}, {:.2})", c[0], c[1]);
        }
    }
    forest.check_well_formed(&params)?;

    let probe = vec![rng.random_range(5.5..7.5), rng.random_range(5.5..7.5)];
    println!(
        "({:.2}, {:.2}) is most cosine-similar to leaf {}",
        probe[0],
        probe[1],
        forest.nearest_bottom(&params, &probe)
    );
    Ok(())
}
