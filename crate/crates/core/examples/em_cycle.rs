//! One online EM cycle by hand: sample latent chains top-down (E-step), then
//! take a gradient step on the NCE surrogate (M-step) and watch the
//! monitored mini-batch log-likelihood.
//!
//! cargo run --example em_cycle

use graphlog::em::{
    e_step_batch, energy_value, monitored_mb_loglik, nce_global_loss, NegativeWeighting,
};
use graphlog::forest::{init_forest, ForestInit};
use graphlog::optim::{Adam, AdamConfig};
use graphlog::rng::{substream, Purpose};
use graphlog::tensor::{ParamSet, Tape, Tensor};
use rand_distr::{Distribution, Normal};

fn main() -> graphlog::Result<()> {
    // embeddings scattered around four directions in 6-d
    let mut rng = substream(11, Purpose::Generator, 0, 0);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            (0..6)
                .map(|j| f64::from(u8::from(j == i % 4)) * 2.0 + noise.sample(&mut rng))
                .collect()
        })
        .collect();

    let mut params = ParamSet::new();
    let h = params.add("h", Tensor::from_rows(&rows)?);
    let (forest, _) = init_forest(
        &mut params,
        &rows,
        &[2, 4],
        &ForestInit::default(),
        &mut rng,
    )?;
    println!("forest sizes {:?}", forest.sizes());

    let mut adam = Adam::new(AdamConfig::default());
    let mut ids = vec![h];
    ids.extend_from_slice(forest.param_ids());
    for step in 0..60u64 {
        let chains = e_step_batch(params.get(h), &forest, &params, 0.2, 11, step)?;
        let monitored = monitored_mb_loglik(params.get(h), &chains, &forest, &params)?;

        let mut tape = Tape::new();
        let hv = tape.param(&params, h)?;
        let nce = nce_global_loss(
            &mut tape,
            hv,
            &chains,
            &forest,
            &params,
            NegativeWeighting::Mean,
            &mut substream(11, Purpose::Nce, step, 0),
        )?;
        if step % 10 == 0 {
            let first = &chains[0];
            let v = forest.chain_vectors(&params, &first.indices)?;
            println!(
                "step {step:>2}: NCE {:+.4}  monitored {monitored:8.3}  graph 0 -> chain {:?} (p = {:.3}, f = {:.3})",
                tape.item(nce.loss),
                first.indices,
                first.log_prob.exp(),
                energy_value(params.get(h).row(0), &v)
            );
        }
        params.zero_grad();
        tape.backward(nce.loss, &mut params)?;
        adam.step(&mut params, &ids, 1e-2, true)?;
    }
    Ok(())
}
