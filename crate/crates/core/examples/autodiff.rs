//! Reverse-mode gradients on the tape, checked against central differences.
//!
//! cargo run --example autodiff

use graphlog::tensor::{ParamSet, Tape, Tensor};

/// loss = mean(softmax(relu(x W)) . t) - cos(x_0, x_1)
fn loss(
    params: &ParamSet,
    tape: &mut Tape,
    x: graphlog::tensor::ParamId,
    w: graphlog::tensor::ParamId,
) -> graphlog::Result<graphlog::tensor::Var> {
    let xv = tape.param(params, x)?;
    let wv = tape.param(params, w)?;
    let hidden = tape.matmul(xv, wv)?;
    let hidden = tape.relu(hidden)?;
    let p = tape.softmax(hidden)?;
    let target = tape.constant(Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0])?)?;
    let fit = tape.mul(p, target)?;
    let fit = tape.mean(fit)?;
    let rows = tape.row_gather(xv, &[0])?;
    let other = tape.row_gather(xv, &[1])?;
    let cos = tape.cosine_rows(rows, other)?;
    let cos = tape.sum(cos)?;
    tape.sub(fit, cos)
}

fn main() -> graphlog::Result<()> {
    let mut params = ParamSet::new();
    let x = params.add(
        "x",
        Tensor::matrix(2, 4, vec![0.3, -1.2, 0.8, 0.5, 1.1, 0.4, -0.7, 0.2])?,
    );
    let w = params.add(
        "w",
        Tensor::matrix(
            4,
            3,
            (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect(),
        )?,
    );

    let mut tape = Tape::new();
    let l = loss(&params, &mut tape, x, w)?;
    println!("loss {:.6} on a tape of {} nodes", tape.item(l), tape.len());
    tape.backward(l, &mut params)?;

    let eps = 1e-6;
    let mut worst = 0.0f64;
    for id in [x, w] {
        let analytic = params.get(id).grad().unwrap().to_vec();
        for (k, &a) in analytic.iter().enumerate() {
            let probe = |delta: f64| -> graphlog::Result<f64> {
                let mut p = params.clone();
                p.get_mut(id).data_mut()[k] += delta;
                let mut t = Tape::new();
                let v = loss(&p, &mut t, x, w)?;
                Ok(t.item(v))
            };
            let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
            worst = worst.max((a - numeric).abs());
        }
        println!(
            "d loss / d {}: {:?}",
            params.name(id),
            params.get(id).grad().unwrap()
        );
    }
    println!("largest gap to finite differences: {worst:.2e}");
    Ok(())
}
