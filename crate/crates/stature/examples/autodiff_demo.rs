//! The differentiation engine by itself: record operations on a tape, get
//! gradients from one reverse sweep, sanity-check them against finite
//! differences, then descend on a tiny regression problem.

use stature::autodiff::{init_params, LayoutBuilder, SgdMomentum, Tape, Tensor};
use stature::rng::Rng;

fn main() -> stature::Result<()> {
    // y = relu(x W1 + b1) W2 + b2, MSE against targets.
    let mut layout = LayoutBuilder::new();
    layout.add("w1", &[2, 8]).add("b1", &[8]).add("w2", &[8, 1]).add("b2", &[1]);
    let mut params = init_params(layout.build(), 5);

    let mut rng = Rng::new(9);
    let n = 64;
    let xs: Vec<f64> = (0..n * 2).map(|_| rng.range(-1.0, 1.0)).collect();
    let ys: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (xs[2 * i], xs[2 * i + 1]);
            (a - 0.3 * b).tanh() + 0.5 * b
        })
        .collect();

    let forward = |params: &stature::model::ModelParams| -> stature::Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![n, 2], xs.clone())?)?;
        let mut vars = Vec::new();
        for slice in &params.layout {
            let data = params.values[slice.offset..slice.offset + slice.len()].to_vec();
            vars.push(tape.leaf(Tensor::new(slice.shape.clone(), data)?)?);
        }
        let h = tape.dense(x, vars[0], vars[1])?;
        let h = tape.relu(h)?;
        let pred = tape.dense(h, vars[2], vars[3])?;
        let target = tape.leaf(Tensor::column(&ys))?;
        let loss = tape.mse_loss(pred, target)?;
        let grads = tape.backward(loss)?;
        let mut flat = vec![0.0; params.values.len()];
        for (slice, var) in params.layout.iter().zip(&vars) {
            if let Some(g) = grads.get(*var) {
                flat[slice.offset..slice.offset + slice.len()].copy_from_slice(g.data());
            }
        }
        Ok((tape.value(loss).item(), flat))
    };

    // Spot-check one gradient against central differences.
    let (loss0, grads) = forward(&params)?;
    let probe = 3;
    let h = 1e-6;
    let mut shifted = params.clone();
    shifted.values[probe] += h;
    let (hi, _) = forward(&shifted)?;
    shifted.values[probe] -= 2.0 * h;
    let (lo, _) = forward(&shifted)?;
    let numeric = (hi - lo) / (2.0 * h);
    println!("initial loss {loss0:.5}");
    println!("d loss / d theta[{probe}]: analytic {:.8}, finite difference {numeric:.8}", grads[probe]);

    let mut optimizer = SgdMomentum::new(0.05, 0.9, params.values.len());
    for step in 0..400 {
        let (loss, grads) = forward(&params)?;
        optimizer.step(&mut params, &grads)?;
        if step % 100 == 0 {
            println!("step {step:>3}: loss {loss:.6}");
        }
    }
    let (final_loss, _) = forward(&params)?;
    println!("final loss {final_loss:.6}");
    Ok(())
}
