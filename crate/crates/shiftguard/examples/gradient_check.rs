//! Validates reverse-mode gradients against central finite differences.
//!
//! The checked expression mirrors the adaptation objective: two encoder
//! branches ending in row softmax, compared by mean row-wise KL
//! divergence. Every watched tensor's analytic gradient must agree with
//! the numeric one to `DEFAULT_TOLERANCE`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use shiftguard::tensorcore::gradcheck::{
    finite_difference, relative_error, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
use shiftguard::tensorcore::{Tape, Tensor};
use shiftguard::Result;

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> =
        (0..rows * cols).map(|_| rand_distr::StandardNormal.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Mean row KL between softmax of `relu(x w1) w2` and softmax of `x we`.
fn objective(tape: &Tape, x: &Tensor, w1: &Tensor, w2: &Tensor, we: &Tensor) -> Result<Tensor> {
    let main = tape.matmul(&tape.relu(&tape.matmul(x, w1)?)?, w2)?;
    let dual = tape.matmul(x, we)?;
    let p = tape.row_softmax(&main, 0.7)?;
    let q = tape.row_softmax(&dual, 0.7)?;
    tape.kl_rows(&p, &q)
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&mut rng, 12, 6);
    let w1 = randn(&mut rng, 6, 9);
    let w2 = randn(&mut rng, 9, 4);
    let we = randn(&mut rng, 6, 4);
    let inputs: [(&str, &Tensor); 4] = [("x", &x), ("w1", &w1), ("w2", &w2), ("we", &we)];

    let tape = Tape::new();
    let watched: Vec<Tensor> = inputs.iter().map(|(_, t)| tape.watch(t)).collect();
    let loss = objective(&tape, &watched[0], &watched[1], &watched[2], &watched[3])?;
    let grads = tape.backward(&loss)?;
    println!("objective value {:.6}", loss.data()[0]);

    let mut worst = 0.0f64;
    for (i, (name, tensor)) in inputs.iter().enumerate() {
        let numeric = finite_difference(
            |probe| {
                let fresh = Tape::new();
                let mut args: Vec<&Tensor> = inputs.iter().map(|(_, t)| *t).collect();
                args[i] = probe;
                Ok(objective(&fresh, args[0], args[1], args[2], args[3])?.data()[0])
            },
            tensor,
            DEFAULT_STEP,
        )?;
        let err = relative_error(&grads.wrt(&watched[i]), &numeric);
        worst = worst.max(err);
        println!("d/d {name:<3} worst entry error {err:.2e}");
    }

    assert!(worst <= DEFAULT_TOLERANCE, "gradient check failed: {worst:.2e}");
    println!("all four gradients within {DEFAULT_TOLERANCE:.0e} of finite differences");
    Ok(())
}
