//! Records a small conv → relu → pool → dense network on a tape and compares
//! its reverse-mode gradient with central differences.

use multisurv::autodiff::{grad_check, Parameter, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> multisurv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let kernel = Parameter::new(random(&[3, 2, 3, 3, 3])?);
    let conv_bias = Parameter::new(random(&[3])?);
    let weight = Parameter::new(random(&[3, 1])?);
    let bias = Parameter::new(random(&[1])?);
    let volume = random(&[2, 5, 5, 5])?;

    let net = |tape: &mut Tape, x| {
        let (k, cb) = (tape.param(&kernel), tape.param(&conv_bias));
        let h = tape.conv3d(x, k, cb, 2, 1)?;
        let h = tape.relu(h);
        let pooled = tape.global_avg_pool(h)?;
        let (w, b) = (tape.param(&weight), tape.param(&bias));
        let y = tape.dense(pooled, w, b)?;
        Ok(tape.sum_squares(y))
    };

    let mut tape = Tape::new();
    let x = tape.input(volume.clone());
    let y = net(&mut tape, x)?;
    let grads = tape.backward(y)?;
    println!("tape length {}, output {:.6}", tape.len(), tape.value(y).data()[0]);
    println!("|d/d input| = {:.6}", grads.get(x).map(Tensor::norm).unwrap_or(0.0));
    println!("|d/d kernel| = {:.6}", grads.param(kernel.id()).map(|g| g.norm()).unwrap_or(0.0));

    let err = grad_check(net, &volume, 1e-6)?;
    println!("max relative error against central differences: {err:.2e}");
    Ok(())
}
