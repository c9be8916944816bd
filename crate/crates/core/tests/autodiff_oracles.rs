use multisurv::autodiff::{grad_check, Parameter, ReluRule, Tape, Tensor, Var};
use multisurv::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(x: &[f64], w: &[f64], b: &[f64], n: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        for j in 0..d_out {
            let mut acc = b[j];
            for k in 0..d_in {
                acc += x[i * d_in + k] * w[k * d_out + j];
            }
            out[i * d_out + j] = acc;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> (Vec<f64>, [usize; 3]) {
    let [ci, nx, ny, nz] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let o = |n: usize| (n + 2 * pad - k) / stride + 1;
    let (ox, oy, oz) = (o(nx), o(ny), o(nz));
    let mut out = vec![0.0; co * ox * oy * oz];
    let xv = |c: usize, i: isize, j: isize, l: isize| -> f64 {
        if i < 0 || j < 0 || l < 0 || i >= nx as isize || j >= ny as isize || l >= nz as isize {
            0.0
        } else {
            x.data()[((c * nx + i as usize) * ny + j as usize) * nz + l as usize]
        }
    };
    for c_out in 0..co {
        for a in 0..ox {
            for bb in 0..oy {
                for cc in 0..oz {
                    let mut acc = b[c_out];
                    for c_in in 0..ci {
                        for p in 0..k {
                            for q in 0..k {
                                for r in 0..k {
                                    let wi = (((c_out * ci + c_in) * k + p) * k + q) * k + r;
                                    acc += w.data()[wi]
                                        * xv(
                                            c_in,
                                            (a * stride + p) as isize - pad as isize,
                                            (bb * stride + q) as isize - pad as isize,
                                            (cc * stride + r) as isize - pad as isize,
                                        );
                                }
                            }
                        }
                    }
                    out[((c_out * ox + a) * oy + bb) * oz + cc] = acc;
                }
            }
        }
    }
    (out, [ox, oy, oz])
}

#[test]
fn dense_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[3, 4], &mut rng);
    let w = Parameter::new(random(&[4, 2], &mut rng));
    let b = Parameter::new(random(&[2], &mut rng));
    let mut t = Tape::new();
    let xv = t.input(x.clone());
    let (wv, bv) = (t.param(&w), t.param(&b));
    let y = t.dense(xv, wv, bv).unwrap();
    let oracle = naive_matmul(x.data(), w.value().data(), b.value().data(), 3, 4, 2);
    assert_eq!(t.value(y).shape(), &[3, 2]);
    for (a, o) in t.value(y).data().iter().zip(&oracle) {
        assert!((a - o).abs() <= 1e-12);
    }
}

#[test]
fn dense_identity_passes_input() {
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let w = Parameter::new(Tensor::new(vec![3, 3], eye).unwrap());
    let b = Parameter::new(Tensor::zeros(&[3]));
    let mut t = Tape::new();
    let x = t.input(Tensor::vector(vec![0.5, -2.0, 7.0]));
    let (wv, bv) = (t.param(&w), t.param(&b));
    let y = t.dense(x, wv, bv).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, -2.0, 7.0]);
}

#[test]
fn conv_matches_seven_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (stride, pad) in [(2, 0), (2, 1), (1, 1)] {
        let x = random(&[2, 6, 6, 6], &mut rng);
        let w = Parameter::new(random(&[3, 2, 3, 3, 3], &mut rng));
        let b = Parameter::new(random(&[3], &mut rng));
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let (wv, bv) = (t.param(&w), t.param(&b));
        let y = t.conv3d(xv, wv, bv, stride, pad).unwrap();
        let (oracle, ext) = naive_conv(&x, w.value(), b.value().data(), stride, pad);
        assert_eq!(&t.value(y).shape()[1..], &ext);
        for (a, o) in t.value(y).data().iter().zip(&oracle) {
            assert!((a - o).abs() <= 1e-12, "stride {stride} pad {pad}");
        }
    }
}

#[test]
fn conv_identity_and_constant_field() {
    let x = Tensor::new(vec![1, 3, 3, 3], (0..27).map(|v| v as f64).collect()).unwrap();
    let w = Parameter::new(Tensor::full(&[1, 1, 1, 1, 1], 1.0));
    let b = Parameter::new(Tensor::zeros(&[1]));
    let mut t = Tape::new();
    let xv = t.input(x.clone());
    let (wv, bv) = (t.param(&w), t.param(&b));
    let y = t.conv3d(xv, wv, bv, 1, 0).unwrap();
    assert_eq!(t.value(y), &x);

    let x = Tensor::full(&[1, 5, 5, 5], 2.0);
    let w = Parameter::new(Tensor::full(&[1, 1, 3, 3, 3], 1.0));
    let mut t = Tape::new();
    let xv = t.input(x);
    let (wv, bv) = (t.param(&w), t.param(&b));
    let y = t.conv3d(xv, wv, bv, 1, 0).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 54.0));
}

#[test]
fn conv_adjoint_identity() {
    // <conv(x), y> = <x, conv^T(y)> with the bias off
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let x = random(&[2, 5, 6, 4], &mut rng);
        let w = Parameter::new(random(&[3, 2, 3, 3, 3], &mut rng));
        let b = Parameter::new(Tensor::zeros(&[3]));
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let (wv, bv) = (t.param(&w), t.param(&b));
        let c = t.conv3d(xv, wv, bv, 2, 1).unwrap();
        let y = random(t.value(c).shape(), &mut rng);
        let s = t.weighted_sum(c, y.data().to_vec()).unwrap();
        let lhs = t.value(s).data()[0];
        let g = t.backward(s).unwrap();
        let rhs = x.dot(g.get(xv).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}

fn composite(t: &mut Tape, x: Var, w1: &Parameter, b1: &Parameter, k: &Parameter, kb: &Parameter) -> Var {
    let (kv, kbv) = (t.param(k), t.param(kb));
    let c = t.conv3d(x, kv, kbv, 1, 1).unwrap();
    let r = t.relu(c);
    let p = t.global_avg_pool(r).unwrap();
    let extra = t.input(Tensor::vector(vec![0.3, -0.7]));
    let cat = t.concat(p, extra).unwrap();
    let (wv, bv) = (t.param(w1), t.param(b1));
    let d = t.dense(cat, wv, bv).unwrap();
    let r2 = t.relu(d);
    let half = t.scale(r2, 0.5);
    let sq = t.sum_squares(half);
    let lp = t.interval_log_prob(d, 2, 3).unwrap();
    t.add(sq, lp).unwrap()
}

fn finite_difference(f: &dyn Fn(&Tensor) -> f64, at: &Tensor, h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut plus = at.clone();
            plus.data_mut()[i] += h;
            let mut minus = at.clone();
            minus.data_mut()[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn composite_parameter_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[1, 3, 3, 3], &mut rng);
        let k = Parameter::new(random(&[2, 1, 3, 3, 3], &mut rng));
        let kb = Parameter::new(random(&[2], &mut rng).map(|v| v + 0.5));
        let w1 = Parameter::new(random(&[4, 3], &mut rng));
        let b1 = Parameter::new(random(&[3], &mut rng));

        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let out = composite(&mut t, xv, &w1, &b1, &k, &kb);
        let g = t.backward(out).unwrap();

        let eval = |w1v: &Tensor, kv: &Tensor| {
            let mut w1c = w1.clone();
            w1c.set_value(w1v.clone()).unwrap();
            let mut kc = k.clone();
            kc.set_value(kv.clone()).unwrap();
            let mut t = Tape::new();
            let xv = t.input(x.clone());
            let o = composite(&mut t, xv, &w1c, &b1, &kc, &kb);
            t.value(o).data()[0]
        };
        let fd_w = finite_difference(&|p| eval(p, k.value()), w1.value(), 1e-5);
        let fd_k = finite_difference(&|p| eval(w1.value(), p), k.value(), 1e-5);
        for (a, n) in g.param(w1.id()).unwrap().data().iter().zip(&fd_w) {
            assert!((a - n).abs() / a.abs().max(1.0) <= 1e-6, "seed {seed}: {a} vs {n}");
        }
        for (a, n) in g.param(k.id()).unwrap().data().iter().zip(&fd_k) {
            assert!((a - n).abs() / a.abs().max(1.0) <= 1e-6, "seed {seed}: {a} vs {n}");
        }
    }
}

#[test]
fn dense_relu_sum_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random(&[5, 4], &mut rng);
    let point = random(&[5], &mut rng);
    let err = grad_check(
        |t, x| {
            let wv = t.input(w.clone());
            let b = t.input(Tensor::full(&[4], 0.1));
            let d = t.dense(x, wv, b)?;
            let r = t.relu(d);
            Ok(t.sum(r))
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6);
}

#[test]
fn backward_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = Parameter::new(random(&[3, 4], &mut rng));
    let b = Parameter::new(random(&[4], &mut rng));
    let x = random(&[3], &mut rng);
    let (alpha, beta) = (0.7, -1.3);
    let grads = |which: u8| {
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let (wv, bv) = (t.param(&w), t.param(&b));
        let d = t.dense(xv, wv, bv).unwrap();
        let r = t.relu(d);
        let f = t.sum_squares(r);
        let g = t.interval_log_prob(d, 1, 2).unwrap();
        let seed = match which {
            0 => f,
            1 => g,
            _ => {
                let a = t.scale(f, alpha);
                let bb = t.scale(g, beta);
                t.add(a, bb).unwrap()
            }
        };
        t.backward(seed).unwrap().param(w.id()).unwrap()
    };
    let (gf, gg, gc) = (grads(0), grads(1), grads(2));
    for i in 0..gc.len() {
        let expect = alpha * gf.data()[i] + beta * gg.data()[i];
        assert!((gc.data()[i] - expect).abs() <= 1e-12);
    }
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[1, 4, 4, 4], &mut rng);
    let k = Parameter::new(random(&[2, 1, 3, 3, 3], &mut rng));
    let kb = Parameter::new(random(&[2], &mut rng));
    let w1 = Parameter::new(random(&[4, 3], &mut rng));
    let b1 = Parameter::new(random(&[3], &mut rng));
    let mut t = Tape::new();
    let xv = t.input(x);
    let out = composite(&mut t, xv, &w1, &b1, &k, &kb);
    let a = t.backward(out).unwrap();
    let b = t.backward(out).unwrap();
    for p in [&k, &kb, &w1, &b1] {
        assert_eq!(a.param(p.id()), b.param(p.id()));
    }
}

#[test]
fn guided_rule_blocks_negative_gradients() {
    let mut t = Tape::new();
    let x = t.input(Tensor::vector(vec![1.0, 2.0, -1.0]));
    let r = t.relu(x);
    let s = t.weighted_sum(r, vec![-1.0, 3.0, 5.0]).unwrap();
    let standard = t.backward_with(s, ReluRule::Standard).unwrap();
    let guided = t.backward_with(s, ReluRule::Guided).unwrap();
    assert_eq!(standard.get(x).unwrap().data(), &[-1.0, 3.0, 0.0]);
    assert_eq!(guided.get(x).unwrap().data(), &[0.0, 3.0, 0.0]);
}

#[test]
fn shape_errors_are_reported() {
    let mut t = Tape::new();
    let x = t.input(Tensor::vector(vec![1.0, 2.0]));
    let w = t.input(Tensor::zeros(&[3, 1]));
    let b = t.input(Tensor::zeros(&[1]));
    assert!(matches!(t.dense(x, w, b), Err(Error::Dimension { .. })));
    let v = t.input(Tensor::zeros(&[1, 2, 2, 2]));
    let k = t.input(Tensor::zeros(&[1, 1, 5, 5, 5]));
    assert!(matches!(t.conv3d(v, k, b, 1, 0), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn pool_adjoint_spreads_evenly(c in 1usize..3, n in 1usize..4, g in -5.0f64..5.0) {
        let mut t = Tape::new();
        let x = t.input(Tensor::zeros(&[c, n, n, 2]));
        let p = t.global_avg_pool(x).unwrap();
        let s = t.weighted_sum(p, vec![g; c]).unwrap();
        let grads = t.backward(s).unwrap();
        let expect = g / (n * n * 2) as f64;
        prop_assert!(grads.get(x).unwrap().data().iter().all(|&v| v == expect));
    }

    #[test]
    fn concat_keeps_order(a in prop::collection::vec(-10.0f64..10.0, 0..5), b in prop::collection::vec(-10.0f64..10.0, 1..5)) {
        let mut t = Tape::new();
        let av = t.input(Tensor::vector(a.clone()));
        let bv = t.input(Tensor::vector(b.clone()));
        let c = t.concat(av, bv).unwrap();
        let mut both = a.clone();
        both.extend(&b);
        prop_assert_eq!(t.value(c).data(), &both[..]);
    }

    #[test]
    fn interval_log_prob_grad_check(logits in prop::collection::vec(-3.0f64..3.0, 3..7), first in 1usize..4) {
        let k = logits.len() + 1;
        let first = first.min(k);
        let err = grad_check(|t, x| t.interval_log_prob(x, first, k), &Tensor::vector(logits), 1e-5).unwrap();
        prop_assert!(err <= 1e-6);
    }
}
