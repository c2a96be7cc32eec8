use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Central finite differences on every input element; returns the worst
/// norm-wise relative error over inputs.
fn gradcheck<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let h = 1e-5;
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|v| v.grad().unwrap()).collect();

    let eval = |ins: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).item()
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let mut num = vec![0.0; input.len()];
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            num[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let a = analytic[k].data();
        let diff: f64 = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-10));
    }
    worst
}

fn projection(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn conv_identity_kernel_reproduces_input() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = tape.constant(rand_tensor(&[1, 5, 6], &mut rng));
    let mut p = ConvParams::zeros(1, 1);
    p.weight.data_mut()[4] = 1.0;
    let y = p.bind(&tape, false).apply(x).unwrap();
    assert_eq!(*y.value(), *x.value());
}

#[test]
fn conv_zero_kernel_gives_bias() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = tape.constant(rand_tensor(&[2, 4, 4], &mut rng));
    let mut p = ConvParams::zeros(2, 3);
    p.bias = Tensor::new(&[3], vec![0.25, -1.5, 3.0]).unwrap();
    let y = p.bind(&tape, false).apply(x).unwrap();
    let v = y.value();
    for o in 0..3 {
        for i in 0..16 {
            assert_eq!(v.data()[o * 16 + i], p.bias.data()[o]);
        }
    }
}

/// Independent triple-loop direct sum with explicit zero padding.
fn naive_conv(x: &Tensor, p: &ConvParams) -> Tensor {
    let (c, h, w) = x.dims3().unwrap();
    let o = p.out_channels();
    let mut out = Tensor::zeros(&[o, h, w]);
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..w {
                let mut s = p.bias.data()[oc];
                for ic in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += p.weight.data()[((oc * c + ic) * 3 + ky) * 3 + kx]
                                    * x.at3(ic, iy as usize, ix as usize);
                            }
                        }
                    }
                }
                out.data_mut()[(oc * h + y) * w + xx] = s;
            }
        }
    }
    out
}

#[test]
fn conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&[2, 8, 8], &mut rng);
    let mut p = ConvParams::zeros(2, 4);
    p.weight = rand_tensor(&[4, 2, 3, 3], &mut rng);
    p.bias = rand_tensor(&[4], &mut rng);
    let tape = Tape::new();
    let y = p.bind(&tape, false).apply(tape.constant(x.clone())).unwrap();
    let oracle = naive_conv(&x, &p);
    for (a, b) in y.value().data().iter().zip(oracle.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3, 4, 4]));
    let p = ConvParams::zeros(2, 2).bind(&tape, false);
    let err = p.apply(x).unwrap_err();
    assert!(err.to_string().contains("channels"), "{}", err);
}

#[test]
fn conv_is_linear_without_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = ConvParams::zeros(2, 3);
    p.weight = rand_tensor(&[3, 2, 3, 3], &mut rng);
    let x = rand_tensor(&[2, 6, 5], &mut rng);
    let y = rand_tensor(&[2, 6, 5], &mut rng);
    let (a, b) = (0.7, -1.3);
    let tape = Tape::new();
    let cv = p.bind(&tape, false);
    let combo = Tensor::from_fn(&[2, 6, 5], |i| a * x.data()[i] + b * y.data()[i]);
    let lhs = cv.apply(tape.constant(combo)).unwrap();
    let cx = cv.apply(tape.constant(x)).unwrap();
    let cy = cv.apply(tape.constant(y)).unwrap();
    let (lhs, cx, cy) = (lhs.value(), cx.value(), cy.value());
    for i in 0..lhs.len() {
        assert!((lhs.data()[i] - (a * cx.data()[i] + b * cy.data()[i])).abs() < 1e-10);
    }
}

#[test]
fn residual_block_with_zero_body_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tape = Tape::new();
    let x = tape.constant(rand_tensor(&[3, 5, 5], &mut rng));
    let body = [0, 1, 2].map(|_| ConvParams::zeros(3, 3).bind(&tape, false));
    let y = residual_block(x, &body).unwrap();
    assert_eq!(*y.value(), *x.value());
}

#[test]
fn residual_block_bias_only_on_zero_input() {
    // body weights zero: conv1 -> b1, relu, conv2 -> b2, relu, conv3 -> b3.
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
    let mut ps = [0, 1, 2].map(|_| ConvParams::zeros(2, 2));
    ps[0].bias = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
    ps[1].bias = Tensor::new(&[2], vec![0.5, 0.5]).unwrap();
    ps[2].bias = Tensor::new(&[2], vec![-2.0, 3.0]).unwrap();
    let body = [&ps[0], &ps[1], &ps[2]].map(|p| p.bind(&tape, false));
    let y = residual_block(x, &body).unwrap();
    {
        let v = y.value();
        assert!(v.data()[..16].iter().all(|&e| e == -2.0));
        assert!(v.data()[16..].iter().all(|&e| e == 3.0));
    }

    // with a nonzero weight on the last conv the relu'd bias response propagates
    let mut ps2 = ps.clone();
    ps2[2].weight.data_mut()[4] = 1.0; // out0 <- in0 center tap
    let body = [&ps2[0], &ps2[1], &ps2[2]].map(|p| p.bind(&tape, false));
    let y = residual_block(x, &body).unwrap();
    // relu(0.5) = 0.5 feeds out channel 0: -2 + 0.5
    assert!(y.value().data()[..16].iter().all(|&e| e == -1.5));
}

#[test]
fn residual_block_matches_sequential_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&[2, 6, 6], &mut rng);
    let ps: Vec<ConvParams> = (0..3)
        .map(|_| {
            let mut p = ConvParams::zeros(2, 2);
            p.weight = rand_tensor(&[2, 2, 3, 3], &mut rng);
            p.bias = rand_tensor(&[2], &mut rng);
            p
        })
        .collect();
    let relu = |t: Tensor| Tensor::from_fn(t.shape(), |i| t.data()[i].max(0.0));
    let h = relu(naive_conv(&x, &ps[0]));
    let h = relu(naive_conv(&h, &ps[1]));
    let h = naive_conv(&h, &ps[2]);
    let tape = Tape::new();
    let body = [&ps[0], &ps[1], &ps[2]].map(|p| p.bind(&tape, false));
    let y = residual_block(tape.constant(x.clone()), &body).unwrap();
    for i in 0..x.len() {
        assert!((y.value().data()[i] - (x.data()[i] + h.data()[i])).abs() < 1e-12);
    }
}

#[test]
fn residual_block_rejects_channel_change() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
    let body = [
        ConvParams::zeros(2, 2).bind(&tape, false),
        ConvParams::zeros(2, 2).bind(&tape, false),
        ConvParams::zeros(2, 3).bind(&tape, false),
    ];
    assert!(residual_block(x, &body).is_err());
}

#[test]
fn down2_mean_of_four() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
    let y = x.down2().unwrap();
    assert_eq!(y.shape(), vec![1, 1, 1]);
    assert_eq!(y.item(), 4.0);
}

#[test]
fn up2_preserves_constants() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::full(&[2, 3, 5], 1.75));
    let y = x.up2().unwrap();
    assert_eq!(y.shape(), vec![2, 6, 10]);
    assert!(y.value().data().iter().all(|&v| (v - 1.75).abs() < 1e-15));
}

#[test]
fn up2_down2_ramp_deviation_bounded_by_slope() {
    let slope = 0.37;
    let (h, w) = (8, 12);
    let tape = Tape::new();
    let x = tape.constant(Tensor::from_fn(&[1, h, w], |i| slope * (i % w) as f64));
    let y = x.down2().unwrap().up2().unwrap();
    let (xv, yv) = (x.value(), y.value());
    let worst = xv
        .data()
        .iter()
        .zip(yv.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= slope + 1e-12, "deviation {}", worst);
    // interior columns reproduce the ramp exactly
    for y in 0..h {
        for x in 1..w - 1 {
            assert!((xv.at3(0, y, x) - yv.at3(0, y, x)).abs() < 1e-12);
        }
    }
}

#[test]
fn resample_rejects_empty() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 0, 4]));
    assert!(x.down2().is_err());
    assert!(x.up2().is_err());
}

#[test]
fn pointwise_and_pool_basics() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    assert_eq!(z.sigmoid().item(), 0.5);
    let x = tape.constant(Tensor::new(&[4], vec![-2.0, -0.0, 0.5, 3.0]).unwrap());
    let r1 = x.relu();
    let r2 = r1.relu();
    assert_eq!(*r1.value(), *r2.value());
    let big = tape.constant(Tensor::new(&[3], vec![-800.0, 0.0, 800.0]).unwrap()).sigmoid();
    assert!(big.value().data().iter().all(|v| v.is_finite()));

    let c = tape.constant(Tensor::from_fn(&[2, 3, 3], |i| if i < 9 { 2.5 } else { -1.0 }));
    let g = c.global_avg_pool().unwrap();
    assert_eq!(g.shape(), vec![2, 1, 1]);
    assert_eq!(g.value().data(), &[2.5, -1.0]);
}

#[test]
fn linear_identity_and_mismatch() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
    let eye = tape.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = x.linear(eye, b).unwrap();
    assert_eq!(*y.value(), *x.value());
    let w_bad = tape.constant(Tensor::zeros(&[2, 4]));
    let b2 = tape.constant(Tensor::zeros(&[2]));
    assert!(x.linear(w_bad, b2).is_err());
}

#[test]
fn backward_of_sum_of_squares() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[3], vec![1.0, -2.0, 0.25]).unwrap(), true);
    let loss = x.mul(x).unwrap().sum();
    tape.backward(loss).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0, 0.5]);
}

#[test]
fn sigmoid_grad_at_zero() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0), true);
    tape.backward(x.sigmoid()).unwrap();
    assert_eq!(x.grad().unwrap().item(), 0.25);
}

#[test]
fn backward_contract_errors() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
    assert!(tape.backward(x.relu()).is_err());
    let loss = x.sum();
    tape.backward(loss).unwrap();
    assert!(tape.backward(loss).is_err());
    tape.reset();
    tape.backward(loss).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn constants_get_no_grad() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(3.0), true);
    let c = tape.constant(Tensor::scalar(2.0));
    tape.backward(a.mul(c).unwrap()).unwrap();
    assert_eq!(a.grad().unwrap().item(), 2.0);
    assert!(c.grad().is_none());
}

#[test]
fn gradcheck_conv_pool_and_pointwise() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&[2, 5, 6], &mut rng);
        let w = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        let proj = projection(3 * 3 * 3, seed);
        let err = gradcheck(&[x, w, b], |_, v| {
            v[0].conv2d(v[1], v[2], 2, 1)
                .unwrap()
                .sigmoid()
                .weighted_sum(proj.clone())
                .unwrap()
        });
        assert!(err < 1e-4, "seed {} conv err {}", seed, err);

        let x = rand_tensor(&[2, 5, 3], &mut rng);
        let proj = projection(2 * 6 * 4, seed);
        let err = gradcheck(&[x], |_, v| {
            v[0].down2().unwrap().up2().unwrap().weighted_sum(proj.clone()).unwrap()
        });
        assert!(err < 1e-4, "seed {} resample err {}", seed, err);
    }
}

#[test]
fn determinism_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::new();
        let x = tape.constant(rand_tensor(&[2, 8, 8], &mut rng));
        let p = ConvParams::kaiming(2, 4, 3, &mut rng).bind(&tape, false);
        let y = p.apply(x).unwrap().relu().down2().unwrap().up2().unwrap();
        let v = y.value().clone();
        v
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
