use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

/// Values in [0.2, 1.2] with random sign: at least 0.1 from any ReLU kink.
fn kinkless(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.2..1.2);
        if rng.random::<bool>() { m } else { -m }
    })
}

fn conv_single(x: &[f64], w: &[f64], b: f64) -> Vec<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(t(&[1, 1, x.len()], x));
    let wv = tape.constant(t(&[1, 1, w.len()], w));
    let bv = tape.constant(t(&[1], &[b]));
    let y = tape.conv1d(xv, wv, Some(bv), 1, Padding::Same).unwrap();
    tape.value(y).data().to_vec()
}

/// Direct sliding-window oracle for same-padded stride-1 conv.
fn conv_oracle(x: &[f64], w: &[f64], b: f64) -> Vec<f64> {
    let k = w.len() as isize;
    (0..x.len() as isize)
        .map(|t| {
            b + (0..k)
                .map(|d| {
                    let p = t + d - k / 2;
                    if p < 0 || p >= x.len() as isize { 0.0 } else { w[d as usize] * x[p as usize] }
                })
                .sum::<f64>()
        })
        .collect()
}

#[test]
fn conv1d_examples() {
    assert_eq!(conv_single(&[1., 2., 3.], &[0., 1., 0.], 0.0), vec![1., 2., 3.]);
    assert_eq!(conv_oracle(&[1., 2., 3.], &[1., 1., 1.], 0.0), vec![3., 6., 5.]);
    assert_eq!(conv_single(&[1., 2., 3.], &[1., 1., 1.], 0.0), vec![3., 6., 5.]);
    assert_eq!(conv_single(&[4., -2., 9., 1.], &[0., 0., 0.], 2.5), vec![2.5; 4]);
}

#[test]
fn conv1d_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 5]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 3]));
    assert!(matches!(tape.conv1d(x, w, None, 1, Padding::Same), Err(Error::Shape(_))));
    let e = tape.constant(Tensor::zeros(&[1, 2, 0]));
    let w2 = tape.constant(Tensor::zeros(&[1, 2, 3]));
    assert!(matches!(tape.conv1d(e, w2, None, 1, Padding::Same), Err(Error::EmptyInput(_))));
}

#[test]
fn conv1d_strided_and_valid_lengths() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[2, 1, 10], 1.0));
    let w = tape.constant(Tensor::full(&[1, 1, 3], 1.0));
    let same = tape.conv1d(x, w, None, 3, Padding::Same).unwrap();
    assert_eq!(tape.shape(same), &[2, 1, 4]);
    let valid = tape.conv1d(x, w, None, 1, Padding::Valid).unwrap();
    assert_eq!(tape.shape(valid), &[2, 1, 8]);
    assert!(tape.value(valid).data().iter().all(|&v| v == 3.0));
}

fn pool(x: &[f64], k: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(t(&[1, 1, x.len()], x));
    let y = tape.maxpool1d(xv, k, 1, Padding::Same).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn maxpool_examples() {
    assert_eq!(pool(&[1., 3., 2., 5.], 3), vec![3., 3., 5., 5.]);
    assert_eq!(pool(&[1., 2., 3., 4.], 3), vec![2., 3., 4., 4.]);
    assert_eq!(pool(&[7.; 6], 3), vec![7.; 6]);
    // Padding is −∞, so negative values survive at the edges.
    assert_eq!(pool(&[-5., -9., -7.], 3), vec![-5., -5., -7.]);
}

#[test]
fn maxpool_gradient_goes_to_first_argmax() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 3], &[2., 2., 1.]));
    let y = tape.maxpool1d(x, 3, 1, Padding::Same).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    // windows: [-inf,2,2] -> idx0 ; [2,2,1] -> idx0 ; [2,1,-inf] -> idx1
    assert_eq!(g.get(x).unwrap().data(), &[2., 1., 0.]);
}

#[test]
fn strided_pool_length_is_ceil() {
    for (tlen, s) in [(10, 4), (2048, 8), (7, 1), (9, 3)] {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, tlen]));
        let y = tape.maxpool1d(x, s, s, Padding::Same).unwrap();
        assert_eq!(tape.shape(y)[2], tlen.div_ceil(s));
    }
}

#[test]
fn batchnorm_examples() {
    let bn = |vals: &[f64], g: f64, b: f64| {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vals.len(), 1, 1], vals));
        let gv = tape.constant(t(&[1], &[g]));
        let bv = tape.constant(t(&[1], &[b]));
        let (y, stats) = tape.batch_norm(x, gv, bv, 1e-5, None).unwrap();
        (tape.value(y).data().to_vec(), stats.unwrap())
    };
    let (y, _) = bn(&[-1., 1.], 1., 0.);
    assert_abs_diff_eq!(y[0], -1.0, epsilon = 1e-5);
    assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-5);
    let (y, _) = bn(&[3., 8., -1.], 0., 0.7);
    assert!(y.iter().all(|&v| v == 0.7));
    // two-pass oracle: mean 1, biased var 1 -> (x-1)/sqrt(1+eps)
    let (y, (m, v)) = bn(&[0., 2.], 1., 0.);
    assert_eq!((m[0], v[0]), (1.0, 1.0));
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert_abs_diff_eq!(y[0], -expect, epsilon = 1e-12);
    assert_abs_diff_eq!(y[1], expect, epsilon = 1e-12);
    // zero variance: eps keeps it finite
    let (y, _) = bn(&[4., 4.], 1., 0.);
    assert!(y.iter().all(|v| v.is_finite() && *v == 0.0));
}

#[test]
fn batchnorm_train_needs_two_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 1]));
    let g = tape.constant(Tensor::full(&[2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    assert!(tape.batch_norm(x, g, b, 1e-5, None).is_err());
    assert!(tape.batch_norm(x, g, b, 1e-5, Some((&[0.0, 0.0], &[1.0, 1.0]))).is_ok());
}

#[test]
fn pointwise_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[-1., 2., 0.]));
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0., 2., 0.]);
    let z = tape.constant(t(&[2], &[0., 10.]));
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(s).data()[0], 0.5);
    assert_abs_diff_eq!(tape.value(s).data()[1], 1.0 / (1.0 + (-10f64).exp()), epsilon = 1e-15);
    assert_abs_diff_eq!(tape.value(s).data()[1], 0.9999546, epsilon = 1e-7);
}

fn softmax_of(z: &[f64], tau: f64) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[z.len()], z));
    let y = tape.softmax(x, tau).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn softmax_examples() {
    for p in softmax_of(&[3.3; 7], 2.0) {
        assert_abs_diff_eq!(p, 1.0 / 7.0, epsilon = 1e-15);
    }
    // closed form: 1 / (1 + e^{-2/τ})
    let p = softmax_of(&[2., 0.], 1.0);
    assert_abs_diff_eq!(p[0], 1.0 / (1.0 + (-2f64).exp()), epsilon = 1e-15);
    assert_abs_diff_eq!(p[0], 0.88080, epsilon = 1e-5);
    assert_abs_diff_eq!(p[1], 0.11920, epsilon = 1e-5);
    let p = softmax_of(&[2., 0.], 2.0);
    assert_abs_diff_eq!(p[0], 0.73106, epsilon = 1e-5);
    assert_abs_diff_eq!(p[1], 0.26894, epsilon = 1e-5);

    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[f64::NAN, 0.]));
    assert!(matches!(tape.softmax(x, 1.0), Err(Error::NonFinite(_))));
    let x = tape.constant(t(&[2], &[1., 0.]));
    assert!(tape.softmax(x, 0.0).is_err());
}

#[test]
fn gap_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 2, 4], &[1., 2., 3., 4., 5., 5., 5., 5.]));
    let g = tape.gap(x).unwrap();
    assert_eq!(tape.value(g).data(), &[2.5, 5.0]);
}

#[test]
fn dense_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[3., 4.]));
    let w = tape.constant(t(&[1, 2], &[1., 2.]));
    let b = tape.constant(t(&[1], &[1.]));
    let y = tape.dense(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[12.0]);
    let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let y = tape.dense(x, eye, None).unwrap();
    assert_eq!(tape.value(y).data(), &[3., 4.]);
    let zero = tape.constant(Tensor::zeros(&[3, 2]));
    let b3 = tape.constant(t(&[3], &[7., 8., 9.]));
    let y = tape.dense(x, zero, Some(b3)).unwrap();
    assert_eq!(tape.value(y).data(), &[7., 8., 9.]);
    let bad = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(tape.dense(x, bad, None).is_err());
}

#[test]
fn concat_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_fn(&[1, 2, 4], |i| i as f64));
    let b = tape.constant(Tensor::from_fn(&[1, 3, 4], |i| 100.0 + i as f64));
    let c = tape.concat_channels(a, b).unwrap();
    assert_eq!(tape.shape(c), &[1, 5, 4]);
    assert_eq!(&tape.value(c).data()[8..12], &tape.value(b).data()[0..4]);
    let empty = tape.constant(Tensor::zeros(&[1, 0, 4]));
    let same = tape.concat_channels(a, empty).unwrap();
    assert_eq!(tape.value(same), tape.value(a));
    let short = tape.constant(Tensor::zeros(&[1, 1, 3]));
    assert!(tape.concat_channels(a, short).is_err());
}

#[test]
fn layer_norm_examples() {
    let ln = |x: &[f64], g: f64| {
        let mut tape = Tape::new();
        let xv = tape.constant(t(&[x.len()], x));
        let gv = tape.constant(Tensor::full(&[x.len()], g));
        let bv = tape.constant(Tensor::zeros(&[x.len()]));
        let y = tape.layer_norm(xv, gv, bv, 1e-5).unwrap();
        tape.value(y).data().to_vec()
    };
    let y = ln(&[1., 3.], 1.0);
    assert_abs_diff_eq!(y[0], -1.0, epsilon = 1e-5);
    assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-5);
    assert!(ln(&[2.; 5], 1.0).iter().all(|&v| v == 0.0));
    let y2 = ln(&[0.3, -1.0, 2.0], 2.0);
    let y1 = ln(&[0.3, -1.0, 2.0], 1.0);
    for (a, b) in y2.iter().zip(&y1) {
        assert_abs_diff_eq!(*a, 2.0 * b, epsilon = 1e-14);
    }
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let ones = tape.constant(t(&[2, 1], &[1., 1.]));
    let y = tape.matmul(a, ones).unwrap();
    assert_eq!(tape.value(y).data(), &[3., 7.]);
    let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let y = tape.matmul(a, eye).unwrap();
    assert_eq!(tape.value(y), tape.value(a));

    // (AB)^T = B^T A^T
    let ra = tape.constant(kinkless(&[3, 3], 1));
    let rb = tape.constant(kinkless(&[3, 3], 2));
    let ab = tape.matmul(ra, rb).unwrap();
    let abt = tape.permute(ab, &[1, 0]).unwrap();
    let bt = tape.permute(rb, &[1, 0]).unwrap();
    let at = tape.permute(ra, &[1, 0]).unwrap();
    let btat = tape.matmul(bt, at).unwrap();
    for (x, y) in tape.value(abt).data().iter().zip(tape.value(btat).data()) {
        assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
    }
    let bad = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(tape.matmul(a, bad).is_err());
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(kinkless(&[2, 3], 3));
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[-1., 2.]));
    let r = tape.relu(x);
    let s = tape.sum(r);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0., 1.]);

    // dense(gap(x)), W=[[1]], b=0, x=[2,4] -> dx = [0.5, 0.5]
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 2], &[2., 4.]));
    let w = tape.constant(t(&[1, 1], &[1.]));
    let b = tape.constant(t(&[1], &[0.]));
    let p = tape.gap(x).unwrap();
    let y = tape.dense(p, w, Some(b)).unwrap();
    let l = tape.sum(y);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn backward_error_paths() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1., 2.]));
    assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(Error::BackwardTwice)));
    tape.reset();
    let x = tape.leaf(t(&[2], &[1., 2.]));
    let s = tape.sum(x);
    assert!(tape.backward(s).is_ok());
}

#[test]
fn gradient_is_linear_in_loss() {
    let x0 = kinkless(&[1, 2, 6], 9);
    let build = |tape: &mut Tape<f64>, which: u8| {
        let x = tape.leaf(x0.clone());
        let w = tape.constant(kinkless(&[3, 2, 3], 10));
        let y = tape.conv1d(x, w, None, 1, Padding::Same).unwrap();
        let a = tape.sigmoid(y);
        let l1 = tape.sum(a);
        let p = tape.maxpool1d(y, 3, 1, Padding::Same).unwrap();
        let l2 = tape.mean(p);
        let l = match which {
            1 => l1,
            2 => l2,
            _ => tape.add(l1, l2).unwrap(),
        };
        (x, l)
    };
    let grad = |which| {
        let mut tape = Tape::new();
        let (x, l) = build(&mut tape, which);
        tape.backward(l).unwrap().take(x).unwrap()
    };
    let (g1, g2, g12) = (grad(1), grad(2), grad(3));
    for i in 0..g12.len() {
        assert_abs_diff_eq!(g12.data()[i], g1.data()[i] + g2.data()[i], epsilon = 1e-12);
    }
}

// ---------------------------------------------------------------------------
// finite-difference checks, one per differentiable op

const TOL: f64 = 1e-4;

fn check(f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>, x0: Tensor<f64>) {
    let r = grad_check(f, &x0, 1e-4).unwrap();
    assert!(r.max_rel_error < TOL, "max rel error {} at {}", r.max_rel_error, r.worst_index);
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = kinkless(tape.shape(y), seed);
    let m = tape.mul_const(y, &w)?;
    Ok(tape.sum(m))
}

#[test]
fn linear_function_is_exact() {
    let w = kinkless(&[8], 4);
    let r = grad_check(|tape, x| weighted(tape, x, 4), &kinkless(&[8], 5), 1e-4).unwrap();
    assert!(r.max_rel_error < 1e-10, "{}", r.max_rel_error);
    assert_eq!(r.analytic, w.to_f64_vec());
}

#[test]
fn gradcheck_conv1d_all_inputs() {
    let w0 = kinkless(&[3, 2, 3], 11);
    let b0 = kinkless(&[3], 12);
    let x0 = kinkless(&[2, 2, 7], 13);
    for stride in [1, 2] {
        let (w, b) = (w0.clone(), b0.clone());
        check(
            move |tp, x| {
                let w = tp.constant(w.clone());
                let b = tp.constant(b.clone());
                let y = tp.conv1d(x, w, Some(b), stride, Padding::Same)?;
                weighted(tp, y, 14)
            },
            x0.clone(),
        );
        let (x, b) = (x0.clone(), b0.clone());
        check(
            move |tp, w| {
                let x = tp.constant(x.clone());
                let b = tp.constant(b.clone());
                let y = tp.conv1d(x, w, Some(b), stride, Padding::Same)?;
                weighted(tp, y, 14)
            },
            w0.clone(),
        );
        let (x, w) = (x0.clone(), w0.clone());
        check(
            move |tp, b| {
                let x = tp.constant(x.clone());
                let w = tp.constant(w.clone());
                let y = tp.conv1d(x, w, Some(b), stride, Padding::Same)?;
                weighted(tp, y, 14)
            },
            b0.clone(),
        );
    }
}

#[test]
fn gradcheck_maxpool() {
    // distinct values so no window has a tie within h
    let x0 = Tensor::from_fn(&[1, 2, 9], |i| ((i * 7919) % 23) as f64 * 0.37 - 3.0);
    check(|tp, x| {
        let y = tp.maxpool1d(x, 3, 1, Padding::Same)?;
        weighted(tp, y, 15)
    }, x0);
}

#[test]
fn gradcheck_batchnorm_train_and_eval() {
    let x0 = kinkless(&[3, 2, 4], 16);
    check(|tp, x| {
        let g = tp.constant(kinkless(&[2], 17));
        let b = tp.constant(kinkless(&[2], 18));
        let (y, _) = tp.batch_norm(x, g, b, 1e-5, None)?;
        weighted(tp, y, 19)
    }, x0.clone());
    check(|tp, g| {
        let x = tp.constant(kinkless(&[3, 2, 4], 16));
        let b = tp.constant(kinkless(&[2], 18));
        let (y, _) = tp.batch_norm(x, g, b, 1e-5, None)?;
        weighted(tp, y, 19)
    }, kinkless(&[2], 17));
    check(|tp, x| {
        let g = tp.constant(kinkless(&[2], 17));
        let b = tp.constant(kinkless(&[2], 18));
        let (y, _) = tp.batch_norm(x, g, b, 1e-5, Some((&[0.3, -0.2], &[1.5, 0.7])))?;
        weighted(tp, y, 19)
    }, x0);
}

#[test]
fn gradcheck_pointwise_and_softmax() {
    let x0 = kinkless(&[4, 5], 20);
    check(|tp, x| { let y = tp.relu(x); weighted(tp, y, 21) }, x0.clone());
    check(|tp, x| { let y = tp.sigmoid(x); weighted(tp, y, 21) }, x0.clone());
    for tau in [1.0, 2.0, 8.0] {
        check(move |tp, x| { let y = tp.softmax(x, tau)?; weighted(tp, y, 22) }, x0.clone());
        check(move |tp, x| { let y = tp.log_softmax(x, tau)?; weighted(tp, y, 22) }, x0.clone());
    }
}

#[test]
fn gradcheck_softmax_cross_entropy_composite() {
    let x0 = kinkless(&[3, 4], 23);
    let r = grad_check(|tp, x| {
        let ls = tp.log_softmax(x, 1.0)?;
        let picked = tp.select(ls, &[0, 3, 1])?;
        let m = tp.mean(picked);
        Ok(tp.scale(m, -1.0))
    }, &x0, 1e-4).unwrap();
    assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
}

#[test]
fn gradcheck_reductions_dense_concat() {
    check(|tp, x| { let y = tp.gap(x)?; weighted(tp, y, 24) }, kinkless(&[2, 3, 5], 25));
    check(|tp, x| { let y = tp.mean_axis(x, 1)?; weighted(tp, y, 24) }, kinkless(&[2, 3, 5], 25));
    check(|tp, x| {
        let w = tp.constant(kinkless(&[4, 3], 26));
        let b = tp.constant(kinkless(&[4], 27));
        let y = tp.dense(x, w, Some(b))?;
        weighted(tp, y, 28)
    }, kinkless(&[2, 5, 3], 29));
    check(|tp, w| {
        let x = tp.constant(kinkless(&[2, 5, 3], 29));
        let y = tp.dense(x, w, None)?;
        weighted(tp, y, 28)
    }, kinkless(&[4, 3], 26));
    check(|tp, a| {
        let b = tp.leaf(kinkless(&[2, 1, 4], 30));
        let y = tp.concat_channels(a, b)?;
        weighted(tp, y, 31)
    }, kinkless(&[2, 3, 4], 32));
}

#[test]
fn gradcheck_layer_norm_matmul_permute() {
    check(|tp, x| {
        let g = tp.constant(kinkless(&[6], 33));
        let b = tp.constant(kinkless(&[6], 34));
        let y = tp.layer_norm(x, g, b, 1e-5)?;
        weighted(tp, y, 35)
    }, kinkless(&[3, 6], 36));
    check(|tp, g| {
        let x = tp.constant(kinkless(&[3, 6], 36));
        let b = tp.constant(kinkless(&[6], 34));
        let y = tp.layer_norm(x, g, b, 1e-5)?;
        weighted(tp, y, 35)
    }, kinkless(&[6], 33));
    check(|tp, a| {
        let b = tp.constant(kinkless(&[2, 4, 3], 37));
        let y = tp.matmul(a, b)?;
        weighted(tp, y, 38)
    }, kinkless(&[2, 5, 4], 39));
    check(|tp, b| {
        let a = tp.constant(kinkless(&[2, 5, 4], 39));
        let y = tp.matmul(a, b)?;
        weighted(tp, y, 38)
    }, kinkless(&[2, 4, 3], 37));
    check(|tp, x| {
        let y = tp.permute(x, &[2, 0, 1])?;
        let y = tp.reshape(y, &[4, 6])?;
        weighted(tp, y, 40)
    }, kinkless(&[2, 3, 4], 41));
}

#[test]
fn gradcheck_elementwise_and_gating() {
    check(|tp, x| {
        let c = tp.leaf(kinkless(&[2, 3], 42));
        let s = tp.add(x, c)?;
        let d = tp.sub(s, c)?;
        let m = tp.mul(d, x)?;
        let sc = tp.scale(m, 0.7);
        let ac = tp.add_const(sc, &kinkless(&[3], 43))?;
        weighted(tp, ac, 44)
    }, kinkless(&[2, 3], 45));
    check(|tp, s| {
        let x = tp.constant(kinkless(&[2, 3, 4], 46));
        let y = tp.scale_channels(x, s)?;
        weighted(tp, y, 47)
    }, kinkless(&[2, 3], 48));
    check(|tp, x| {
        let s = tp.constant(kinkless(&[2, 3], 48));
        let y = tp.scale_channels(x, s)?;
        weighted(tp, y, 47)
    }, kinkless(&[2, 3, 4], 46));
}

#[test]
fn f32_and_f64_forward_agree() {
    let x64 = kinkless(&[2, 3, 16], 50);
    let w64 = kinkless(&[4, 3, 3], 51);
    let run = |x: Tensor<f64>, w: Tensor<f64>| -> Vec<f64> {
        fn go<R: Real>(x: Tensor<R>, w: Tensor<R>) -> Vec<f64> {
            let mut tp = Tape::new();
            let x = tp.constant(x);
            let w = tp.constant(w);
            let y = tp.conv1d(x, w, None, 1, Padding::Same).unwrap();
            let y = tp.relu(y);
            let p = tp.maxpool1d(y, 3, 1, Padding::Same).unwrap();
            let g = tp.gap(p).unwrap();
            let s = tp.softmax(g, 1.0).unwrap();
            tp.value(s).to_f64_vec()
        }
        let a = go(x.clone(), w.clone());
        let b = go(x.cast::<f32>(), w.cast::<f32>());
        a.iter().zip(&b).map(|(p, q)| ((p - q) / p).abs()).collect()
    };
    assert!(run(x64, w64).iter().all(|&e| e < 1e-4));
}

#[test]
fn layout_conversion_round_trips() {
    let grid: Vec<f64> = (0..12).map(|v| v as f64).collect();
    let cm = Tensor::time_major_to_channel_major(&grid, 4, 3).unwrap();
    assert_eq!(cm.shape(), &[3, 4]);
    assert_eq!(cm.data()[..4], [0., 3., 6., 9.]);
    assert_eq!(cm.channel_major_to_time_major(), grid);
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        z in proptest::collection::vec(-30.0f64..30.0, 1..12),
        shift in -50.0f64..50.0,
        tau in 0.1f64..20.0,
    ) {
        let p = softmax_of(&z, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let zs: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let q = softmax_of(&zs, tau);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn same_padding_preserves_length(tlen in 1usize..40, k in 1usize..8) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, tlen], 1.0));
        let w = tape.constant(Tensor::full(&[2, 1, k], 1.0));
        let y = tape.conv1d(x, w, None, 1, Padding::Same).unwrap();
        prop_assert_eq!(tape.shape(y)[2], tlen);
        let p = tape.maxpool1d(x, k, 1, Padding::Same).unwrap();
        prop_assert_eq!(tape.shape(p)[2], tlen);
    }

    #[test]
    fn conv_matches_sliding_window_oracle(
        x in proptest::collection::vec(-5.0f64..5.0, 1..20),
        w in proptest::collection::vec(-2.0f64..2.0, 1..6),
        b in -1.0f64..1.0,
    ) {
        let got = conv_single(&x, &w, b);
        let want = conv_oracle(&x, &w, b);
        for (g, e) in got.iter().zip(&want) {
            prop_assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let x = kinkless(&[1, 2, 5], seed);
        let y = kinkless(&[1, 2, 5], seed + 1);
        let mix = Tensor::from_fn(&[1, 2, 5], |i| a * x.data()[i] + b * y.data()[i]);
        let g = |v: Tensor<f64>| {
            let mut tp = Tape::new();
            let v = tp.constant(v);
            let r = tp.gap(v).unwrap();
            tp.value(r).data().to_vec()
        };
        let (gx, gy, gm) = (g(x), g(y), g(mix));
        for i in 0..2 {
            prop_assert!((gm[i] - (a * gx[i] + b * gy[i])).abs() < 1e-12);
        }
    }
}
