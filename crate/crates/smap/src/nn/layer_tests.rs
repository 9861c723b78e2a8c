#![cfg(test)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::*;
use super::loss::{softmax_cross_entropy, weighted_bce};
use super::{xavier_init, Layer, Sequential, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| r.gen_range(lo..hi)).collect())
}

#[test]
fn dense_identity_weights_pass_input_through() {
    let mut d = Dense::new(4, 4);
    for i in 0..4 {
        d.w[i * 4 + i] = 1.0f64;
    }
    let net = Sequential::new(vec![Layer::Dense(d)]);
    let x = Tensor::from_vec(&[2, 4], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0, -1.0, 2.0]);
    let y = net.forward_eval(x.clone(), None).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn relu_definition() {
    let net: Sequential<f64> = Sequential::new(vec![Layer::Relu(Relu::new())]);
    let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]);
    let y = net.forward_eval(x, None).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
}

/// Brute-force nested-loop correlation oracle for conv3d.
fn naive_conv3(
    x: &[f64],
    dims: (usize, usize, usize),
    kernel: &[f64],
    k: usize,
    pad: usize,
) -> Vec<f64> {
    let (d, h, w) = dims;
    let mut out = vec![0.0; d * h * w];
    for z in 0..d {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iz = z as isize + kz as isize - pad as isize;
                            let iy = y as isize + ky as isize - pad as isize;
                            let ix = xx as isize + kx as isize - pad as isize;
                            if iz < 0 || iy < 0 || ix < 0 {
                                continue;
                            }
                            let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                            if iz >= d || iy >= h || ix >= w {
                                continue;
                            }
                            acc += x[(iz * h + iy) * w + ix] * kernel[(kz * k + ky) * k + kx];
                        }
                    }
                }
                out[(z * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

#[test]
fn conv3d_impulse_matches_naive_oracle() {
    let mut conv = Conv3::new(3, 1, 1, 1);
    let mut r = rng(17);
    for wv in conv.w.iter_mut() {
        *wv = r.gen_range(-1.0..1.0);
    }
    let kernel = conv.w.clone();
    let net = Sequential::new(vec![Layer::Conv3(conv)]);

    // Impulse in the middle of a 4x4x4 grid.
    let mut data = vec![0.0f64; 64];
    data[(1 * 4 + 2) * 4 + 1] = 1.0;
    let x = Tensor::from_vec(&[1, 4, 4, 4, 1], data.clone());
    let got = net.forward_eval(x, None).unwrap();
    let want = naive_conv3(&data, (4, 4, 4), &kernel, 3, 1);
    for (g, w) in got.data().iter().zip(want.iter()) {
        assert!((g - w).abs() < 1e-12);
    }

    // And on a dense random grid.
    let x = random_tensor(&[1, 4, 4, 4, 1], 23, -1.0, 1.0);
    let want = naive_conv3(x.data(), (4, 4, 4), &kernel, 3, 1);
    let got = net.forward_eval(x, None).unwrap();
    for (g, w) in got.data().iter().zip(want.iter()) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn maxpool_picks_window_maxima() {
    let net: Sequential<f64> = Sequential::new(vec![Layer::MaxPool3(MaxPool3::new(2))]);
    let x = random_tensor(&[1, 4, 4, 4, 2], 5, -1.0, 1.0);
    let y = net.forward_eval(x.clone(), None).unwrap();
    assert_eq!(y.shape(), &[1, 2, 2, 2, 2]);
    // Every output is the max over its 2x2x2 window.
    for z in 0..2 {
        for yy in 0..2 {
            for xx in 0..2 {
                for c in 0..2 {
                    let mut best = f64::NEG_INFINITY;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = (((z * 2 + dz) * 4 + yy * 2 + dy) * 4 + xx * 2 + dx) * 2 + c;
                                best = best.max(x.data()[idx]);
                            }
                        }
                    }
                    let got = y.data()[((z * 2 + yy) * 2 + xx) * 2 + c];
                    assert_eq!(got, best);
                }
            }
        }
    }
}

#[test]
fn eval_forward_is_bitwise_deterministic() {
    let mut net: Sequential<f32> = Sequential::new(vec![
        Layer::Conv3(Conv3::new(3, 1, 4, 1)),
        Layer::BatchNorm(BatchNorm::new(4)),
        Layer::Relu(Relu::new()),
        Layer::MaxPool3(MaxPool3::new(2)),
        Layer::Dense(Dense::new(4 * 2 * 2 * 4, 6)),
    ]);
    xavier_init(&mut net, 77);
    let x = random_tensor(&[3, 8, 4, 4, 1], 3, -1.0, 1.0).cast::<f32>();
    let a = net.forward_eval(x.clone(), None).unwrap();
    let b = net.forward_eval(x, None).unwrap();
    let abits: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
    let bbits: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(abits, bbits);
}

#[test]
fn dropout_zeroes_expected_ratio_and_scales_survivors() {
    let mut layer = Dropout::new(0.3);
    let n = 100_000;
    let x = Tensor::from_vec(&[1, n], vec![1.0f64; n]);
    let mut l = Layer::Dropout(layer.clone());
    let y = l.forward_train(x, None, &mut rng(9)).unwrap();
    let zeros = y.data().iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
    assert!((zeros - 0.3).abs() < 0.02, "dropped fraction {zeros}");
    let keep = 1.0 / 0.7;
    for v in y.data() {
        assert!(*v == 0.0 || (*v - keep).abs() < 1e-12);
    }
    // Ratio 0 is the identity.
    layer.ratio = 0.0;
    let x = Tensor::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]);
    let mut l = Layer::Dropout(layer);
    let y = l.forward_train(x.clone(), None, &mut rng(9)).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradients() {
    let mut net: Sequential<f64> = Sequential::new(vec![
        Layer::Conv3(Conv3::new(3, 1, 2, 1)),
        Layer::Relu(Relu::new()),
        Layer::Dense(Dense::new(2 * 4 * 4 * 4, 5)),
    ]);
    xavier_init(&mut net, 3);
    let x = random_tensor(&[2, 4, 4, 4, 1], 8, -1.0, 1.0);
    let y = net.forward_train(x, None, &mut rng(0)).unwrap();
    let g = Tensor::zeros(y.shape());
    net.backward(g).unwrap();
    for p in net.params() {
        assert!(p.grad.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn single_dense_layer_closed_form_gradient() {
    // y = Wx + b, L = 0.5 |y - t|^2; dL/dW = (y - t) x^T.
    let mut net: Sequential<f64> = Sequential::new(vec![Layer::Dense(Dense::new(3, 2))]);
    xavier_init(&mut net, 6);
    let x = Tensor::from_vec(&[1, 3], vec![0.5, -1.0, 2.0]);
    let t = vec![1.0, -1.0];
    let y = net.forward_train(x.clone(), None, &mut rng(0)).unwrap();
    let diff: Vec<f64> = y.data().iter().zip(t.iter()).map(|(y, t)| y - t).collect();
    let g = Tensor::from_vec(&[1, 2], diff.clone());
    net.backward(g).unwrap();
    let mut params = net.params();
    for i in 0..3 {
        for o in 0..2 {
            let want = diff[o] * x.data()[i];
            let got = params[0].grad[i * 2 + o];
            assert!((got - want).abs() < 1e-12);
        }
    }
    for o in 0..2 {
        assert!((params[1].grad[o] - diff[o]).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient checks, one per layer kind.

/// Central-difference check of every parameter gradient of `net` under the
/// scalar loss produced by `loss_of`. `eps = 1e-4`, double precision.
fn gradcheck<F>(net: &mut Sequential<f64>, loss_of: &mut F, tol: f64)
where
    F: FnMut(&mut Sequential<f64>) -> f64,
{
    let base_loss = loss_of(net);
    assert!(base_loss.is_finite());
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
    let eps = 1e-4;
    let n_params = analytic.len();
    for pi in 0..n_params {
        let len = analytic[pi].len();
        for i in 0..len {
            let orig = net.params()[pi].value[i];
            net.params()[pi].value[i] = orig + eps;
            let up = loss_of(net);
            net.params()[pi].value[i] = orig - eps;
            let down = loss_of(net);
            net.params()[pi].value[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = analytic[pi][i];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            assert!(
                (a - fd).abs() / denom <= tol,
                "param {pi}[{i}]: analytic {a} vs fd {fd}"
            );
        }
    }
}

/// Builds a train-mode loss closure: forward, squared-error against a fixed
/// random target, backward; returns the loss and leaves gradients populated.
fn sq_loss_harness(
    x: Tensor<f64>,
    aux: Option<Tensor<f64>>,
    target_seed: u64,
) -> impl FnMut(&mut Sequential<f64>) -> f64 {
    let mut target: Option<Vec<f64>> = None;
    move |net: &mut Sequential<f64>| {
        net.zero_grad();
        let y = net
            .forward_train(x.clone(), aux.as_ref(), &mut rng(0))
            .unwrap();
        let t = target.get_or_insert_with(|| {
            let mut r = rng(target_seed);
            (0..y.len()).map(|_| r.gen_range(-1.0..1.0)).collect()
        });
        let mut loss = 0.0;
        let mut g = Tensor::zeros(y.shape());
        for ((yv, tv), gv) in y.data().iter().zip(t.iter()).zip(g.data_mut().iter_mut()) {
            loss += 0.5 * (yv - tv) * (yv - tv);
            *gv = yv - tv;
        }
        net.backward(g).unwrap();
        loss
    }
}

#[test]
fn gradcheck_conv3d() {
    let mut net = Sequential::new(vec![Layer::Conv3(Conv3::new(3, 2, 3, 1))]);
    xavier_init(&mut net, 21);
    let x = random_tensor(&[2, 3, 4, 3, 2], 31, -1.0, 1.0);
    let mut loss = sq_loss_harness(x, None, 41);
    gradcheck(&mut net, &mut loss, 1e-4);
}

#[test]
fn gradcheck_deconv3d() {
    let mut net = Sequential::new(vec![Layer::Deconv3(Deconv3::new(3, 2, 2))]);
    xavier_init(&mut net, 22);
    let x = random_tensor(&[2, 2, 3, 2, 2], 32, -1.0, 1.0);
    let mut loss = sq_loss_harness(x, None, 42);
    gradcheck(&mut net, &mut loss, 1e-4);
}

#[test]
fn gradcheck_dense_relu_stack() {
    let mut net = Sequential::new(vec![
        Layer::Dense(Dense::new(6, 5)),
        Layer::Relu(Relu::new()),
        Layer::Dense(Dense::new(5, 3)),
    ]);
    xavier_init(&mut net, 23);
    let x = random_tensor(&[4, 6], 33, -1.0, 1.0);
    let mut loss = sq_loss_harness(x, None, 43);
    gradcheck(&mut net, &mut loss, 1e-4);
}

#[test]
fn gradcheck_batchnorm() {
    let mut net = Sequential::new(vec![
        Layer::Dense(Dense::new(4, 6)),
        Layer::BatchNorm(BatchNorm::new(6)),
        Layer::Relu(Relu::new()),
    ]);
    xavier_init(&mut net, 24);
    let x = random_tensor(&[5, 4], 34, -1.0, 1.0);
    let mut loss = sq_loss_harness(x, None, 44);
    gradcheck(&mut net, &mut loss, 1e-4);
}

#[test]
fn gradcheck_maxpool_and_sigmoid() {
    let mut net = Sequential::new(vec![
        Layer::Conv3(Conv3::new(3, 1, 2, 1)),
        Layer::MaxPool3(MaxPool3::new(2)),
        Layer::Sigmoid(Sigmoid::new()),
    ]);
    xavier_init(&mut net, 25);
    let x = random_tensor(&[1, 4, 4, 4, 1], 35, -1.0, 1.0);
    let mut loss = sq_loss_harness(x, None, 45);
    gradcheck(&mut net, &mut loss, 1e-4);
}

#[test]
fn gradcheck_concat_scale_path() {
    let mut net = Sequential::new(vec![
        Layer::ConcatScale(ConcatScale::new(8, 3)),
        Layer::Dense(Dense::new(11, 4)),
    ]);
    xavier_init(&mut net, 26);
    let x = random_tensor(&[3, 8], 36, -1.0, 1.0);
    let aux = random_tensor(&[3, 3], 37, 0.5, 2.0);
    let mut loss = sq_loss_harness(x, Some(aux), 46);
    gradcheck(&mut net, &mut loss, 1e-4);
}

#[test]
fn gradcheck_softmax_cross_entropy_loss() {
    let mut net = Sequential::new(vec![Layer::Dense(Dense::new(5, 4))]);
    xavier_init(&mut net, 27);
    let x = random_tensor(&[3, 5], 38, -1.0, 1.0);
    let mut one_hot = Tensor::zeros(&[3, 4]);
    one_hot.data_mut()[1] = 1.0;
    one_hot.data_mut()[4 + 2] = 1.0;
    one_hot.data_mut()[8] = 1.0;
    let mut loss_of = |net: &mut Sequential<f64>| {
        net.zero_grad();
        let y = net.forward_train(x.clone(), None, &mut rng(0)).unwrap();
        let (loss, g) = softmax_cross_entropy(&y, &one_hot).unwrap();
        net.backward(g).unwrap();
        loss
    };
    gradcheck(&mut net, &mut loss_of, 1e-4);
}

#[test]
fn gradcheck_weighted_bce_loss() {
    let mut net = Sequential::new(vec![
        Layer::Dense(Dense::new(4, 8)),
        Layer::Sigmoid(Sigmoid::new()),
    ]);
    xavier_init(&mut net, 29);
    let x = random_tensor(&[2, 4], 39, -1.0, 1.0);
    let mut r = rng(49);
    let target = Tensor::from_vec(
        &[2, 8],
        (0..16).map(|_| if r.gen_bool(0.3) { 1.0 } else { 0.0 }).collect(),
    );
    let mut loss_of = |net: &mut Sequential<f64>| {
        net.zero_grad();
        let y = net.forward_train(x.clone(), None, &mut rng(0)).unwrap();
        let (loss, g) = weighted_bce(&y, &target, 0.9).unwrap();
        net.backward(g).unwrap();
        loss
    };
    gradcheck(&mut net, &mut loss_of, 1e-4);
}
