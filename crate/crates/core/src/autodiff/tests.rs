use super::conv::conv2d_reference;
use super::*;
use ndarray::{Array1, Array2, Array3, Array4, ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

/// Central finite differences against the tape gradient for every element of
/// every input. `build` must construct a scalar from the provided leaves.
fn check_grads(inputs: &[ArrayD<f64>], build: &dyn Fn(&Tape<f64>, &[Var]) -> Var) {
    let eval = |arrays: &[ArrayD<f64>]| -> f64 {
        let tape = Tape::<f64>::new();
        let vars: Vec<Var> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
        tape.scalar(build(&tape, &vars))
    };

    let tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let root = build(&tape, &vars);
    let grads = tape.backward(root);

    let step = 1e-5;
    for (i, input) in inputs.iter().enumerate() {
        let ad = grads.get_or_zeros(vars[i], input.shape());
        for idx in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].as_slice_mut().unwrap()[idx] += step;
            let mut minus = inputs.to_vec();
            minus[i].as_slice_mut().unwrap()[idx] -= step;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = ad.as_slice().unwrap()[idx];
            let err = (a - fd).abs();
            let tol = 1e-7 + 1e-4 * a.abs().max(fd.abs());
            assert!(
                err <= tol,
                "input {i} element {idx}: autodiff {a} vs finite diff {fd} (err {err})"
            );
        }
    }
}

#[test]
fn elementwise_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_array(&mut rng, &[3, 4]);
    let b = rand_array(&mut rng, &[3, 4]);
    check_grads(&[a.clone(), b.clone()], &|t, v| {
        let s = t.add(v[0], v[1]);
        let d = t.sub(s, v[1]);
        let m = t.mul(d, v[1]);
        let sc = t.scale(m, 0.7);
        t.sum_all(sc)
    });
    check_grads(&[a.clone()], &|t, v| {
        let s = t.sigmoid(v[0]);
        let th = t.tanh_act(s);
        let l = t.leaky_relu(th, 0.2);
        t.mean_all(l)
    });
    check_grads(&[a], &|t, v| {
        let x = t.abs_val(v[0]);
        t.sum_all(x)
    });
}

#[test]
fn matmul_and_linear_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_array(&mut rng, &[3, 4]);
    let b = rand_array(&mut rng, &[4, 2]);
    check_grads(&[a, b], &|t, v| {
        let m = t.matmul(v[0], v[1]);
        t.sum_all(t.mul(m, m))
    });

    let x = rand_array(&mut rng, &[5]);
    let w = rand_array(&mut rng, &[3, 5]);
    let bias = rand_array(&mut rng, &[3]);
    check_grads(&[x, w, bias], &|t, v| {
        let y = t.linear(v[0], v[1], v[2]);
        let y = t.sigmoid(y);
        t.sum_all(y)
    });
}

#[test]
fn softmax_rows_matches_hand_values() {
    // Two logits (1, 0): softmax = (0.73106, 0.26894), from the scalar oracle
    // e / (e + 1) evaluated by hand.
    let tape = Tape::<f64>::new();
    let x = tape.leaf(ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![1.0, 0.0]).unwrap());
    let y = tape.value(tape.softmax_rows(x));
    assert!((y[[0, 0]] - 0.731_058_578_630_004_9).abs() < 1e-12);
    assert!((y[[0, 1]] - 0.268_941_421_369_995_1).abs() < 1e-12);
}

#[test]
fn softmax_and_normalize_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_array(&mut rng, &[3, 5]);
    let w = rand_array(&mut rng, &[3, 5]);
    check_grads(&[a.clone(), w.clone()], &|t, v| {
        let s = t.softmax_rows(v[0]);
        t.sum_all(t.mul(s, v[1]))
    });
    check_grads(&[a, w], &|t, v| {
        let n = t.normalize_rows(v[0], 1e-8);
        t.sum_all(t.mul(n, v[1]))
    });
    // Near-zero row exercises the epsilon branch.
    let tiny = ArrayD::from_elem(IxDyn(&[1, 4]), 1e-12);
    let tape = Tape::<f64>::new();
    let v = tape.leaf(tiny);
    let n = tape.normalize_rows(v, 1e-8);
    let out = tape.value(n);
    assert!(out.iter().all(|x| x.is_finite()));
}

#[test]
fn structural_op_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_array(&mut rng, &[2, 3, 3]);
    let b = rand_array(&mut rng, &[4, 3, 3]);
    check_grads(&[a.clone(), b.clone()], &|t, v| {
        let c = t.concat(0, &[v[0], v[1]]);
        let s = t.slice_channels(c, 1, 5);
        t.sum_all(t.mul(s, s))
    });

    let clip = rand_array(&mut rng, &[2, 4, 3, 3]);
    check_grads(&[clip], &|t, v| {
        let m = t.mean_time(v[0]);
        t.sum_all(t.mul(m, m))
    });

    let x = rand_array(&mut rng, &[3, 4, 4]);
    let scales = rand_array(&mut rng, &[3]);
    check_grads(&[x.clone(), scales], &|t, v| {
        let y = t.scale_channels(v[0], v[1]);
        t.sum_all(t.mul(y, y))
    });
    check_grads(&[x], &|t, v| {
        let p = t.global_avg_pool(v[0]);
        t.sum_all(t.mul(p, p))
    });

    let vv = rand_array(&mut rng, &[4]);
    check_grads(&[vv], &|t, v| {
        let b = t.broadcast_rows(v[0], 3);
        t.sum_all(t.mul(b, b))
    });

    let m = rand_array(&mut rng, &[5, 3]);
    check_grads(&[m.clone()], &|t, v| {
        let r = t.mean_rows(v[0]);
        t.sum_all(t.mul(r, r))
    });
    check_grads(&[m], &|t, v| {
        let r = t.reshape(v[0], &[3, 5]);
        t.sum_all(t.mul(r, r))
    });
}

#[test]
fn conv2d_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1)] {
        let x = rand_array(&mut rng, &[3, 6, 5]);
        let w = rand_array(&mut rng, &[4, 3, 3, 3]);
        let b = rand_array(&mut rng, &[4]);
        let tape = Tape::<f64>::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let out = tape.value(tape.conv2d(xv, wv, bv, stride, pad));
        let reference = conv2d_reference(
            &x.into_dimensionality().unwrap(),
            &w.into_dimensionality().unwrap(),
            &b.into_dimensionality().unwrap(),
            stride,
            pad,
        );
        let diff = (&out - &reference.into_dyn())
            .iter()
            .map(|d| d.abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "stride {stride} pad {pad}: max diff {diff}");
    }
}

#[test]
fn conv2d_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_array(&mut rng, &[2, 5, 5]);
    let w = rand_array(&mut rng, &[3, 2, 3, 3]);
    let b = rand_array(&mut rng, &[3]);
    check_grads(&[x, w, b], &|t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 2, 1);
        t.sum_all(t.mul(y, y))
    });
}

#[test]
fn deconv2d_matches_scatter_reference() {
    // Naive transposed convolution: every input pixel scatters a kernel.
    fn reference(
        x: &Array3<f64>,
        w: &Array4<f64>,
        b: &Array1<f64>,
        stride: usize,
        pad: usize,
    ) -> Array3<f64> {
        let (ic, oc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let (h, wd) = (x.shape()[1], x.shape()[2]);
        let big_h = deconv2d_out_size(h, kh, stride, pad);
        let big_w = deconv2d_out_size(wd, kw, stride, pad);
        let mut out = Array3::<f64>::zeros((oc, big_h, big_w));
        for o in 0..oc {
            for y in 0..big_h {
                for xx in 0..big_w {
                    out[[o, y, xx]] = b[o];
                }
            }
        }
        for c in 0..ic {
            for iy in 0..h {
                for ix in 0..wd {
                    for o in 0..oc {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy >= 0 && oy < big_h as isize && ox >= 0 && ox < big_w as isize
                                {
                                    out[[o, oy as usize, ox as usize]] +=
                                        x[[c, iy, ix]] * w[[c, o, ky, kx]];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_array(&mut rng, &[2, 4, 4]);
    let w = rand_array(&mut rng, &[2, 3, 4, 4]);
    let b = rand_array(&mut rng, &[3]);
    let tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let bv = tape.leaf(b.clone());
    let out = tape.value(tape.deconv2d(xv, wv, bv, 2, 1));
    assert_eq!(out.shape(), &[3, 8, 8]);
    let reference = reference(
        &x.into_dimensionality().unwrap(),
        &w.into_dimensionality().unwrap(),
        &b.into_dimensionality().unwrap(),
        2,
        1,
    );
    let diff = (&out - &reference.into_dyn())
        .iter()
        .map(|d| d.abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "max diff {diff}");
}

#[test]
fn deconv2d_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_array(&mut rng, &[2, 3, 3]);
    let w = rand_array(&mut rng, &[2, 2, 4, 4]);
    let b = rand_array(&mut rng, &[2]);
    check_grads(&[x, w, b], &|t, v| {
        let y = t.deconv2d(v[0], v[1], v[2], 2, 1);
        t.sum_all(t.mul(y, y))
    });
}

#[test]
fn conv3d_matches_loop_reference_and_grads() {
    fn reference(
        x: &Array4<f64>,
        w: &ndarray::Array5<f64>,
        b: &Array1<f64>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Array4<f64> {
        let (oc, ic, kt, kh, kw) = (
            w.shape()[0],
            w.shape()[1],
            w.shape()[2],
            w.shape()[3],
            w.shape()[4],
        );
        let (t_len, h, wd) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let ot = conv2d_out_size(t_len, kt, stride.0, pad.0);
        let oh = conv2d_out_size(h, kh, stride.1, pad.1);
        let ow = conv2d_out_size(wd, kw, stride.1, pad.1);
        let mut out = Array4::<f64>::zeros((oc, ot, oh, ow));
        for o in 0..oc {
            for oz in 0..ot {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for c in 0..ic {
                            for kz in 0..kt {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iz = (oz * stride.0 + kz) as isize - pad.0 as isize;
                                        let iy = (oy * stride.1 + ky) as isize - pad.1 as isize;
                                        let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                                        if iz >= 0
                                            && iz < t_len as isize
                                            && iy >= 0
                                            && iy < h as isize
                                            && ix >= 0
                                            && ix < wd as isize
                                        {
                                            acc += x[[c, iz as usize, iy as usize, ix as usize]]
                                                * w[[o, c, kz, ky, kx]];
                                        }
                                    }
                                }
                            }
                        }
                        out[[o, oz, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_array(&mut rng, &[2, 5, 4, 4]);
    let w = rand_array(&mut rng, &[3, 2, 3, 3, 3]);
    let b = rand_array(&mut rng, &[3]);

    let tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let bv = tape.leaf(b.clone());
    let out = tape.value(tape.conv3d(xv, wv, bv, (1, 2), (1, 1)));
    let reference = reference(
        &x.clone().into_dimensionality().unwrap(),
        &w.clone().into_dimensionality().unwrap(),
        &b.clone().into_dimensionality().unwrap(),
        (1, 2),
        (1, 1),
    );
    assert_eq!(out.shape(), reference.shape());
    let diff = (&out - &reference.into_dyn())
        .iter()
        .map(|d| d.abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "max diff {diff}");

    check_grads(&[x, w, b], &|t, v| {
        let y = t.conv3d(v[0], v[1], v[2], (1, 2), (1, 1));
        t.sum_all(t.mul(y, y))
    });
}

#[test]
fn gradient_accumulates_over_shared_parents() {
    // f(x) = sum(x*x) + sum(x): grad = 2x + 1.
    let tape = Tape::<f64>::new();
    let x = tape.leaf(ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, -2.0, 0.5]).unwrap());
    let sq = tape.mul(x, x);
    let total = tape.add(tape.sum_all(sq), tape.sum_all(x));
    let grads = tape.backward(total);
    let g = grads.get(x).unwrap();
    assert_eq!(g.as_slice().unwrap(), &[3.0, -3.0, 2.0]);
}
