use crowdcast::autodiff::{gradcheck, Graph, Tensor, Var};
use crowdcast::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Projects an arbitrary-shaped output onto a fixed random direction so the
/// loss is sensitive to every element.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check_unary(name: &str, lo: f64, hi: f64, op: fn(&mut Graph<f64>, Var) -> Var) {
    for (seed, shape) in [(1u64, vec![5]), (2, vec![3, 4]), (3, vec![2, 2, 3])] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &shape, lo, hi);
        let r = gradcheck(
            |g, v| {
                let y = op(g, v[0]);
                project(g, y, seed)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error() < TOL, "{name} {shape:?}: {r:?}");
    }
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[2, 3], &[1., -2., 3., 0.5, 0., 7.]).unwrap());
    let s = g.sum(x);
    let gr = g.backward(s).unwrap();
    assert_eq!(gr.get(x).data(), &[1.0; 6]);
}

#[test]
fn product_of_scalars() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.param(Tensor::scalar(-2.0));
    let p = g.mul(x, y).unwrap();
    let gr = g.backward(p).unwrap();
    assert_eq!(gr.get(x).item(), -2.0);
    assert_eq!(gr.get(y).item(), 3.0);
}

#[test]
fn quadratic_matches_analytic() {
    let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let v = g.param(x.clone());
    let sq = g.square(v);
    let l = g.sum(sq);
    assert_eq!(g.backward(l).unwrap().get(v).data(), &[2.0, 4.0]);
    let r = gradcheck(
        |g, v| {
            let s = g.square(v[0]);
            Ok(g.sum(s))
        },
        &[x],
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error() < 1e-9, "{r:?}");
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::zeros(&[3]));
    assert!(g.backward(x).is_err());
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::zeros(&[2, 3]));
    let b = g.param(Tensor::zeros(&[2, 4]));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 4]"), "{msg}");
    assert!(g.add(a, b).is_err());
}

#[test]
fn untouched_leaf_gets_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::full(&[2], 1.0));
    let y = g.param(Tensor::full(&[3], 1.0));
    let l = g.sum(x);
    assert_eq!(g.backward(l).unwrap().get(y).data(), &[0.0; 3]);
}

#[test]
fn nonfinite_evaluation_reports_coordinate() {
    let x = Tensor::from_f64(&[3], &[1.0, 1e-5, 2.0]).unwrap();
    let err = gradcheck(
        |g, v| {
            let l = g.log(v[0]);
            Ok(g.sum(l))
        },
        &[x],
        1e-4,
    )
    .unwrap_err();
    assert!(err.is_numerical());
    assert!(err.to_string().contains("coordinate 1"), "{err}");
}

#[test]
fn elementwise_unary_ops() {
    check_unary("sigmoid", -3.0, 3.0, |g, x| g.sigmoid(x));
    check_unary("tanh", -2.0, 2.0, |g, x| g.tanh(x));
    check_unary("relu", 0.1, 1.0, |g, x| g.relu(x));
    check_unary("relu-", -1.0, -0.1, |g, x| g.relu(x));
    check_unary("elu", -2.0, 2.0, |g, x| g.elu(x));
    check_unary("exp", -2.0, 2.0, |g, x| g.exp(x));
    check_unary("log", 0.2, 3.0, |g, x| g.log(x));
    check_unary("square", -2.0, 2.0, |g, x| g.square(x));
    check_unary("scale", -2.0, 2.0, |g, x| g.scale(x, -1.7));
    check_unary("add_scalar", -2.0, 2.0, |g, x| g.add_scalar(x, 0.3));
    check_unary("clamp_min", -2.0, 2.0, |g, x| g.clamp_min(x, 0.05));
    check_unary("softmax", -2.0, 2.0, |g, x| g.softmax(x));
    check_unary("log_softmax", -2.0, 2.0, |g, x| g.log_softmax(x));
    check_unary("logsumexp", -2.0, 2.0, |g, x| g.logsumexp(x));
    check_unary("mean", -2.0, 2.0, |g, x| g.mean(x));
    check_unary("slice", -2.0, 2.0, |g, x| {
        let w = *g.shape(x).last().unwrap();
        g.slice(x, 1, w).unwrap()
    });
    check_unary("gather", -2.0, 2.0, |g, x| g.gather(x, &[2, 0, 0, 1]).unwrap());
    check_unary("reshape", -2.0, 2.0, |g, x| {
        let n = g.value(x).len();
        g.reshape(x, &[n]).unwrap()
    });
}

#[test]
fn binary_ops_with_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (sa, sb) in [(vec![4], vec![4]), (vec![3, 4], vec![4]), (vec![2, 3, 2], vec![3, 2])] {
        let a = rand_tensor(&mut rng, &sa, -2.0, 2.0);
        let b = rand_tensor(&mut rng, &sb, -2.0, 2.0);
        for k in 0..3 {
            let r = gradcheck(
                |g, v| {
                    let y = match k {
                        0 => g.add(v[0], v[1])?,
                        1 => g.sub(v[0], v[1])?,
                        _ => g.mul(v[0], v[1])?,
                    };
                    project(g, y, 4)
                },
                &[a.clone(), b.clone()],
                1e-4,
            )
            .unwrap();
            assert!(r.max_rel_error() < TOL, "op {k} {sa:?} {sb:?}: {r:?}");
        }
    }
}

#[test]
fn matmul_and_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (m, k, n) in [(1, 3, 2), (4, 5, 3)] {
        let a = rand_tensor(&mut rng, &[m, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let c = rand_tensor(&mut rng, &[m, 2], -1.0, 1.0);
        let r = gradcheck(
            |g, v| {
                let p = g.matmul(v[0], v[1])?;
                let y = g.concat(&[p, v[2], p])?;
                project(g, y, 5)
            },
            &[a, b, c],
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error() < TOL, "{r:?}");
    }
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Vec<f64> {
    let (bn, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (wd + 2 * p - kw) / s + 1;
    let xv = |bi: usize, ci: usize, y: i64, xx: i64| -> f64 {
        if y < 0 || xx < 0 || y >= h as i64 || xx >= wd as i64 {
            0.0
        } else {
            x.data()[((bi * c + ci) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = Vec::new();
    for bi in 0..bn {
        for oi in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oi];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * s + ky) as i64 - p as i64;
                                let xx = (ox * s + kx) as i64 - p as i64;
                                acc += xv(bi, ci, y, xx)
                                    * w.data()[((oi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_and_gradchecks() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (stride, pad, h) in [(1, 0, 5), (2, 1, 6), (2, 1, 7)] {
        let x = rand_tensor(&mut rng, &[2, 2, h, h], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[3], -1.0, 1.0);
        let mut g = Graph::<f64>::new();
        let (xv, wv, bv) = (g.param(x.clone()), g.param(w.clone()), g.param(b.clone()));
        let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
        let expect = naive_conv(&x, &w, &b, stride, pad);
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
        let r = gradcheck(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
                project(g, y, 6)
            },
            &[x, w, b],
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error() < TOL, "{r:?}");
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, convT(y)> with zero biases.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_tensor(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w));
    let zb3 = g.constant(Tensor::zeros(&[3]));
    let zb2 = g.constant(Tensor::zeros(&[2]));
    let cx = g.conv2d(xv, wv, zb3, 2, 1).unwrap();
    assert_eq!(g.shape(cx), &[1, 3, 4, 4]);
    let y = rand_tensor(&mut rng, &[1, 3, 4, 4], -1.0, 1.0);
    let yv = g.constant(y.clone());
    let ty = g.conv_transpose2d(yv, wv, zb2, 2, 1, 1).unwrap();
    assert_eq!(g.shape(ty), &[1, 2, 8, 8]);
    let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = g.value(ty).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn conv_transpose_and_maxpool_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = rand_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2], -1.0, 1.0);
    let r = gradcheck(
        |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], v[2], 2, 1, 1)?;
            project(g, y, 7)
        },
        &[x, w, b],
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error() < TOL, "{r:?}");
    // Distinct values keep the argmax away from ties.
    let data: Vec<f64> = (0..32).map(|i| ((i * 7919) % 97) as f64 / 10.0).collect();
    let x = Tensor::new(&[1, 2, 4, 4], data).unwrap();
    let r = gradcheck(
        |g, v| {
            let y = g.maxpool2d(v[0], 2, 2)?;
            project(g, y, 8)
        },
        &[x],
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error() < TOL, "{r:?}");
}

#[test]
fn three_layer_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let shapes = [[3, 5], [5, 4], [4, 2]];
    let mut params: Vec<Tensor<f64>> =
        shapes.iter().map(|s| rand_tensor(&mut rng, s, -0.8, 0.8)).collect();
    params.push(rand_tensor(&mut rng, &[4, 3], -1.0, 1.0));
    let r = gradcheck(
        |g, v| {
            let h1 = g.matmul(v[3], v[0])?;
            let h1 = g.tanh(h1);
            let h2 = g.matmul(h1, v[1])?;
            let h2 = g.elu(h2);
            let o = g.matmul(h2, v[2])?;
            let o = g.log_softmax(o);
            Ok(g.mean(o))
        },
        &params,
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error() < 1e-4, "{r:?}");
}

#[test]
fn sigmoid_chain() {
    let x = Tensor::from_f64(&[3], &[0.3, -0.7, 1.1]).unwrap();
    let r = gradcheck(
        |g, v| {
            let a = g.sigmoid(v[0]);
            let b = g.sigmoid(a);
            let c = g.sigmoid(b);
            Ok(g.sum(c))
        },
        &[x],
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error() < 1e-6, "{r:?}");
}

#[test]
fn f32_graph_runs() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::new(&[2], vec![0.5f32, -1.0]).unwrap());
    let t = g.tanh(x);
    let l = g.sum(t);
    let gr = g.backward(l).unwrap().get(x);
    assert!((gr.data()[0] - (1.0 - 0.5f32.tanh().powi(2))).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 3], -1.5, 1.5);
        let wm = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        let f = |g: &mut Graph<f64>, x: Var| -> Var {
            let w = g.constant(wm.clone());
            let m = g.matmul(x, w).unwrap();
            let t = g.tanh(m);
            g.sum(t)
        };
        let h = |g: &mut Graph<f64>, x: Var| -> Var {
            let e = g.exp(x);
            let s = g.softmax(e);
            let q = g.square(s);
            g.sum(q)
        };
        let grad_of = |which: u8| {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let l = match which {
                0 => f(&mut g, xv),
                1 => h(&mut g, xv),
                _ => {
                    let fv = f(&mut g, xv);
                    let hv = h(&mut g, xv);
                    let fa = g.scale(fv, a);
                    let hb = g.scale(hv, b);
                    g.add(fa, hb).unwrap()
                }
            };
            g.backward(l).unwrap().get(xv)
        };
        let (gf, gh, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gc.len() {
            let lin = a * gf.data()[i] + b * gh.data()[i];
            prop_assert!((gc.data()[i] - lin).abs() < 1e-6);
        }
    }

    #[test]
    fn reparam_node_partials(mu in -5.0f64..5.0, sigma in 1e-3f64..5.0, eps in -3.0f64..3.0) {
        let mut g = Graph::new();
        let m = g.param(Tensor::scalar(mu));
        let s = g.param(Tensor::scalar(sigma));
        let e = g.constant(Tensor::scalar(eps));
        let se = g.mul(s, e).unwrap();
        let z = g.add(m, se).unwrap();
        let gr = g.backward(z).unwrap();
        prop_assert_eq!(gr.get(m).item(), 1.0);
        prop_assert_eq!(gr.get(s).item(), eps);
    }
}
