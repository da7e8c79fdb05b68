use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::error::Error;
use crate::rng::{rng_from, Rng};

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Central-difference check of `d loss / d params` against the tape.
fn check_gradients(params: &mut ParamSet, loss: impl Fn(&mut Graph) -> Var, tol: f64) {
    let analytic = {
        let mut g = Graph::new(params);
        let l = loss(&mut g);
        g.backward(l).unwrap()
    };
    let eval = |p: &ParamSet| {
        let mut g = Graph::new(p);
        let l = loss(&mut g);
        g.value(l).data()[0]
    };
    let h = 1e-6;
    for pi in 0..params.len() {
        let n = params.tensors()[pi].len();
        // probe a bounded number of coordinates per tensor
        let step = (n / 12).max(1);
        for k in (0..n).step_by(step) {
            let orig = params.tensors()[pi].data()[k];
            params.tensors_mut()[pi].data_mut()[k] = orig + h;
            let up = eval(params);
            params.tensors_mut()[pi].data_mut()[k] = orig - h;
            let down = eval(params);
            params.tensors_mut()[pi].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic.0[pi].data()[k];
            let err = (fd - an).abs() / (1.0 + fd.abs().max(an.abs()));
            assert!(err < tol, "param {} [{k}]: fd {fd} vs tape {an}", params.names()[pi]);
        }
    }
}

#[test]
fn elementwise_and_matrix_ops_match_finite_differences() {
    let mut rng = rng_from(1, &[]);
    let mut p = ParamSet::new();
    let a = p.add("a", random(&mut rng, &[3, 4]));
    let b = p.add("b", random(&mut rng, &[4, 5]));
    let r = p.add("r", random(&mut rng, &[1, 5]));
    let c = p.add("c", random(&mut rng, &[3, 5]));
    check_gradients(
        &mut p,
        |g| {
            let (a, b, r, c) = (g.param(a), g.param(b), g.param(r), g.param(c));
            let ab = g.matmul(a, b).unwrap();
            let x = g.add_row(ab, r).unwrap();
            let y = g.mul_row(x, r).unwrap();
            let s = g.sigmoid(y);
            let t = g.tanh(c);
            let u = g.mul(s, t).unwrap();
            let v = g.sub(u, x).unwrap();
            let sp = g.softplus(v);
            let rc = g_scale(g, c, 0.3);
            let e = g.exp(rc);
            let w = g.add(sp, e).unwrap();
            let m = g.minimum(w, x).unwrap();
            let sq = g.square(m);
            let rs = g.row_sum(sq);
            let cl = g.clamp(rs, -10.0, 2.0);
            let sl = g.slice_cols(w, 1, 4).unwrap();
            let sr = g.slice_rows(sl, 1, 3).unwrap();
            let cc = g.concat_cols(&[sr, sr]).unwrap();
            let cr = g.concat_rows(&[cc, cc]).unwrap();
            let rsh = g.reshape(cr, &[2, 12]).unwrap();
            let l1 = g.sum(cl);
            let l2 = g.mean(rsh);
            let l = g.add(l1, l2).unwrap();
            g.add_scalar(l, 1.0)
        },
        1e-6,
    );
}

fn g_scale(g: &mut Graph, v: Var, s: f64) -> Var {
    let p = g.scale(v, s);
    g.relu(p)
}

#[test]
fn fused_lstm_cell_matches_composite_ops() {
    let mut rng = rng_from(2, &[]);
    let (b, h) = (3, 4);
    let mut p = ParamSet::new();
    let z = p.add("z", random(&mut rng, &[b, 4 * h]));
    let c0 = p.add("c0", random(&mut rng, &[b, h]));
    let fused = |g: &mut Graph| {
        let (z, c0) = (g.param(z), g.param(c0));
        let hc = g.lstm_cell(z, c0).unwrap();
        let sq = g.square(hc);
        g.sum(sq)
    };
    let composite = |g: &mut Graph| {
        let (z, c0) = (g.param(z), g.param(c0));
        let gate = |g: &mut Graph, k: usize| g.slice_cols(z, k * h, (k + 1) * h).unwrap();
        let (zi, zf, zg, zo) = (gate(g, 0), gate(g, 1), gate(g, 2), gate(g, 3));
        let (i, f, gg, o) = (g.sigmoid(zi), g.sigmoid(zf), g.tanh(zg), g.sigmoid(zo));
        let fc = g.mul(f, c0).unwrap();
        let ig = g.mul(i, gg).unwrap();
        let c = g.add(fc, ig).unwrap();
        let tc = g.tanh(c);
        let hh = g.mul(o, tc).unwrap();
        let hc = g.concat_cols(&[hh, c]).unwrap();
        let sq = g.square(hc);
        g.sum(sq)
    };
    let (mut g1, mut g2) = (Graph::new(&p), Graph::new(&p));
    let (l1, l2) = (fused(&mut g1), composite(&mut g2));
    assert!((g1.value(l1).data()[0] - g2.value(l2).data()[0]).abs() < 1e-12);
    let (d1, d2) = (g1.backward(l1).unwrap(), g2.backward(l2).unwrap());
    for (a, b) in d1.0.iter().zip(&d2.0) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    check_gradients(&mut p, fused, 1e-6);
}

#[test]
fn conv_ops_match_finite_differences() {
    let mut rng = rng_from(3, &[]);
    let geom = ConvGeometry {
        kernel: 4,
        stride: 2,
        padding: 1,
    };
    let mut p = ParamSet::new();
    let x = p.add("x", random(&mut rng, &[2, 3, 3, 3]));
    let w = p.add("w", random(&mut rng, &[3, 2, 4, 4]));
    let bias = p.add("bias", random(&mut rng, &[2]));
    check_gradients(
        &mut p,
        |g| {
            let (x, w, bias) = (g.param(x), g.param(w), g.param(bias));
            let y = g.conv_transpose2d(x, w, geom).unwrap();
            let y = g.add_channel_bias(y, bias).unwrap();
            let y = g.center_crop(y, 4, 5).unwrap();
            let y = g.tanh(y);
            let sq = g.square(y);
            g.sum(sq)
        },
        1e-6,
    );
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    let mut rng = rng_from(4, &[]);
    let geom = ConvGeometry {
        kernel: 4,
        stride: 2,
        padding: 1,
    };
    for _ in 0..5 {
        let x = random(&mut rng, &[2, 3, 4, 5]);
        let w = random(&mut rng, &[3, 2, 4, 4]);
        let y = random(&mut rng, &[2, 2, 8, 10]);
        let lhs = conv_transpose2d(&x, &w, geom).unwrap().dot(&y);
        let rhs = x.dot(&conv2d(&y, &w, geom, 4, 5).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn transposed_conv_places_kernel_copies() {
    // a single input pixel reproduces the kernel, shifted by the padding
    let geom = ConvGeometry {
        kernel: 3,
        stride: 2,
        padding: 0,
    };
    let x = Tensor::new(vec![1, 1, 2, 1], vec![1.0, 2.0]).unwrap();
    let w = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let y = conv_transpose2d(&x, &w, geom).unwrap();
    assert_eq!(y.shape(), &[1, 1, 5, 3]);
    let d = y.data();
    // rows 0..3 from the first pixel, rows 2..5 from the second (scaled by 2)
    assert_eq!(&d[0..3], &[1.0, 2.0, 3.0]);
    assert_eq!(&d[6..9], &[7.0 + 2.0, 8.0 + 4.0, 9.0 + 6.0]);
    assert_eq!(&d[12..15], &[14.0, 16.0, 18.0]);
}

#[test]
fn shape_errors_are_reported() {
    let p = ParamSet::new();
    let mut g = Graph::new(&p);
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
    assert!(matches!(g.backward(a), Err(Error::Shape(_))));
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn recurrent_unroll_matches_stepwise_inference_and_gradients() {
    let spec = RecurrentSpec {
        role: NetRole::Actor,
        input_dim: 3,
        output_dim: 2,
        hidden: 4,
        layers: 2,
        init_std: 0.2,
    };
    let mut net = RecurrentNet::new(spec.clone(), 5).unwrap();
    assert!((net.std().unwrap()[0] - 0.2).abs() < 1e-12);
    let mut rng = rng_from(5, &[]);
    let xs: Vec<Tensor> = (0..4).map(|_| random(&mut rng, &[2, 3])).collect();

    let mut state = net.zero_state(2);
    let stepwise: Vec<Tensor> = xs.iter().map(|x| net.forward(x, &mut state).unwrap()).collect();
    let mut g = Graph::new(net.params());
    let inputs: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
    let outs = net.unroll(&mut g, &inputs, &net.zero_state(2)).unwrap();
    for (o, s) in outs.iter().zip(&stepwise) {
        assert_eq!(g.value(*o), s);
    }
    drop(g);

    // scale the head up so gradients are not vanishingly small
    let head = net.params().names().iter().position(|n| n == "head.weight").unwrap();
    net.params_mut().tensors_mut()[head].scale_assign(50.0);
    let n2 = net.clone();
    check_gradients(
        net.params_mut(),
        |g| {
            let inputs: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
            let outs = n2.unroll(g, &inputs, &n2.zero_state(2)).unwrap();
            let cat = g.concat_rows(&outs).unwrap();
            let sq = g.square(cat);
            g.sum(sq)
        },
        1e-6,
    );
}

#[test]
fn decoder_emits_non_negative_grid() {
    let dec = GridDecoder::new(DecoderSpec::for_grid(5, 30), 1).unwrap();
    assert_eq!(dec.spec().raw_size(), 32);
    let mut rng = rng_from(6, &[]);
    let out = dec.predict(&random(&mut rng, &[3, 5])).unwrap();
    assert_eq!(out.shape(), &[3, 900]);
    assert!(out.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    assert!(dec.predict(&random(&mut rng, &[3, 4])).is_err());
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let spec = DecoderSpec {
        input_dim: 2,
        stem_hidden: 4,
        channels: vec![2, 2, 1],
        seed_size: 2,
        geometry: ConvGeometry {
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        output_size: 6,
    };
    let mut dec = GridDecoder::new(spec, 2).unwrap();
    let mut rng = rng_from(7, &[]);
    // zero biases put pre-activations exactly on the relu kink
    for t in dec.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let x = random(&mut rng, &[2, 2]);
    let target = random(&mut rng, &[2, 36]);
    let mask = Tensor::new(vec![2, 36], (0..72).map(|i| (i % 3 != 0) as u8 as f64).collect()).unwrap();
    let d2 = dec.clone();
    check_gradients(
        dec.params_mut(),
        |g| {
            let xv = g.input(x.clone());
            let y = d2.forward_graph(g, xv).unwrap();
            masked_mse(g, y, &target, &mask).unwrap()
        },
        1e-5,
    );
}

#[test]
fn masked_mse_ignores_masked_cells() {
    let p = ParamSet::new();
    let mut g = Graph::new(&p);
    let pred = g.input(Tensor::row(&[1.0, 5.0, 3.0]));
    let target = Tensor::row(&[0.0, 0.0, 1.0]);
    let mask = Tensor::row(&[1.0, 0.0, 1.0]);
    let l = masked_mse(&mut g, pred, &target, &mask).unwrap();
    assert!((g.value(l).data()[0] - 2.5).abs() < 1e-15);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = ParamSet::new();
    let id = p.add("w", Tensor::row(&[1.0, -2.0]));
    let mut opt = Adam::new(AdamConfig::default(), &p);
    let grads = Gradients(vec![Tensor::row(&[0.5, -3.0])]);
    opt.update(&mut p, &grads).unwrap();
    let lr = opt.config.learning_rate;
    let w = p.get(id).data();
    assert!((w[0] - (1.0 - lr)).abs() < 1e-10);
    assert!((w[1] - (-2.0 + lr)).abs() < 1e-10);
    let bad = Gradients(vec![Tensor::row(&[f64::NAN, 0.0])]);
    assert!(matches!(opt.update(&mut p, &bad), Err(Error::NonFinite(_))));
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut p = ParamSet::new();
    let id = p.add("w", Tensor::row(&[3.0, -4.0]));
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        },
        &p,
    );
    for _ in 0..2000 {
        let grads = {
            let mut g = Graph::new(&p);
            let w = g.param(id);
            let t = g.input(Tensor::row(&[1.0, 2.0]));
            let d = g.sub(w, t).unwrap();
            let sq = g.square(d);
            let l = g.sum(sq);
            g.backward(l).unwrap()
        };
        opt.update(&mut p, &grads).unwrap();
    }
    let w = p.get(id).data();
    assert!((w[0] - 1.0).abs() < 1e-3 && (w[1] - 2.0).abs() < 1e-3, "{w:?}");
}

#[test]
fn gaussian_log_prob_closed_form() {
    // standard normal at zero: -0.5 ln(2π) per dimension
    let lp = dist::log_prob(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]);
    assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    let lp = dist::log_prob(&[1.0], &[(2.0f64).ln()], &[3.0]);
    let expect = -0.5 - 2.0f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((lp - expect).abs() < 1e-12);

    let p = ParamSet::new();
    let mut g = Graph::new(&p);
    let mean = g.input(Tensor::from_rows(&[[0.1, -0.2], [0.5, 0.0]]).unwrap());
    let ls = g.input(Tensor::row(&[-1.0, 0.3]));
    let acts = Tensor::from_rows(&[[0.0, 0.4], [1.0, -1.0]]).unwrap();
    let lpg = dist::log_prob_graph(&mut g, mean, ls, &acts).unwrap();
    for r in 0..2 {
        let direct = dist::log_prob(g.value(mean).row_slice(r), &[-1.0, 0.3], acts.row_slice(r));
        assert!((g.value(lpg).data()[r] - direct).abs() < 1e-12);
    }
    let h = dist::entropy_graph(&mut g, ls);
    assert!((g.value(h).data()[0] - dist::entropy(&[-1.0, 0.3])).abs() < 1e-12);
}

#[test]
fn gaussian_log_prob_gradients() {
    let mut p = ParamSet::new();
    let m = p.add("m", Tensor::from_rows(&[[0.1, -0.2], [0.5, 0.0]]).unwrap());
    let s = p.add("s", Tensor::row(&[-0.5, 0.3]));
    let acts = Tensor::from_rows(&[[0.0, 0.4], [1.0, -1.0]]).unwrap();
    check_gradients(
        &mut p,
        |g| {
            let (m, s) = (g.param(m), g.param(s));
            let lp = dist::log_prob_graph(g, m, s, &acts).unwrap();
            g.sum(lp)
        },
        1e-7,
    );
}

proptest! {
    #[test]
    fn kl_is_non_negative_and_zero_on_identity(
        m1 in prop::collection::vec(-2.0f64..2.0, 3),
        s1 in prop::collection::vec(-2.0f64..1.0, 3),
        m2 in prop::collection::vec(-2.0f64..2.0, 3),
        s2 in prop::collection::vec(-2.0f64..1.0, 3),
    ) {
        prop_assert!(dist::kl_divergence(&m1, &s1, &m1, &s1).abs() < 1e-12);
        prop_assert!(dist::kl_divergence(&m1, &s1, &m2, &s2) >= -1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        values in prop::collection::vec(prop::num::f64::ANY, 1..40),
        hash in "[0-9a-f]{0,64}",
    ) {
        let mut ck = Checkpoint::new(serde_json::json!({"iteration": 3}), hash);
        let n = values.len();
        ck.push("a/w", Tensor::new(vec![n], values.clone()).unwrap());
        ck.push("b", Tensor::zeros(&[2, 0, 3]));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(&back.config_hash, &ck.config_hash);
        prop_assert_eq!(&back.header, &ck.header);
        let got: Vec<u64> = back.tensors[0].1.data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(back.tensors[1].1.shape(), &[2, 0, 3]);
    }
}

#[test]
fn checkpoint_rejects_corrupt_input() {
    let mut ck = Checkpoint::new(serde_json::json!({}), "abc");
    ck.push("w", Tensor::row(&[1.0, 2.0]));
    let bytes = ck.to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    let mut v2 = bytes.clone();
    v2[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Format(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

