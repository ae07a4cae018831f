use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::error::Error;
use crate::rng;

fn store_with(params: &[(&str, Vec<usize>)], seed: u64) -> (ParameterStore, Vec<ParamId>) {
    let mut r = rng::stream(seed, "test");
    let mut store = ParameterStore::new();
    let ids = params
        .iter()
        .map(|(name, shape)| store.insert_init(name, shape, Init::Uniform(1.0), &mut r).unwrap())
        .collect();
    (store, ids)
}

fn weights(n: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "weights");
    Tensor::vector((0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
}

/// Reduces any node to a scalar through a fixed random projection so that
/// every output element carries a distinct gradient.
fn project(g: &mut Graph<'_>, x: NodeId, seed: u64) -> Result<NodeId, Error> {
    let n = g.value(x).len();
    let shape = g.value(x).shape().to_vec();
    let w = Tensor::new(shape, weights(n, seed).into_data()).unwrap();
    let w = g.constant(w);
    let prod = g.mul(x, w)?;
    g.sum(prod)
}

fn check(store: &mut ParameterStore, build: impl Fn(&mut Graph<'_>) -> Result<NodeId, Error>) {
    let report = gradient_check(store, &GradCheckOptions::default(), build).unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![0.0; 3]));
    let y = g.softmax(x).unwrap();
    for &p in g.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn entropy_of_uniform_is_log_k() {
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![0.0; 4]));
    let p = g.softmax(x).unwrap();
    let h = g.entropy(p).unwrap();
    assert!((g.value(h).item() - 4f64.ln()).abs() < 1e-12);
    assert!((g.value(h).item() - 1.386294).abs() < 1e-6);
}

#[test]
fn identity_matmul() {
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let eye = g.constant(eye);
    let v = g.constant(Tensor::vector(vec![0.3, -2.0, 7.5]));
    let out = g.matmul(eye, v).unwrap();
    assert_eq!(g.value(out).data(), &[0.3, -2.0, 7.5]);
}

#[test]
fn tanh_derivative_matches_central_difference() {
    // Oracle: central difference of tanh at 0.5 with h = 1e-6.
    let h = 1e-6;
    let oracle = ((0.5f64 + h).tanh() - (0.5f64 - h).tanh()) / (2.0 * h);
    assert!((oracle - 0.786448).abs() < 1e-6);

    let mut store = ParameterStore::new();
    let x = store.insert("x", Tensor::scalar(0.5)).unwrap();
    let mut g = Graph::new(&store);
    let xn = g.param(x);
    let y = g.tanh(xn).unwrap();
    let grads = g.backward(y).unwrap();
    assert!((grads.get(x).unwrap().item() - oracle).abs() < 1e-8);
}

#[test]
fn sum_gradient_is_ones() {
    let mut store = ParameterStore::new();
    let p = store.insert("p", Tensor::vector(vec![0.1, 0.2, 0.3, 0.4])).unwrap();
    let mut g = Graph::new(&store);
    let pn = g.param(p);
    let s = g.sum(pn).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[1.0; 4]);
}

#[test]
fn mean_of_squares_gradient() {
    // d/dp_i mean(p^2) = p_i for two elements.
    let mut store = ParameterStore::new();
    let p = store.insert("p", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let mut g = Graph::new(&store);
    let pn = g.param(p);
    let sq = g.mul(pn, pn).unwrap();
    let m = g.mean(sq).unwrap();
    let grads = g.backward(m).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);

    let report = gradient_check(&mut store, &GradCheckOptions::default(), |g| {
        let pn = g.param(p);
        let sq = g.mul(pn, pn)?;
        g.mean(sq)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn aliases_accumulate_into_one_slot() {
    let mut store = ParameterStore::new();
    store.insert("shared/w", Tensor::vector(vec![0.5, -1.0])).unwrap();
    store.alias("task0/w", "shared/w").unwrap();
    store.alias("task1/w", "shared/w").unwrap();
    let a = store.resolve("task0/w").unwrap();
    let b = store.resolve("task1/w").unwrap();

    let mut g = Graph::new(&store);
    let an = g.param(a);
    let bn = g.param(b);
    let x = g.constant(Tensor::vector(vec![2.0, 3.0]));
    let y = g.constant(Tensor::vector(vec![-1.0, 4.0]));
    let u = g.mul(an, x).unwrap();
    let v = g.mul(bn, y).unwrap();
    let s = g.add(u, v).unwrap();
    let loss = g.sum(s).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.len(), 1);
    assert_eq!(grads.get(a).unwrap().data(), &[1.0, 7.0]);
}

#[test]
fn tied_use_k_times_is_sum_of_independent_uses() {
    let (store, ids) = store_with(&[("w", vec![3, 4])], 5);
    let w = ids[0];
    let inputs: Vec<Tensor> = (0..3).map(|k| weights(4, 100 + k)).collect();

    let single = |k: usize| {
        let mut g = Graph::new(&store);
        let wn = g.param(w);
        let x = g.constant(inputs[k].clone());
        let y = g.matmul(wn, x).unwrap();
        let t = g.tanh(y).unwrap();
        let l = g.sum(t).unwrap();
        g.backward(l).unwrap().get(w).unwrap().clone()
    };
    let mut expected = single(0);
    expected.add_assign(&single(1));
    expected.add_assign(&single(2));

    let mut g = Graph::new(&store);
    let mut terms = Vec::new();
    for x in &inputs {
        let wn = g.param(w);
        let xn = g.constant(x.clone());
        let y = g.matmul(wn, xn).unwrap();
        let t = g.tanh(y).unwrap();
        terms.push(g.sum(t).unwrap());
    }
    let s01 = g.add(terms[0], terms[1]).unwrap();
    let total = g.add(s01, terms[2]).unwrap();
    let grads = g.backward(total).unwrap();
    for (a, b) in grads.get(w).unwrap().data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let (store, ids) = store_with(&[("p", vec![3])], 1);
    let mut g = Graph::new(&store);
    let p = g.param(ids[0]);
    assert!(matches!(g.backward(p), Err(Error::Contract(_))));
}

#[test]
fn shape_errors_name_op_and_shapes() {
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    assert!(matches!(g.mul(a, b), Err(Error::Shape { op: "mul", .. })));
}

#[test]
fn non_finite_outputs_are_reported() {
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    g.set_check_finite(true);
    let x = g.constant(Tensor::vector(vec![-1.0, 1.0]));
    assert!(matches!(g.log(x), Err(Error::NonFinite { op: "log" })));
}

#[test]
fn lookup_out_of_range() {
    let (store, ids) = store_with(&[("emb", vec![4, 2])], 1);
    let mut g = Graph::new(&store);
    let t = g.param(ids[0]);
    assert!(g.lookup(t, 4).is_err());
    assert!(g.lookup(t, 3).is_ok());
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let (store, ids) = store_with(&[("a", vec![3]), ("b", vec![3])], 2);
    let mut g = Graph::new(&store);
    g.freeze([ids[1]]);
    let a = g.param(ids[0]);
    let b = g.param(ids[1]);
    let m = g.mul(a, b).unwrap();
    let l = g.sum(m).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.contains(ids[0]));
    assert!(!grads.contains(ids[1]));
}

#[test]
fn detach_blocks_gradient() {
    let (store, ids) = store_with(&[("a", vec![3])], 2);
    let mut g = Graph::new(&store);
    let a = g.param(ids[0]);
    let t = g.tanh(a).unwrap();
    let d = g.detach(t);
    let m = g.mul(d, a).unwrap();
    let l = g.sum(m).unwrap();
    let grads = g.backward(l).unwrap();
    // Only the direct path survives: d(l)/da = tanh(a).
    for (gv, av) in grads.get(ids[0]).unwrap().data().iter().zip(store.value(ids[0]).data()) {
        assert!((gv - av.tanh()).abs() < 1e-15);
    }
}

#[test]
fn dropout_rate_zero_is_identity() {
    let (store, ids) = store_with(&[("a", vec![5])], 2);
    let mut g = Graph::training(&store, rng::stream(1, "d"));
    let a = g.param(ids[0]);
    let d = g.dropout(a, 0.0).unwrap();
    assert_eq!(d, a);
    let mut eval = Graph::new(&store);
    let a = eval.param(ids[0]);
    assert_eq!(eval.dropout(a, 0.5).unwrap(), a);
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let store = ParameterStore::new();
    let mut g = Graph::training(&store, rng::stream(42, "dropout"));
    let n = 100_000;
    let x = g.constant(Tensor::filled(&[n], 1.0));
    let rate = 0.5;
    let y = g.dropout(x, rate).unwrap();
    let mean = g.value(y).sum() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!(g.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn corrupted_backward_fails_the_check() {
    let (mut store, ids) = store_with(&[("x", vec![4])], 9);
    let x = ids[0];
    let sign_flipped_tanh = |g: &mut Graph<'_>| -> Result<NodeId, Error> {
        let xn = g.param(x);
        let value = {
            let v = g.value(xn);
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a.tanh()).collect()).unwrap()
        };
        let y = g.custom(
            &[xn],
            value,
            Box::new(|_, out, gout| {
                let d = out.data().iter().zip(gout.data()).map(|(y, g)| -(g * (1.0 - y * y))).collect();
                vec![Tensor::new(out.shape().to_vec(), d).unwrap()]
            }),
        )?;
        project(g, y, 3)
    };
    let report = gradient_check(&mut store, &GradCheckOptions::default(), sign_flipped_tanh).unwrap();
    assert!(!report.passed());
    assert_eq!(report.failures[0].param, "x");

    // The same custom node with the correct rule passes.
    check(&mut store, |g| {
        let xn = g.param(x);
        let value = {
            let v = g.value(xn);
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a.tanh()).collect()).unwrap()
        };
        let y = g.custom(
            &[xn],
            value,
            Box::new(|_, out, gout| {
                let d = out.data().iter().zip(gout.data()).map(|(y, g)| g * (1.0 - y * y)).collect();
                vec![Tensor::new(out.shape().to_vec(), d).unwrap()]
            }),
        )?;
        project(g, y, 3)
    });
}

#[test]
fn tanh_layer_with_softmax_cross_entropy_passes() {
    for seed in 0..10 {
        let (mut store, ids) = store_with(&[("W", vec![5, 4]), ("b", vec![5])], seed);
        let x = weights(4, seed + 50);
        check(&mut store, |g| {
            let w = g.param(ids[0]);
            let b = g.param(ids[1]);
            let xn = g.constant(x.clone());
            let z = g.matmul(w, xn)?;
            let z = g.add(z, b)?;
            let h = g.tanh(z)?;
            g.pick_neg_log_softmax(h, (seed % 5) as usize)
        });
    }
}

fn dims(seed: u64) -> (usize, usize, usize) {
    let mut r = rng::stream(seed, "dims");
    (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..4))
}

#[test]
fn gradcheck_binary_ops_over_random_shapes() {
    for seed in 0..10 {
        let (m, k, n) = dims(seed);
        let (mut store, ids) = store_with(
            &[("A", vec![m, k]), ("B", vec![k, n]), ("v", vec![k]), ("C", vec![m, k]), ("r", vec![k])],
            seed,
        );
        let (a, b, v, c, r) = (ids[0], ids[1], ids[2], ids[3], ids[4]);
        check(&mut store, |g| {
            let (an, bn, vn, cn, rn) = (g.param(a), g.param(b), g.param(v), g.param(c), g.param(r));
            let mm = g.matmul(an, bn)?;
            let mv = g.matmul(an, vn)?;
            let sum = g.add(an, cn)?;
            let bcast = g.add(cn, rn)?;
            let diff = g.sub(an, cn)?;
            let prod = g.mul(an, cn)?;
            let sc = g.scale(prod, -1.7)?;
            let l1 = project(g, mm, seed)?;
            let l2 = project(g, mv, seed + 1)?;
            let l3 = project(g, sum, seed + 2)?;
            let l4 = project(g, bcast, seed + 3)?;
            let l5 = project(g, diff, seed + 4)?;
            let l6 = project(g, sc, seed + 5)?;
            let mut total = g.add(l1, l2)?;
            for l in [l3, l4, l5, l6] {
                total = g.add(total, l)?;
            }
            Ok(total)
        });
    }
}

#[test]
fn gradcheck_unary_ops_over_random_shapes() {
    for seed in 0..10 {
        let (m, k, _) = dims(seed);
        let (mut store, ids) = store_with(&[("x", vec![k + 1]), ("M", vec![m, k])], seed);
        let (x, mm) = (ids[0], ids[1]);
        check(&mut store, |g| {
            let xn = g.param(x);
            let mn = g.param(mm);
            let t = g.tanh(xn)?;
            let s = g.sigmoid(xn)?;
            let p = g.softmax(xn)?;
            let lp = g.log(p)?;
            let h = g.entropy(p)?;
            let tr = g.transpose(mn)?;
            let mean = g.mean(mn)?;
            let nll = g.pick_neg_log_softmax(xn, (seed as usize) % (k + 1))?;
            let mut total = project(g, t, seed)?;
            for (node, off) in [(s, 1), (p, 2), (lp, 3), (tr, 4)] {
                let l = project(g, node, seed + off)?;
                total = g.add(total, l)?;
            }
            for extra in [h, mean, nll] {
                total = g.add(total, extra)?;
            }
            Ok(total)
        });
    }
}

#[test]
fn gradcheck_structural_ops_over_random_shapes() {
    for seed in 0..10 {
        let (m, k, n) = dims(seed);
        let (mut store, ids) = store_with(
            &[("a", vec![k]), ("b", vec![k]), ("c", vec![n]), ("E", vec![m + 1, k])],
            seed,
        );
        let (a, b, c, e) = (ids[0], ids[1], ids[2], ids[3]);
        let row = seed as usize % (m + 1);
        check(&mut store, |g| {
            let (an, bn, cn, en) = (g.param(a), g.param(b), g.param(c), g.param(e));
            let cat = g.concat(&[an, cn, bn])?;
            let sl = g.slice(cat, 1.min(k - 1), k)?;
            let st = g.stack(&[an, bn, an])?;
            let look = g.lookup(en, row)?;
            let look2 = g.lookup(en, 0)?;
            let l1 = project(g, cat, seed)?;
            let l2 = project(g, sl, seed + 1)?;
            let l3 = project(g, st, seed + 2)?;
            let l4 = project(g, look, seed + 3)?;
            let l5 = project(g, look2, seed + 4)?;
            let s = g.sum(cat)?;
            let mut total = g.add(l1, l2)?;
            for l in [l3, l4, l5, s] {
                total = g.add(total, l)?;
            }
            Ok(total)
        });
    }
}

#[test]
fn gradcheck_dropout_with_fixed_mask() {
    for seed in 0..10 {
        let (mut store, ids) = store_with(&[("x", vec![6])], seed);
        let x = ids[0];
        let opts = GradCheckOptions {
            dropout_seed: Some(seed),
            ..GradCheckOptions::default()
        };
        let report = gradient_check(&mut store, &opts, |g| {
            let xn = g.param(x);
            let t = g.tanh(xn)?;
            let d = g.dropout(t, 0.3)?;
            project(g, d, seed)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-30.0f64..30.0, 1..20)) {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(xs));
        let p = g.softmax(x).unwrap();
        let v = g.value(p);
        prop_assert!(v.data().iter().all(|&q| q >= 0.0));
        prop_assert!((v.sum() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn entropy_is_bounded(xs in prop::collection::vec(-10.0f64..10.0, 1..12)) {
        let k = xs.len();
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(xs));
        let p = g.softmax(x).unwrap();
        let h = g.entropy(p).unwrap();
        let h = g.value(h).item();
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (k as f64).ln() + 1e-9);
    }
}
