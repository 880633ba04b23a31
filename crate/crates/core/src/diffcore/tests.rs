use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn scalar_graph(build: impl FnOnce(&mut Graph, NodeId) -> NodeId) -> (Graph, NodeId, NodeId) {
    let mut g = Graph::new();
    let x = g.param("x", 1, 1);
    let y = build(&mut g, x);
    (g, x, y)
}

fn eval1(g: &Graph, p: &ParamSet, y: NodeId) -> f64 {
    let v = g.eval(&Bindings::new().params(p), &[y]).unwrap();
    v.get(y).item()
}

fn px(v: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("x", Tensor::scalar(v));
    p
}

#[test]
fn leaky_relu_and_softplus_values() {
    let (g, _, y) = scalar_graph(|g, x| g.leaky_relu(x, LEAKY_SLOPE));
    assert!((eval1(&g, &px(-1.0), y) + 0.2).abs() < 1e-15);
    let (g, _, y) = scalar_graph(|g, x| g.softplus(x));
    assert!((eval1(&g, &px(0.0), y) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn scalar_derivatives() {
    let (g, _, y) = scalar_graph(|g, x| g.square(x));
    let gr = grad_backward(&g, &Bindings::new().params(&px(3.0)), y, None).unwrap();
    assert_eq!(gr.params.get("x").unwrap().item(), 6.0);

    let (g, _, y) = scalar_graph(|g, x| g.softplus(x));
    let gr = grad_backward(&g, &Bindings::new().params(&px(0.0)), y, None).unwrap();
    assert_eq!(gr.params.get("x").unwrap().item(), 0.5);
}

#[test]
fn kink_uses_right_derivative() {
    let (g, _, y) = scalar_graph(|g, x| g.leaky_relu(x, LEAKY_SLOPE));
    let gr = grad_backward(&g, &Bindings::new().params(&px(0.0)), y, None).unwrap();
    assert_eq!(gr.params.get("x").unwrap().item(), 1.0);
}

#[test]
fn non_scalar_output_needs_cotangent() {
    let mut g = Graph::new();
    let x = g.input("x", 2);
    let y = g.square(x);
    let xv = Tensor::row_vector(&[1.0, 2.0]);
    let b = Bindings::new().input("x", &xv);
    assert!(matches!(
        grad_backward(&g, &b, y, None),
        Err(Error::NonScalarOutput { .. })
    ));
    let ct = Tensor::row_vector(&[1.0, -1.0]);
    let gr = grad_backward(&g, &b, y, Some(&ct)).unwrap();
    assert_eq!(gr.inputs["x"].data(), &[2.0, -4.0]);
}

#[test]
fn unbound_and_mismatched_inputs_are_errors() {
    let mut g = Graph::new();
    let x = g.input("x", 2);
    let w = g.param("w", 2, 3);
    let y = g.matmul(x, w);
    assert!(matches!(
        g.eval(&Bindings::new(), &[y]),
        Err(Error::UnboundInput(_))
    ));
    let xv = Tensor::zeros(4, 3);
    let mut p = ParamSet::new();
    p.insert("w", Tensor::zeros(2, 3));
    let err = g
        .eval(&Bindings::new().params(&p).input("x", &xv), &[y])
        .unwrap_err();
    match err {
        Error::Shape { node, .. } => assert_eq!(node, x.index()),
        e => panic!("unexpected {e}"),
    }
}

#[test]
#[should_panic(expected = "matmul inner")]
fn static_shape_mismatch_panics_at_build() {
    let mut g = Graph::new();
    let a = g.param("a", 2, 3);
    let b = g.param("b", 2, 3);
    g.matmul(a, b);
}

#[test]
fn quadratic_gradcheck_is_tight() {
    let mut g = Graph::new();
    let w = g.param("w", 3, 1);
    let sq = g.square(w);
    let y = g.sum_all(sq);
    let mut p = ParamSet::new();
    p.insert("w", Tensor::col_vector(&[0.3, -1.2, 2.5]));
    let r = finite_difference_check(&g, &p, &[], y, 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
    assert_eq!(r.checked, 3);
}

#[test]
fn gradcheck_flags_kink() {
    let mut g = Graph::new();
    let w = g.param("w", 1, 2);
    let a = g.relu(w);
    let y = g.sum_all(a);
    let mut p = ParamSet::new();
    p.insert("w", Tensor::row_vector(&[0.0, 0.7]));
    let r = finite_difference_check(&g, &p, &[], y, 1e-5).unwrap();
    assert_eq!(r.excluded_nonsmooth, 1);
    assert_eq!(r.checked, 1);
    assert!(r.max_rel_error < 1e-8);
}

fn mlp_loss(act: Activation) -> (Graph, NodeId, Mlp) {
    let mut g = Graph::new();
    let x = g.input("x", 3);
    let mlp = Mlp::new("net", &[3, 8, 2], act);
    let h = mlp.build(&mut g, x);
    let t = g.tanh(h);
    let y = g.sum_all(t);
    (g, y, mlp)
}

#[test]
fn two_layer_mlp_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for act in [Activation::LeakyRelu, Activation::Softplus, Activation::Tanh] {
        let (g, y, mlp) = mlp_loss(act);
        let p = mlp.init(&mut rng);
        let x = Tensor::randn(5, 3, &mut rng);
        let r = finite_difference_check(&g, &p, &[("x", &x)], y, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{act:?}: {r:?}");
        assert!(r.checked > 0);
    }
}

#[test]
fn symbolic_grad_supports_double_backprop() {
    // y = sum(w * x^3) ; dy/dx = 3 w x^2 ; pen = sum((dy/dx)^2) = 9 w^2 x^4
    // dpen/dw = 18 w x^4
    let mut g = Graph::new();
    let x = g.input("x", 1);
    let w = g.param("w", 1, 1);
    let x2 = g.square(x);
    let x3 = g.mul(x2, x);
    let wx3 = g.mul(x3, w);
    let y = g.sum_all(wx3);
    let dx = g.grad(y, &[x])[0];
    let dx2 = g.square(dx);
    let pen = g.sum_all(dx2);

    let mut p = ParamSet::new();
    p.insert("w", Tensor::scalar(0.7));
    let xv = Tensor::col_vector(&[1.5, -2.0]);
    let vals = g.eval(&Bindings::new().params(&p).input("x", &xv), &[dx, pen]).unwrap();
    let dxv = vals.get(dx);
    assert!((dxv.get(0, 0) - 3.0 * 0.7 * 2.25).abs() < 1e-12);
    assert!((dxv.get(1, 0) - 3.0 * 0.7 * 4.0).abs() < 1e-12);
    let gw = g.grad_scalar(&vals, pen, &[w]).unwrap()[0].item();
    let expect = 18.0 * 0.7 * (1.5f64.powi(4) + 2.0f64.powi(4));
    assert!((gw - expect).abs() < 1e-9, "{gw} vs {expect}");
}

#[test]
fn forward_is_bit_reproducible() {
    let (g, y, mlp) = mlp_loss(Activation::LeakyRelu);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = mlp.init(&mut rng);
    let x = Tensor::randn(16, 3, &mut rng);
    let b = Bindings::new().params(&p).input("x", &x);
    let a = eval_forward(&g, &b, &[y]).unwrap();
    let c = eval_forward(&g, &b, &[y]).unwrap();
    assert_eq!(a[0].data()[0].to_bits(), c[0].data()[0].to_bits());
}

/// Random two-layer graph over a random op choice; returns (graph, out, params, x).
fn random_graph(seed: u64, act: usize) -> (Graph, NodeId, ParamSet, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let acts = [
        Activation::LeakyRelu,
        Activation::Relu,
        Activation::Softplus,
        Activation::Tanh,
    ];
    let mut g = Graph::new();
    let x = g.input("x", 4);
    let mlp = Mlp::new("f", &[4, 6, 3], acts[act % acts.len()]);
    let h = mlp.build(&mut g, x);
    let lse = g.logsumexp_rows(h);
    let out = g.concat_cols(&[h, lse]);
    let p = mlp.init(&mut rng);
    let xv = Tensor::randn(3, 4, &mut rng);
    (g, out, p, xv)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vjp_is_linear_in_cotangent(seed in 0u64..1000, act in 0usize..4, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (g, out, p, xv) = random_graph(seed, act);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let c1 = Tensor::randn(3, 4, &mut rng);
        let c2 = Tensor::randn(3, 4, &mut rng);
        let mut comb = c1.scale(a);
        comb.axpy(b, &c2);
        let bind = Bindings::new().params(&p).input("x", &xv);
        let g1 = grad_backward(&g, &bind, out, Some(&c1)).unwrap();
        let g2 = grad_backward(&g, &bind, out, Some(&c2)).unwrap();
        let gc = grad_backward(&g, &bind, out, Some(&comb)).unwrap();
        for (name, t) in gc.params.iter() {
            let mut lin = g1.params.get(name).unwrap().scale(a);
            lin.axpy(b, g2.params.get(name).unwrap());
            prop_assert!(t.max_abs_diff(&lin) < 1e-10);
        }
        let mut lin = g1.inputs["x"].scale(a);
        lin.axpy(b, &g2.inputs["x"]);
        prop_assert!(gc.inputs["x"].max_abs_diff(&lin) < 1e-10);
    }

    #[test]
    fn multi_seed_backward_sums(seed in 0u64..1000) {
        let (g, out, p, xv) = random_graph(seed, 0);
        let bind = Bindings::new().params(&p).input("x", &xv);
        let vals = g.eval(&bind, &[out]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c1 = Tensor::randn(3, 4, &mut rng);
        let c2 = Tensor::randn(3, 4, &mut rng);
        let x = g.input_id("x").unwrap();
        let both = g.backward(&vals, &[(out, &c1), (out, &c2)], &[x]).unwrap();
        let sum = g.backward(&vals, &[(out, &c1.add(&c2))], &[x]).unwrap();
        prop_assert!(both[0].max_abs_diff(&sum[0]) < 1e-12);
    }
}
