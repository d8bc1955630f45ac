//! Finite-difference oracles for every adjoint, written independently of the
//! library's own gradcheck helpers.

use pcn_ta::backprop;
use pcn_ta::cli::{self, ExitCode};
use pcn_ta::gradcheck::{Fault, Target};
use pcn_ta::graph::{Activation, Architecture, EdgeParams, LayerGraph};
use pcn_ta::tensor::{self, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;
const KINK: f64 = 1e-4;

fn fd(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        p[i] = x[i] + STEP;
        let a = f(&p);
        p[i] = x[i] - STEP;
        let b = f(&p);
        p[i] = x[i];
        g.push((a - b) / (2.0 * STEP));
    }
    g
}

fn assert_close(name: &str, analytic: &[f64], numeric: &[f64]) {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    let rel = if scale == 0.0 { 0.0 } else { diff / scale };
    assert!(rel <= TOL, "{name}: relative error {rel:e}");
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn reshaped(like: &Tensor, d: &[f64]) -> Tensor {
    Tensor::new(like.shape().to_vec(), d.to_vec()).unwrap()
}

fn flat(p: &EdgeParams) -> Vec<f64> {
    p.weight.data().iter().chain(p.bias.data()).copied().collect()
}

fn unflat(like: &EdgeParams, d: &[f64]) -> EdgeParams {
    let nw = like.weight.len();
    EdgeParams {
        weight: reshaped(&like.weight, &d[..nw]),
        bias: reshaped(&like.bias, &d[nw..]),
    }
}

fn pool_has_near_tie(x: &Tensor) -> bool {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    (0..c).any(|ch| {
        (0..h / 2).any(|oy| {
            (0..w / 2).any(|ox| {
                let mut v: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| x.data()[(ch * h + 2 * oy + dy) * w + 2 * ox + dx])
                    .collect();
                v.sort_by(|a, b| b.total_cmp(a));
                v[0] > 0.0 && v[0] - v[1] < KINK
            })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_vjp_matches_fd(seed in any::<u64>(), n_in in 1usize..7, n_out in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, w, b, u) = (rand_tensor(&mut rng, &[n_in]), rand_tensor(&mut rng, &[n_out, n_in]), rand_tensor(&mut rng, &[n_out]), rand_tensor(&mut rng, &[n_out]));
        let (dx, dw, db) = tensor::dense_vjp(&x, &w, &u).unwrap();
        let probe = |x: &Tensor, w: &Tensor, b: &Tensor| tensor::dense_forward(x, w, b).unwrap().dot(&u).unwrap();
        assert_close("dx", dx.data(), &fd(x.data(), |p| probe(&reshaped(&x, p), &w, &b)));
        assert_close("dw", dw.data(), &fd(w.data(), |p| probe(&x, &reshaped(&w, p), &b)));
        assert_close("db", db.data(), &fd(b.data(), |p| probe(&x, &w, &reshaped(&b, p))));
    }

    #[test]
    fn conv_vjp_matches_fd(seed in any::<u64>(), c_in in 1usize..3, c_out in 1usize..3, k in 1usize..4, extra in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[c_in, k + extra, k + extra + 1]);
        let kern = rand_tensor(&mut rng, &[c_out, c_in, k, k]);
        let b = rand_tensor(&mut rng, &[c_out]);
        let u = rand_tensor(&mut rng, &[c_out, extra + 1, extra + 2]);
        let (dx, dk, db) = tensor::conv2d_vjp(&x, &kern, &u).unwrap();
        let probe = |x: &Tensor, k: &Tensor, b: &Tensor| tensor::conv2d_forward(x, k, b).unwrap().dot(&u).unwrap();
        assert_close("dx", dx.data(), &fd(x.data(), |p| probe(&reshaped(&x, p), &kern, &b)));
        assert_close("dk", dk.data(), &fd(kern.data(), |p| probe(&x, &reshaped(&kern, p), &b)));
        assert_close("db", db.data(), &fd(b.data(), |p| probe(&x, &kern, &reshaped(&b, p))));
    }

    #[test]
    fn maxpool_vjp_matches_fd(seed in any::<u64>(), c in 1usize..3, hh in 1usize..4, ww in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[c, 2 * hh, 2 * ww]);
        prop_assume!(!pool_has_near_tie(&x));
        let u = rand_tensor(&mut rng, &[c, hh, ww]);
        let (_, idx) = tensor::maxpool_forward(&x, 2).unwrap();
        let dx = tensor::maxpool_vjp(&idx, &u).unwrap();
        assert_close("pool", dx.data(), &fd(x.data(), |p| tensor::maxpool_forward(&reshaped(&x, p), 2).unwrap().0.dot(&u).unwrap()));
    }
}

fn random_graph_state(arch: &Architecture, seed: u64) -> Option<LayerGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = LayerGraph::build(arch, seed).unwrap();
    let x = rand_tensor(&mut rng, &g.node_shapes()[0]);
    g.forward_predictions(&x).unwrap();
    for e in 0..g.num_edges() {
        let edge = &g.edges()[e];
        let cache = g.edge_cache(e).unwrap();
        if edge.activation == Activation::Relu && cache.pre.data().iter().any(|z| z.abs() < KINK) {
            return None;
        }
        if edge.pool.is_some() && pool_has_near_tie(&tensor::relu(&cache.pre)) {
            return None;
        }
    }
    g.init_states_from_predictions();
    for i in 1..g.num_nodes() {
        let noise = rand_tensor(&mut rng, g.v(i).shape()).scale(0.3);
        g.set_state(i, g.v_hat(i).add(&noise).unwrap()).unwrap();
    }
    g.refresh_errors();
    Some(g)
}

/// Energy of the graph when node `i`'s state moves by `delta`, with every
/// prediction downstream of node `i` recomputed from the frozen linearization
/// point. Only the two error terms touching node `i` change.
fn energy_after_state_shift(g: &LayerGraph, i: usize, delta: &[f64]) -> f64 {
    let d = reshaped(g.v(i), delta);
    let moved_state = g.eps(i).add(&d).unwrap();
    let (shifted, _) = g.edges()[i].forward(&g.params()[i], &g.v_hat(i).add(&d).unwrap()).unwrap();
    let next_err = g.v(i + 1).sub(&shifted).unwrap();
    let rest: f64 = (1..g.num_nodes()).filter(|&n| n != i && n != i + 1).map(|n| g.eps(n).norm_sq()).sum();
    0.5 * (moved_state.norm_sq() + next_err.norm_sq() + rest)
}

fn energy_after_param_change(g: &LayerGraph, e: usize, p: &[f64]) -> f64 {
    let params = unflat(&g.params()[e], p);
    let (pred, _) = g.edges()[e].forward(&params, g.v_hat(e)).unwrap();
    let rest: f64 = (1..g.num_nodes()).filter(|&n| n != e + 1).map(|n| g.eps(n).norm_sq()).sum();
    0.5 * (g.v(e + 1).sub(&pred).unwrap().norm_sq() + rest)
}

fn check_pc_gradients(arch: &Architecture, seeds: std::ops::Range<u64>) {
    let mut checked = 0;
    for seed in seeds {
        let Some(g) = random_graph_state(arch, seed) else { continue };
        assert!((energy_after_state_shift(&g, 1, &vec![0.0; g.v(1).len()]) - g.vfe()).abs() < 1e-12);
        for i in g.hidden_indices() {
            let descent = g.state_gradient(i).unwrap();
            let num = fd(&vec![0.0; descent.len()], |d| energy_after_state_shift(&g, i, d));
            let neg: Vec<f64> = num.iter().map(|v| -v).collect();
            assert_close(&format!("state node {i} seed {seed}"), descent.data(), &neg);
        }
        for e in 0..g.num_edges() {
            let descent = g.weight_gradient(e).unwrap();
            let num = fd(&flat(&g.params()[e]), |p| energy_after_param_change(&g, e, p));
            let neg: Vec<f64> = num.iter().map(|v| -v).collect();
            assert_close(&format!("weight edge {e} seed {seed}"), &flat(&descent), &neg);
        }
        checked += 1;
    }
    assert!(checked >= 3, "too few kink-free draws");
}

#[test]
fn pc_gradients_match_fd_on_three_node_graphs() {
    check_pc_gradients(&Architecture::mlp(&[4, 5, 3], Activation::Relu), 0..8);
    check_pc_gradients(&Architecture::mlp(&[6, 4, 2], Activation::Linear), 0..4);
}

#[test]
fn pc_gradients_match_fd_on_conv_graph() {
    check_pc_gradients(&Architecture::conv_net(&[1, 8, 8], 2, 3, 5, 4, 3), 0..6);
}

fn check_backprop(arch: &Architecture, seed: u64) {
    let g = LayerGraph::build(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = loop {
        let x = rand_tensor(&mut rng, &g.node_shapes()[0]);
        let trace = g.forward_trace(&x).unwrap();
        let smooth = trace.iter().zip(g.edges()).all(|((_, c), e)| {
            (e.activation != Activation::Relu || c.pre.data().iter().all(|z| z.abs() >= KINK))
                && (e.pool.is_none() || !pool_has_near_tie(&tensor::relu(&c.pre)))
        });
        if smooth {
            break x;
        }
    };
    let label = rand_tensor(&mut rng, &g.node_shapes()[g.output_index()]);
    let grads = backprop::bp_gradients(&g, &x, &label).unwrap();
    for e in 0..g.num_edges() {
        let mut trial = g.clone();
        let num = fd(&flat(&g.params()[e]), |p| {
            trial.params_mut()[e] = unflat(&g.params()[e], p);
            0.5 * label.sub(&trial.predict(&x).unwrap()).unwrap().norm_sq()
        });
        assert_close(&format!("backprop edge {e}"), &flat(&grads.edges[e]), &num);
    }
}

#[test]
fn backprop_matches_fd_on_reduced_full_size_network() {
    check_backprop(&Architecture::conv_net(&[1, 16, 16], 4, 5, 200, 128, 20), 3);
}

#[test]
fn backprop_matches_fd_on_relu_mlp() {
    for seed in 0..4 {
        check_backprop(&Architecture::mlp(&[6, 5, 4, 3], Activation::Relu), seed);
    }
}

#[test]
fn gradcheck_passes_and_catches_sign_flips() {
    let report = cli::cmd_gradcheck(1, Fault::default()).unwrap();
    assert!(report.rows.len() > 40);
    for target in [Target::ConvInput, Target::MaxPool, Target::PcState, Target::Backprop] {
        let err = cli::cmd_gradcheck(1, Fault { flip_sign: Some(target) }).unwrap_err();
        assert_eq!(err.code, ExitCode::Check);
        assert!(err.message.contains(target.name()), "{}", err.message);
    }
}
