//! Central finite-difference checks for every adjoint in the crate, plus the
//! predictive-coding vs backprop equivalence rows. Backs the `gradcheck`
//! subcommand.
//!
//! Adjoints are checked through scalar probes: for `y = f(x)` and a random
//! cotangent `u`, the analytic `vjp(u)` must match the central difference of
//! `⟨u, f(x)⟩`. Samples whose ReLU inputs or max-pool windows sit within
//! [`KINK_MARGIN`] of a kink are redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backprop::{self, FixtureOptions};
use crate::error::Result;
use crate::graph::{Activation, Architecture, Edge, EdgeCache, LayerGraph};
use crate::tensor::{self, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-6;
pub const KINK_MARGIN: f64 = 1e-4;
pub const LINEAR_COSINE_TOL: f64 = 1e-9;
pub const RELU_COSINE_MIN: f64 = 0.99;

/// Gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Which analytic gradient a check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    DenseInput,
    DenseWeight,
    DenseBias,
    ConvInput,
    ConvWeight,
    ConvBias,
    MaxPool,
    Relu,
    EdgeInput,
    EdgeParams,
    PcState,
    PcWeight,
    Backprop,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::DenseInput => "dense d_input",
            Target::DenseWeight => "dense d_weight",
            Target::DenseBias => "dense d_bias",
            Target::ConvInput => "conv2d d_input",
            Target::ConvWeight => "conv2d d_kernel",
            Target::ConvBias => "conv2d d_bias",
            Target::MaxPool => "maxpool d_input",
            Target::Relu => "relu d_input",
            Target::EdgeInput => "edge d_input",
            Target::EdgeParams => "edge d_params",
            Target::PcState => "pc state_gradient",
            Target::PcWeight => "pc weight_gradient",
            Target::Backprop => "backprop gradients",
        }
    }
}

/// Negates the analytic side of one target before comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Fault {
    pub flip_sign: Option<Target>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    /// Relative error for FD rows, `1 − cosine` for equivalence rows.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<CheckRow>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.passed)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>10.3e}  tol {:>8.1e}  {}\n",
                r.name,
                r.value,
                r.tolerance,
                if r.passed { "ok" } else { "FAIL" },
            ));
        }
        out
    }

    fn fd(&mut self, label: String, analytic: &[f64], numeric: &[f64]) {
        let value = rel_error(analytic, numeric);
        self.rows.push(CheckRow {
            name: label,
            value,
            tolerance: FD_REL_TOL,
            passed: value <= FD_REL_TOL,
        });
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn with_data(like: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(like.shape().to_vec(), data.to_vec()).expect("same length")
}

/// Smallest gap between the largest and second-largest entry of any window.
pub fn pool_min_gap(x: &Tensor, size: usize) -> f64 {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut gap = f64::INFINITY;
    for ch in 0..c {
        for oy in 0..h / size {
            for ox in 0..w / size {
                let mut vals: Vec<f64> = (0..size * size)
                    .map(|k| x.data()[ch * h * w + (oy * size + k / size) * w + ox * size + k % size])
                    .collect();
                vals.sort_by(|a, b| b.total_cmp(a));
                gap = gap.min(vals[0] - vals[1]);
            }
        }
    }
    gap
}

/// True when the edge's frozen linearization sits within [`KINK_MARGIN`] of
/// a ReLU or max-pool switch.
pub fn edge_near_kink(edge: &Edge, cache: &EdgeCache) -> bool {
    if edge.activation == Activation::Relu && cache.pre.data().iter().any(|z| z.abs() < KINK_MARGIN) {
        return true;
    }
    match edge.pool {
        Some(size) => {
            let act = match edge.activation {
                Activation::Relu => tensor::relu(&cache.pre),
                Activation::Linear => cache.pre.clone(),
            };
            pool_min_gap(&act, size) < KINK_MARGIN
        }
        None => false,
    }
}

fn sign(fault: Fault, target: Target) -> f64 {
    if fault.flip_sign == Some(target) {
        -1.0
    } else {
        1.0
    }
}

fn check_dense(rep: &mut Report, rng: &mut ChaCha8Rng, fault: Fault) -> Result<()> {
    let (n_in, n_out) = (rng.gen_range(1..7), rng.gen_range(1..6));
    let x = random_tensor(rng, &[n_in], 1.0);
    let w = random_tensor(rng, &[n_out, n_in], 1.0);
    let b = random_tensor(rng, &[n_out], 1.0);
    let u = random_tensor(rng, &[n_out], 1.0);
    let (dx, dw, db) = tensor::dense_vjp(&x, &w, &u)?;
    let probe = |x: &Tensor, w: &Tensor, b: &Tensor| tensor::dense_forward(x, w, b).and_then(|y| y.dot(&u)).unwrap();
    let tag = format!("[{n_out}x{n_in}]");
    let num = central_difference(x.data(), FD_STEP, |p| probe(&with_data(&x, p), &w, &b));
    rep.fd(format!("{} {tag}", Target::DenseInput.name()), &dx.scale(sign(fault, Target::DenseInput)).into_data(), &num);
    let num = central_difference(w.data(), FD_STEP, |p| probe(&x, &with_data(&w, p), &b));
    rep.fd(format!("{} {tag}", Target::DenseWeight.name()), &dw.scale(sign(fault, Target::DenseWeight)).into_data(), &num);
    let num = central_difference(b.data(), FD_STEP, |p| probe(&x, &w, &with_data(&b, p)));
    rep.fd(format!("{} {tag}", Target::DenseBias.name()), &db.scale(sign(fault, Target::DenseBias)).into_data(), &num);
    Ok(())
}

fn check_conv(rep: &mut Report, rng: &mut ChaCha8Rng, fault: Fault) -> Result<()> {
    let c_in = rng.gen_range(1..4);
    let c_out = rng.gen_range(1..4);
    let k = rng.gen_range(1..4);
    let (h, w) = (rng.gen_range(k..k + 4), rng.gen_range(k..k + 4));
    let x = random_tensor(rng, &[c_in, h, w], 1.0);
    let kern = random_tensor(rng, &[c_out, c_in, k, k], 1.0);
    let b = random_tensor(rng, &[c_out], 1.0);
    let (oh, ow) = tensor::conv_output_hw(h, w, k).expect("kernel fits");
    let u = random_tensor(rng, &[c_out, oh, ow], 1.0);
    let (dx, dk, db) = tensor::conv2d_vjp(&x, &kern, &u)?;
    let probe =
        |x: &Tensor, k: &Tensor, b: &Tensor| tensor::conv2d_forward(x, k, b).and_then(|y| y.dot(&u)).unwrap();
    let tag = format!("[{c_in}x{h}x{w} k{k} c{c_out}]");
    let num = central_difference(x.data(), FD_STEP, |p| probe(&with_data(&x, p), &kern, &b));
    rep.fd(format!("{} {tag}", Target::ConvInput.name()), &dx.scale(sign(fault, Target::ConvInput)).into_data(), &num);
    let num = central_difference(kern.data(), FD_STEP, |p| probe(&x, &with_data(&kern, p), &b));
    rep.fd(format!("{} {tag}", Target::ConvWeight.name()), &dk.scale(sign(fault, Target::ConvWeight)).into_data(), &num);
    let num = central_difference(b.data(), FD_STEP, |p| probe(&x, &kern, &with_data(&b, p)));
    rep.fd(format!("{} {tag}", Target::ConvBias.name()), &db.scale(sign(fault, Target::ConvBias)).into_data(), &num);
    Ok(())
}

fn check_pool_and_relu(rep: &mut Report, rng: &mut ChaCha8Rng, fault: Fault) -> Result<()> {
    let size = rng.gen_range(2..4);
    let shape = [rng.gen_range(1..3), size * rng.gen_range(1..4), size * rng.gen_range(1..4)];
    let x = loop {
        let x = random_tensor(rng, &shape, 1.0);
        if pool_min_gap(&x, size) >= KINK_MARGIN && x.data().iter().all(|v| v.abs() >= KINK_MARGIN) {
            break x;
        }
    };
    let (y, idx) = tensor::maxpool_forward(&x, size)?;
    let u = random_tensor(rng, y.shape(), 1.0);
    let dx = tensor::maxpool_vjp(&idx, &u)?;
    let num = central_difference(x.data(), FD_STEP, |p| {
        tensor::maxpool_forward(&with_data(&x, p), size).and_then(|(y, _)| y.dot(&u)).unwrap()
    });
    rep.fd(
        format!("{} [{}x{}x{} p{size}]", Target::MaxPool.name(), shape[0], shape[1], shape[2]),
        &dx.scale(sign(fault, Target::MaxPool)).into_data(),
        &num,
    );

    let u = random_tensor(rng, x.shape(), 1.0);
    let analytic: Vec<f64> = tensor::relu_deriv(&x).data().iter().zip(u.data()).map(|(d, u)| d * u).collect();
    let num = central_difference(x.data(), FD_STEP, |p| tensor::relu(&with_data(&x, p)).dot(&u).unwrap());
    let s = sign(fault, Target::Relu);
    rep.fd(
        format!("{} [{}]", Target::Relu.name(), x.len()),
        &analytic.iter().map(|v| s * v).collect::<Vec<_>>(),
        &num,
    );
    Ok(())
}

/// Draws `(input, cache)` for `edge` until it is away from kinks.
fn smooth_input(g: &LayerGraph, e: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor, EdgeCache)> {
    let edge = &g.edges()[e];
    loop {
        let x = random_tensor(rng, &edge.in_shape, 1.0);
        let (_, cache) = edge.forward(&g.params()[e], &x)?;
        if !edge_near_kink(edge, &cache) {
            return Ok((x, cache));
        }
    }
}

fn check_edges(rep: &mut Report, g: &LayerGraph, rng: &mut ChaCha8Rng, fault: Fault) -> Result<()> {
    for (e, edge) in g.edges().iter().enumerate() {
        let p = &g.params()[e];
        let (x, cache) = smooth_input(g, e, rng)?;
        let u = random_tensor(rng, &edge.out_shape, 1.0);
        let (dx, dp) = edge.vjp(p, &cache, &u)?;
        let tag = format!("[edge {e} {:?}->{:?}]", edge.in_shape, edge.out_shape);
        let num = central_difference(x.data(), FD_STEP, |q| {
            edge.forward(p, &with_data(&x, q)).and_then(|(y, _)| y.dot(&u)).unwrap()
        });
        rep.fd(format!("{} {tag}", Target::EdgeInput.name()), &dx.scale(sign(fault, Target::EdgeInput)).into_data(), &num);
        let flat: Vec<f64> = p.iter().copied().collect();
        let num = central_difference(&flat, FD_STEP, |q| {
            let mut trial = p.clone();
            let nw = trial.weight.len();
            trial.weight.data_mut().copy_from_slice(&q[..nw]);
            trial.bias.data_mut().copy_from_slice(&q[nw..]);
            edge.forward(&trial, &x).and_then(|(y, _)| y.dot(&u)).unwrap()
        });
        let s = sign(fault, Target::EdgeParams);
        let analytic: Vec<f64> = dp.iter().map(|v| s * v).collect();
        rep.fd(format!("{} {tag}", Target::EdgeParams.name()), &analytic, &num);
    }
    Ok(())
}

/// Puts `g` into an inference state: predictions from a random input, hidden
/// states perturbed around them, output clamped to a random target. Redraws
/// until every edge is away from kinks.
pub fn random_inference_state(g: &mut LayerGraph, rng: &mut ChaCha8Rng) -> Result<()> {
    let input_shape = g.node_shapes()[0].clone();
    loop {
        let x = random_tensor(rng, &input_shape, 1.0);
        g.forward_predictions(&x)?;
        let smooth = (0..g.num_edges()).all(|e| !edge_near_kink(&g.edges()[e], g.edge_cache(e).expect("forwarded")));
        if smooth {
            break;
        }
    }
    g.init_states_from_predictions();
    for i in g.hidden_indices().chain([g.output_index()]) {
        let noise = random_tensor(rng, g.v(i).shape(), 0.5);
        g.set_state(i, g.v_hat(i).add(&noise)?)?;
    }
    g.refresh_errors();
    Ok(())
}

/// Local energy of node `i` under frozen predictions when its state moves
/// by `delta`: `½‖ε_i + δ‖² + ½‖ε_{i+1} − (f(v̂_i + δ) − f(v̂_i))‖²`.
/// Its gradient at `δ = 0` is the negated state descent direction.
pub fn local_state_energy(g: &LayerGraph, i: usize, delta: &Tensor) -> Result<f64> {
    let edge = &g.edges()[i];
    let p = &g.params()[i];
    let base = g.v_hat(i);
    let (moved, _) = edge.forward(p, &base.add(delta)?)?;
    let shift = moved.sub(g.v_hat(i + 1))?;
    Ok(0.5 * g.eps(i).add(delta)?.norm_sq() + 0.5 * g.eps(i + 1).sub(&shift)?.norm_sq())
}

/// `½‖v_{e+1} − f(v̂_e; θ)‖²` with the edge input frozen at its prediction.
pub fn local_weight_energy(g: &LayerGraph, e: usize, flat_params: &[f64]) -> Result<f64> {
    let mut p = g.params()[e].clone();
    let nw = p.weight.len();
    p.weight.data_mut().copy_from_slice(&flat_params[..nw]);
    p.bias.data_mut().copy_from_slice(&flat_params[nw..]);
    let (pred, _) = g.edges()[e].forward(&p, g.v_hat(e))?;
    Ok(0.5 * g.v(e + 1).sub(&pred)?.norm_sq())
}

fn check_pc(rep: &mut Report, arch: &Architecture, seed: u64, rng: &mut ChaCha8Rng, fault: Fault) -> Result<()> {
    let mut g = LayerGraph::build(arch, seed)?;
    random_inference_state(&mut g, rng)?;
    for i in g.hidden_indices() {
        let grad = g.state_gradient(i)?;
        let zero = Tensor::zeros(grad.shape());
        let num = central_difference(zero.data(), FD_STEP, |d| local_state_energy(&g, i, &with_data(&zero, d)).unwrap());
        let s = -sign(fault, Target::PcState);
        let analytic: Vec<f64> = grad.data().iter().map(|v| s * v).collect();
        rep.fd(format!("{} [node {i} of {:?}]", Target::PcState.name(), arch.input_shape), &analytic, &num);
    }
    for e in 0..g.num_edges() {
        let dir = g.weight_gradient(e)?;
        let flat: Vec<f64> = g.params()[e].iter().copied().collect();
        let num = central_difference(&flat, FD_STEP, |q| local_weight_energy(&g, e, q).unwrap());
        let s = -sign(fault, Target::PcWeight);
        let analytic: Vec<f64> = dir.iter().map(|v| s * v).collect();
        rep.fd(format!("{} [edge {e} of {:?}]", Target::PcWeight.name(), arch.input_shape), &analytic, &num);
    }
    Ok(())
}

/// Redraws the input until the feedforward pass stays away from kinks.
fn smooth_forward_input(g: &LayerGraph, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let shape = g.node_shapes()[0].clone();
    loop {
        let x = random_tensor(rng, &shape, 1.0);
        let trace = g.forward_trace(&x)?;
        if trace.iter().zip(g.edges()).all(|((_, c), e)| !edge_near_kink(e, c)) {
            return Ok(x);
        }
    }
}

/// FD check of [`backprop::bp_gradients`] over every parameter of `arch`.
pub fn check_backprop(rep: &mut Report, arch: &Architecture, seed: u64, fault: Fault) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb4c7);
    let g = LayerGraph::build(arch, seed)?;
    let x = smooth_forward_input(&g, &mut rng)?;
    let classes = g.node_shapes()[g.output_index()].clone();
    let label = random_tensor(&mut rng, &classes, 1.0);
    let grads = backprop::bp_gradients(&g, &x, &label)?;
    for e in 0..g.num_edges() {
        let flat: Vec<f64> = g.params()[e].iter().copied().collect();
        let mut trial = g.clone();
        let nw = g.params()[e].weight.len();
        let num = central_difference(&flat, FD_STEP, |q| {
            let p = &mut trial.params_mut()[e];
            p.weight.data_mut().copy_from_slice(&q[..nw]);
            p.bias.data_mut().copy_from_slice(&q[nw..]);
            backprop::loss(&trial, &x, &label).unwrap()
        });
        let s = sign(fault, Target::Backprop);
        let analytic: Vec<f64> = grads.edges[e].iter().map(|v| s * v).collect();
        rep.fd(format!("{} [edge {e} of {:?}]", Target::Backprop.name(), arch.input_shape), &analytic, &num);
    }
    Ok(())
}

/// Small graphs covering every edge kind: a ReLU MLP and a conv net.
pub fn suite_architectures() -> Vec<Architecture> {
    vec![
        Architecture::mlp(&[5, 4, 3, 2], Activation::Relu),
        Architecture::conv_net(&[2, 8, 8], 2, 3, 4, 3, 2),
    ]
}

/// The finite-difference suite on seeded random shapes.
pub fn finite_difference_suite(seed: u64, fault: Fault) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = Report::default();
    for _ in 0..3 {
        check_dense(&mut rep, &mut rng, fault)?;
        check_conv(&mut rep, &mut rng, fault)?;
        check_pool_and_relu(&mut rep, &mut rng, fault)?;
    }
    for (k, arch) in suite_architectures().iter().enumerate() {
        let g = LayerGraph::build(arch, seed + k as u64)?;
        check_edges(&mut rep, &g, &mut rng, fault)?;
        check_pc(&mut rep, arch, seed + k as u64, &mut rng, fault)?;
        check_backprop(&mut rep, arch, seed + k as u64, fault)?;
    }
    Ok(rep)
}

/// Per-edge cosine rows for the linear and ReLU equivalence fixtures.
pub fn equivalence_rows(seed: u64) -> Result<Report> {
    let mut rep = Report::default();
    let linear = backprop::pc_bp_equivalence_fixture(seed, FixtureOptions::linear())?;
    for (e, c) in linear.per_edge_cosine.iter().enumerate() {
        let value = (1.0 - c).abs();
        rep.rows.push(CheckRow {
            name: format!("linear fixture cosine edge {e}"),
            value,
            tolerance: LINEAR_COSINE_TOL,
            passed: value <= LINEAR_COSINE_TOL,
        });
    }
    let relu = backprop::pc_bp_equivalence_fixture(seed, FixtureOptions::relu())?;
    for (e, c) in relu.per_edge_cosine.iter().enumerate() {
        rep.rows.push(CheckRow {
            name: format!("relu fixture cosine edge {e}"),
            value: 1.0 - c,
            tolerance: 1.0 - RELU_COSINE_MIN,
            passed: *c >= RELU_COSINE_MIN,
        });
    }
    Ok(rep)
}

/// Everything `gradcheck` runs.
pub fn full_report(seed: u64, fault: Fault) -> Result<Report> {
    let mut rep = finite_difference_suite(seed, fault)?;
    rep.rows.extend(equivalence_rows(seed)?.rows);
    Ok(rep)
}
