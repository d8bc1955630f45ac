//! Backpropagation over the same [`LayerGraph`] parameters and forward
//! semantics. Serves as the comparison baseline and as the gradient oracle
//! for the predictive-coding weight updates.
//!
//! The loss is `L = ½‖label − output‖²` (sum, not mean), which makes the
//! backprop gradient and the converged predictive-coding weight direction the
//! same object up to sign.

use crate::engine::{self, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{Activation, Architecture, EdgeCache, EdgeParams, LayerGraph};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::Tensor;

/// Per-edge loss gradients, shaped like the graph parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BpGradients {
    pub edges: Vec<EdgeParams>,
}

/// Feedforward output and the per-edge caches needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Tensor>,
    pub caches: Vec<EdgeCache>,
}

pub fn bp_forward(g: &LayerGraph, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
    let (activations, caches): (Vec<Tensor>, Vec<EdgeCache>) = g.forward_trace(x)?.into_iter().unzip();
    let out = activations.last().expect("non-empty graph").clone();
    Ok((out, ForwardCache { activations, caches }))
}

pub fn loss(g: &LayerGraph, x: &Tensor, label: &Tensor) -> Result<f64> {
    let out = g.predict(x)?;
    Ok(0.5 * label.sub(&out)?.norm_sq())
}

/// Gradients of `½‖label − output‖²` by reverse accumulation of edge VJPs.
pub fn bp_gradients(g: &LayerGraph, x: &Tensor, label: &Tensor) -> Result<BpGradients> {
    Ok(bp_gradients_with_output(g, x, label)?.0)
}

fn bp_gradients_with_output(g: &LayerGraph, x: &Tensor, label: &Tensor) -> Result<(BpGradients, Tensor)> {
    let (out, fc) = bp_forward(g, x)?;
    if label.shape() != out.shape() {
        return Err(Error::dim(
            "bp_gradients",
            format!("label {:?}, output {:?}", label.shape(), out.shape()),
        ));
    }
    let mut upstream = out.sub(label)?;
    let mut edges = Vec::with_capacity(g.num_edges());
    for e in (0..g.num_edges()).rev() {
        let (dx, dp) = g.edges()[e].vjp(&g.params()[e], &fc.caches[e], &upstream)?;
        edges.push(dp);
        upstream = dx;
    }
    edges.reverse();
    Ok((BpGradients { edges }, out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpStep {
    pub nonzero_weight_updates: usize,
    pub loss: f64,
    pub predicted_class: usize,
}

/// Online backprop trainer: one gradient step per frame.
#[derive(Debug, Clone)]
pub struct BpTrainer {
    eta_theta: f64,
    threshold: f64,
    optimizer: Optimizer,
}

impl BpTrainer {
    pub fn new(eta_theta: f64, optimizer: OptimizerKind, update_count_threshold: f64) -> Self {
        BpTrainer {
            eta_theta,
            threshold: update_count_threshold,
            optimizer: Optimizer::new(optimizer),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        BpTrainer::new(cfg.eta_theta, cfg.optimizer, cfg.update_count_threshold)
    }

    /// `θ ← θ − η_θ·∇L` through the optimizer; returns the update count.
    pub fn step(&mut self, g: &mut LayerGraph, x: &Tensor, label: &Tensor) -> Result<BpStep> {
        let (grads, out) = bp_gradients_with_output(g, x, label)?;
        let directions: Vec<EdgeParams> = grads
            .edges
            .into_iter()
            .map(|d| EdgeParams {
                weight: d.weight.scale(-1.0),
                bias: d.bias.scale(-1.0),
            })
            .collect();
        let n = self
            .optimizer
            .apply(g.params_mut(), &directions, self.eta_theta, self.threshold);
        Ok(BpStep {
            nonzero_weight_updates: n,
            loss: 0.5 * label.sub(&out)?.norm_sq(),
            predicted_class: out.argmax(),
        })
    }
}

/// Cosine similarity; 1.0 when both vectors are zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `‖a − b‖ / ‖b‖`, or `‖a‖` when `b` is zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nb == 0.0 {
        diff
    } else {
        diff / nb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub per_edge_cosine: Vec<f64>,
    pub per_edge_rel_error: Vec<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureOptions {
    pub activation: Activation,
    pub eta_v: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Use the network's own prediction as the label.
    pub zero_error: bool,
}

impl FixtureOptions {
    /// Linear 10→8→6→4 chain, run to full convergence.
    pub fn linear() -> Self {
        FixtureOptions {
            activation: Activation::Linear,
            eta_v: 0.5,
            max_iters: 10_000,
            tol: 1e-13,
            zero_error: false,
        }
    }

    /// ReLU 10→8→6→4 chain, 200 steps at `η_v = 0.05`.
    pub fn relu() -> Self {
        FixtureOptions {
            activation: Activation::Relu,
            eta_v: 0.05,
            max_iters: 200,
            tol: 0.0,
            zero_error: false,
        }
    }
}

/// Builds a 10→8→6→4 MLP, relaxes predictive-coding inference under fixed
/// predictions, and compares each edge's PC weight direction against the
/// negated backprop gradient.
pub fn pc_bp_equivalence_fixture(seed: u64, opts: FixtureOptions) -> Result<EquivalenceReport> {
    use rand::{Rng, SeedableRng};
    let arch = Architecture::mlp(&[10, 8, 6, 4], opts.activation);
    let mut g = LayerGraph::build(&arch, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Tensor::vector(&(0..10).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    let label = if opts.zero_error {
        g.predict(&x)?
    } else {
        Tensor::vector(&(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    };
    pc_bp_compare(&mut g, &x, &label, opts.eta_v, opts.max_iters, opts.tol)
}

/// Relaxes `g` on `(x, label)` and compares PC weight directions with
/// backprop. Parameters are left untouched.
pub fn pc_bp_compare(
    g: &mut LayerGraph,
    x: &Tensor,
    label: &Tensor,
    eta_v: f64,
    max_iters: usize,
    tol: f64,
) -> Result<EquivalenceReport> {
    g.forward_predictions(x)?;
    g.init_states_from_predictions();
    engine::clamp_output(g, label)?;
    let cfg = TrainConfig {
        eta_v,
        max_inference_iters: max_iters,
        convergence_tol: tol,
        ..TrainConfig::default()
    };
    let iterations = engine::run_inference(g, &cfg)?;
    let final_grad_norm = g
        .hidden_indices()
        .map(|i| g.state_gradient(i).map(|t| t.max_abs()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let bp = bp_gradients(g, x, label)?;
    let mut per_edge_cosine = Vec::new();
    let mut per_edge_rel_error = Vec::new();
    for (e, bp_edge) in bp.edges.iter().enumerate() {
        let pc: Vec<f64> = g.weight_gradient(e)?.iter().copied().collect();
        let target: Vec<f64> = bp_edge.iter().map(|v| -v).collect();
        per_edge_cosine.push(cosine(&pc, &target));
        per_edge_rel_error.push(relative_error(&pc, &target));
    }
    Ok(EquivalenceReport {
        per_edge_cosine,
        per_edge_rel_error,
        iterations,
        final_grad_norm,
    })
}
