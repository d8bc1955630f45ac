//! Predictive-coding training: inference by free-energy descent on the
//! hidden states, one weight update per frame, and the temporal amortization
//! protocol that carries converged hidden states from frame to frame.

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::graph::{EdgeParams, LayerGraph, StateSnapshot};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inference step size.
    pub eta_v: f64,
    /// Weight learning rate.
    pub eta_theta: f64,
    pub max_inference_iters: usize,
    /// Inference stops once the largest hidden-state gradient (max-norm)
    /// drops below this. Zero means "always run the full budget".
    pub convergence_tol: f64,
    /// Warm-start hidden states from the previous frame (PCN-TA) instead of
    /// re-initializing them from predictions (PCN).
    pub amortize: bool,
    pub optimizer: OptimizerKind,
    /// A parameter counts as updated when `|Δθ|` exceeds this.
    pub update_count_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta_v: 0.1,
            eta_theta: 4e-5,
            max_inference_iters: 100,
            convergence_tol: 0.0,
            amortize: true,
            optimizer: OptimizerKind::Sgd,
            update_count_threshold: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_v > 0.0 && self.eta_v.is_finite()) {
            return Err(Error::Config(format!("eta_v must be positive, got {}", self.eta_v)));
        }
        if !(self.eta_theta > 0.0 && self.eta_theta.is_finite()) {
            return Err(Error::Config(format!(
                "eta_theta must be positive, got {}",
                self.eta_theta
            )));
        }
        if self.max_inference_iters == 0 {
            return Err(Error::Config("max_inference_iters must be at least 1".into()));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(Error::Config("convergence_tol must be non-negative".into()));
        }
        if self.update_count_threshold.is_nan() || self.update_count_threshold < 0.0 {
            return Err(Error::Config("update_count_threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-frame measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleResult {
    pub iterations_used: usize,
    /// Free energy at the end of inference, before the weight update.
    pub final_vfe: f64,
    pub nonzero_weight_updates: usize,
    /// Argmax of the feedforward prediction for this frame.
    pub predicted_class: usize,
}

/// Clamps the output node to `label` so that `ε_L = L − v̂_L` for the whole
/// inference phase.
pub fn clamp_output(g: &mut LayerGraph, label: &Tensor) -> Result<()> {
    let out = g.output_index();
    if label.shape() != g.v(out).shape() {
        return Err(Error::dim(
            "clamp_output",
            format!("label {:?}, output node {:?}", label.shape(), g.v(out).shape()),
        ));
    }
    g.set_state(out, label.clone())?;
    g.refresh_errors();
    Ok(())
}

/// One simultaneous update of every hidden state, `v ← v + η_v·g`, with all
/// gradients taken from the pre-step state. Returns the largest gradient
/// max-norm seen.
pub fn inference_step(g: &mut LayerGraph, eta_v: f64) -> Result<f64> {
    let hidden = g.hidden_indices();
    let grads = hidden
        .clone()
        .map(|i| g.state_gradient(i))
        .collect::<Result<Vec<_>>>()?;
    let mut max_norm: f64 = 0.0;
    for (i, grad) in hidden.zip(grads) {
        max_norm = max_norm.max(grad.max_abs());
        if eta_v != 0.0 {
            let mut v = g.v(i).clone();
            v.axpy(eta_v, &grad)?;
            g.set_state(i, v)?;
        }
    }
    g.refresh_errors();
    Ok(max_norm)
}

/// Repeats [`inference_step`] until the gradient max-norm falls below
/// `convergence_tol` or the budget runs out. Returns the number of steps.
pub fn run_inference(g: &mut LayerGraph, cfg: &TrainConfig) -> Result<usize> {
    for it in 1..=cfg.max_inference_iters {
        if inference_step(g, cfg.eta_v)? < cfg.convergence_tol {
            return Ok(it);
        }
    }
    Ok(cfg.max_inference_iters)
}

/// Predictive-coding trainer. Owns the configuration and optimizer state;
/// the graph is passed in by the caller.
#[derive(Debug, Clone)]
pub struct PcEngine {
    cfg: TrainConfig,
    optimizer: Optimizer,
}

impl PcEngine {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PcEngine {
            optimizer: Optimizer::new(cfg.optimizer),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// `θ ← θ + η_θ·d` on every edge, all directions taken before any
    /// parameter moves. Returns the count of parameters whose applied delta
    /// exceeds the configured threshold.
    pub fn weight_update(&mut self, g: &mut LayerGraph) -> Result<usize> {
        let directions = (0..g.num_edges())
            .map(|e| g.weight_gradient(e))
            .collect::<Result<Vec<EdgeParams>>>()?;
        Ok(self.optimizer.apply(
            g.params_mut(),
            &directions,
            self.cfg.eta_theta,
            self.cfg.update_count_threshold,
        ))
    }

    fn infer_and_learn(&mut self, g: &mut LayerGraph, label: &Tensor) -> Result<(SampleResult, StateSnapshot)> {
        let predicted_class = g.v_hat(g.output_index()).argmax();
        clamp_output(g, label)?;
        let iterations_used = run_inference(g, &self.cfg)?;
        let final_vfe = g.vfe();
        let nonzero_weight_updates = self.weight_update(g)?;
        Ok((
            SampleResult {
                iterations_used,
                final_vfe,
                nonzero_weight_updates,
                predicted_class,
            },
            g.snapshot(),
        ))
    }

    /// Cold start: predictions, `v := v̂`, clamp, infer, learn, snapshot.
    pub fn train_first_sample(
        &mut self,
        g: &mut LayerGraph,
        x: &Tensor,
        label: &Tensor,
    ) -> Result<(SampleResult, StateSnapshot)> {
        g.forward_predictions(x)?;
        g.init_states_from_predictions();
        self.infer_and_learn(g, label)
    }

    /// Fresh predictions for the new frame; hidden states come from `prev`
    /// when amortizing, otherwise from the predictions.
    pub fn train_subsequent_sample(
        &mut self,
        g: &mut LayerGraph,
        x: &Tensor,
        label: &Tensor,
        prev: &StateSnapshot,
    ) -> Result<(SampleResult, StateSnapshot)> {
        g.forward_predictions(x)?;
        if self.cfg.amortize {
            g.init_states_from_predictions();
            g.restore_states(prev)?;
        } else {
            g.init_states_from_predictions();
        }
        self.infer_and_learn(g, label)
    }

    /// One online pass over `frames`, threading snapshots from frame to frame.
    pub fn train_epoch(&mut self, g: &mut LayerGraph, frames: &[Frame], num_classes: usize) -> Result<Vec<SampleResult>> {
        let (first, rest) = frames.split_first().ok_or(Error::Empty("training stream"))?;
        let mut results = Vec::with_capacity(frames.len());
        let (r, mut snap) = self.train_first_sample(g, &first.image, &first.target(num_classes)?)?;
        results.push(r);
        for f in rest {
            let (r, s) = self.train_subsequent_sample(g, &f.image, &f.target(num_classes)?, &snap)?;
            results.push(r);
            snap = s;
        }
        Ok(results)
    }
}

/// Fraction of `frames` whose feedforward argmax equals the label.
pub fn evaluate(g: &LayerGraph, frames: &[Frame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    for f in frames {
        if g.predict(&f.image)?.argmax() == f.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / frames.len() as f64)
}
