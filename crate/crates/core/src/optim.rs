//! Parameter update rules shared by the predictive-coding and backprop trainers.
//!
//! Both trainers hand the optimizer a *descent direction* `d` per edge; SGD
//! applies `θ ← θ + η·d` and Adam applies the bias-corrected moment ratio.

use crate::graph::EdgeParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer plus whatever per-parameter state it carries.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    moments: Vec<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one step along `directions` and returns how many scalar
    /// parameters moved by more than `threshold` (measured on the value
    /// actually written, so deltas lost to rounding count as zero).
    pub fn apply(
        &mut self,
        params: &mut [EdgeParams],
        directions: &[EdgeParams],
        lr: f64,
        threshold: f64,
    ) -> usize {
        assert_eq!(params.len(), directions.len(), "one direction per edge");
        self.step += 1;
        let mut changed = 0;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, d) in params.iter_mut().zip(directions) {
                    changed += step_sgd(p.weight.data_mut(), d.weight.data(), lr, threshold);
                    changed += step_sgd(p.bias.data_mut(), d.bias.data(), lr, threshold);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.moments.is_empty() {
                    self.moments = params
                        .iter()
                        .map(|p| Moments {
                            m: vec![0.0; p.len()],
                            v: vec![0.0; p.len()],
                        })
                        .collect();
                }
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for ((p, d), mo) in params.iter_mut().zip(directions).zip(&mut self.moments) {
                    let nw = p.weight.len();
                    let (mw, mb) = mo.m.split_at_mut(nw);
                    let (vw, vb) = mo.v.split_at_mut(nw);
                    let adam = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                        let mut n = 0;
                        for (((t, &g), m), v) in theta.iter_mut().zip(g).zip(m).zip(v) {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let delta = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                            n += write_counted(t, delta, threshold);
                        }
                        n
                    };
                    changed += adam(p.weight.data_mut(), d.weight.data(), mw, vw);
                    changed += adam(p.bias.data_mut(), d.bias.data(), mb, vb);
                }
            }
        }
        changed
    }
}

fn step_sgd(theta: &mut [f64], d: &[f64], lr: f64, threshold: f64) -> usize {
    theta
        .iter_mut()
        .zip(d)
        .map(|(t, &g)| write_counted(t, lr * g, threshold))
        .sum()
}

fn write_counted(t: &mut f64, delta: f64, threshold: f64) -> usize {
    let old = *t;
    *t = old + delta;
    usize::from((*t - old).abs() > threshold)
}
