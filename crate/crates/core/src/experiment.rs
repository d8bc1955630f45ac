//! Streaming runs: one method trained online over a frame stream for a number
//! of epochs, evaluated after each epoch, plus the four-way comparison.

use std::time::Instant;

use crate::backprop::BpTrainer;
use crate::checkpoint;
use crate::data::{Frame, FrameStream};
use crate::engine::{self, PcEngine, SampleResult, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{Architecture, LayerGraph, StateSnapshot};
use crate::metrics::{self, EpochMeta, EpochRecord, Method};

/// A method plus its inference budget (ignored for backprop).
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub method: Method,
    pub inference_iters: usize,
}

impl RunSpec {
    pub fn pcn_ta(iters: usize) -> Self {
        RunSpec {
            method: Method::PcnTa,
            inference_iters: iters,
        }
    }

    pub fn pcn(iters: usize) -> Self {
        RunSpec {
            method: Method::Pcn,
            inference_iters: iters,
        }
    }

    pub fn backprop() -> Self {
        RunSpec {
            method: Method::Backprop,
            inference_iters: 0,
        }
    }

    /// `pcn_ta@50`, `pcn@100`, `backprop`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Backprop => "backprop".into(),
            m => format!("{m}@{}", self.inference_iters),
        }
    }

    /// The four configurations of the accuracy comparison.
    pub fn comparison_set() -> Vec<RunSpec> {
        vec![
            RunSpec::pcn_ta(50),
            RunSpec::pcn_ta(100),
            RunSpec::pcn(100),
            RunSpec::backprop(),
        ]
    }

    /// `cfg` with the method's amortization flag and budget applied.
    pub fn train_config(&self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            amortize: self.method == Method::PcnTa,
            max_inference_iters: if self.method == Method::Backprop {
                cfg.max_inference_iters
            } else {
                self.inference_iters
            },
            ..cfg.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub run_id: String,
    pub records: Vec<EpochRecord>,
    /// Per-epoch, per-frame results.
    pub frames: Vec<Vec<SampleResult>>,
    pub initial_fingerprint: u64,
    pub graph: LayerGraph,
    pub last_snapshot: Option<StateSnapshot>,
}

#[derive(Debug, Clone)]
pub struct RunSetup<'a> {
    pub arch: &'a Architecture,
    pub seed: u64,
    pub cfg: &'a TrainConfig,
    pub train: &'a FrameStream,
    pub test: &'a FrameStream,
    pub num_classes: usize,
    pub epochs: usize,
    pub run_id: &'a str,
}

enum Learner {
    Pc(PcEngine),
    Bp(BpTrainer),
}

fn bp_epoch(t: &mut BpTrainer, g: &mut LayerGraph, frames: &[Frame], num_classes: usize) -> Result<Vec<SampleResult>> {
    frames
        .iter()
        .map(|f| {
            let s = t.step(g, &f.image, &f.target(num_classes)?)?;
            Ok(SampleResult {
                iterations_used: 0,
                final_vfe: s.loss,
                nonzero_weight_updates: s.nonzero_weight_updates,
                predicted_class: s.predicted_class,
            })
        })
        .collect()
}

/// Trains a freshly built graph with `spec` and evaluates after each epoch.
/// The test split falls back to the training stream when it is empty.
pub fn run(setup: &RunSetup<'_>, spec: &RunSpec) -> Result<RunOutcome> {
    if setup.train.is_empty() {
        return Err(Error::Empty("training stream"));
    }
    let eval_frames = if setup.test.is_empty() {
        &setup.train.frames
    } else {
        &setup.test.frames
    };
    let mut g = LayerGraph::build(setup.arch, setup.seed)?;
    let initial_fingerprint = checkpoint::fingerprint(&g);
    let cfg = spec.train_config(setup.cfg);
    let mut learner = match spec.method {
        Method::Backprop => Learner::Bp(BpTrainer::from_config(&cfg)),
        _ => Learner::Pc(PcEngine::new(cfg)?),
    };
    let mut records = Vec::with_capacity(setup.epochs);
    let mut frames = Vec::with_capacity(setup.epochs);
    for epoch in 0..setup.epochs {
        let start = Instant::now();
        let results = match &mut learner {
            Learner::Pc(e) => e.train_epoch(&mut g, &setup.train.frames, setup.num_classes)?,
            Learner::Bp(t) => bp_epoch(t, &mut g, &setup.train.frames, setup.num_classes)?,
        };
        let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        let accuracy = engine::evaluate(&g, eval_frames)?;
        records.push(metrics::aggregate_epoch(
            &results,
            accuracy,
            EpochMeta {
                run_id: setup.run_id.to_string(),
                method: spec.method,
                epoch,
                wall_time_ms,
            },
        )?);
        frames.push(results);
    }
    let last_snapshot = match spec.method {
        Method::Backprop => None,
        _ => Some(g.snapshot()),
    };
    Ok(RunOutcome {
        spec: spec.clone(),
        run_id: setup.run_id.to_string(),
        records,
        frames,
        initial_fingerprint,
        graph: g,
        last_snapshot,
    })
}

/// Run id of `spec` within a comparison: `<base>-<budget>` for predictive
/// coding, `<base>` for backprop.
pub fn comparison_run_id(base: &str, spec: &RunSpec) -> String {
    match spec.method {
        Method::Backprop => base.to_string(),
        _ => format!("{base}-{}", spec.inference_iters),
    }
}

/// Runs every spec from the same seed, one thread per spec. Outcomes come
/// back in `specs` order.
pub fn compare(setup: &RunSetup<'_>, specs: &[RunSpec]) -> Result<Vec<RunOutcome>> {
    let ids: Vec<String> = specs.iter().map(|s| comparison_run_id(setup.run_id, s)).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .zip(&ids)
            .map(|(spec, id)| {
                let local = RunSetup {
                    run_id: id,
                    ..setup.clone()
                };
                scope.spawn(move || run(&local, spec))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("comparison worker panicked"))
            .collect()
    })
}
