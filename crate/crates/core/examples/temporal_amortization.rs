//! Warm-started (pcn_ta) against cold-started (pcn) inference on a slowly
//! drifting pose stream, run to a convergence tolerance so the iteration
//! counts can differ.
//!
//!     cargo run --release --example temporal_amortization -- [drift]

use pcn_ta::data::{self, Ordering, SyntheticParams};
use pcn_ta::engine::{PcEngine, TrainConfig};
use pcn_ta::graph::{Architecture, LayerGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let drift = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.25);
    let params = SyntheticParams {
        num_classes: 10,
        frames_per_class: 12,
        size: 32,
        drift_step: drift,
        ..SyntheticParams::default()
    };
    let (train, test) = data::synthetic_stream(&params, Ordering::Temporal)?;
    let arch = Architecture::conv_net(&[1, 32, 32], 4, 5, 32, 16, 10);
    println!("drift {drift}, {} training frames", train.len());
    for amortize in [true, false] {
        let cfg = TrainConfig {
            eta_v: 0.2,
            eta_theta: 1e-3,
            max_inference_iters: 500,
            convergence_tol: 1e-4,
            amortize,
            ..TrainConfig::default()
        };
        let mut g = LayerGraph::build(&arch, 0)?;
        let mut engine = PcEngine::new(cfg)?;
        let name = if amortize { "pcn_ta" } else { "pcn" };
        for epoch in 0..12 {
            let results = engine.train_epoch(&mut g, &train.frames, 10)?;
            let iters = results.iter().map(|r| r.iterations_used).sum::<usize>() as f64 / results.len() as f64;
            let acc = pcn_ta::engine::evaluate(&g, &test.frames)?;
            println!("{name:<7} epoch {epoch}: {iters:6.1} iterations/frame, test accuracy {acc:.3}");
        }
    }
    Ok(())
}
