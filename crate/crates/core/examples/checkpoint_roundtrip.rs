//! Train briefly, save a checkpoint with the carried hidden state, reload it
//! and confirm the reloaded graph scores identically.
//!
//!     cargo run --release --example checkpoint_roundtrip

use pcn_ta::checkpoint;
use pcn_ta::data::{self, Ordering, SyntheticParams};
use pcn_ta::engine::{self, PcEngine, TrainConfig};
use pcn_ta::graph::{Architecture, LayerGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = SyntheticParams {
        num_classes: 5,
        frames_per_class: 8,
        size: 16,
        ..SyntheticParams::default()
    };
    let (train, test) = data::synthetic_stream(&params, Ordering::Temporal)?;
    let mut g = LayerGraph::build(&Architecture::conv_net(&[1, 16, 16], 3, 3, 16, 8, 5), 1)?;
    let mut pc = PcEngine::new(TrainConfig {
        eta_v: 0.2,
        eta_theta: 1e-3,
        max_inference_iters: 50,
        ..TrainConfig::default()
    })?;
    for _ in 0..3 {
        pc.train_epoch(&mut g, &train.frames, 5)?;
    }

    let dir = std::env::temp_dir().join("pcn-ta-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("roundtrip.ckpt");
    checkpoint::save(&path, &g, Some(&g.snapshot()))?;
    let (loaded, snapshot) = checkpoint::load(&path)?;

    assert_eq!(loaded.params(), g.params());
    assert_eq!(snapshot.as_ref(), Some(&g.snapshot()));
    println!("{} bytes, fingerprint {:016x}", std::fs::metadata(&path)?.len(), checkpoint::fingerprint(&loaded));
    println!(
        "accuracy before {:.3}, after reload {:.3}",
        engine::evaluate(&g, &test.frames)?,
        engine::evaluate(&loaded, &test.frames)?
    );
    Ok(())
}
