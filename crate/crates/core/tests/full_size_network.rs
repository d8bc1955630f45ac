//! The full-size 128×128 network, built once. Slow in debug builds.

use pcn_ta::backprop::BpTrainer;
use pcn_ta::data::{self, Ordering, SyntheticParams};
use pcn_ta::engine::{PcEngine, TrainConfig};
use pcn_ta::graph::{EdgeOp, LayerGraph};
use pcn_ta::optim::OptimizerKind;

#[test]
fn full_size_network_builds_and_trains_one_frame() {
    let g = LayerGraph::build_paper_architecture(0).unwrap();
    assert_eq!(
        g.node_shapes(),
        vec![vec![1, 128, 128], vec![124, 62, 62], vec![200], vec![128], vec![20]]
    );
    assert_eq!(g.num_nodes(), 5);
    let ops: Vec<EdgeOp> = g.edges().iter().map(|e| e.op).collect();
    assert_eq!(ops, vec![EdgeOp::Conv { kernel: 5 }, EdgeOp::Dense, EdgeOp::Dense, EdgeOp::Dense]);

    // conv 124·(1·5·5) + 124; then (124·62·62)·200 + 200; 200·128 + 128; 128·20 + 20
    let by_hand = (124 * 25 + 124) + (124 * 62 * 62 * 200 + 200) + (200 * 128 + 128) + (128 * 20 + 20);
    assert_eq!(by_hand, 95_362_932);
    assert_eq!(g.param_count(), by_hand);

    let p = SyntheticParams {
        num_classes: 20,
        frames_per_class: 2,
        size: 128,
        ..SyntheticParams::default()
    };
    let (train, _) = data::synthetic_stream(&p, Ordering::Temporal).unwrap();
    let frame = &train.frames[0];
    let label = frame.target(20).unwrap();
    assert_eq!(g.predict(&frame.image).unwrap().shape(), &[20]);

    let cfg = TrainConfig {
        eta_v: 0.2,
        eta_theta: 4e-5,
        max_inference_iters: 2,
        optimizer: OptimizerKind::Sgd,
        ..TrainConfig::default()
    };
    let mut pc = g.clone();
    let (r, snap) = PcEngine::new(cfg.clone()).unwrap().train_first_sample(&mut pc, &frame.image, &label).unwrap();
    assert_eq!(r.iterations_used, 2);
    assert_eq!(snap.values.len(), 3);
    assert!(r.nonzero_weight_updates > 0 && r.nonzero_weight_updates <= by_hand);

    let mut bp = g;
    let step = BpTrainer::from_config(&cfg).step(&mut bp, &frame.image, &label).unwrap();
    assert!(step.nonzero_weight_updates > 0 && step.nonzero_weight_updates <= by_hand);
    println!(
        "one frame at full size: pc updates {}, backprop updates {}",
        r.nonzero_weight_updates, step.nonzero_weight_updates
    );
}
