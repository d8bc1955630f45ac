use pcn_ta::checkpoint;
use pcn_ta::engine::SampleResult;
use pcn_ta::error::Error;
use pcn_ta::graph::{Activation, Architecture, LayerGraph, StateSnapshot};
use pcn_ta::metrics::{self, EpochMeta, EpochRecord, Method};
use pcn_ta::tensor::Tensor;
use proptest::prelude::*;

fn method() -> impl Strategy<Value = Method> {
    prop_oneof![Just(Method::PcnTa), Just(Method::Pcn), Just(Method::Backprop)]
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e12f64..1e12, Just(0.0), Just(1.0 / 3.0), Just(f64::MIN_POSITIVE), Just(-5e-324)]
}

fn record() -> impl Strategy<Value = EpochRecord> {
    ("[a-z0-9_-]{1,12}", method(), 0usize..1000, 0.0f64..=1.0, finite(), finite(), finite(), finite()).prop_map(
        |(run_id, method, epoch, accuracy, u, i, v, t)| EpochRecord {
            run_id,
            method,
            epoch,
            accuracy,
            avg_nonzero_updates_per_frame: u,
            avg_inference_iters: i,
            mean_final_vfe: v,
            wall_time_ms: t,
        },
    )
}

fn sample() -> impl Strategy<Value = SampleResult> {
    (0usize..500, 0.0f64..1e3, 0usize..2_000_000, 0usize..20).prop_map(|(it, vfe, n, c)| SampleResult {
        iterations_used: it,
        final_vfe: vfe,
        nonzero_weight_updates: n,
        predicted_class: c,
    })
}

fn meta() -> EpochMeta {
    EpochMeta {
        run_id: "r".into(),
        method: Method::Pcn,
        epoch: 3,
        wall_time_ms: 12.5,
    }
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(records in prop::collection::vec(record(), 0..12)) {
        let text = metrics::to_csv(&records);
        prop_assert_eq!(metrics::parse_csv(&text).unwrap(), records.clone());
        prop_assert_eq!(metrics::to_csv(&records), text);
    }

    #[test]
    fn epoch_means_match_brute_force(results in prop::collection::vec(sample(), 1..40), acc in 0.0f64..=1.0) {
        let r = metrics::aggregate_epoch(&results, acc, meta()).unwrap();
        let mut updates = 0.0;
        let mut iters = 0.0;
        let mut vfe = 0.0;
        for s in &results {
            updates += s.nonzero_weight_updates as f64;
            iters += s.iterations_used as f64;
            vfe += s.final_vfe;
        }
        let n = results.len() as f64;
        prop_assert!((r.avg_nonzero_updates_per_frame - updates / n).abs() <= 1e-9 * (1.0 + updates / n));
        prop_assert!((r.avg_inference_iters - iters / n).abs() <= 1e-12 * (1.0 + iters / n));
        prop_assert!((r.mean_final_vfe - vfe / n).abs() <= 1e-12 * (1.0 + vfe / n));
        prop_assert_eq!(r.accuracy, acc);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        sizes in prop::collection::vec(1usize..7, 2..5),
        seed in any::<u64>(),
        with_snapshot in any::<bool>(),
    ) {
        let g = LayerGraph::build(&Architecture::mlp(&sizes, Activation::Relu), seed).unwrap();
        let snap = with_snapshot.then(|| StateSnapshot {
            values: g.hidden_indices().map(|i| Tensor::filled(g.v(i).shape(), seed as f64 * 1e-7)).collect(),
        });
        let bytes = checkpoint::encode(&g, snap.as_ref());
        let (h, s) = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(h.params(), g.params());
        prop_assert_eq!(h.architecture(), g.architecture());
        prop_assert_eq!(h.seed(), seed);
        prop_assert_eq!(s, snap);
        prop_assert_eq!(checkpoint::fingerprint(&h), checkpoint::fingerprint(&g));
        prop_assert_eq!(checkpoint::encode(&h, None), checkpoint::encode(&g, None));
    }
}

#[test]
fn csv_golden_text() {
    let records = vec![
        EpochRecord {
            run_id: "demo-50".into(),
            method: Method::PcnTa,
            epoch: 0,
            accuracy: 0.5,
            avg_nonzero_updates_per_frame: 1234.0,
            avg_inference_iters: 50.0,
            mean_final_vfe: 0.1,
            wall_time_ms: 7.0,
        },
        EpochRecord {
            run_id: "demo".into(),
            method: Method::Backprop,
            epoch: 1,
            accuracy: 1.0,
            avg_nonzero_updates_per_frame: 2.5,
            avg_inference_iters: 0.0,
            mean_final_vfe: 0.0,
            wall_time_ms: 0.25,
        },
    ];
    let expected = "\
run_id,method,epoch,accuracy,avg_nonzero_updates_per_frame,avg_inference_iters,mean_final_vfe,wall_time_ms
demo-50,pcn_ta,0,5.0000000000000000e-1,1.2340000000000000e3,5.0000000000000000e1,1.0000000000000001e-1,7.0000000000000000e0
demo,backprop,1,1.0000000000000000e0,2.5000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,2.5000000000000000e-1
";
    assert_eq!(metrics::to_csv(&records), expected);
    assert_eq!(metrics::to_csv(&[]), format!("{}\n", metrics::CSV_HEADER));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(metrics::csv_file_name("demo", Method::PcnTa));
    assert!(path.ends_with("demo_pcn_ta.csv"));
    metrics::write_csv(&records, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), expected);
    assert_eq!(metrics::read_csv(&path).unwrap(), records);
    assert!(matches!(
        metrics::write_csv(&records, &dir.path().join("missing/x.csv")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn single_frame_epoch_mirrors_the_frame() {
    let s = SampleResult {
        iterations_used: 50,
        final_vfe: 0.75,
        nonzero_weight_updates: 4,
        predicted_class: 2,
    };
    let r = metrics::aggregate_epoch(&[s], 0.25, meta()).unwrap();
    assert_eq!(
        (r.avg_inference_iters, r.mean_final_vfe, r.avg_nonzero_updates_per_frame),
        (50.0, 0.75, 4.0)
    );
    let two = metrics::aggregate_epoch(&[SampleResult { nonzero_weight_updates: 2, ..s }, s], 0.0, meta()).unwrap();
    assert_eq!(two.avg_nonzero_updates_per_frame, 3.0);
    assert!(metrics::aggregate_epoch(&[], 0.0, meta()).is_err());
}

#[test]
fn checkpoint_rejects_foreign_bytes() {
    let g = LayerGraph::build(&Architecture::conv_net(&[1, 8, 8], 2, 3, 4, 3, 2), 5).unwrap();
    let good = checkpoint::encode(&g, None);
    let (h, _) = checkpoint::decode(&good).unwrap();
    assert_eq!(h.params(), g.params());

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(checkpoint::decode(&magic), Err(Error::Checkpoint(_))));
    let mut version = good.clone();
    version[4..6].copy_from_slice(&(checkpoint::VERSION + 1).to_le_bytes());
    assert!(matches!(checkpoint::decode(&version), Err(Error::Checkpoint(_))));
    assert!(checkpoint::decode(&good[..good.len() - 3]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    checkpoint::save(&path, &g, None).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), good);
    assert_eq!(checkpoint::load(&path).unwrap().0.params(), g.params());
}
