//! Generates the synthetic pose stream, reports how much consecutive frames
//! differ at several drift steps and writes the first poses of class 0 as PGM.
//!
//!     cargo run --release --example synthetic_stream -- [out-dir]

use std::path::PathBuf;

use pcn_ta::data::{self, Ordering, SyntheticParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/frames".into());
    for drift in [0.0, 0.25, 1.0, 4.0] {
        let p = SyntheticParams {
            drift_step: drift,
            ..SyntheticParams::default()
        };
        let (train, test) = data::synthetic_stream(&p, Ordering::Temporal)?;
        let pairs: Vec<f64> = train
            .frames
            .windows(2)
            .filter(|w| w[0].label == w[1].label)
            .map(|w| {
                let d = w[0].image.sub(&w[1].image).expect("same shape");
                d.data().iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64
            })
            .collect();
        let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
        println!("drift {drift:>4}: {} train / {} test frames, mean |Δpixel| {mean:.5}", train.len(), test.len());
    }

    std::fs::create_dir_all(&out)?;
    let (train, _) = data::synthetic_stream(&SyntheticParams::default(), Ordering::Temporal)?;
    for f in train.frames.iter().filter(|f| f.label == 0).take(6) {
        let path = out.join(format!("class0_pose{:02}.pgm", f.view_angle_index));
        data::write_pgm(&path, &f.image)?;
    }
    println!("wrote class 0 poses to {}", out.display());
    Ok(())
}
