//! Full-size comparison on COIL-20 (PGM files named `obj<k>__<angle>.pgm`).
//! Expect hours per epoch set on a desktop.
//!
//!     cargo run --release --example coil20_benchmark -- <coil20-dir> [epochs]

use std::path::PathBuf;

use pcn_ta::cli;
use pcn_ta::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next().map(PathBuf::from) else {
        eprintln!("usage: coil20_benchmark <coil20-dir> [epochs]");
        std::process::exit(2);
    };
    let mut cfg = RunConfig::load("configs/coil20.cfg".as_ref())?;
    cfg.use_coil20(dir);
    if let Some(epochs) = args.next() {
        cfg.epochs = epochs.parse()?;
    }
    let summary = cli::cmd_compare(&cfg)?;
    for r in &summary.merged {
        println!(
            "{:<14} epoch {:>2} accuracy {:.4} updates/frame {:.0} wall {:.0} s",
            r.run_id,
            r.epoch,
            r.accuracy,
            r.avg_nonzero_updates_per_frame,
            r.wall_time_ms / 1e3
        );
    }
    Ok(())
}
