//! The four-way comparison (pcn_ta@50, pcn_ta@100, pcn@100, backprop) from a
//! config file, printed as a table and written as CSV.
//!
//!     cargo run --release --example compare_methods -- [config] [epochs]

use std::path::PathBuf;

use pcn_ta::cli;
use pcn_ta::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| "configs/synthetic.cfg".into());
    let mut cfg = RunConfig::load(&path)?;
    if let Some(epochs) = args.next() {
        cfg.epochs = epochs.parse()?;
    }
    let summary = cli::cmd_compare(&cfg)?;
    println!("{:<16} {:<9} {:>5} {:>9} {:>14}", "run", "method", "epoch", "accuracy", "updates/frame");
    for r in &summary.merged {
        println!(
            "{:<16} {:<9} {:>5} {:>9.4} {:>14.1}",
            r.run_id, r.method.to_string(), r.epoch, r.accuracy, r.avg_nonzero_updates_per_frame
        );
    }
    println!("initial parameters {:016x}", summary.initial_fingerprint);
    println!("wrote {}", summary.merged_csv.display());
    Ok(())
}
