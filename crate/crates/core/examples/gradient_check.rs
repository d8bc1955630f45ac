//! Finite-difference and PC/backprop equivalence checks.
//!
//!     cargo run --release --example gradient_check -- [seed]

use pcn_ta::gradcheck::{self, Fault};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let report = gradcheck::full_report(seed, Fault::default())?;
    print!("{}", report.table());
    println!("{} rows, {} over tolerance", report.rows.len(), report.failures().count());
    Ok(())
}
