//! Prints selection tables for the built-in designs.
//!
//! Usage: `cargo run --release --example tables -- <family> <n> <reps> [variant]`

use vsiv::falsify_kms::{EndpointPolicy, StatConfig, Variant};
use vsiv::simulate::{mc_selection_table, DgpSpec};
use vsiv::validity_set::ScreenConfig;

fn main() -> vsiv::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let family = args.first().map_or("section5:1", String::as_str);
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let spec = DgpSpec::parse(family)?;
    let mut stat = StatConfig::default();
    if family.starts_with("qob") {
        stat.variant = Variant::PosPart;
        stat.endpoints = EndpointPolicy::Subsample { m: 200, seed: 0 };
    }
    let taus: Vec<f64> = (0..10).map(|i| 2.0 + 0.5 * i as f64).collect();
    let report = mc_selection_table(&spec, n, reps, &taus, 7, &ScreenConfig::with_stat(stat))?;
    print!("{}", report.to_csv());
    eprintln!("{:.1}s", report.runtime_secs);
    Ok(())
}
