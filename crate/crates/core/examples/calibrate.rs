//! Generates a cohort and prints its calibration table.
//!
//! `cargo run --release -p mtlb-core --example calibrate -- 20000 7`

use std::time::Instant;

use mtlb::data::calibration::calibrate;
use mtlb::data::{generate_cohort, GeneratorParams};

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20_000);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    let t0 = Instant::now();
    let ds = generate_cohort(seed, n, &GeneratorParams::default()).expect("generation failed");
    let gen = t0.elapsed();
    let report = calibrate(&ds);
    print!("{}", report.to_table());
    println!(
        "generated {n} patients in {:.1}s; {} statistics out of tolerance",
        gen.as_secs_f64(),
        report.failures().len()
    );
}
