//! A small replication grid over all four variants, printing the summary
//! table the bench command writes to CSV.
//!
//! Run with: `cargo run --release --example benchmark_grid`

use dchedge::harness::{cmd_bench, parse_variants, RunConfig, SdcOverrides};

fn main() {
    let out_dir = std::env::temp_dir().join("dchedge_benchmark_grid");
    std::fs::remove_dir_all(&out_dir).ok();
    let config = RunConfig {
        variants: parse_variants("A,B,C,D").unwrap(),
        n: 8,
        k: 12,
        replications: 3,
        base_seed: 5,
        out_dir: out_dir.clone(),
        data_csv: None,
        overrides: SdcOverrides::default(),
    };
    let summary = cmd_bench(&config).unwrap();
    println!("\nmetric table:\n{}", summary.metrics_csv);
    println!("timing table:\n{}", summary.timing_csv);
    println!("reports and plot data under {}", out_dir.display());
}
