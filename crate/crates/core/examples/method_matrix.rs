//! Runs the method comparison matrix from a config file or preset and
//! prints the table. Everything lands in the config's run directory.
//!
//! cargo run --release --example method_matrix -- [preset-or-toml] [seeds...]

use lockin::harness::{Experiment, ExperimentConfig};

fn main() -> lockin::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::resolve(&args.next().unwrap_or_else(|| "smoke".into()))?;
    let seeds: Vec<u64> = args.filter_map(|a| a.parse().ok()).collect();
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    println!("config {} -> {}", cfg.digest(), cfg.out_dir.display());
    let start = std::time::Instant::now();
    let mut exp = Experiment::open(cfg)?;
    let report = exp.run_matrix()?;
    print!("{}", report.table());
    println!(
        "{} cells, {} artifacts in the manifest, {:.1}s",
        report.cells.len(),
        exp.manifest().artifacts.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
