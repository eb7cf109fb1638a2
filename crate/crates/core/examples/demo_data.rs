//! Generates broad and narrow demonstration sets, checks their coverage and
//! round-trips them through disk.
//!
//! cargo run --release --example demo_data -- [broad_episodes] [narrow_per_task]

use lockin::world::{gen_demoset, DemoSet, DemoSpec};

fn main() -> lockin::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let broad_n = args.first().copied().unwrap_or(500);
    let narrow_n = args.get(1).copied().unwrap_or(20);

    let broad = gen_demoset(&DemoSpec::broad(broad_n, 0))?;
    let narrow = gen_demoset(&DemoSpec::narrow(narrow_n, 1))?;
    for (name, set) in [("broad", &broad), ("narrow", &narrow)] {
        println!("{name}: {} episodes, {} expert failures redrawn", set.len(), set.manifest.discarded);
        for (cell, n) in set.prompt_histogram() {
            println!("  {cell:<24} {n}");
        }
        println!(
            "  {} chunk samples, {} stride-1 windows",
            set.flow_samples().len(),
            set.windowed_samples(1)?.len()
        );
    }

    let dir = tempfile_dir()?;
    let path = dir.join("narrow.json");
    narrow.save(&path)?;
    let back = DemoSet::load(&path)?;
    println!("round trip through {}: identical = {}", path.display(), back == narrow);
    std::fs::write(dir.join("narrow_layouts.tsv"), narrow.layout_table()).map_err(|e| lockin::Error::io(&dir, e))?;
    Ok(())
}

fn tempfile_dir() -> lockin::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join("lockin-demo-data");
    std::fs::create_dir_all(&dir).map_err(|e| lockin::Error::io(&dir, e))?;
    Ok(dir)
}
