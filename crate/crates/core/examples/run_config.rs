//! Run an experiment from a TOML config and write its outputs.
//! Usage: `run_config configs/near_ood.toml [output_dir]`.

use dcm::harness::{parse_config, run_experiment};

fn main() -> dcm::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| "configs/near_ood.toml".into());
    let mut cfg = parse_config(&path)?;
    if let Some(out) = args.next() {
        cfg.output_dir = out.into();
    }
    let out = run_experiment(&cfg)?;
    let m = &out.manifest;
    println!(
        "{} mode, {} runs ({} failed), {:.1}s",
        cfg.mode, m.n_runs, m.n_failed, m.wall_clock_secs
    );
    for f in &m.files {
        println!("  {}", cfg.output_dir.join(f).display());
    }
    Ok(())
}
