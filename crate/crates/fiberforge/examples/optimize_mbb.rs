//! Short co-optimization of the beam preset: watch the safety factor climb
//! while the volume budget and manufacturability terms pull the fields
//! toward a printable design. A production run uses several hundred
//! iterations; this demo runs sixty.
//!
//! ```bash
//! cargo run --release --example optimize_mbb
//! ```

use fiberforge::commands::cmd_optimize;
use fiberforge::config::RunConfig;

fn main() -> fiberforge::Result<()> {
    let out = std::env::temp_dir().join("fiberforge-example-mbb");
    let config = RunConfig::from_json(
        "{}",
        &[
            "problem.preset=\"mbb-desk\"".into(),
            format!("output.dir=\"{}\"", out.display()),
            "optimizer.max_iterations=60".into(),
            "optimizer.seed=0".into(),
        ],
    )?;
    let outcome = cmd_optimize(&config)?;

    println!("iter   l_obj      l_vol    l_lt     gamma_min  capacity_kN");
    for r in outcome.result.records.iter().step_by(10) {
        println!(
            "{:>4}  {:+.4}  {:.5}  {:.5}   {:.4}     {:.3}",
            r.iteration,
            r.l_obj,
            r.l_vol,
            r.l_lt.unwrap_or(0.0),
            r.gamma_min,
            r.load_capacity
        );
    }
    let first = outcome.result.records.first().unwrap();
    let last = outcome.result.records.last().unwrap();
    println!(
        "\nsafety factor: {:.4} -> {:.4} ({:+.1}%) over {} iterations",
        first.gamma_min,
        last.gamma_min,
        100.0 * (last.gamma_min / first.gamma_min - 1.0),
        outcome.result.records.len()
    );
    println!("artifacts in {}", outcome.run_dir.display());
    Ok(())
}
