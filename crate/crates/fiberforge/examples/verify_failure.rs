//! Structural verification: re-run the anisotropic FEA on the trained fields
//! and map the Hoffman failure index over the solid. At the structure's own
//! capacity the peak index sits at one; beyond it, yielded volume appears.
//!
//! ```bash
//! cargo run --release --example verify_failure
//! ```

use fiberforge::commands::{cmd_optimize, cmd_verify};
use fiberforge::config::RunConfig;

fn main() -> fiberforge::Result<()> {
    let out = std::env::temp_dir().join("fiberforge-example-verify");
    let config = RunConfig::from_json(
        "{}",
        &[
            "problem.preset=\"cantilever-desk\"".into(),
            format!("output.dir=\"{}\"", out.display()),
            "optimizer.max_iterations=50".into(),
            "optimizer.seed=0".into(),
        ],
    )?;
    println!("training a short run first...");
    let opt = cmd_optimize(&config)?;
    let gamma_min = opt.result.gamma_min;

    println!("\nverify at the recorded capacity (load scale = gamma_min):");
    let at_capacity = cmd_verify(&out, None, 1.0)?;
    println!(
        "  max solid failure index: {:.4} (expected ~1)",
        at_capacity.report.max_solid_index
    );
    println!(
        "  yielded volume fraction: {:.4}%",
        100.0 * at_capacity.report.yielded_fraction
    );

    println!("\nverify at twice the capacity:");
    let over = cmd_verify(&out, Some(2.0 * gamma_min), 1.0)?;
    println!(
        "  max solid failure index: {:.4}",
        over.report.max_solid_index
    );
    println!(
        "  yielded volume fraction: {:.4}%",
        100.0 * over.report.yielded_fraction
    );

    println!("\nzero load leaves the structure yield-free:");
    let quiet = cmd_verify(&out, Some(0.0), 1.0)?;
    println!(
        "  max index {:.4}, yielded {:.4}%",
        quiet.report.max_solid_index,
        100.0 * quiet.report.yielded_fraction
    );
    println!("\nfailure-index maps written next to {}", out.display());
    Ok(())
}
