//! Extract trimmed curved layers from a trained run: marching cubes over the
//! deposition field, solid trimming, and per-vertex fiber, thickness, and
//! curvature attributes, written as OBJ meshes with CSV sidecars.
//!
//! ```bash
//! cargo run --release --example slice_layers
//! ```

use fiberforge::commands::{cmd_optimize, cmd_slice};
use fiberforge::config::RunConfig;

fn main() -> fiberforge::Result<()> {
    let out = std::env::temp_dir().join("fiberforge-example-slice");
    let config = RunConfig::from_json(
        "{}",
        &[
            "problem.preset=\"mbb-desk\"".into(),
            format!("output.dir=\"{}\"", out.display()),
            "optimizer.max_iterations=60".into(),
            "optimizer.seed=0".into(),
        ],
    )?;
    println!("training a short run first...");
    cmd_optimize(&config)?;

    let outcome = cmd_slice(&out, Some(96), None)?;
    println!(
        "extracted {} layers over deposition range [{:.2}, {:.2}], spacing {:.3}",
        outcome.layers.len(),
        outcome.schedule.m_range.0,
        outcome.schedule.m_range.1,
        outcome.schedule.spacing
    );
    println!(
        "vertices: {}   thickness violations: {:.2}%   curvature violations: {:.2}%",
        outcome.statistics.sample_count,
        100.0 * outcome.statistics.thickness_violation_fraction(),
        100.0 * outcome.statistics.k_max_violation_fraction()
    );
    println!(
        "fiber alignment to the discretized mesh: {:.2} deg mean, {:.2} deg std",
        outcome.alignment.0, outcome.alignment.1
    );
    for layer in outcome.layers.iter().take(4) {
        println!(
            "  isovalue {:+.3}: {} faces, area {:.0} mm^2",
            layer.isovalue,
            layer.faces.len(),
            layer.area()
        );
    }
    println!("meshes in {}", outcome.layer_dir.display());
    Ok(())
}
