//! Planar (2.5-axis) mode: the deposition field collapses to a plane stack
//! along the trainable setup orientation, the curvature losses vanish
//! structurally, and slicing yields parallel flat layers.
//!
//! ```bash
//! cargo run --release --example planar_mode
//! ```

use fiberforge::commands::{cmd_optimize, cmd_slice};
use fiberforge::config::RunConfig;

fn main() -> fiberforge::Result<()> {
    let out = std::env::temp_dir().join("fiberforge-example-planar");
    let config = RunConfig::from_json(
        "{}",
        &[
            "problem.preset=\"mbb-desk\"".into(),
            "problem.mode=\"2.5axis\"".into(),
            format!("output.dir=\"{}\"", out.display()),
            "optimizer.max_iterations=50".into(),
            "optimizer.seed=0".into(),
        ],
    )?;
    let outcome = cmd_optimize(&config)?;
    for r in outcome.result.records.iter().step_by(10) {
        assert!(r.l_lc.is_none() && r.l_mo.is_none(), "curvature losses never exist here");
        println!(
            "iter {:>3}: l_obj {:+.4}  l_vol {:.5}  gamma_min {:.4}  n = {:?}",
            r.iteration,
            r.l_obj,
            r.l_vol,
            r.gamma_min,
            outcome.result.triple.unit_setup_orientation().as_slice()
        );
    }

    let slice = cmd_slice(&out, Some(64), None)?;
    println!("\n{} planar layers:", slice.layers.len());
    let n_hat = outcome.result.triple.unit_setup_orientation();
    for layer in slice.layers.iter().take(5) {
        let normals = layer.vertex_normals();
        let worst = normals
            .iter()
            .map(|n| n.dot(&n_hat).abs().min(1.0).acos().to_degrees())
            .fold(0.0f64, f64::max);
        println!(
            "  isovalue {:+.2}: {} faces, max normal deviation {:.3} deg",
            layer.isovalue,
            layer.faces.len(),
            worst
        );
    }
    Ok(())
}
