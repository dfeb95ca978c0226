//! Lightweight variant: minimize structural volume under a yield-feasibility
//! penalty instead of maximizing strength under a volume budget.
//!
//! ```bash
//! cargo run --release --example lightweight_design
//! ```

use fiberforge::commands::cmd_optimize;
use fiberforge::config::RunConfig;

fn main() -> fiberforge::Result<()> {
    let out = std::env::temp_dir().join("fiberforge-example-lightweight");
    let config = RunConfig::from_json(
        "{}",
        &[
            "problem.preset=\"cantilever-desk\"".into(),
            "objective=\"lightweight\"".into(),
            format!("output.dir=\"{}\"", out.display()),
            "optimizer.max_iterations=60".into(),
            "optimizer.seed=0".into(),
            // lighter load so a sparse structure can stay yield-free
            "problem.load_scale=0.5".into(),
        ],
    )?;
    let outcome = cmd_optimize(&config)?;
    println!("iter   volume_mm3     l_yd      solid fraction");
    let domain = 90.0 * 45.0 * 45.0;
    for r in outcome.result.records.iter().step_by(10) {
        println!(
            "{:>4}   {:>10.0}   {:>8.4}   {:.3}",
            r.iteration,
            r.l_obj,
            r.l_yd.unwrap_or(0.0),
            r.l_obj / domain
        );
    }
    let first = outcome.result.records.first().unwrap();
    let last = outcome.result.records.last().unwrap();
    println!(
        "\nvolume: {:.0} -> {:.0} mm^3 ({:+.1}%), final yield penalty {:.5}",
        first.l_obj,
        last.l_obj,
        100.0 * (last.l_obj / first.l_obj - 1.0),
        last.l_yd.unwrap_or(0.0)
    );
    Ok(())
}
