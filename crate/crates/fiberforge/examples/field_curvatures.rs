//! Surface and fiber-path curvature on analytic fields: a sphere stack
//! carries curvature 1/r, planes are flat, and circular fibers turn at the
//! inverse orbit radius. The same formulas run on the neural fields during
//! optimization.
//!
//! ```bash
//! cargo run --release --example field_curvatures
//! ```

use fiberforge::curvature::{path_curvature, surface_curvatures};
use nalgebra::{Matrix3, Vector3};

fn main() {
    println!("sphere stack m = |x|: curvatures vs radius");
    for r in [5.0, 10.0, 25.0] {
        let p = Vector3::new(r, 0.0, 0.0);
        let g = p / r;
        let h = (Matrix3::identity() - g * g.transpose()) / r;
        let k = surface_curvatures(&g, &h).unwrap();
        println!(
            "  r = {r:>5}: K_M = {:+.6}  K_G = {:+.6}  K_max = {:+.6}  (1/r = {:.6})",
            k.mean,
            k.gaussian,
            k.max_principal,
            1.0 / r
        );
    }

    println!("\nplanar stack m = z:");
    let k = surface_curvatures(&Vector3::z(), &Matrix3::zeros()).unwrap();
    println!(
        "  K_M = {}  K_G = {}  K_max = {}",
        k.mean, k.gaussian, k.max_principal
    );

    println!("\nfiber-path turning rate around the z-axis (m = z, a = radial):");
    for r in [2.5, 5.0, 20.0] {
        let p = Vector3::new(r, 0.0, 0.0);
        let g_a = Vector3::new(p.x / r, p.y / r, 0.0);
        let planar = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let h_a = (planar - g_a * g_a.transpose()) / r;
        let k_f = path_curvature(&Vector3::z(), &g_a, &Matrix3::zeros(), &h_a).unwrap();
        println!("  orbit r = {r:>5}: K_f = {k_f:.6}  (1/r = {:.6})", 1.0 / r);
    }

    println!("\nstraight fibers (m = z, a = y):");
    let k_f = path_curvature(
        &Vector3::z(),
        &Vector3::y(),
        &Matrix3::zeros(),
        &Matrix3::zeros(),
    )
    .unwrap();
    println!("  K_f = {k_f}");
}
