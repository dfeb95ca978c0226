//! Assemble the Hoffman failure criterion for the chopped-carbon-fiber PLA
//! preset, confirm every strength-axis stress sits exactly on the unit
//! failure surface, and probe element safety factors.
//!
//! ```bash
//! cargo run --release --example hoffman_calibration
//! ```

use fiberforge::material::{hoffman_coeffs, hoffman_index, safety_factor, MaterialSpec};
use nalgebra::Vector6;

fn main() {
    let spec = MaterialSpec::pla_cf();
    let coeffs = hoffman_coeffs(&spec).expect("valid strength set");

    println!("PLA-CF strengths (MPa):");
    println!("  tensile     {:?}", spec.tensile);
    println!("  compressive {:?}", spec.compressive);
    println!("  shear       {:?}", spec.shear_strength);
    println!();

    println!("calibration: failure index at each strength-axis stress");
    let labels = ["Xt", "Yt", "Zt", "Xc", "Yc", "Zc", "Sxy", "Syz", "Szx"];
    let mut stresses = Vec::new();
    for i in 0..3 {
        let mut s = Vector6::zeros();
        s[i] = spec.tensile[i];
        stresses.push(s);
    }
    for i in 0..3 {
        let mut s = Vector6::zeros();
        s[i] = -spec.compressive[i];
        stresses.push(s);
    }
    for i in 0..3 {
        let mut s = Vector6::zeros();
        s[3 + i] = spec.shear_strength[i];
        stresses.push(s);
    }
    for (label, s) in labels.iter().zip(&stresses) {
        println!("  {label:>4}: Gamma = {:.12}", hoffman_index(s, &coeffs));
    }
    println!();

    println!("safety factors (positive root of Gamma(gamma sigma) = 1):");
    let cases: [(&str, Vector6<f64>); 3] = [
        ("uniaxial at half Xt", Vector6::new(spec.tensile[0] / 2.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
        ("pure shear at half Sxy", Vector6::new(0.0, 0.0, 0.0, spec.shear_strength[0] / 2.0, 0.0, 0.0)),
        ("mixed bending state", Vector6::new(30.0, -8.0, 2.0, 10.0, 1.0, -4.0)),
    ];
    for (label, s) in &cases {
        let gamma = safety_factor(s, &coeffs, 1e4);
        let check = hoffman_index(&(s * gamma), &coeffs);
        println!("  {label}: gamma = {gamma:.4}, Gamma(gamma sigma) = {check:.9}");
    }
}
