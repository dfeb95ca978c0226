//! Orthotropic material data, the Hoffman failure criterion, and the frame
//! and Voigt-rotation machinery that couples fields to the FEA.
//!
//! Unit system: moduli in GPa (= kN/mm^2), strengths in MPa, lengths in mm,
//! forces in kN. Stresses cross into MPa only at the Hoffman boundary.
//!
//! Voigt order throughout: `[xx, yy, zz, xy, yz, zx]` with engineering shear
//! strains.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Degenerate-input threshold for frame construction (mm^-1).
pub const FRAME_EPS: f64 = 1e-8;
/// `A <= EPS_A` switches the safety factor to its capped branch (dimensionless).
pub const EPS_A: f64 = 1e-9;

/// Orthotropic elastic constants and strengths.
///
/// `nu = (nu_xy, nu_yz, nu_zx)` and `g = (G_xy, G_yz, G_zx)` follow the same
/// pairing as the shear strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    /// Young's moduli (Ex, Ey, Ez) in GPa.
    pub e: [f64; 3],
    /// Poisson ratios (nu_xy, nu_yz, nu_zx).
    pub nu: [f64; 3],
    /// Shear moduli (G_xy, G_yz, G_zx) in GPa.
    pub g: [f64; 3],
    /// Tensile strengths (Xt, Yt, Zt) in MPa.
    pub tensile: [f64; 3],
    /// Compressive strengths (Xc, Yc, Zc) in MPa.
    pub compressive: [f64; 3],
    /// Shear strengths (Sxy, Syz, Szx) in MPa.
    pub shear_strength: [f64; 3],
    /// Void-modulus floor as a fraction of the solid modulus.
    pub e_min_ratio: f64,
}

impl MaterialSpec {
    /// Chopped-carbon-fiber PLA. Moduli and strengths from tensile,
    /// compression and shear tests; Poisson ratios and shear moduli are not
    /// measured and are engineering placeholders.
    pub fn pla_cf() -> Self {
        Self {
            e: [7.68, 3.24, 3.16],
            nu: [0.35, 0.35, 0.35],
            g: [2.4, 1.2, 2.4],
            tensile: [67.6, 33.7, 28.3],
            compressive: [85.2, 61.3, 63.3],
            shear_strength: [49.1, 14.4, 45.1],
            e_min_ratio: 1e-4,
        }
    }

    /// Plain PLA from the same test series.
    pub fn pla() -> Self {
        Self {
            e: [2.86, 2.92, 2.94],
            nu: [0.35, 0.35, 0.35],
            g: [1.1, 1.1, 1.1],
            tensile: [42.4, 31.8, 27.9],
            compressive: [53.7, 44.4, 47.4],
            shear_strength: [24.2, 15.4, 20.2],
            e_min_ratio: 1e-4,
        }
    }

    /// Isotropic helper used by the FEA oracles.
    pub fn isotropic(e: f64, nu: f64) -> Self {
        let g = e / (2.0 * (1.0 + nu));
        Self {
            e: [e, e, e],
            nu: [nu, nu, nu],
            g: [g, g, g],
            tensile: [50.0, 50.0, 50.0],
            compressive: [50.0, 50.0, 50.0],
            shear_strength: [30.0, 30.0, 30.0],
            e_min_ratio: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &v in self
            .e
            .iter()
            .chain(self.g.iter())
            .chain(self.tensile.iter())
            .chain(self.compressive.iter())
            .chain(self.shear_strength.iter())
        {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(
                    "all moduli and strengths must be strictly positive".into(),
                ));
            }
        }
        if self.e_min_ratio <= 0.0 || self.e_min_ratio >= 1.0 {
            return Err(Error::Config("e_min_ratio must be in (0,1)".into()));
        }
        // The stiffness matrix must come out symmetric positive definite.
        let c = self.stiffness_matrix()?;
        let eig = c.symmetric_eigenvalues();
        if eig.min() <= 0.0 {
            return Err(Error::Config(
                "orthotropic stiffness matrix is not positive definite".into(),
            ));
        }
        Ok(())
    }

    /// Material-frame orthotropic stiffness (GPa), built by inverting the
    /// compliance.
    pub fn stiffness_matrix(&self) -> Result<Matrix6<f64>> {
        let (ex, ey, ez) = (self.e[0], self.e[1], self.e[2]);
        let (nxy, nyz, nzx) = (self.nu[0], self.nu[1], self.nu[2]);
        let mut s3 = Matrix3::zeros();
        s3[(0, 0)] = 1.0 / ex;
        s3[(1, 1)] = 1.0 / ey;
        s3[(2, 2)] = 1.0 / ez;
        s3[(0, 1)] = -nxy / ex;
        s3[(1, 0)] = -nxy / ex;
        s3[(1, 2)] = -nyz / ey;
        s3[(2, 1)] = -nyz / ey;
        s3[(0, 2)] = -nzx / ez;
        s3[(2, 0)] = -nzx / ez;
        let c3 = s3
            .try_inverse()
            .ok_or_else(|| Error::Config("singular orthotropic compliance".into()))?;
        let mut c = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = c3[(i, j)];
            }
        }
        c[(3, 3)] = self.g[0];
        c[(4, 4)] = self.g[1];
        c[(5, 5)] = self.g[2];
        Ok(c)
    }
}

/// Assembled quadratic and linear Hoffman coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct HoffmanCoeffs {
    /// Symmetric PSD quadratic matrix, MPa^-2.
    pub quadratic: Matrix6<f64>,
    /// Linear coefficient vector, MPa^-1.
    pub linear: Vector6<f64>,
}

/// Assemble the Hoffman coefficients from the strength set. The criterion is
/// calibrated so each pure strength-axis stress lands exactly on the unit
/// failure surface.
pub fn hoffman_coeffs(spec: &MaterialSpec) -> Result<HoffmanCoeffs> {
    for &v in spec
        .tensile
        .iter()
        .chain(spec.compressive.iter())
        .chain(spec.shear_strength.iter())
    {
        if v <= 0.0 {
            return Err(Error::Config("strengths must be strictly positive".into()));
        }
    }
    let [xt, yt, zt] = spec.tensile;
    let [xc, yc, zc] = spec.compressive;
    let [sxy, syz, szx] = spec.shear_strength;

    let u = 1.0 / (xt * xc);
    let v = 1.0 / (yt * yc);
    let w = 1.0 / (zt * zc);
    let c1 = 0.5 * (v + w - u);
    let c2 = 0.5 * (w + u - v);
    let c3 = 0.5 * (u + v - w);

    let mut q = Matrix6::zeros();
    q[(0, 0)] = c2 + c3;
    q[(1, 1)] = c1 + c3;
    q[(2, 2)] = c1 + c2;
    q[(0, 1)] = -c3;
    q[(1, 0)] = -c3;
    q[(1, 2)] = -c1;
    q[(2, 1)] = -c1;
    q[(0, 2)] = -c2;
    q[(2, 0)] = -c2;
    q[(3, 3)] = 1.0 / (sxy * sxy);
    q[(4, 4)] = 1.0 / (syz * syz);
    q[(5, 5)] = 1.0 / (szx * szx);

    let linear = Vector6::new(
        1.0 / xt - 1.0 / xc,
        1.0 / yt - 1.0 / yc,
        1.0 / zt - 1.0 / zc,
        0.0,
        0.0,
        0.0,
    );

    let eig = q.symmetric_eigenvalues();
    let max_eig = eig.max();
    if eig.min() < -1e-12 * max_eig {
        return Err(Error::Config(
            "Hoffman quadratic matrix is indefinite for this strength set".into(),
        ));
    }
    Ok(HoffmanCoeffs { quadratic: q, linear })
}

/// Failure index `Gamma = sigma^T Q sigma + q^T sigma` for a material-frame
/// stress in MPa. Failure is the downstream interpretation `Gamma > 1`.
pub fn hoffman_index(sigma: &Vector6<f64>, coeffs: &HoffmanCoeffs) -> f64 {
    (coeffs.quadratic * sigma).dot(sigma) + coeffs.linear.dot(sigma)
}

/// Element safety factor: positive root of `Gamma(gamma sigma) = 1`.
/// Near-zero quadratic mass (`A <= EPS_A`) returns `gamma_cap` as the finite
/// surrogate for the unnloaded limit.
pub fn safety_factor(sigma: &Vector6<f64>, coeffs: &HoffmanCoeffs, gamma_cap: f64) -> f64 {
    let a = (coeffs.quadratic * sigma).dot(sigma);
    let b = coeffs.linear.dot(sigma);
    if a <= EPS_A {
        return gamma_cap;
    }
    ((b * b + 4.0 * a).sqrt() - b) / (2.0 * a)
}

/// `safety_factor` plus its partial derivatives with respect to A and B.
pub fn safety_factor_with_grad(
    sigma: &Vector6<f64>,
    coeffs: &HoffmanCoeffs,
    gamma_cap: f64,
) -> (f64, Vector6<f64>) {
    let qs = coeffs.quadratic * sigma;
    let a = qs.dot(sigma);
    let b = coeffs.linear.dot(sigma);
    if a <= EPS_A {
        return (gamma_cap, Vector6::zeros());
    }
    let d = (b * b + 4.0 * a).sqrt();
    let gamma = (d - b) / (2.0 * a);
    let dg_da = (2.0 * a / d - (d - b)) / (2.0 * a * a);
    let dg_db = (b / d - 1.0) / (2.0 * a);
    // dA/dsigma = 2 Q sigma, dB/dsigma = q
    let dsigma = qs * (2.0 * dg_da) + coeffs.linear * dg_db;
    (gamma, dsigma)
}

/// Orthonormal right-handed material frame. Columns are the fiber direction,
/// the in-layer transverse axis, and the layer normal, in design coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialFrame {
    pub rotation: Matrix3<f64>,
}

impl MaterialFrame {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
        }
    }
}

/// Build the frame `(f_hat, n_hat x f_hat, n_hat)` from the raw fiber and
/// gradients. Degenerate inputs fall back to the identity frame and set the
/// flag so callers can count them.
pub fn material_frame(
    fiber: &Vector3<f64>,
    _grad_a: &Vector3<f64>,
    grad_m: &Vector3<f64>,
) -> (MaterialFrame, bool) {
    let nm = grad_m.norm();
    let nf = fiber.norm();
    if nm < FRAME_EPS || nf < FRAME_EPS {
        return (MaterialFrame::identity(), true);
    }
    let n_hat = grad_m / nm;
    let f_hat = fiber / nf;
    let t_hat = n_hat.cross(&f_hat);
    let rotation = Matrix3::from_columns(&[f_hat, t_hat, n_hat]);
    (MaterialFrame { rotation }, false)
}

/// Bond stress-transformation matrix for our Voigt order: packs
/// `sigma_design = R sigma_mat R^T` as `sigma_design = T sigma_mat`.
pub fn voigt_rotation(frame: &MaterialFrame) -> Matrix6<f64> {
    bond_stress_matrix(&frame.rotation)
}

/// Bond matrix of an arbitrary 3x3 rotation.
pub fn bond_stress_matrix(r: &Matrix3<f64>) -> Matrix6<f64> {
    // Tensor index pairs per Voigt slot.
    const P: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (2, 0)];
    let mut t = Matrix6::zeros();
    for (row, &(i, j)) in P.iter().enumerate() {
        for (col, &(k, l)) in P.iter().enumerate() {
            t[(row, col)] = if col < 3 {
                r[(i, k)] * r[(j, k)]
            } else {
                r[(i, k)] * r[(j, l)] + r[(i, l)] * r[(j, k)]
            };
        }
    }
    t
}

/// Directional derivative of `bond_stress_matrix` at `r` along `dr`.
pub fn bond_stress_matrix_pushforward(r: &Matrix3<f64>, dr: &Matrix3<f64>) -> Matrix6<f64> {
    const P: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (2, 0)];
    let mut t = Matrix6::zeros();
    for (row, &(i, j)) in P.iter().enumerate() {
        for (col, &(k, l)) in P.iter().enumerate() {
            t[(row, col)] = if col < 3 {
                dr[(i, k)] * r[(j, k)] + r[(i, k)] * dr[(j, k)]
            } else {
                dr[(i, k)] * r[(j, l)]
                    + r[(i, k)] * dr[(j, l)]
                    + dr[(i, l)] * r[(j, k)]
                    + r[(i, l)] * dr[(j, k)]
            };
        }
    }
    t
}

/// Pull a Bond-matrix cotangent back to a rotation-matrix cotangent by
/// contracting against the nine basis pushforwards.
pub fn bond_stress_matrix_pullback(r: &Matrix3<f64>, tbar: &Matrix6<f64>) -> Matrix3<f64> {
    let mut rbar = Matrix3::zeros();
    for k in 0..3 {
        for l in 0..3 {
            let mut e = Matrix3::zeros();
            e[(k, l)] = 1.0;
            let dt = bond_stress_matrix_pushforward(r, &e);
            rbar[(k, l)] = dt.component_mul(tbar).sum();
        }
    }
    rbar
}

/// SIMP modulus scale: `s = r + rho_proj^p (1 - r)` with `r = e_min_ratio`.
/// Multiplies the whole orthotropic stiffness.
pub fn modulus_interpolation(rho_projected: f64, p: f64, spec: &MaterialSpec) -> f64 {
    let r = spec.e_min_ratio;
    r + rho_projected.powf(p) * (1.0 - r)
}

/// d(modulus scale)/d(rho_projected).
pub fn modulus_interpolation_d(rho_projected: f64, p: f64, spec: &MaterialSpec) -> f64 {
    let r = spec.e_min_ratio;
    p * rho_projected.powf(p - 1.0) * (1.0 - r)
}

/// Rotate the (SIMP-scaled) material-frame stiffness into design coordinates
/// with the energy-consistent dual pair: `C_design = T (s C) T^T`.
pub fn rotated_constitutive(
    c_material: &Matrix6<f64>,
    t: &Matrix6<f64>,
    modulus_scale: f64,
) -> Matrix6<f64> {
    let scaled = c_material * modulus_scale;
    t * scaled * t.transpose()
}

/// Mandel scaling: maps an engineering-Voigt stiffness into the metric where
/// material rotations act orthogonally, so elastic eigenvalues are invariants.
pub fn mandel_scaled(c: &Matrix6<f64>) -> Matrix6<f64> {
    let s = Vector6::new(1.0, 1.0, 1.0, std::f64::consts::SQRT_2, std::f64::consts::SQRT_2, std::f64::consts::SQRT_2);
    let mut out = *c;
    for i in 0..6 {
        for j in 0..6 {
            out[(i, j)] *= s[i] * s[j];
        }
    }
    out
}
