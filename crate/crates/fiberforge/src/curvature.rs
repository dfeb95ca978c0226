//! Curvature measures on the implicit layer surfaces and along fiber paths,
//! with closed-form pullbacks for the optimizer.
//!
//! Sign convention: curvatures are signed with the surface normal taken along
//! `+grad m`, with the mean curvature equal to half the divergence of the
//! unit normal. A sphere field `m = |x|` then carries `K_M = +1/r` on every
//! isosurface, and the larger principal curvature is
//! `K_max = K_M + sqrt(K_M^2 - K_G)`.

use nalgebra::{Matrix3, Vector3};

/// Samples with `|grad m|` (or `|f|`) below this are excluded from curvature
/// terms and counted as degenerate.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Mean, Gaussian, and larger principal curvature of the isosurface through a
/// point, from the field gradient and Hessian (mm^-1 / mm^-2 in, mm^-1 out).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceCurvature {
    pub mean: f64,
    pub gaussian: f64,
    /// `K_M + sqrt(max(K_M^2 - K_G, 0))`; the discriminant is clamped at
    /// zero against round-off on umbilic points.
    pub max_principal: f64,
}

impl SurfaceCurvature {
    /// Magnitude-largest principal curvature, for the alternative collision
    /// metric.
    pub fn abs_max(&self) -> f64 {
        let disc = (self.mean * self.mean - self.gaussian).max(0.0).sqrt();
        let k1 = self.mean + disc;
        let k2 = self.mean - disc;
        k1.abs().max(k2.abs())
    }
}

/// Adjugate of a symmetric 3x3 matrix via the characteristic-polynomial
/// identity `adj(H) = H^2 - tr(H) H + c1 I`, `c1 = (tr(H)^2 - tr(H^2))/2`.
fn adjugate(h: &Matrix3<f64>) -> Matrix3<f64> {
    let t = h.trace();
    let h2 = h * h;
    let c1 = 0.5 * (t * t - h2.trace());
    h2 - h * t + Matrix3::identity() * c1
}

/// Surface curvatures at a field sample. `None` when the gradient is below
/// `GRAD_FLOOR` (degenerate sample).
pub fn surface_curvatures(g: &Vector3<f64>, h: &Matrix3<f64>) -> Option<SurfaceCurvature> {
    let n2 = g.dot(g);
    let n = n2.sqrt();
    if n < GRAD_FLOOR {
        return None;
    }
    let t = h.trace();
    let hg = h * g;
    let q = g.dot(&hg);
    let mean = (n2 * t - q) / (2.0 * n2 * n);
    let gaussian = g.dot(&(adjugate(h) * g)) / (n2 * n2);
    let disc = (mean * mean - gaussian).max(0.0);
    Some(SurfaceCurvature {
        mean,
        gaussian,
        max_principal: mean + disc.sqrt(),
    })
}

/// Accumulate `(g_bar, h_bar)` for `kbar * K_max` (the larger principal
/// curvature). The Hessian cotangent is a full (unsymmetrized) matrix; field
/// backward packs the symmetric slots.
pub fn surface_curvature_pullback(
    g: &Vector3<f64>,
    h: &Matrix3<f64>,
    kbar_max: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    surface_principal_pullback(g, h, kbar_max, 0.0)
}

/// Pullback of both signed principal curvatures
/// `k1 = K_M + sqrt(disc)`, `k2 = K_M - sqrt(disc)` with cotangents
/// `(kbar1, kbar2)`. On the clamped (umbilic) branch each reduces to `dK_M`.
pub fn surface_principal_pullback(
    g: &Vector3<f64>,
    h: &Matrix3<f64>,
    kbar1: f64,
    kbar2: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    let n2 = g.dot(g);
    let n = n2.sqrt();
    let t = h.trace();
    let hg = h * g;
    let q = g.dot(&hg);
    let mean = (n2 * t - q) / (2.0 * n2 * n);
    let p = adjugate(h);
    let pg = p * g;
    let gaussian = g.dot(&pg) / (n2 * n2);
    let disc = mean * mean - gaussian;

    let (dk_dm, dk_dg) = if disc > 0.0 {
        let s = disc.sqrt();
        (
            kbar1 * (1.0 + mean / s) + kbar2 * (1.0 - mean / s),
            (kbar2 - kbar1) * 0.5 / s,
        )
    } else {
        (kbar1 + kbar2, 0.0)
    };

    // Mean-curvature pullback.
    let n3 = n2 * n;
    let dm_dt = 1.0 / (2.0 * n);
    let dm_dq = -1.0 / (2.0 * n3);
    let dm_dn2 = (1.5 * q - 0.5 * t * n2) / (2.0 * n2 * n3);
    let mut g_bar = (g * (2.0 * dm_dn2) + hg * (2.0 * dm_dq)) * dk_dm;
    let mut h_bar = (Matrix3::identity() * dm_dt + g * g.transpose() * dm_dq) * dk_dm;

    // Gaussian-curvature pullback.
    if dk_dg != 0.0 {
        let inv_n4 = 1.0 / (n2 * n2);
        g_bar += (pg * (2.0 * inv_n4) - g * (4.0 * gaussian / n2)) * dk_dg;
        let adj_part = g * hg.transpose() + hg * g.transpose()
            - Matrix3::identity() * q
            - g * g.transpose() * t
            + Matrix3::identity() * (t * n2)
            - h * n2;
        h_bar += adj_part * (dk_dg * inv_n4);
    }
    (g_bar, h_bar)
}

/// Turning rate of the normalized fiber field along itself:
/// `K_f = |J_fhat fhat|` with `f = grad a x grad m`. `None` when the fiber is
/// degenerate. Always nonnegative; the motion loss compares `|K_f|`.
pub fn path_curvature(
    g_m: &Vector3<f64>,
    g_a: &Vector3<f64>,
    h_m: &Matrix3<f64>,
    h_a: &Matrix3<f64>,
) -> Option<f64> {
    let f = g_a.cross(g_m);
    let nf = f.norm();
    if nf < GRAD_FLOOR {
        return None;
    }
    let f_hat = f / nf;
    let jf = fiber_jacobian(g_m, g_a, h_m, h_a);
    let u = jf * f_hat;
    let c = (u - f_hat * f_hat.dot(&u)) / nf;
    Some(c.norm())
}

/// Jacobian of the unnormalized fiber field: column j is
/// `(H_a e_j) x grad m + grad a x (H_m e_j)`.
fn fiber_jacobian(
    g_m: &Vector3<f64>,
    g_a: &Vector3<f64>,
    h_m: &Matrix3<f64>,
    h_a: &Matrix3<f64>,
) -> Matrix3<f64> {
    let mut jf = Matrix3::zeros();
    for j in 0..3 {
        let ha_col = Vector3::new(h_a[(0, j)], h_a[(1, j)], h_a[(2, j)]);
        let hm_col = Vector3::new(h_m[(0, j)], h_m[(1, j)], h_m[(2, j)]);
        let col = ha_col.cross(g_m) + g_a.cross(&hm_col);
        jf.set_column(j, &col);
    }
    jf
}

/// Cotangents of `kbar * K_f` with respect to all four field quantities.
/// Returns `(g_m_bar, g_a_bar, h_m_bar, h_a_bar)`.
pub fn path_curvature_pullback(
    g_m: &Vector3<f64>,
    g_a: &Vector3<f64>,
    h_m: &Matrix3<f64>,
    h_a: &Matrix3<f64>,
    kbar: f64,
) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let f = g_a.cross(g_m);
    let nf = f.norm();
    let f_hat = f / nf;
    let jf = fiber_jacobian(g_m, g_a, h_m, h_a);
    let u = jf * f_hat;
    let c = (u - f_hat * f_hat.dot(&u)) / nf;
    let cn = c.norm();
    if cn < 1e-14 {
        return (
            Vector3::zeros(),
            Vector3::zeros(),
            Matrix3::zeros(),
            Matrix3::zeros(),
        );
    }
    let c_bar = c * (kbar / cn);

    // c = (u - f_hat (f_hat . u)) / nf
    let u_bar = (c_bar - f_hat * f_hat.dot(&c_bar)) / nf;
    let mut fhat_bar = (c_bar * (-f_hat.dot(&u)) - u * f_hat.dot(&c_bar)) / nf;
    let nf_bar = -c.dot(&c_bar) / nf;

    // u = J_f f_hat
    let jf_bar = u_bar * f_hat.transpose();
    fhat_bar += jf.transpose() * u_bar;

    // f_hat = f / nf, and the explicit 1/nf factor in c
    let mut f_bar = (fhat_bar - f_hat * f_hat.dot(&fhat_bar)) / nf;
    f_bar += f_hat * nf_bar;

    // f = g_a x g_m
    let mut ga_bar = g_m.cross(&f_bar);
    let mut gm_bar = f_bar.cross(g_a);

    // J_f columns: (H_a e_j) x g_m + g_a x (H_m e_j)
    let mut ha_bar = Matrix3::zeros();
    let mut hm_bar = Matrix3::zeros();
    for j in 0..3 {
        let jbar_col = Vector3::new(jf_bar[(0, j)], jf_bar[(1, j)], jf_bar[(2, j)]);
        let ha_col = Vector3::new(h_a[(0, j)], h_a[(1, j)], h_a[(2, j)]);
        let hm_col = Vector3::new(h_m[(0, j)], h_m[(1, j)], h_m[(2, j)]);
        ha_bar.set_column(j, &g_m.cross(&jbar_col));
        hm_bar.set_column(j, &jbar_col.cross(g_a));
        gm_bar += jbar_col.cross(&ha_col);
        ga_bar += hm_col.cross(&jbar_col);
    }
    (gm_bar, ga_bar, hm_bar, ha_bar)
}
