//! Design and manufacturability loss terms and the mode-dependent totals.
//!
//! Manufacturability losses are solid-weighted means over a fixed sample set:
//! `L = (1/Psi) sum_p H(rho_p) ReLU(violation_p)` with
//! `Psi = sum_p H(rho_p)`. Samples whose gradients fall below the curvature
//! floor are dropped from the violated quantity but still count in `Psi`.

use serde::{Deserialize, Serialize};

use crate::field::MotionMode;
use crate::{Error, Result};

/// Hard printability bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManufacturingLimits {
    /// Largest allowed principal layer curvature (mm^-1).
    pub k_lc: f64,
    /// Largest allowed fiber-path turning rate (mm^-1).
    pub k_f_max: f64,
    /// Layer thickness band (mm).
    pub t_min: f64,
    pub t_max: f64,
    /// Half apex angle of the printer-head cone (radians), 3-axis only.
    pub beta: f64,
    /// Isovalue spacing for the slicer; `None` derives `t_min * t_max`.
    pub iso_spacing: Option<f64>,
}

impl Default for ManufacturingLimits {
    fn default() -> Self {
        Self {
            k_lc: 0.1,
            k_f_max: 0.2,
            t_min: 0.4,
            t_max: 0.8,
            beta: 30.0_f64.to_radians(),
            iso_spacing: None,
        }
    }
}

impl ManufacturingLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_max) {
            return Err(Error::Config("layer thickness band requires 0 < t_min < t_max".into()));
        }
        if self.k_lc <= 0.0 || self.k_f_max <= 0.0 {
            return Err(Error::Config("curvature limits must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config("beta must lie in (0, pi/2)".into()));
        }
        if let Some(dc) = self.iso_spacing {
            if dc <= 0.0 {
                return Err(Error::Config("iso spacing must be positive".into()));
            }
        }
        Ok(())
    }

    /// Isovalue spacing that puts sliced physical thickness inside the band
    /// exactly when the thickness loss is satisfied.
    pub fn iso_spacing_or_default(&self) -> f64 {
        self.iso_spacing.unwrap_or(self.t_min * self.t_max)
    }
}

/// Which sign of the collision inequality gets penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionMetric {
    /// Penalize the larger signed principal curvature, as printed.
    #[default]
    SignedMax,
    /// Penalize the magnitude-largest principal curvature.
    AbsMax,
}

/// Direction of the setup-orientation penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OrientationPenalty {
    /// Penalize alignment beyond `cos beta`, exactly as printed.
    #[default]
    Printed,
    /// Penalize deviation beyond the cone half-angle instead.
    Deviation,
}

/// Design-objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Maximize the p-norm surrogate of the minimum safety factor.
    #[default]
    Strength,
    /// Minimize compliance.
    Stiffness,
    /// Minimize volume under a yield-feasibility penalty.
    Lightweight,
}

/// Raw loss values for one iteration. Mode-gated terms are `None` when the
/// active mode never evaluates them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_obj: f64,
    pub l_vol: f64,
    pub l_lc: Option<f64>,
    pub l_mo: Option<f64>,
    pub l_ort: Option<f64>,
    pub l_lt: Option<f64>,
    pub l_yd: Option<f64>,
    pub psi: f64,
    pub degenerate_count: usize,
    pub weighted_total: f64,
}

/// Multipliers for the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossWeights {
    pub obj: f64,
    pub vol: f64,
    pub lc: f64,
    pub mo: f64,
    pub ort: f64,
    pub lt: f64,
    pub yd: f64,
}

/// Strength surrogate: negative p-norm lower bound of the minimum element
/// safety factor, computed with max-factoring so huge capped factors cannot
/// overflow.
pub fn loss_strength(gammas: &[f64], p_bar: f64) -> Result<f64> {
    if gammas.is_empty() {
        return Err(Error::Numerical("strength loss needs at least one element".into()));
    }
    let mut gmin = f64::INFINITY;
    for &g in gammas {
        if g <= 0.0 || !g.is_finite() {
            return Err(Error::Numerical(format!(
                "safety factors must be positive and finite, got {g}"
            )));
        }
        gmin = gmin.min(g);
    }
    let t: f64 = gammas.iter().map(|&g| (gmin / g).powf(p_bar)).sum();
    Ok(-gmin * t.powf(-1.0 / p_bar))
}

/// `d loss_strength / d gamma_e`, same factoring as the value.
pub fn loss_strength_grad(gammas: &[f64], p_bar: f64) -> Vec<f64> {
    let gmin = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
    let t: f64 = gammas.iter().map(|&g| (gmin / g).powf(p_bar)).sum();
    let t_pow = t.powf(-(1.0 + p_bar) / p_bar);
    gammas
        .iter()
        .map(|&g| -t_pow * (gmin / g).powf(p_bar + 1.0))
        .collect()
}

/// Volume-budget penalty: `ReLU(sum H(rho) V_e / V* - 1)` with `V*` in mm^3.
pub fn loss_volume(rho_projected: &[f64], v_e: f64, v_star: f64) -> f64 {
    let vol: f64 = rho_projected.iter().sum::<f64>() * v_e;
    (vol / v_star - 1.0).max(0.0)
}

/// Total accumulation of solid-weighted samples.
pub fn psi(rho_projected: &[f64]) -> f64 {
    rho_projected.iter().sum()
}

/// Empty-structure guard for the Psi-normalized losses.
pub const PSI_FLOOR: f64 = 1e-9;

/// Shared form of every Psi-normalized loss: the solid-weighted mean of
/// nonnegative per-sample violations (`None` marks degenerate samples, which
/// contribute zero violation but full solid weight).
pub fn psi_normalized_loss(rho_projected: &[f64], violations: &[Option<f64>]) -> f64 {
    let p = psi(rho_projected);
    if p < PSI_FLOOR {
        return 0.0;
    }
    let num: f64 = rho_projected
        .iter()
        .zip(violations)
        .map(|(&h, v)| h * v.unwrap_or(0.0))
        .sum();
    num / p
}

/// Local-collision loss from per-sample max principal curvatures.
pub fn loss_local_collision(
    rho_projected: &[f64],
    k_max: &[Option<f64>],
    k_lc: f64,
) -> f64 {
    let violations: Vec<Option<f64>> = k_max
        .iter()
        .map(|k| k.map(|k| (k - k_lc).max(0.0)))
        .collect();
    psi_normalized_loss(rho_projected, &violations)
}

/// Motion loss from per-sample fiber-path turning rates (5-axis only).
pub fn loss_motion(rho_projected: &[f64], k_f: &[Option<f64>], k_f_max: f64) -> f64 {
    let violations: Vec<Option<f64>> = k_f
        .iter()
        .map(|k| k.map(|k| (k.abs() - k_f_max).max(0.0)))
        .collect();
    psi_normalized_loss(rho_projected, &violations)
}

/// Setup-orientation loss from per-sample `cos(angle(grad m, n))` (3-axis).
pub fn loss_orientation(
    rho_projected: &[f64],
    cos_to_setup: &[Option<f64>],
    beta: f64,
    penalty: OrientationPenalty,
) -> f64 {
    let cb = beta.cos();
    let violations: Vec<Option<f64>> = cos_to_setup
        .iter()
        .map(|c| {
            c.map(|c| match penalty {
                OrientationPenalty::Printed => (c - cb).max(0.0),
                OrientationPenalty::Deviation => (cb - c).max(0.0),
            })
        })
        .collect();
    psi_normalized_loss(rho_projected, &violations)
}

/// Layer-thickness loss from per-sample deposition gradient norms.
pub fn loss_thickness(rho_projected: &[f64], grad_m_norm: &[f64], t_min: f64, t_max: f64) -> f64 {
    let violations: Vec<Option<f64>> = grad_m_norm
        .iter()
        .map(|&g| Some((t_min - g).max(0.0) + (g - t_max).max(0.0)))
        .collect();
    psi_normalized_loss(rho_projected, &violations)
}

/// Yield-feasibility penalty for the lightweight variant.
pub fn loss_yield(gamma_indices: &[f64]) -> f64 {
    gamma_indices.iter().map(|&g| (g - 1.0).max(0.0)).sum()
}

/// Discretized volume objective for the lightweight variant (mm^3).
pub fn loss_volume_objective(rho_projected: &[f64], v_e: f64) -> f64 {
    rho_projected.iter().sum::<f64>() * v_e
}

/// Combine a breakdown into the mode's weighted total. Weights attached to
/// terms the mode never evaluates must be zero.
pub fn total_loss(
    mode: MotionMode,
    objective: ObjectiveKind,
    b: &LossBreakdown,
    w: &LossWeights,
) -> Result<f64> {
    let forbid = |name: &str, weight: f64| -> Result<()> {
        if weight != 0.0 {
            Err(Error::Config(format!(
                "weight {name} is not applicable in {mode} mode"
            )))
        } else {
            Ok(())
        }
    };
    match mode {
        MotionMode::FiveAxis => forbid("ort", w.ort)?,
        MotionMode::ThreeAxis => forbid("mo", w.mo)?,
        MotionMode::TwoPointFiveAxis => {
            forbid("lc", w.lc)?;
            forbid("mo", w.mo)?;
            forbid("ort", w.ort)?;
            forbid("lt", w.lt)?;
        }
    }
    if objective != ObjectiveKind::Lightweight && w.yd != 0.0 {
        return Err(Error::Config(
            "weight yd only applies to the lightweight objective".into(),
        ));
    }
    let mut total = w.obj * b.l_obj;
    match objective {
        ObjectiveKind::Lightweight => {
            total += w.yd * b.l_yd.unwrap_or(0.0);
        }
        _ => {
            total += w.vol * b.l_vol;
        }
    }
    total += w.lc * b.l_lc.unwrap_or(0.0);
    total += w.mo * b.l_mo.unwrap_or(0.0);
    total += w.ort * b.l_ort.unwrap_or(0.0);
    total += w.lt * b.l_lt.unwrap_or(0.0);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn strength_loss_matches_direct_arithmetic() {
        let l = loss_strength(&[2.0, 4.0], 6.0).unwrap();
        assert_relative_eq!(l, -(2.0f64.powi(-6) + 4.0f64.powi(-6)).powf(-1.0 / 6.0), epsilon = 1e-12);
        assert_relative_eq!(l, -1.9948, epsilon = 1e-4);
    }

    #[test]
    fn strength_loss_closed_forms() {
        // all equal: -g n^{-1/p}
        let g = 3.7;
        let n = 12;
        let l = loss_strength(&vec![g; n], 6.0).unwrap();
        assert_relative_eq!(l, -g * (n as f64).powf(-1.0 / 6.0), epsilon = 1e-12);
        // single element
        assert_relative_eq!(loss_strength(&[3.0], 6.0).unwrap(), -3.0, epsilon = 1e-14);
    }

    #[test]
    fn strength_loss_survives_capped_factors() {
        let mut gammas = vec![1e4; 5000];
        gammas[17] = 1.25;
        let l = loss_strength(&gammas, 6.0).unwrap();
        assert_relative_eq!(l, -1.25, epsilon = 1e-6);
        assert!(l.is_finite());
    }

    #[test]
    fn strength_loss_is_a_lower_bound_converging_in_p() {
        let gammas = [1.7, 2.2, 5.0, 1.9, 10.0, 3.3];
        let gmin = 1.7;
        let mut last_gap = f64::INFINITY;
        for p in [2.0, 6.0, 12.0, 24.0] {
            let l = loss_strength(&gammas, p).unwrap();
            assert!(-l <= gmin + 1e-12, "p-norm must lower-bound the min");
            let gap = gmin - (-l);
            assert!(gap >= -1e-12);
            assert!(gap <= last_gap + 1e-12, "gap must shrink as p grows");
            last_gap = gap;
        }
    }

    #[test]
    fn strength_loss_rejects_nonpositive_factors() {
        assert!(loss_strength(&[1.0, 0.0], 6.0).is_err());
        assert!(loss_strength(&[1.0, -2.0], 6.0).is_err());
    }

    #[test]
    fn strength_grad_matches_finite_differences() {
        let gammas = vec![1.5, 2.0, 8.0, 1.2];
        let grad = loss_strength_grad(&gammas, 6.0);
        for i in 0..gammas.len() {
            let h = 1e-6;
            let mut gp = gammas.clone();
            gp[i] += h;
            let fp = loss_strength(&gp, 6.0).unwrap();
            gp[i] -= 2.0 * h;
            let fm = loss_strength(&gp, 6.0).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn volume_loss_examples() {
        // all void
        assert_eq!(loss_volume(&[0.0; 10], 1.0, 2.5), 0.0);
        // exactly at budget
        let rho = vec![0.5; 10];
        let v_star = 5.0;
        assert_eq!(loss_volume(&rho, 1.0, v_star), 0.0);
        // 25% over budget
        let rho = vec![1.0; 10];
        assert_relative_eq!(loss_volume(&rho, 1.0, 8.0), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn local_collision_examples() {
        // flat layers never collide
        let rho = vec![1.0; 4];
        let flat = vec![Some(0.0); 4];
        assert_eq!(loss_local_collision(&rho, &flat, 0.1), 0.0);
        // sphere of radius 5 everywhere solid: K_max = 0.2
        let sphere = vec![Some(0.2); 4];
        assert_relative_eq!(loss_local_collision(&rho, &sphere, 0.1), 0.1, epsilon = 1e-12);
        // void weighting kills the term
        let void = vec![1e-12; 4];
        assert_eq!(loss_local_collision(&void, &sphere, 0.1), 0.0);
    }

    #[test]
    fn orientation_examples() {
        let rho = vec![1.0; 8];
        let beta = 30.0f64.to_radians();
        // aligned with the setup orientation: printed form penalizes it
        let aligned = vec![Some(1.0); 8];
        assert_relative_eq!(
            loss_orientation(&rho, &aligned, beta, OrientationPenalty::Printed),
            1.0 - beta.cos(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            loss_orientation(&rho, &aligned, beta, OrientationPenalty::Printed),
            0.134,
            epsilon = 1e-3
        );
        // orthogonal: cosine 0 sits below cos beta
        let orth = vec![Some(0.0); 8];
        assert_eq!(
            loss_orientation(&rho, &orth, beta, OrientationPenalty::Printed),
            0.0
        );
        // empty solid
        assert_eq!(
            loss_orientation(&[0.0; 8], &aligned, beta, OrientationPenalty::Printed),
            0.0
        );
        // deviation form flips the inequality
        assert_eq!(
            loss_orientation(&rho, &aligned, beta, OrientationPenalty::Deviation),
            0.0
        );
        assert_relative_eq!(
            loss_orientation(&rho, &orth, beta, OrientationPenalty::Deviation),
            beta.cos(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn thickness_examples() {
        let rho = vec![1.0; 5];
        assert_eq!(loss_thickness(&rho, &[0.6; 5], 0.4, 0.8), 0.0);
        assert_relative_eq!(loss_thickness(&rho, &[0.2; 5], 0.4, 0.8), 0.2, epsilon = 1e-12);
        assert_relative_eq!(loss_thickness(&rho, &[1.0; 5], 0.4, 0.8), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn yield_and_volume_objective_examples() {
        assert_eq!(loss_yield(&[0.1, 0.9, 1.0]), 0.0);
        assert_relative_eq!(loss_yield(&[0.3, 1.5]), 0.5, epsilon = 1e-14);
        // all-solid unit domain: objective equals total domain volume
        let rho = vec![1.0; 64];
        assert_relative_eq!(loss_volume_objective(&rho, 0.5), 32.0, epsilon = 1e-12);
    }

    #[test]
    fn constraint_losses_are_nonnegative_and_zero_on_feasible_set() {
        let rho = vec![0.7; 6];
        assert!(loss_thickness(&rho, &[0.45, 0.5, 0.79, 0.41, 0.6, 0.7], 0.4, 0.8) == 0.0);
        let kmax = vec![Some(0.09), Some(0.05), None, Some(0.0999), Some(0.02), Some(0.08)];
        assert!(loss_local_collision(&rho, &kmax, 0.1) == 0.0);
        // monotone in the violated quantity
        let v1 = loss_local_collision(&rho, &[Some(0.15); 6], 0.1);
        let v2 = loss_local_collision(&rho, &[Some(0.25); 6], 0.1);
        assert!(v2 > v1 && v1 > 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let b = LossBreakdown {
            l_obj: 1.0,
            l_vol: 2.0,
            l_lc: Some(3.0),
            l_mo: Some(4.0),
            l_lt: Some(5.0),
            ..Default::default()
        };
        let zero = LossWeights::default();
        assert_eq!(
            total_loss(MotionMode::FiveAxis, ObjectiveKind::Strength, &b, &zero).unwrap(),
            0.0
        );
        let unit = LossWeights {
            obj: 1.0,
            vol: 1.0,
            lc: 1.0,
            mo: 1.0,
            lt: 1.0,
            ..Default::default()
        };
        assert_eq!(
            total_loss(MotionMode::FiveAxis, ObjectiveKind::Strength, &b, &unit).unwrap(),
            15.0
        );
        // 2.5-axis ignores curvature terms structurally: nonzero weights error
        assert!(total_loss(MotionMode::TwoPointFiveAxis, ObjectiveKind::Strength, &b, &unit).is_err());
        let planar = LossWeights { obj: 1.0, vol: 1.0, ..Default::default() };
        let b_planar = LossBreakdown { l_obj: 1.0, l_vol: 2.0, ..Default::default() };
        assert_eq!(
            total_loss(MotionMode::TwoPointFiveAxis, ObjectiveKind::Strength, &b_planar, &planar).unwrap(),
            3.0
        );
        // 3-axis replaces the motion loss with the orientation loss
        let b3 = LossBreakdown {
            l_obj: 1.0,
            l_vol: 2.0,
            l_lc: Some(3.0),
            l_ort: Some(7.0),
            l_lt: Some(5.0),
            ..Default::default()
        };
        let w3 = LossWeights { obj: 1.0, vol: 1.0, lc: 1.0, ort: 1.0, lt: 1.0, ..Default::default() };
        assert_eq!(
            total_loss(MotionMode::ThreeAxis, ObjectiveKind::Strength, &b3, &w3).unwrap(),
            18.0
        );
        assert!(total_loss(MotionMode::ThreeAxis, ObjectiveKind::Strength, &b3, &unit).is_err());
    }

    #[test]
    fn solid_gating_removes_voided_regions() {
        // voiding half the samples removes their violations from the mean
        let mut rho = vec![1.0; 8];
        let viol: Vec<Option<f64>> = (0..8)
            .map(|i| Some(if i < 4 { 1.0 } else { 0.0 }))
            .collect();
        let full = psi_normalized_loss(&rho, &viol);
        assert_relative_eq!(full, 0.5, epsilon = 1e-12);
        for r in rho.iter_mut().take(4) {
            *r = 1e-12;
        }
        let gated = psi_normalized_loss(&rho, &viol);
        assert!(gated < 1e-9);
    }

    #[test]
    fn limits_validation() {
        assert!(ManufacturingLimits::default().validate().is_ok());
        let bad = ManufacturingLimits { t_min: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_relative_eq!(
            ManufacturingLimits::default().iso_spacing_or_default(),
            0.32,
            epsilon = 1e-15
        );
    }
}
