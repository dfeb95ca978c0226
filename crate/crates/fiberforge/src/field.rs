//! The three implicit scalar fields and their joint evaluation.
//!
//! A `FieldTriple` bundles the density, deposition, and auxiliary networks
//! plus the trainable setup orientation. Evaluation returns physical-unit
//! values, gradients (mm^-1), and Hessians (mm^-2); positions are affinely
//! normalized into `[-1,1]^3` before entering the networks and every
//! derivative is chain-ruled back out.

use nalgebra::{Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{pack_hess_cotangent, Cotangent, DerivLevel, EvalBatch, Mlp, MlpScratch, MlpShape};
use crate::{Error, Result};

/// Activation family for the field networks. Only the smooth
/// sigmoid-weighted-linear unit is supported; curvature losses consume field
/// Hessians, so the activation must be at least C^2 everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    #[serde(rename = "sigmoid-weighted-linear")]
    SigmoidWeightedLinear,
}

/// Motion degrees of freedom of the target printer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionMode {
    /// Tool reorients along layer normals; curved layers, curved paths.
    #[serde(rename = "5axis")]
    FiveAxis,
    /// Fixed tool, curved layers with bounded normal tilt from the setup
    /// orientation.
    #[serde(rename = "3axis")]
    ThreeAxis,
    /// Planar layers along the setup orientation; the deposition network is
    /// bypassed entirely.
    #[serde(rename = "2.5axis")]
    TwoPointFiveAxis,
}

impl std::fmt::Display for MotionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MotionMode::FiveAxis => write!(f, "5axis"),
            MotionMode::ThreeAxis => write!(f, "3axis"),
            MotionMode::TwoPointFiveAxis => write!(f, "2.5axis"),
        }
    }
}

/// Axis-aligned design domain in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub min: [f64; 3],
    pub size: [f64; 3],
}

impl DomainBox {
    pub fn new(min: [f64; 3], size: [f64; 3]) -> Self {
        Self { min, size }
    }

    pub fn center(&self) -> [f64; 3] {
        [
            self.min[0] + 0.5 * self.size[0],
            self.min[1] + 0.5 * self.size[1],
            self.min[2] + 0.5 * self.size[2],
        ]
    }

    pub fn max(&self) -> [f64; 3] {
        [
            self.min[0] + self.size[0],
            self.min[1] + self.size[1],
            self.min[2] + self.size[2],
        ]
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let mx = self.max();
        (0..3).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= mx[i] + 1e-9)
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// Normalize a physical point into the canonical cube.
    pub fn normalize(&self, p: &Vector3<f64>) -> [f64; 3] {
        let c = self.center();
        [
            (p.x - c[0]) / (0.5 * self.size[0]),
            (p.y - c[1]) / (0.5 * self.size[1]),
            (p.z - c[2]) / (0.5 * self.size[2]),
        ]
    }

    /// Per-axis d(normalized)/d(mm) factors.
    pub fn norm_scale(&self) -> [f64; 3] {
        [
            2.0 / self.size[0],
            2.0 / self.size[1],
            2.0 / self.size[2],
        ]
    }
}

/// Shape and normalization of the three field networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub hidden_layer_count: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Design domain; also defines the per-axis input normalization.
    pub domain: DomainBox,
    /// Sharpness of the density projection step.
    pub projection_sharpness: f64,
}

impl NetworkSpec {
    pub fn desk(domain: DomainBox) -> Self {
        Self {
            hidden_layer_count: 2,
            hidden_width: 64,
            activation: Activation::SigmoidWeightedLinear,
            domain,
            projection_sharpness: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layer_count < 1 {
            return Err(Error::Config("hidden_layer_count must be >= 1".into()));
        }
        if self.hidden_width < 1 {
            return Err(Error::Config("hidden_width must be >= 1".into()));
        }
        if self.projection_sharpness <= 0.0 {
            return Err(Error::Config("projection_sharpness must be > 0".into()));
        }
        for i in 0..3 {
            if self.domain.size[i] <= 0.0 {
                return Err(Error::Config("domain size must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn mlp_shape(&self) -> MlpShape {
        MlpShape::new(self.hidden_layer_count, self.hidden_width)
    }
}

/// Smooth step mapping an unbounded density output into (0,1).
/// Value 0.5 at zero, saturating to {0,1}.
#[inline]
pub fn heaviside_project(rho_raw: f64, sharpness: f64) -> f64 {
    1.0 / (1.0 + (-sharpness * rho_raw).exp())
}

/// Derivative of `heaviside_project` with respect to `rho_raw`.
#[inline]
pub fn heaviside_project_d(rho_raw: f64, sharpness: f64) -> f64 {
    let h = heaviside_project(rho_raw, sharpness);
    sharpness * h * (1.0 - h)
}

/// Which of the three networks a parameter vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldId {
    Density,
    Deposition,
    Auxiliary,
}

/// Complete design-variable state: three coefficient vectors, the setup
/// orientation, and the motion mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTriple {
    pub spec: NetworkSpec,
    pub mode: MotionMode,
    pub theta_rho: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub theta_a: Vec<f64>,
    /// Unnormalized setup orientation; normalized on use. Trainable in
    /// 3-axis and 2.5-axis modes.
    pub setup_orientation: Vector3<f64>,
    pub seed: u64,
}

/// Per-point evaluation record in physical units.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub position: Vector3<f64>,
    pub rho_raw: f64,
    /// Projected density in (0,1).
    pub rho: f64,
    pub m: f64,
    pub a: f64,
    /// mm^-1
    pub grad_m: Vector3<f64>,
    pub grad_a: Vector3<f64>,
    /// mm^-2
    pub hess_m: Matrix3<f64>,
    pub hess_a: Matrix3<f64>,
    /// Fiber direction `grad_a x grad_m` (unnormalized).
    pub fiber: Vector3<f64>,
    pub in_domain: bool,
}

/// How much to evaluate per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalLevel {
    /// Values and first gradients (enough for frames and thickness).
    Frames,
    /// Also the Hessians of the deposition (and auxiliary) fields.
    Full,
}

fn init_hidden_params(shape: &MlpShape, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = vec![0.0; shape.param_count()];
    let mut at = 0;
    let mut fan_in = 3usize;
    for _ in 0..shape.hidden_layers {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in p[at..at + shape.width * fan_in + shape.width].iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        at += shape.width * fan_in + shape.width;
        fan_in = shape.width;
    }
    // Head weights, bias, and skip stay zero; init_networks fills them in.
    p
}

/// Build the three networks. Hidden layers are randomly initialized from the
/// seed; heads are set so that before training rho(x) = 0.5 uniformly,
/// grad m is the unit build axis (+z), and grad a is the unit +y axis.
/// Deterministic given `(spec, mode, seed)`.
pub fn init_networks(spec: &NetworkSpec, mode: MotionMode, seed: u64) -> Result<FieldTriple> {
    spec.validate()?;
    let shape = spec.mlp_shape();
    let skip_off = shape.param_count() - 3;

    let make = |stream: u64, skip: [f64; 3]| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream);
        let mut p = init_hidden_params(&shape, &mut rng);
        p[skip_off..skip_off + 3].copy_from_slice(&skip);
        p
    };

    // A unit physical gradient along axis i needs a skip coefficient equal to
    // half the domain extent on that axis.
    let half = [
        0.5 * spec.domain.size[0],
        0.5 * spec.domain.size[1],
        0.5 * spec.domain.size[2],
    ];
    let theta_rho = make(1, [0.0, 0.0, 0.0]);
    let theta_m = make(2, [0.0, 0.0, half[2]]);
    let theta_a = make(3, [0.0, half[1], 0.0]);

    Ok(FieldTriple {
        spec: *spec,
        mode,
        theta_rho,
        theta_m,
        theta_a,
        setup_orientation: Vector3::new(0.0, 0.0, 1.0),
        seed,
    })
}

impl FieldTriple {
    pub fn mlp(&self) -> Mlp {
        Mlp::new(self.spec.mlp_shape())
    }

    pub fn params(&self, id: FieldId) -> &[f64] {
        match id {
            FieldId::Density => &self.theta_rho,
            FieldId::Deposition => &self.theta_m,
            FieldId::Auxiliary => &self.theta_a,
        }
    }

    pub fn params_mut(&mut self, id: FieldId) -> &mut Vec<f64> {
        match id {
            FieldId::Density => &mut self.theta_rho,
            FieldId::Deposition => &mut self.theta_m,
            FieldId::Auxiliary => &mut self.theta_a,
        }
    }

    pub fn unit_setup_orientation(&self) -> Vector3<f64> {
        let n = self.setup_orientation.norm();
        assert!(n > 0.0, "setup orientation must be nonzero");
        self.setup_orientation / n
    }

    /// In 2.5-axis mode the deposition field is the plane stack
    /// `m(x) = n_hat . (x - domain center)`.
    pub fn planar_m(&self, p: &Vector3<f64>) -> f64 {
        let c = self.spec.domain.center();
        let nh = self.unit_setup_orientation();
        nh.x * (p.x - c[0]) + nh.y * (p.y - c[1]) + nh.z * (p.z - c[2])
    }

    /// Evaluate all fields at `points`. Pure function of `(self, points)`.
    pub fn evaluate(&self, points: &[Vector3<f64>], level: EvalLevel) -> Vec<FieldSample> {
        let mlp = self.mlp();
        let scale = self.spec.domain.norm_scale();
        let k = self.spec.projection_sharpness;
        let norm_pts: Vec<[f64; 3]> = points.iter().map(|p| self.spec.domain.normalize(p)).collect();

        let mut ws = MlpScratch::default();
        let mut rho_out = EvalBatch::default();
        mlp.eval(&self.theta_rho, &norm_pts, DerivLevel::Value, &mut rho_out, &mut ws);

        let deriv = match level {
            EvalLevel::Frames => DerivLevel::Grad,
            EvalLevel::Full => DerivLevel::Hess,
        };
        let bypass_m = self.mode == MotionMode::TwoPointFiveAxis;
        let mut m_out = EvalBatch::default();
        if !bypass_m {
            mlp.eval(&self.theta_m, &norm_pts, deriv, &mut m_out, &mut ws);
        }
        let mut a_out = EvalBatch::default();
        mlp.eval(&self.theta_a, &norm_pts, deriv, &mut a_out, &mut ws);

        let to_phys_grad = |g: &[f64; 3]| Vector3::new(g[0] * scale[0], g[1] * scale[1], g[2] * scale[2]);
        let to_phys_hess = |h: &[f64; 6]| {
            let m = crate::mlp::unpack_hess(h);
            let mut out = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    out[(i, j)] = m[(i, j)] * scale[i] * scale[j];
                }
            }
            out
        };

        let mut samples = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let rho_raw = rho_out.value[i];
            let (m, grad_m, hess_m) = if bypass_m {
                (self.planar_m(p), self.unit_setup_orientation(), Matrix3::zeros())
            } else {
                let g = to_phys_grad(&m_out.grad[i]);
                let h = match level {
                    EvalLevel::Full => to_phys_hess(&m_out.hess[i]),
                    EvalLevel::Frames => Matrix3::zeros(),
                };
                (m_out.value[i], g, h)
            };
            let grad_a = to_phys_grad(&a_out.grad[i]);
            let hess_a = match level {
                EvalLevel::Full => to_phys_hess(&a_out.hess[i]),
                EvalLevel::Frames => Matrix3::zeros(),
            };
            let fiber = grad_a.cross(&grad_m);
            samples.push(FieldSample {
                position: *p,
                rho_raw,
                rho: heaviside_project(rho_raw, k),
                m,
                a: a_out.value[i],
                grad_m,
                grad_a,
                hess_m,
                hess_a,
                fiber,
                in_domain: self.spec.domain.contains(p),
            });
        }
        samples
    }

    /// Evaluate only the projected density at `points`.
    pub fn evaluate_density(&self, points: &[Vector3<f64>]) -> Vec<f64> {
        let mlp = self.mlp();
        let norm_pts: Vec<[f64; 3]> = points.iter().map(|p| self.spec.domain.normalize(p)).collect();
        let mut ws = MlpScratch::default();
        let mut out = EvalBatch::default();
        mlp.eval(&self.theta_rho, &norm_pts, DerivLevel::Value, &mut out, &mut ws);
        out.value
            .iter()
            .map(|&r| heaviside_project(r, self.spec.projection_sharpness))
            .collect()
    }

    /// Evaluate only the deposition field value at `points`.
    pub fn evaluate_m(&self, points: &[Vector3<f64>]) -> Vec<f64> {
        if self.mode == MotionMode::TwoPointFiveAxis {
            return points.iter().map(|p| self.planar_m(p)).collect();
        }
        let mlp = self.mlp();
        let norm_pts: Vec<[f64; 3]> = points.iter().map(|p| self.spec.domain.normalize(p)).collect();
        let mut ws = MlpScratch::default();
        let mut out = EvalBatch::default();
        mlp.eval(&self.theta_m, &norm_pts, DerivLevel::Value, &mut out, &mut ws);
        out.value
    }

    /// Reverse-mode accumulation for one network: adds the parameter gradient
    /// of `sum_p <cot_p, (v, grad, hess)(point_p)>` (cotangents in physical
    /// units) into `grad`. In 2.5-axis mode deposition cotangents must be
    /// rerouted to the setup orientation by the caller instead.
    pub fn backward(
        &self,
        id: FieldId,
        points: &[Vector3<f64>],
        cots_physical: &[PhysicalCotangent],
        grad: &mut [f64],
    ) {
        assert!(
            !(self.mode == MotionMode::TwoPointFiveAxis && id == FieldId::Deposition),
            "deposition network is bypassed in 2.5-axis mode"
        );
        let scale = self.spec.domain.norm_scale();
        let mut any_hess = false;
        let norm_pts: Vec<[f64; 3]> = points.iter().map(|p| self.spec.domain.normalize(p)).collect();
        let cots: Vec<Cotangent> = cots_physical
            .iter()
            .map(|c| {
                let mut h = Matrix3::zeros();
                if let Some(hp) = &c.hess {
                    any_hess = true;
                    for i in 0..3 {
                        for j in 0..3 {
                            h[(i, j)] = hp[(i, j)] * scale[i] * scale[j];
                        }
                    }
                }
                Cotangent {
                    value: c.value,
                    grad: [
                        c.grad.x * scale[0],
                        c.grad.y * scale[1],
                        c.grad.z * scale[2],
                    ],
                    hess: pack_hess_cotangent(&h),
                }
            })
            .collect();
        let level = if any_hess { DerivLevel::Hess } else { DerivLevel::Grad };
        let mut ws = MlpScratch::default();
        self.mlp()
            .backward(self.params(id), &norm_pts, &cots, level, grad, &mut ws);
    }
}

/// Cotangent of one point's field quantities in physical units. The Hessian
/// cotangent is a full 3x3 matrix (both symmetric slots).
#[derive(Debug, Clone, Default)]
pub struct PhysicalCotangent {
    pub value: f64,
    pub grad: Vector3<f64>,
    pub hess: Option<Matrix3<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_spec() -> NetworkSpec {
        NetworkSpec {
            hidden_layer_count: 2,
            hidden_width: 16,
            activation: Activation::SigmoidWeightedLinear,
            domain: DomainBox::new([0.0, 0.0, 0.0], [120.0, 40.0, 40.0]),
            projection_sharpness: 5.0,
        }
    }

    fn perturbed_triple(seed: u64) -> FieldTriple {
        let mut t = init_networks(&test_spec(), MotionMode::FiveAxis, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for p in t
            .theta_rho
            .iter_mut()
            .chain(t.theta_m.iter_mut())
            .chain(t.theta_a.iter_mut())
        {
            *p += rng.gen_range(-0.5..0.5);
        }
        t
    }

    fn random_points(spec: &NetworkSpec, n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(spec.domain.min[0]..spec.domain.max()[0]),
                    rng.gen_range(spec.domain.min[1]..spec.domain.max()[1]),
                    rng.gen_range(spec.domain.min[2]..spec.domain.max()[2]),
                )
            })
            .collect()
    }

    #[test]
    fn heaviside_projection_properties() {
        assert_eq!(heaviside_project(0.0, 5.0), 0.5);
        assert!(heaviside_project(100.0, 5.0) > 1.0 - 1e-12);
        assert!(heaviside_project(-100.0, 5.0) < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let t: f64 = rng.gen_range(-3.0..3.0);
            let sum = heaviside_project(t, 5.0) + heaviside_project(-t, 5.0);
            assert_relative_eq!(sum, 1.0, epsilon = 1e-14);
            // monotone
            assert!(heaviside_project(t + 1e-3, 5.0) > heaviside_project(t, 5.0));
        }
    }

    #[test]
    fn init_gives_half_density_and_axis_gradients() {
        let spec = test_spec();
        let t = init_networks(&spec, MotionMode::FiveAxis, 0).unwrap();
        let pts = random_points(&spec, 100, 42);
        let samples = t.evaluate(&pts, EvalLevel::Frames);
        for s in &samples {
            assert!((s.rho - 0.5).abs() < 0.05);
            assert_relative_eq!(s.grad_m.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(s.grad_m.z, 1.0, epsilon = 1e-12);
            assert_relative_eq!(s.grad_a.y, 1.0, epsilon = 1e-12);
        }
        // fiber = grad a x grad m = y x z = +x at the domain center
        let c = spec.domain.center();
        let s = &t.evaluate(&[Vector3::new(c[0], c[1], c[2])], EvalLevel::Frames)[0];
        assert_relative_eq!(s.fiber.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.fiber.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.fiber.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = test_spec();
        let a = init_networks(&spec, MotionMode::FiveAxis, 17).unwrap();
        let b = init_networks(&spec, MotionMode::FiveAxis, 17).unwrap();
        assert_eq!(a.theta_rho, b.theta_rho);
        assert_eq!(a.theta_m, b.theta_m);
        assert_eq!(a.theta_a, b.theta_a);
        let c = init_networks(&spec, MotionMode::FiveAxis, 18).unwrap();
        assert_ne!(a.theta_rho, c.theta_rho);
    }

    #[test]
    fn rejects_zero_size_layers() {
        let mut spec = test_spec();
        spec.hidden_width = 0;
        assert!(init_networks(&spec, MotionMode::FiveAxis, 0).is_err());
        let mut spec = test_spec();
        spec.hidden_layer_count = 0;
        assert!(init_networks(&spec, MotionMode::FiveAxis, 0).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences_in_mm() {
        let t = perturbed_triple(4);
        let pts = random_points(&t.spec, 20, 5);
        let samples = t.evaluate(&pts, EvalLevel::Full);
        let step = 1e-4 * t.spec.domain.size[0].max(t.spec.domain.size[1]);
        for (p, s) in pts.iter().zip(&samples) {
            for axis in 0..3 {
                let mut dp = Vector3::zeros();
                dp[axis] = step;
                let sp = t.evaluate(&[p + dp], EvalLevel::Frames);
                let sm = t.evaluate(&[p - dp], EvalLevel::Frames);
                let fd_m = (sp[0].m - sm[0].m) / (2.0 * step);
                let fd_a = (sp[0].a - sm[0].a) / (2.0 * step);
                let denom = 1.0 + s.grad_m[axis].abs().max(s.grad_a[axis].abs());
                assert!(
                    (s.grad_m[axis] - fd_m).abs() / denom < 1e-5,
                    "grad_m[{axis}]: {} vs {}",
                    s.grad_m[axis],
                    fd_m
                );
                assert!((s.grad_a[axis] - fd_a).abs() / denom < 1e-5);
            }
        }
    }

    #[test]
    fn analytic_hessian_matches_finite_differences_of_gradient() {
        let t = perturbed_triple(9);
        let pts = random_points(&t.spec, 10, 6);
        let samples = t.evaluate(&pts, EvalLevel::Full);
        let step = 1e-4 * t.spec.domain.size[0];
        for (p, s) in pts.iter().zip(&samples) {
            for axis in 0..3 {
                let mut dp = Vector3::zeros();
                dp[axis] = step;
                let sp = t.evaluate(&[p + dp], EvalLevel::Frames);
                let sm = t.evaluate(&[p - dp], EvalLevel::Frames);
                let fd_col = (sp[0].grad_m - sm[0].grad_m) / (2.0 * step);
                for i in 0..3 {
                    let an = s.hess_m[(i, axis)];
                    assert!(
                        (an - fd_col[i]).abs() / (1.0 + fd_col[i].abs()) < 1e-4,
                        "hess_m[{i}{axis}]: {an} vs {}",
                        fd_col[i]
                    );
                }
            }
        }
    }

    #[test]
    fn fiber_is_orthogonal_to_both_gradients() {
        let t = perturbed_triple(1);
        let pts = random_points(&t.spec, 50, 2);
        for s in t.evaluate(&pts, EvalLevel::Frames) {
            assert!((s.fiber.dot(&s.grad_m)).abs() < 1e-12 * (1.0 + s.fiber.norm() * s.grad_m.norm()));
            assert!((s.fiber.dot(&s.grad_a)).abs() < 1e-12 * (1.0 + s.fiber.norm() * s.grad_a.norm()));
        }
    }

    #[test]
    fn planar_mode_bypasses_deposition_network() {
        let spec = test_spec();
        let mut t = init_networks(&spec, MotionMode::TwoPointFiveAxis, 3).unwrap();
        t.setup_orientation = Vector3::new(0.3, -0.2, 1.4);
        let pts = random_points(&spec, 25, 11);
        let nh = t.unit_setup_orientation();
        for s in t.evaluate(&pts, EvalLevel::Full) {
            assert_relative_eq!((s.grad_m - nh).norm(), 0.0, epsilon = 1e-15);
            assert_eq!(s.hess_m, Matrix3::zeros());
            // fiber stays perpendicular to the setup orientation
            assert!(s.fiber.dot(&nh).abs() < 1e-12 * (1.0 + s.fiber.norm()));
        }
    }

    #[test]
    fn out_of_domain_points_are_flagged_but_evaluated() {
        let t = perturbed_triple(14);
        let outside = Vector3::new(-50.0, -50.0, -50.0);
        let s = &t.evaluate(&[outside], EvalLevel::Frames)[0];
        assert!(!s.in_domain);
        assert!(s.m.is_finite() && s.rho.is_finite());
    }

    #[test]
    fn field_backward_matches_finite_differences() {
        let t = perturbed_triple(30);
        let pts = random_points(&t.spec, 6, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let cots: Vec<PhysicalCotangent> = (0..pts.len())
            .map(|_| PhysicalCotangent {
                value: rng.gen_range(-1.0..1.0),
                grad: Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                hess: Some(Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0))),
            })
            .collect();
        let functional = |tr: &FieldTriple| -> f64 {
            let ss = tr.evaluate(&pts, EvalLevel::Full);
            ss.iter()
                .zip(&cots)
                .map(|(s, c)| {
                    c.value * s.m
                        + c.grad.dot(&s.grad_m)
                        + (c.hess.unwrap().transpose() * s.hess_m).trace()
                })
                .sum()
        };
        let mut grad = vec![0.0; t.theta_m.len()];
        t.backward(FieldId::Deposition, &pts, &cots, &mut grad);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let h = 1e-6;
        for _ in 0..30 {
            let i = rng.gen_range(0..t.theta_m.len());
            let mut tp = t.clone();
            tp.theta_m[i] += h;
            let fp = functional(&tp);
            tp.theta_m[i] -= 2.0 * h;
            let fm = functional(&tp);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 1e-4 * (1.0 + fd.abs()),
                "theta_m[{i}]: {} vs {fd}",
                grad[i]
            );
        }
    }
}
