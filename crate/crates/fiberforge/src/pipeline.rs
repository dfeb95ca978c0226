//! One differentiable iteration: field evaluation, anisotropic FEA, loss
//! assembly, and the adjoint/reverse gradient of the weighted total with
//! respect to every network coefficient and the setup orientation.
//!
//! The gradient path never materializes `K^-1`: one extra backsolve against
//! the retained factorization (or a warm-started CG solve) yields the adjoint
//! vector, and per-element constitutive cotangents chain back through the
//! Bond rotation and SIMP interpolation into the field networks.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::curvature::{
    path_curvature, path_curvature_pullback, surface_curvatures, surface_principal_pullback,
    SurfaceCurvature, GRAD_FLOOR,
};
use crate::fea::{
    assemble_and_solve, assemble_and_solve_cached, compliance, gather_element,
    BoundaryConditions, CsrPattern, FactorCache, Hex8Basis, LinearSystem, SolverConfig,
    VoxelGrid,
};
use crate::field::{
    heaviside_project_d, EvalLevel, FieldId, FieldSample, FieldTriple,
    MotionMode, PhysicalCotangent,
};
use crate::loss::{
    self, CollisionMetric, LossBreakdown, LossWeights, ManufacturingLimits, ObjectiveKind,
    OrientationPenalty, PSI_FLOOR,
};
use crate::material::{
    hoffman_index, material_frame, modulus_interpolation, modulus_interpolation_d,
    safety_factor_with_grad, bond_stress_matrix_pullback, voigt_rotation, HoffmanCoeffs,
    MaterialFrame, MaterialSpec,
};
use crate::Result;

/// Frozen density override inside an axis-aligned region (bolt holes,
/// mounting pads).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PassiveRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub kind: PassiveKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassiveKind {
    Void,
    Solid,
}

impl PassiveRegion {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

fn passive_override(passive: &[PassiveRegion], p: &Vector3<f64>) -> Option<f64> {
    for r in passive {
        if r.contains(p) {
            return Some(match r.kind {
                PassiveKind::Void => 0.0,
                PassiveKind::Solid => 1.0,
            });
        }
    }
    None
}

/// Everything fixed for the duration of one optimization run.
pub struct Problem {
    pub grid: VoxelGrid,
    pub basis: Hex8Basis,
    pub bc: BoundaryConditions,
    pub material: MaterialSpec,
    pub c_material: Matrix6<f64>,
    pub hoffman: HoffmanCoeffs,
    pub limits: ManufacturingLimits,
    pub mode: MotionMode,
    pub objective: ObjectiveKind,
    /// Absolute volume budget (mm^3); ignored by the lightweight objective.
    pub v_star: f64,
    /// Fixed low-discrepancy sample set over the design domain.
    pub samples: Vec<Vector3<f64>>,
    pub simp_exponent: f64,
    /// Stress-recovery interpolation exponent, strictly below the stiffness
    /// exponent so intermediate densities cannot masquerade as strong
    /// material while voids still drop out of the safety factors.
    pub stress_exponent: f64,
    pub p_bar: f64,
    pub gamma_cap: f64,
    pub solver: SolverConfig,
    pub collision_metric: CollisionMetric,
    pub orientation_penalty: OrientationPenalty,
    pub passive: Vec<PassiveRegion>,
    pub csr_pattern: Option<CsrPattern>,
}

impl Problem {
    /// Halton low-discrepancy sample set, `multiplier` points per element.
    pub fn halton_samples(grid: &VoxelGrid, multiplier: usize) -> Vec<Vector3<f64>> {
        let n = grid.element_count() * multiplier;
        let radical = |mut i: usize, base: usize| -> f64 {
            let mut f = 1.0;
            let mut r = 0.0;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        };
        let ext = [
            grid.dims[0] as f64 * grid.h,
            grid.dims[1] as f64 * grid.h,
            grid.dims[2] as f64 * grid.h,
        ];
        (1..=n)
            .map(|i| {
                Vector3::new(
                    grid.origin[0] + radical(i, 2) * ext[0],
                    grid.origin[1] + radical(i, 3) * ext[1],
                    grid.origin[2] + radical(i, 5) * ext[2],
                )
            })
            .collect()
    }
}

/// Persistent per-run scratch: warm starts and the factorization cache.
#[derive(Default)]
pub struct PipelineState {
    pub warm_u: Option<Vec<f64>>,
    pub warm_lambda: Option<Vec<f64>>,
    pub factor_cache: FactorCache,
}

/// Per-sample derived quantities kept for the backward pass.
pub struct SampleData {
    pub fields: Vec<FieldSample>,
    pub rho_eff: Vec<f64>,
    pub rho_frozen: Vec<bool>,
    pub k_max: Vec<Option<f64>>,
    pub k_f: Vec<Option<f64>>,
    pub cos_setup: Vec<Option<f64>>,
    pub grad_m_norm: Vec<f64>,
}

/// Complete forward record of one iteration.
pub struct Forward {
    pub centers: Vec<Vector3<f64>>,
    pub center_fields: Vec<FieldSample>,
    pub rho_eff_e: Vec<f64>,
    pub rho_frozen_e: Vec<bool>,
    pub scale_e: Vec<f64>,
    pub stress_scale_e: Vec<f64>,
    pub frames: Vec<MaterialFrame>,
    pub frame_degenerate: Vec<bool>,
    pub bond: Vec<Matrix6<f64>>,
    pub c_design: Vec<Matrix6<f64>>,
    pub u: Vec<f64>,
    pub system: LinearSystem,
    pub strain_e: Vec<Vector6<f64>>,
    /// Material-frame stresses (MPa).
    pub sigma_e: Vec<Vector6<f64>>,
    pub gamma_e: Vec<f64>,
    pub gamma_grad_e: Vec<Vector6<f64>>,
    pub hoffman_e: Vec<f64>,
    pub compliance: f64,
    pub samples: Option<SampleData>,
    pub breakdown: LossBreakdown,
    /// Count of sample evaluations of the motion loss (mode instrumentation).
    pub motion_loss_evaluated: bool,
}

impl Forward {
    /// Minimum safety factor over solid elements (projected density >= 0.5).
    pub fn min_solid_gamma(&self) -> f64 {
        let mut g = f64::INFINITY;
        for (e, &rho) in self.rho_eff_e.iter().enumerate() {
            if rho >= 0.5 {
                g = g.min(self.gamma_e[e]);
            }
        }
        if g.is_finite() {
            g
        } else {
            // nothing solid yet: fall back to the global minimum
            self.gamma_e.iter().cloned().fold(f64::INFINITY, f64::min)
        }
    }

    pub fn solid_volume(&self, v_e: f64) -> f64 {
        self.rho_eff_e.iter().sum::<f64>() * v_e
    }
}

/// Gradient of the weighted total with respect to all trainables.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub rho: Vec<f64>,
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    pub n: Vector3<f64>,
}

impl Gradients {
    fn zeros(triple: &FieldTriple) -> Self {
        Self {
            rho: vec![0.0; triple.theta_rho.len()],
            m: vec![0.0; triple.theta_m.len()],
            a: vec![0.0; triple.theta_a.len()],
            n: Vector3::zeros(),
        }
    }

    pub fn norm(&self) -> f64 {
        let s: f64 = self.rho.iter().map(|v| v * v).sum::<f64>()
            + self.m.iter().map(|v| v * v).sum::<f64>()
            + self.a.iter().map(|v| v * v).sum::<f64>()
            + self.n.norm_squared();
        s.sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.rho.iter().chain(&self.m).chain(&self.a).all(|v| v.is_finite())
            && self.n.iter().all(|v| v.is_finite())
    }
}

/// Run the forward pass: fields at element centers and loss samples, the
/// equilibrium solve, stress recovery, and every loss the mode evaluates.
pub fn forward(problem: &Problem, triple: &FieldTriple, state: &mut PipelineState) -> Result<Forward> {
    let timing = std::env::var("FF_TIMING").is_ok();
    let t0 = std::time::Instant::now();
    let ne = problem.grid.element_count();
    let centers = problem.grid.element_centers();
    let center_fields = triple.evaluate(&centers, EvalLevel::Frames);
    if timing { eprintln!("  centers eval: {:.0} ms", t0.elapsed().as_secs_f64()*1e3); }

    let mut rho_eff_e = Vec::with_capacity(ne);
    let mut rho_frozen_e = Vec::with_capacity(ne);
    let mut scale_e = Vec::with_capacity(ne);
    let mut stress_scale_e = Vec::with_capacity(ne);
    let mut frames = Vec::with_capacity(ne);
    let mut frame_degenerate = Vec::with_capacity(ne);
    let mut bond = Vec::with_capacity(ne);
    let mut c_design = Vec::with_capacity(ne);
    for (e, s) in center_fields.iter().enumerate() {
        let (rho, frozen) = match passive_override(&problem.passive, &centers[e]) {
            Some(r) => (r, true),
            None => (s.rho, false),
        };
        rho_eff_e.push(rho);
        rho_frozen_e.push(frozen);
        let scale = modulus_interpolation(rho, problem.simp_exponent, &problem.material);
        scale_e.push(scale);
        stress_scale_e.push(modulus_interpolation(rho, problem.stress_exponent, &problem.material));
        let (frame, degen) = material_frame(&s.fiber, &s.grad_a, &s.grad_m);
        let t = voigt_rotation(&frame);
        c_design.push(t * (problem.c_material * scale) * t.transpose());
        frames.push(frame);
        frame_degenerate.push(degen);
        bond.push(t);
    }

    let t1 = std::time::Instant::now();
    let (u, system) = assemble_and_solve_cached(
        &problem.grid,
        &problem.basis,
        &c_design,
        &problem.bc,
        &problem.solver,
        problem.csr_pattern.as_ref(),
        state.warm_u.as_deref(),
        &mut state.factor_cache,
    )?;
    state.warm_u = Some(u.clone());
    if timing { eprintln!("  assemble+solve: {:.0} ms ({} cg iters)", t1.elapsed().as_secs_f64()*1e3, system.iterations); }

    let mut strain_e = Vec::with_capacity(ne);
    let mut sigma_e = Vec::with_capacity(ne);
    let mut gamma_e = Vec::with_capacity(ne);
    let mut gamma_grad_e = Vec::with_capacity(ne);
    let mut hoffman_e = Vec::with_capacity(ne);
    for e in 0..ne {
        let dofs = problem.grid.element_dofs(e);
        let ue = gather_element(&u, &dofs);
        let eps_design = problem.basis.center_strain(&ue);
        let eps_mat = bond[e].transpose() * eps_design;
        let sigma_mpa = problem.c_material * eps_mat * (stress_scale_e[e] * 1000.0);
        let (gamma, dgamma) = safety_factor_with_grad(&sigma_mpa, &problem.hoffman, problem.gamma_cap);
        hoffman_e.push(hoffman_index(&sigma_mpa, &problem.hoffman));
        strain_e.push(eps_design);
        sigma_e.push(sigma_mpa);
        gamma_e.push(gamma);
        gamma_grad_e.push(dgamma);
    }
    let comp = compliance(&u, &problem.bc.force);

    // Loss-sample evaluation, mode-gated.
    let needs_samples = problem.mode != MotionMode::TwoPointFiveAxis;
    let mut motion_loss_evaluated = false;
    let t2 = std::time::Instant::now();
    let samples = if needs_samples {
        let level = EvalLevel::Full;
        let fields = triple.evaluate(&problem.samples, level);
        let n = fields.len();
        let mut rho_eff = Vec::with_capacity(n);
        let mut rho_frozen = Vec::with_capacity(n);
        let mut k_max = Vec::with_capacity(n);
        let mut k_f = Vec::with_capacity(n);
        let mut cos_setup = Vec::with_capacity(n);
        let mut grad_m_norm = Vec::with_capacity(n);
        let n_hat = triple.unit_setup_orientation();
        for (p, s) in fields.iter().enumerate() {
            let (rho, frozen) = match passive_override(&problem.passive, &problem.samples[p]) {
                Some(r) => (r, true),
                None => (s.rho, false),
            };
            rho_eff.push(rho);
            rho_frozen.push(frozen);
            let gm = s.grad_m.norm();
            grad_m_norm.push(gm);
            k_max.push(surface_curvatures(&s.grad_m, &s.hess_m).map(|k| match problem.collision_metric {
                CollisionMetric::SignedMax => k.max_principal,
                CollisionMetric::AbsMax => k.abs_max(),
            }));
            if problem.mode == MotionMode::FiveAxis {
                motion_loss_evaluated = true;
                k_f.push(path_curvature(&s.grad_m, &s.grad_a, &s.hess_m, &s.hess_a));
            } else {
                k_f.push(None);
            }
            cos_setup.push(if problem.mode == MotionMode::ThreeAxis && gm >= GRAD_FLOOR {
                Some(s.grad_m.dot(&n_hat) / gm)
            } else {
                None
            });
        }
        Some(SampleData {
            fields,
            rho_eff,
            rho_frozen,
            k_max,
            k_f,
            cos_setup,
            grad_m_norm,
        })
    } else {
        None
    };

    // Losses.
    let v_e = problem.grid.element_volume();
    let l_obj = match problem.objective {
        ObjectiveKind::Strength => loss::loss_strength(&gamma_e, problem.p_bar)?,
        ObjectiveKind::Stiffness => comp,
        ObjectiveKind::Lightweight => loss::loss_volume_objective(&rho_eff_e, v_e),
    };
    let l_vol = loss::loss_volume(&rho_eff_e, v_e, problem.v_star);
    let l_yd = if problem.objective == ObjectiveKind::Lightweight {
        Some(loss::loss_yield(&hoffman_e))
    } else {
        None
    };
    let mut degenerate_count = 0usize;
    let (psi, l_lc, l_mo, l_ort, l_lt) = if let Some(sd) = &samples {
        for (s, gm) in sd.fields.iter().zip(&sd.grad_m_norm) {
            if *gm < GRAD_FLOOR || s.fiber.norm() < GRAD_FLOOR {
                degenerate_count += 1;
            }
        }
        let psi = loss::psi(&sd.rho_eff);
        let l_lc = Some(loss::loss_local_collision(&sd.rho_eff, &sd.k_max, problem.limits.k_lc));
        let l_mo = if problem.mode == MotionMode::FiveAxis {
            Some(loss::loss_motion(&sd.rho_eff, &sd.k_f, problem.limits.k_f_max))
        } else {
            None
        };
        let l_ort = if problem.mode == MotionMode::ThreeAxis {
            Some(loss::loss_orientation(
                &sd.rho_eff,
                &sd.cos_setup,
                problem.limits.beta,
                problem.orientation_penalty,
            ))
        } else {
            None
        };
        let l_lt = Some(loss::loss_thickness(
            &sd.rho_eff,
            &sd.grad_m_norm,
            problem.limits.t_min,
            problem.limits.t_max,
        ));
        (psi, l_lc, l_mo, l_ort, l_lt)
    } else {
        (0.0, None, None, None, None)
    };

    if timing { eprintln!("  samples+losses: {:.0} ms", t2.elapsed().as_secs_f64()*1e3); }
    let breakdown = LossBreakdown {
        l_obj,
        l_vol,
        l_lc,
        l_mo,
        l_ort,
        l_lt,
        l_yd,
        psi,
        degenerate_count,
        weighted_total: 0.0,
    };

    Ok(Forward {
        centers,
        center_fields,
        rho_eff_e,
        rho_frozen_e,
        scale_e,
        stress_scale_e,
        frames,
        frame_degenerate,
        bond,
        c_design,
        u,
        system,
        strain_e,
        sigma_e,
        gamma_e,
        gamma_grad_e,
        hoffman_e,
        compliance: comp,
        samples,
        breakdown,
        motion_loss_evaluated,
    })
}

/// Normalization pullback: cotangent of `v_hat = v/|v|` to cotangent of `v`.
fn normalize_pullback(v: &Vector3<f64>, vbar_hat: &Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    let vh = v / n;
    (vbar_hat - vh * vh.dot(vbar_hat)) / n
}

/// Reverse pass of `total_loss(forward)` with the supplied (applied) weights.
pub fn backward(
    problem: &Problem,
    triple: &FieldTriple,
    fwd: &mut Forward,
    weights: &LossWeights,
    state: &mut PipelineState,
) -> Result<Gradients> {
    let timing = std::env::var("FF_TIMING").is_ok();
    let tb = std::time::Instant::now();
    let ne = problem.grid.element_count();
    let v_e = problem.grid.element_volume();
    let mut grads = Gradients::zeros(triple);

    // Per-element field cotangents.
    let mut gm_bar_e = vec![Vector3::zeros(); ne];
    let mut ga_bar_e = vec![Vector3::zeros(); ne];
    let mut rho_raw_bar_e = vec![0.0; ne];
    let mut scale_bar_e = vec![0.0; ne];
    let mut stress_scale_bar_e = vec![0.0; ne];

    // ---- objective and FEA-coupled losses ----
    let mut sigma_bar_e = vec![Vector6::zeros(); ne];
    let mut adj_rhs = vec![0.0; problem.grid.dof_count()];
    let mut need_adjoint = false;

    match problem.objective {
        ObjectiveKind::Strength => {
            if weights.obj != 0.0 {
                let dl_dgamma = loss::loss_strength_grad(&fwd.gamma_e, problem.p_bar);
                for e in 0..ne {
                    sigma_bar_e[e] += fwd.gamma_grad_e[e] * (weights.obj * dl_dgamma[e]);
                }
                need_adjoint = true;
            }
        }
        ObjectiveKind::Stiffness => {
            if weights.obj != 0.0 {
                for (r, &f) in adj_rhs.iter_mut().zip(&problem.bc.force) {
                    *r += weights.obj * f;
                }
                need_adjoint = true;
            }
        }
        ObjectiveKind::Lightweight => {
            if weights.obj != 0.0 {
                for e in 0..ne {
                    if !fwd.rho_frozen_e[e] {
                        rho_raw_bar_e[e] += weights.obj
                            * v_e
                            * heaviside_project_d(
                                fwd.center_fields[e].rho_raw,
                                triple.spec.projection_sharpness,
                            );
                    }
                }
            }
            if weights.yd != 0.0 {
                for e in 0..ne {
                    if fwd.hoffman_e[e] > 1.0 {
                        // d Gamma / d sigma = 2 Q sigma + q
                        let dgam = problem.hoffman.quadratic * fwd.sigma_e[e] * 2.0
                            + problem.hoffman.linear;
                        sigma_bar_e[e] += dgam * weights.yd;
                    }
                }
                need_adjoint = true;
            }
        }
    }

    // Volume-budget loss.
    if weights.vol != 0.0 && problem.objective != ObjectiveKind::Lightweight {
        let vol: f64 = fwd.rho_eff_e.iter().sum::<f64>() * v_e;
        if vol / problem.v_star - 1.0 > 0.0 {
            let coef = weights.vol * v_e / problem.v_star;
            for e in 0..ne {
                if !fwd.rho_frozen_e[e] {
                    rho_raw_bar_e[e] += coef
                        * heaviside_project_d(
                            fwd.center_fields[e].rho_raw,
                            triple.spec.projection_sharpness,
                        );
                }
            }
        }
    }

    // Stress-recovery chain: explicit terms plus the adjoint right-hand side.
    let mut bond_bar_e = vec![Matrix6::zeros(); ne];
    if need_adjoint {
        for e in 0..ne {
            let sbar = sigma_bar_e[e];
            if sbar == Vector6::zeros() {
                continue;
            }
            // sigma = 1000 * s_sigma * C * M^T * eps_design
            let c_sbar = problem.c_material * sbar;
            let coeff = 1000.0 * fwd.stress_scale_e[e];
            // d/d eps_design
            let eps_bar = fwd.bond[e] * c_sbar * coeff;
            let dofs = problem.grid.element_dofs(e);
            let b0 = &problem.basis.b_center;
            for (a, &dof) in dofs.iter().enumerate() {
                let mut acc = 0.0;
                for r in 0..6 {
                    acc += b0[(r, a)] * eps_bar[r];
                }
                adj_rhs[dof] += acc;
            }
            // d/d stress scale
            stress_scale_bar_e[e] += sbar.dot(&fwd.sigma_e[e]) / fwd.stress_scale_e[e];
            // d/d M: sigma depends on M through eps_mat = M^T eps_design
            let eps_design = fwd.strain_e[e];
            bond_bar_e[e] += eps_design * (c_sbar * coeff).transpose();
        }

        // Adjoint solve against the retained system.
        let ta = std::time::Instant::now();
        let lambda = fwd.system.solve(&adj_rhs, state.warm_lambda.as_deref())?;
        state.warm_lambda = Some(lambda.clone());
        if timing { eprintln!("  adjoint solve: {:.0} ms", ta.elapsed().as_secs_f64()*1e3); }

        // Constitutive cotangents from the stiffness dependence.
        for e in 0..ne {
            let dofs = problem.grid.element_dofs(e);
            let ue = gather_element(&fwd.u, &dofs);
            let le = gather_element(&lambda, &dofs);
            let cbar = problem.basis.stiffness_pullback(&le, &ue);
            // dL/dtheta -= lambda^T (dK/dtheta) U
            let x = -cbar;
            // C_design = M (s C) M^T
            scale_bar_e[e] += (x.component_mul(&fwd.c_design[e])).sum() / fwd.scale_e[e];
            let sc = problem.c_material * fwd.scale_e[e];
            bond_bar_e[e] += (x + x.transpose()) * fwd.bond[e] * sc;
        }
    }

    // Bond-matrix cotangents back to frame vectors.
    for e in 0..ne {
        if fwd.frame_degenerate[e] {
            continue; // identity frame is constant
        }
        if bond_bar_e[e] == Matrix6::zeros() {
            continue;
        }
        let rbar = bond_stress_matrix_pullback(&fwd.frames[e].rotation, &bond_bar_e[e]);
        let s = &fwd.center_fields[e];
        let gm = s.grad_m;
        let f = s.fiber;
        let n_hat = gm / gm.norm();
        let f_hat = f / f.norm();
        let fhat_col = Vector3::new(rbar[(0, 0)], rbar[(1, 0)], rbar[(2, 0)]);
        let that_col = Vector3::new(rbar[(0, 1)], rbar[(1, 1)], rbar[(2, 1)]);
        let nhat_col = Vector3::new(rbar[(0, 2)], rbar[(1, 2)], rbar[(2, 2)]);
        // t_hat = n_hat x f_hat
        let nhat_bar = nhat_col + f_hat.cross(&that_col);
        let fhat_bar = fhat_col + that_col.cross(&n_hat);
        let f_bar = normalize_pullback(&f, &fhat_bar);
        let mut gm_bar = normalize_pullback(&gm, &nhat_bar);
        // f = grad_a x grad_m
        let ga_bar = gm.cross(&f_bar);
        gm_bar += f_bar.cross(&s.grad_a);
        gm_bar_e[e] += gm_bar;
        ga_bar_e[e] += ga_bar;
    }

    // Interpolation chains back to the raw density.
    for e in 0..ne {
        if fwd.rho_frozen_e[e] {
            continue;
        }
        let mut d_rho = 0.0;
        if scale_bar_e[e] != 0.0 {
            d_rho += scale_bar_e[e]
                * modulus_interpolation_d(fwd.rho_eff_e[e], problem.simp_exponent, &problem.material);
        }
        if stress_scale_bar_e[e] != 0.0 {
            d_rho += stress_scale_bar_e[e]
                * modulus_interpolation_d(fwd.rho_eff_e[e], problem.stress_exponent, &problem.material);
        }
        if d_rho != 0.0 {
            rho_raw_bar_e[e] += d_rho
                * heaviside_project_d(fwd.center_fields[e].rho_raw, triple.spec.projection_sharpness);
        }
    }

    // ---- sample losses ----
    let mut n_bar = Vector3::zeros();
    let mut sample_cots: Vec<(usize, PhysicalCotangent, PhysicalCotangent, f64)> = Vec::new();
    // (sample index, m cotangent, a cotangent, rho_raw cotangent)
    if let Some(sd) = &fwd.samples {
        let b = &fwd.breakdown;
        let psi = b.psi;
        if psi >= PSI_FLOOR {
            let n_hat = triple.unit_setup_orientation();
            let n_vec = triple.setup_orientation;
            let cb = problem.limits.beta.cos();
            for (p, s) in sd.fields.iter().enumerate() {
                let h_p = sd.rho_eff[p];
                let mut m_cot = PhysicalCotangent::default();
                let mut a_cot = PhysicalCotangent::default();
                let mut h_bar = 0.0; // cotangent of H(rho_p)
                let mut m_hess_bar = Matrix3::zeros();
                let mut a_hess_bar = Matrix3::zeros();

                // thickness
                if let Some(l_lt) = b.l_lt {
                    if weights.lt != 0.0 {
                        let g = sd.grad_m_norm[p];
                        let r_p = (problem.limits.t_min - g).max(0.0) + (g - problem.limits.t_max).max(0.0);
                        h_bar += weights.lt * (r_p - l_lt) / psi;
                        let mut dr = 0.0;
                        if g < problem.limits.t_min {
                            dr -= 1.0;
                        }
                        if g > problem.limits.t_max {
                            dr += 1.0;
                        }
                        if dr != 0.0 && g > 0.0 {
                            m_cot.grad += s.grad_m * (weights.lt * h_p / psi * dr / g);
                        }
                    }
                }
                // local collision
                if let Some(l_lc) = b.l_lc {
                    if weights.lc != 0.0 {
                        let r_p = sd.k_max[p].map(|k| (k - problem.limits.k_lc).max(0.0)).unwrap_or(0.0);
                        h_bar += weights.lc * (r_p - l_lc) / psi;
                        if let Some(k) = sd.k_max[p] {
                            if k > problem.limits.k_lc {
                                let kbar = weights.lc * h_p / psi;
                                let (gbar, hbar) = collision_pullback(
                                    problem.collision_metric,
                                    &s.grad_m,
                                    &s.hess_m,
                                    kbar,
                                );
                                m_cot.grad += gbar;
                                m_hess_bar += hbar;
                            }
                        }
                    }
                }
                // motion (5-axis)
                if let Some(l_mo) = b.l_mo {
                    if weights.mo != 0.0 {
                        let r_p = sd.k_f[p].map(|k| (k.abs() - problem.limits.k_f_max).max(0.0)).unwrap_or(0.0);
                        h_bar += weights.mo * (r_p - l_mo) / psi;
                        if let Some(k) = sd.k_f[p] {
                            if k.abs() > problem.limits.k_f_max {
                                let kbar = weights.mo * h_p / psi * k.signum();
                                let (gm2, ga2, hm2, ha2) = path_curvature_pullback(
                                    &s.grad_m,
                                    &s.grad_a,
                                    &s.hess_m,
                                    &s.hess_a,
                                    kbar,
                                );
                                m_cot.grad += gm2;
                                a_cot.grad += ga2;
                                m_hess_bar += hm2;
                                a_hess_bar += ha2;
                            }
                        }
                    }
                }
                // setup orientation (3-axis)
                if let Some(l_ort) = b.l_ort {
                    if weights.ort != 0.0 {
                        let r_p = sd.cos_setup[p]
                            .map(|c| match problem.orientation_penalty {
                                OrientationPenalty::Printed => (c - cb).max(0.0),
                                OrientationPenalty::Deviation => (cb - c).max(0.0),
                            })
                            .unwrap_or(0.0);
                        h_bar += weights.ort * (r_p - l_ort) / psi;
                        if let Some(c) = sd.cos_setup[p] {
                            let active = match problem.orientation_penalty {
                                OrientationPenalty::Printed => c > cb,
                                OrientationPenalty::Deviation => c < cb,
                            };
                            if active {
                                let sign = match problem.orientation_penalty {
                                    OrientationPenalty::Printed => 1.0,
                                    OrientationPenalty::Deviation => -1.0,
                                };
                                let cbar = weights.ort * h_p / psi * sign;
                                let gm = s.grad_m;
                                let gnorm = gm.norm();
                                let g_hat = gm / gnorm;
                                m_cot.grad += (n_hat - g_hat * c) * (cbar / gnorm);
                                n_bar += (g_hat - n_hat * c) * (cbar / n_vec.norm());
                            }
                        }
                    }
                }

                let rho_bar = if sd.rho_frozen[p] {
                    0.0
                } else {
                    h_bar * heaviside_project_d(s.rho_raw, triple.spec.projection_sharpness)
                };
                if m_hess_bar != Matrix3::zeros() {
                    m_cot.hess = Some(m_hess_bar);
                }
                if a_hess_bar != Matrix3::zeros() {
                    a_cot.hess = Some(a_hess_bar);
                }
                let nonzero = rho_bar != 0.0
                    || m_cot.value != 0.0
                    || m_cot.grad != Vector3::zeros()
                    || m_cot.hess.is_some()
                    || a_cot.grad != Vector3::zeros()
                    || a_cot.hess.is_some();
                if nonzero {
                    sample_cots.push((p, m_cot, a_cot, rho_bar));
                }
            }
        }
    }

    // ---- network backward passes ----
    let t_nets = std::time::Instant::now();
    // Density: element centers + samples, value cotangents only.
    {
        let mut pts = Vec::new();
        let mut cots = Vec::new();
        for e in 0..ne {
            if rho_raw_bar_e[e] != 0.0 {
                pts.push(fwd.centers[e]);
                cots.push(PhysicalCotangent {
                    value: rho_raw_bar_e[e],
                    ..Default::default()
                });
            }
        }
        for (p, _, _, rho_bar) in &sample_cots {
            if *rho_bar != 0.0 {
                pts.push(problem.samples[*p]);
                cots.push(PhysicalCotangent {
                    value: *rho_bar,
                    ..Default::default()
                });
            }
        }
        if !pts.is_empty() {
            triple.backward(FieldId::Density, &pts, &cots, &mut grads.rho);
        }
    }
    // Deposition: gradient cotangents at centers, grad+hess at samples.
    // Hessian-carrying samples go in a separate batch so grad-only points
    // stay on the cheap 4-channel path.
    {
        let mut pts = Vec::new();
        let mut cots = Vec::new();
        let mut pts_h = Vec::new();
        let mut cots_h = Vec::new();
        for e in 0..ne {
            if gm_bar_e[e] != Vector3::zeros() {
                pts.push(fwd.centers[e]);
                cots.push(PhysicalCotangent {
                    grad: gm_bar_e[e],
                    ..Default::default()
                });
            }
        }
        for (p, m_cot, _, _) in &sample_cots {
            if m_cot.hess.is_some() {
                pts_h.push(problem.samples[*p]);
                cots_h.push(m_cot.clone());
            } else if m_cot.grad != Vector3::zeros() || m_cot.value != 0.0 {
                pts.push(problem.samples[*p]);
                cots.push(m_cot.clone());
            }
        }
        if triple.mode == MotionMode::TwoPointFiveAxis {
            // grad m = n / |n| everywhere: reroute to the setup orientation.
            let n_vec = triple.setup_orientation;
            let n_norm = n_vec.norm();
            let n_hat = n_vec / n_norm;
            for c in cots.iter().chain(&cots_h) {
                n_bar += (c.grad - n_hat * n_hat.dot(&c.grad)) / n_norm;
            }
        } else {
            if !pts.is_empty() {
                triple.backward(FieldId::Deposition, &pts, &cots, &mut grads.m);
            }
            if !pts_h.is_empty() {
                triple.backward(FieldId::Deposition, &pts_h, &cots_h, &mut grads.m);
            }
        }
    }
    // Auxiliary: gradient cotangents at centers, grad+hess at samples (5-axis).
    {
        let mut pts = Vec::new();
        let mut cots = Vec::new();
        let mut pts_h = Vec::new();
        let mut cots_h = Vec::new();
        for e in 0..ne {
            if ga_bar_e[e] != Vector3::zeros() {
                pts.push(fwd.centers[e]);
                cots.push(PhysicalCotangent {
                    grad: ga_bar_e[e],
                    ..Default::default()
                });
            }
        }
        for (p, _, a_cot, _) in &sample_cots {
            if a_cot.hess.is_some() {
                pts_h.push(problem.samples[*p]);
                cots_h.push(a_cot.clone());
            } else if a_cot.grad != Vector3::zeros() || a_cot.value != 0.0 {
                pts.push(problem.samples[*p]);
                cots.push(a_cot.clone());
            }
        }
        if !pts.is_empty() {
            triple.backward(FieldId::Auxiliary, &pts, &cots, &mut grads.a);
        }
        if !pts_h.is_empty() {
            triple.backward(FieldId::Auxiliary, &pts_h, &cots_h, &mut grads.a);
        }
    }
    grads.n = n_bar;
    if timing {
        eprintln!(
            "  backward total: {:.0} ms (net backwards {:.0} ms)",
            tb.elapsed().as_secs_f64() * 1e3,
            t_nets.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(grads)
}

/// Pullback of the configured collision metric through the curvature stack.
fn collision_pullback(
    metric: CollisionMetric,
    g: &Vector3<f64>,
    h: &Matrix3<f64>,
    kbar: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    match metric {
        CollisionMetric::SignedMax => surface_principal_pullback(g, h, kbar, 0.0),
        CollisionMetric::AbsMax => {
            let k: SurfaceCurvature = surface_curvatures(g, h).expect("caller checked the floor");
            let disc = (k.mean * k.mean - k.gaussian).max(0.0).sqrt();
            let k1 = k.mean + disc;
            let k2 = k.mean - disc;
            if k1.abs() >= k2.abs() {
                surface_principal_pullback(g, h, kbar * k1.signum(), 0.0)
            } else {
                surface_principal_pullback(g, h, 0.0, kbar * k2.signum())
            }
        }
    }
}

/// Structural verification: re-run the FEA for a trained field on an
/// arbitrary grid at a scaled load and report the failure-index map over
/// solid elements plus the yielded-volume fraction.
pub struct VerificationReport {
    pub gamma_index: Vec<f64>,
    pub solid: Vec<bool>,
    pub max_solid_index: f64,
    /// Fraction of solid volume with a failure index above one.
    pub yielded_fraction: f64,
    pub solid_count: usize,
}

pub fn verify_structure(
    triple: &FieldTriple,
    material: &MaterialSpec,
    hoffman: &HoffmanCoeffs,
    grid: &VoxelGrid,
    bc: &BoundaryConditions,
    load_scale: f64,
    simp_exponent: f64,
    stress_exponent: f64,
    solver: &SolverConfig,
    passive: &[PassiveRegion],
) -> Result<VerificationReport> {
    let basis = Hex8Basis::new(grid.h);
    let centers = grid.element_centers();
    let fields = triple.evaluate(&centers, EvalLevel::Frames);
    let c_material = material.stiffness_matrix()?;
    let ne = grid.element_count();
    let mut c_design = Vec::with_capacity(ne);
    let mut bonds = Vec::with_capacity(ne);
    let mut stress_scales = Vec::with_capacity(ne);
    let mut solid = Vec::with_capacity(ne);
    for (e, s) in fields.iter().enumerate() {
        let rho = passive_override(passive, &centers[e]).unwrap_or(s.rho);
        solid.push(rho >= 0.5);
        let scale = modulus_interpolation(rho, simp_exponent, material);
        let (frame, _) = material_frame(&s.fiber, &s.grad_a, &s.grad_m);
        let t = voigt_rotation(&frame);
        c_design.push(t * (c_material * scale) * t.transpose());
        bonds.push(t);
        stress_scales.push(modulus_interpolation(rho, stress_exponent, material));
    }
    let mut scaled_bc = bc.clone();
    for f in scaled_bc.force.iter_mut() {
        *f *= load_scale;
    }
    let (u, _) = assemble_and_solve(grid, &basis, &c_design, &scaled_bc, solver, None, None)?;
    let mut gamma_index = Vec::with_capacity(ne);
    let mut max_solid_index: f64 = 0.0;
    let mut yielded = 0usize;
    let mut solid_count = 0usize;
    for e in 0..ne {
        let ue = gather_element(&u, &grid.element_dofs(e));
        let eps_mat = bonds[e].transpose() * basis.center_strain(&ue);
        let sigma_mpa = c_material * eps_mat * (stress_scales[e] * 1000.0);
        let idx = hoffman_index(&sigma_mpa, hoffman);
        gamma_index.push(idx);
        if solid[e] {
            solid_count += 1;
            max_solid_index = max_solid_index.max(idx);
            if idx > 1.0 {
                yielded += 1;
            }
        }
    }
    Ok(VerificationReport {
        gamma_index,
        solid,
        max_solid_index,
        yielded_fraction: if solid_count > 0 {
            yielded as f64 / solid_count as f64
        } else {
            0.0
        },
        solid_count,
    })
}
