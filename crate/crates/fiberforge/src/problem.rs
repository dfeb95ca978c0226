//! Problem definitions: design domains, boundary-condition regions, built-in
//! presets, and assembly into a runnable optimization problem.
//!
//! Regions are axis-aligned boxes in millimetres so the same definition
//! resolves onto any grid resolution (the structural verifier re-runs on
//! finer grids).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::fea::{BoundaryConditions, CsrPattern, Hex8Basis, SolverConfig, SolverKind, VoxelGrid};
use crate::field::{Activation, DomainBox, MotionMode, NetworkSpec};
use crate::loss::{CollisionMetric, ManufacturingLimits, ObjectiveKind, OrientationPenalty};
use crate::material::{hoffman_coeffs, MaterialSpec};
use crate::pipeline::{PassiveKind, PassiveRegion, Problem};
use crate::{Error, Result};

/// Axis-aligned box in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxRegion {
    pub fn contains(&self, p: &Vector3<f64>, pad: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - pad && p[i] <= self.max[i] + pad)
    }
}

/// Fully fixed or per-axis support over a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportRegion {
    pub region: BoxRegion,
    /// Which displacement axes are fixed.
    pub axes: [bool; 3],
}

/// Total force (kN) distributed uniformly over the region's nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadRegion {
    pub region: BoxRegion,
    pub force_kn: [f64; 3],
}

/// Material selection: a named preset or an inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialChoice {
    Preset { preset: String },
    Inline(MaterialSpec),
}

impl MaterialChoice {
    pub fn resolve(&self) -> Result<MaterialSpec> {
        let spec = match self {
            MaterialChoice::Preset { preset } => match preset.as_str() {
                "pla-cf" => MaterialSpec::pla_cf(),
                "pla" => MaterialSpec::pla(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown material preset '{other}' (available: pla-cf, pla)"
                    )))
                }
            },
            MaterialChoice::Inline(spec) => *spec,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Complete description of one design task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDef {
    pub name: String,
    /// Domain extents (mm); the grid origin sits at zero.
    pub domain_mm: [f64; 3],
    /// FEA elements per axis; voxels must come out cubic.
    pub resolution: [usize; 3],
    /// Volume budget as a fraction of the domain, in (0, 1].
    pub volume_fraction: f64,
    pub supports: Vec<SupportRegion>,
    pub loads: Vec<LoadRegion>,
    pub material: MaterialChoice,
    pub mode: MotionMode,
    pub limits: ManufacturingLimits,
    #[serde(default)]
    pub passive: Vec<PassiveRegion>,
    /// Loss samples per FEA element.
    #[serde(default = "default_sample_multiplier")]
    pub sample_multiplier: usize,
}

fn default_sample_multiplier() -> usize {
    2
}

impl ProblemDef {
    /// Collect every violated rule rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            errors.push(format!(
                "volume_fraction must lie in (0,1], got {}",
                self.volume_fraction
            ));
        }
        let h = self.voxel_size();
        for i in 0..3 {
            if self.resolution[i] == 0 {
                errors.push(format!("resolution[{i}] must be positive"));
            } else {
                let hi = self.domain_mm[i] / self.resolution[i] as f64;
                if (hi - h).abs() > 1e-9 * h {
                    errors.push(format!(
                        "voxels must be cubic: axis {i} gives {hi} mm vs {h} mm"
                    ));
                }
            }
            if self.domain_mm[i] <= 0.0 {
                errors.push(format!("domain_mm[{i}] must be positive"));
            }
        }
        if self.supports.is_empty() {
            errors.push("at least one support region is required".into());
        }
        if self.loads.is_empty() {
            errors.push("at least one load region is required".into());
        }
        if self.sample_multiplier == 0 {
            errors.push("sample_multiplier must be positive".into());
        }
        if let Err(e) = self.limits.validate() {
            errors.push(e.to_string());
        }
        if let Err(e) = self.material.resolve() {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors.join("; ")))
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.domain_mm[0] / self.resolution[0] as f64
    }

    pub fn domain(&self) -> DomainBox {
        DomainBox::new([0.0; 3], self.domain_mm)
    }

    pub fn grid(&self) -> VoxelGrid {
        VoxelGrid::new(self.resolution, self.voxel_size(), [0.0; 3])
    }

    /// A grid refined by a per-axis factor (for verification).
    pub fn refined_grid(&self, factor: f64) -> VoxelGrid {
        let dims = [
            (self.resolution[0] as f64 * factor).round() as usize,
            (self.resolution[1] as f64 * factor).round() as usize,
            (self.resolution[2] as f64 * factor).round() as usize,
        ];
        VoxelGrid::new(dims, self.domain_mm[0] / dims[0] as f64, [0.0; 3])
    }

    /// Resolve support and load regions into nodal boundary conditions on a
    /// grid. Thin regions that miss every node fall back to a half-cell pad;
    /// a region that still selects nothing is an error naming it.
    pub fn boundary_conditions(&self, grid: &VoxelGrid) -> Result<BoundaryConditions> {
        let mut bc = BoundaryConditions::new(grid.dof_count());
        let nd = grid.node_dims();
        let select = |region: &BoxRegion| -> Vec<usize> {
            for pad in [1e-9 * grid.h, 0.5001 * grid.h] {
                let mut nodes = Vec::new();
                for ix in 0..nd[0] {
                    for iy in 0..nd[1] {
                        for iz in 0..nd[2] {
                            let p = grid.node_position(ix, iy, iz);
                            if region.contains(&p, pad) {
                                nodes.push(grid.node_index(ix, iy, iz));
                            }
                        }
                    }
                }
                if !nodes.is_empty() {
                    return nodes;
                }
            }
            Vec::new()
        };
        for (i, s) in self.supports.iter().enumerate() {
            let nodes = select(&s.region);
            if nodes.is_empty() {
                return Err(Error::Config(format!(
                    "support region {i} selects no nodes on the {}x{}x{} grid",
                    grid.dims[0], grid.dims[1], grid.dims[2]
                )));
            }
            for n in nodes {
                for a in 0..3 {
                    if s.axes[a] {
                        bc.fix(3 * n + a);
                    }
                }
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            let nodes = select(&l.region);
            if nodes.is_empty() {
                return Err(Error::Config(format!(
                    "load region {i} selects no nodes on the {}x{}x{} grid",
                    grid.dims[0], grid.dims[1], grid.dims[2]
                )));
            }
            let share = 1.0 / nodes.len() as f64;
            for n in nodes {
                for a in 0..3 {
                    if l.force_kn[a] != 0.0 {
                        bc.load(3 * n + a, l.force_kn[a] * share);
                    }
                }
            }
        }
        bc.validate()?;
        Ok(bc)
    }
}

/// Extra knobs that shape the runnable problem but not the task itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub objective: ObjectiveKind,
    pub solver: SolverConfig,
    pub collision_metric: CollisionMetric,
    pub orientation_penalty: OrientationPenalty,
    pub simp_exponent: f64,
    pub stress_exponent: f64,
    pub gamma_cap: f64,
    pub p_bar: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Strength,
            solver: SolverConfig::default(),
            collision_metric: CollisionMetric::SignedMax,
            orientation_penalty: OrientationPenalty::Printed,
            simp_exponent: 3.0,
            stress_exponent: 2.5,
            gamma_cap: 1e4,
            p_bar: 6.0,
        }
    }
}

/// Assemble the runnable problem for a definition.
pub fn build_problem(def: &ProblemDef, opts: &BuildOptions) -> Result<Problem> {
    def.validate()?;
    let grid = def.grid();
    let bc = def.boundary_conditions(&grid)?;
    let material = def.material.resolve()?;
    let hoffman = hoffman_coeffs(&material)?;
    let c_material = material.stiffness_matrix()?;
    let samples = Problem::halton_samples(&grid, def.sample_multiplier);
    let v_star = def.volume_fraction * def.domain().volume();
    let csr_pattern = if opts.solver.kind == SolverKind::Direct {
        None
    } else {
        Some(CsrPattern::build(&grid, &bc.fixed))
    };
    Ok(Problem {
        basis: Hex8Basis::new(grid.h),
        grid,
        bc,
        material,
        c_material,
        hoffman,
        limits: def.limits,
        mode: def.mode,
        objective: opts.objective,
        v_star,
        samples,
        simp_exponent: opts.simp_exponent,
        stress_exponent: opts.stress_exponent,
        p_bar: opts.p_bar,
        gamma_cap: opts.gamma_cap,
        solver: opts.solver,
        collision_metric: opts.collision_metric,
        orientation_penalty: opts.orientation_penalty,
        passive: def.passive.clone(),
        csr_pattern,
    })
}

/// Network shape for a definition with the desk defaults.
pub fn network_spec(def: &ProblemDef, hidden_layers: usize, hidden_width: usize, sharpness: f64) -> NetworkSpec {
    NetworkSpec {
        hidden_layer_count: hidden_layers,
        hidden_width,
        activation: Activation::SigmoidWeightedLinear,
        domain: def.domain(),
        projection_sharpness: sharpness,
    }
}

/// Built-in problems sized for workstation runs.
pub fn preset(name: &str) -> Result<ProblemDef> {
    match name {
        // Simply supported beam, center-loaded on top; load magnitude tuned
        // so the uniform initial structure starts near unit safety factor.
        "mbb-desk" => Ok(ProblemDef {
            name: "mbb-desk".into(),
            domain_mm: [135.0, 45.0, 45.0],
            resolution: [36, 12, 12],
            volume_fraction: 0.25,
            supports: vec![
                SupportRegion {
                    region: BoxRegion {
                        min: [0.0, 0.0, 0.0],
                        max: [0.0, 0.0, 45.0],
                    },
                    axes: [true, true, true],
                },
                SupportRegion {
                    region: BoxRegion {
                        min: [135.0, 0.0, 0.0],
                        max: [135.0, 0.0, 45.0],
                    },
                    axes: [false, true, true],
                },
            ],
            loads: vec![LoadRegion {
                region: BoxRegion {
                    min: [67.5, 45.0, 0.0],
                    max: [67.5, 45.0, 45.0],
                },
                force_kn: [0.0, -12.0, 0.0],
            }],
            material: MaterialChoice::Preset {
                preset: "pla-cf".into(),
            },
            mode: MotionMode::FiveAxis,
            limits: ManufacturingLimits::default(),
            passive: Vec::new(),
            sample_multiplier: 2,
        }),
        // Clamped at one face, loaded along the free-end bottom edge.
        "cantilever-desk" => Ok(ProblemDef {
            name: "cantilever-desk".into(),
            domain_mm: [90.0, 45.0, 45.0],
            resolution: [24, 12, 12],
            volume_fraction: 0.3,
            supports: vec![SupportRegion {
                region: BoxRegion {
                    min: [0.0, 0.0, 0.0],
                    max: [0.0, 45.0, 45.0],
                },
                axes: [true, true, true],
            }],
            loads: vec![LoadRegion {
                region: BoxRegion {
                    min: [90.0, 0.0, 0.0],
                    max: [90.0, 0.0, 45.0],
                },
                force_kn: [0.0, -0.18, 0.0],
            }],
            material: MaterialChoice::Preset {
                preset: "pla-cf".into(),
            },
            mode: MotionMode::FiveAxis,
            limits: ManufacturingLimits::default(),
            passive: Vec::new(),
            sample_multiplier: 2,
        }),
        // L-shaped bracket: the re-entrant quadrant is frozen void, the top
        // of the left arm is clamped, the right edge carries the load.
        "l-bracket-desk" => Ok(ProblemDef {
            name: "l-bracket-desk".into(),
            domain_mm: [90.0, 90.0, 22.5],
            resolution: [24, 24, 6],
            volume_fraction: 0.25,
            supports: vec![SupportRegion {
                region: BoxRegion {
                    min: [0.0, 90.0, 0.0],
                    max: [37.5, 90.0, 22.5],
                },
                axes: [true, true, true],
            }],
            loads: vec![LoadRegion {
                region: BoxRegion {
                    min: [90.0, 30.0, 0.0],
                    max: [90.0, 37.5, 22.5],
                },
                force_kn: [0.0, -0.12, 0.0],
            }],
            material: MaterialChoice::Preset {
                preset: "pla-cf".into(),
            },
            mode: MotionMode::FiveAxis,
            limits: ManufacturingLimits::default(),
            passive: vec![PassiveRegion {
                min: [37.5 + 1e-9, 37.5 + 1e-9, 0.0],
                max: [90.0, 90.0, 22.5],
                kind: PassiveKind::Void,
            }],
            sample_multiplier: 2,
        }),
        other => Err(Error::Config(format!(
            "unknown problem preset '{other}' (available: mbb-desk, cantilever-desk, l-bracket-desk)"
        ))),
    }
}

pub const PRESET_NAMES: [&str; 3] = ["mbb-desk", "cantilever-desk", "l-bracket-desk"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_resolve_boundary_conditions() {
        for name in PRESET_NAMES {
            let def = preset(name).unwrap();
            def.validate().unwrap();
            let grid = def.grid();
            let bc = def.boundary_conditions(&grid).unwrap();
            assert!(bc.fixed_count() >= 6, "{name}: too few constraints");
            assert!(bc.force_norm() > 0.0, "{name}: no load");
        }
    }

    #[test]
    fn refined_grid_still_resolves_regions() {
        let def = preset("mbb-desk").unwrap();
        let fine = def.refined_grid(1.5);
        assert_eq!(fine.dims, [54, 18, 18]);
        let bc = def.boundary_conditions(&fine).unwrap();
        assert!(bc.fixed_count() >= 6);
        // total load is resolution independent
        let coarse_bc = def.boundary_conditions(&def.grid()).unwrap();
        let total = |bc: &BoundaryConditions| bc.force.iter().sum::<f64>();
        assert!((total(&bc) - total(&coarse_bc)).abs() < 1e-12);
    }

    #[test]
    fn invalid_volume_fraction_is_named() {
        let mut def = preset("mbb-desk").unwrap();
        def.volume_fraction = 1.5;
        let err = def.validate().unwrap_err().to_string();
        assert!(err.contains("volume_fraction"), "error should name the field: {err}");
    }

    #[test]
    fn all_violations_are_listed_together() {
        let mut def = preset("mbb-desk").unwrap();
        def.volume_fraction = -1.0;
        def.resolution = [36, 12, 7]; // non-cubic voxels
        def.limits.t_min = 2.0; // inverted band
        let err = def.validate().unwrap_err().to_string();
        assert!(err.contains("volume_fraction"));
        assert!(err.contains("cubic"));
        assert!(err.contains("t_min"));
    }

    #[test]
    fn empty_region_errors_name_the_region() {
        let mut def = preset("mbb-desk").unwrap();
        def.loads[0].region = BoxRegion {
            min: [-50.0, -50.0, -50.0],
            max: [-40.0, -40.0, -40.0],
        };
        let err = def
            .boundary_conditions(&def.grid())
            .unwrap_err()
            .to_string();
        assert!(err.contains("load region 0"));
    }

    #[test]
    fn problem_builds_with_defaults() {
        let def = preset("cantilever-desk").unwrap();
        let problem = build_problem(&def, &BuildOptions::default()).unwrap();
        assert_eq!(problem.samples.len(), 2 * problem.grid.element_count());
        assert!(problem.v_star > 0.0);
    }

    #[test]
    fn l_bracket_passive_region_voids_the_reentrant_quadrant() {
        let def = preset("l-bracket-desk").unwrap();
        let problem = build_problem(&def, &BuildOptions::default()).unwrap();
        assert_eq!(problem.passive.len(), 1);
        let inside = Vector3::new(60.0, 60.0, 10.0);
        assert!(problem.passive[0].contains(&inside));
        let arm = Vector3::new(20.0, 60.0, 10.0);
        assert!(!problem.passive[0].contains(&arm));
    }
}
