//! The training loop: moment-based parameter updates, plateau learning-rate
//! scheduling, the hybrid constraint-weighting schedule, and the sequential
//! two-phase baseline.
//!
//! Weighting scheme: the objective weight is calibrated once from an
//! unconstrained forward pass (`w_obj = band_hi / |L_obj|`) and rescaled
//! whenever the weighted objective leaves the band; constraint weights ramp
//! linearly from zero and saturate at a cap. When the raw objective drops
//! below the correction threshold, the update step applies `w_obj = 0` so
//! the constraints alone drive that step.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::field::{init_networks, FieldTriple, MotionMode, NetworkSpec};
use crate::loss::{total_loss, LossWeights, ObjectiveKind};
use crate::pipeline::{backward, forward, Gradients, PipelineState, Problem};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub max_iterations: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Relative improvement below which an iteration counts as a plateau.
    pub plateau_threshold: f64,
    /// Constraint-weight increment per iteration.
    pub weight_ramp: f64,
    /// Saturation value of the constraint-weight ramp.
    pub weight_cap: f64,
    /// Allowed band for the weighted objective magnitude.
    pub objective_band: [f64; 2],
    /// `|L_obj|` below this triggers the constraints-only correction step.
    pub correction_threshold: f64,
    pub p_bar: f64,
    pub seed: u64,
    pub sequential: bool,
    /// Early stop: no total-loss improvement beyond this over the trailing
    /// window once the learning rate has hit its floor.
    pub early_stop_improvement: f64,
    pub early_stop_window: usize,
    /// Ablation switch: hold the layer-thickness weight at zero.
    pub disable_thickness: bool,
    /// Ablation switch: hold the layer- and path-curvature weights at zero.
    pub disable_curvature: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1500,
            initial_lr: 1.0e-3,
            min_lr: 1.0e-6,
            plateau_patience: 50,
            plateau_factor: 0.5,
            plateau_threshold: 1.0e-6,
            weight_ramp: 0.05,
            weight_cap: 10.0,
            objective_band: [0.0, 10.0],
            correction_threshold: 1.0e-5,
            p_bar: 6.0,
            seed: 0,
            sequential: false,
            early_stop_improvement: 1.0e-7,
            early_stop_window: 100,
            disable_thickness: false,
            disable_curvature: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_lr > self.initial_lr {
            return Err(Error::Config("min_lr must not exceed initial_lr".into()));
        }
        if self.weight_ramp <= 0.0 {
            return Err(Error::Config("weight_ramp must be positive".into()));
        }
        if self.objective_band[0] < 0.0 || self.objective_band[1] <= self.objective_band[0] {
            return Err(Error::Config("objective_band must be [lo, hi] with 0 <= lo < hi".into()));
        }
        if !(0.0 < self.plateau_factor && self.plateau_factor < 1.0) {
            return Err(Error::Config("plateau_factor must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// One per iteration; everything the convergence plots need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub iteration: usize,
    pub phase: u8,
    pub l_obj: f64,
    pub l_vol: f64,
    pub l_lc: Option<f64>,
    pub l_mo: Option<f64>,
    pub l_ort: Option<f64>,
    pub l_lt: Option<f64>,
    pub l_yd: Option<f64>,
    pub w_obj_applied: f64,
    pub w_vol: f64,
    pub w_lc: f64,
    pub w_mo: f64,
    pub w_ort: f64,
    pub w_lt: f64,
    pub w_yd: f64,
    pub total: f64,
    pub psi: f64,
    pub degenerate_count: usize,
    /// Minimum element safety factor over the solid region.
    pub gamma_min: f64,
    /// Maximum yield-free load scale times the applied load norm (kN).
    pub load_capacity: f64,
    pub grad_norm: f64,
    pub lr: f64,
    /// Wall-clock time of the iteration; excluded from determinism checks.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIterations,
    Plateau,
    ZeroIterations,
}

pub struct OptimResult {
    pub triple: FieldTriple,
    pub records: Vec<ConvergenceRecord>,
    pub stop: StopReason,
    pub gamma_min: f64,
    /// Set when the loop ended without meeting the improvement criterion.
    pub converged: bool,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

struct PlateauScheduler {
    lr: f64,
    best: f64,
    since_best: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
    threshold: f64,
    /// Totals are not comparable across iterations while the constraint
    /// weights still ramp; monitoring starts once they saturate.
    warmup: usize,
    seen: usize,
}

impl PlateauScheduler {
    fn new(cfg: &OptimConfig) -> Self {
        Self {
            lr: cfg.initial_lr,
            best: f64::INFINITY,
            since_best: 0,
            patience: cfg.plateau_patience,
            factor: cfg.plateau_factor,
            min_lr: cfg.min_lr,
            threshold: cfg.plateau_threshold,
            warmup: (cfg.weight_cap / cfg.weight_ramp).ceil() as usize,
            seen: 0,
        }
    }

    fn observe(&mut self, total: f64) {
        self.seen += 1;
        if self.seen <= self.warmup {
            return;
        }
        let improved = total < self.best - self.threshold * self.best.abs().max(1e-12);
        if improved {
            self.best = total;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.since_best = 0;
            }
        }
    }
}

/// Which constraint-weight channels a phase ramps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPolicy {
    /// Full co-optimization: every applicable constraint ramps.
    Full,
    /// Design objectives only (sequential phase one): manufacturability
    /// weights stay zero, the volume budget still ramps.
    DesignOnly,
}

pub struct Trainer {
    pub problem: Problem,
    pub config: OptimConfig,
    pub triple: FieldTriple,
    pub state: PipelineState,
    pub records: Vec<ConvergenceRecord>,
    pub iteration: usize,
    pub phase: u8,
    pub lock_density: bool,
    pub weight_policy: WeightPolicy,
    w_obj: Option<f64>,
    scheduler: PlateauScheduler,
    adam_rho: AdamState,
    adam_m: AdamState,
    adam_a: AdamState,
    adam_n: AdamState,
    force_norm: f64,
}

impl Trainer {
    pub fn new(problem: Problem, config: OptimConfig) -> Result<Self> {
        config.validate()?;
        let spec = network_spec_for(&problem);
        let triple = init_networks(&spec, problem.mode, config.seed)?;
        Self::with_triple(problem, config, triple)
    }

    pub fn with_triple(problem: Problem, config: OptimConfig, triple: FieldTriple) -> Result<Self> {
        config.validate()?;
        let force_norm = problem.bc.force_norm();
        let scheduler = PlateauScheduler::new(&config);
        let n_rho = triple.theta_rho.len();
        let n_m = triple.theta_m.len();
        let n_a = triple.theta_a.len();
        Ok(Self {
            problem,
            config,
            triple,
            state: PipelineState::default(),
            records: Vec::new(),
            iteration: 0,
            phase: 0,
            lock_density: false,
            weight_policy: WeightPolicy::Full,
            w_obj: None,
            scheduler,
            adam_rho: AdamState::new(n_rho),
            adam_m: AdamState::new(n_m),
            adam_a: AdamState::new(n_a),
            adam_n: AdamState::new(3),
            force_norm,
        })
    }

    /// Constraint-weight values at the current iteration.
    fn scheduled_weights(&self) -> LossWeights {
        let ramp = (self.config.weight_ramp * self.iteration as f64).min(self.config.weight_cap);
        let manufacturability = match self.weight_policy {
            WeightPolicy::Full => ramp,
            WeightPolicy::DesignOnly => 0.0,
        };
        let mut w = LossWeights {
            obj: self.w_obj.unwrap_or(1.0),
            ..Default::default()
        };
        match self.problem.objective {
            ObjectiveKind::Lightweight => w.yd = ramp,
            _ => w.vol = ramp,
        }
        match self.problem.mode {
            MotionMode::FiveAxis => {
                w.lc = manufacturability;
                w.mo = manufacturability;
                w.lt = manufacturability;
            }
            MotionMode::ThreeAxis => {
                w.lc = manufacturability;
                w.ort = manufacturability;
                w.lt = manufacturability;
            }
            MotionMode::TwoPointFiveAxis => {}
        }
        if self.config.disable_thickness {
            w.lt = 0.0;
        }
        if self.config.disable_curvature {
            w.lc = 0.0;
            w.mo = 0.0;
        }
        w
    }

    /// Calibrate or rescale the objective weight from the iteration's raw
    /// objective value.
    fn tune_objective_weight(&mut self, l_obj: f64) -> f64 {
        let hi = self.config.objective_band[1];
        match self.w_obj {
            None => {
                let w = if l_obj.abs() > 1e-12 {
                    hi / l_obj.abs()
                } else {
                    1.0
                };
                self.w_obj = Some(w);
                w
            }
            Some(w) => {
                if (w * l_obj).abs() > hi && l_obj.abs() > 1e-12 {
                    let w = hi / l_obj.abs();
                    self.w_obj = Some(w);
                    w
                } else {
                    w
                }
            }
        }
    }

    /// One full iteration: forward, weight tuning, backward, update.
    pub fn step(&mut self) -> Result<&ConvergenceRecord> {
        let t0 = std::time::Instant::now();
        let mut fwd = forward(&self.problem, &self.triple, &mut self.state)?;
        let mut weights = self.scheduled_weights();
        weights.obj = self.tune_objective_weight(fwd.breakdown.l_obj);

        // Constraints-only correction step.
        let corrected = fwd.breakdown.l_obj.abs() < self.config.correction_threshold;
        if corrected {
            weights.obj = 0.0;
        }
        let total = total_loss(self.problem.mode, self.problem.objective, &fwd.breakdown, &weights)?;
        fwd.breakdown.weighted_total = total;

        let mut grads = backward(&self.problem, &self.triple, &mut fwd, &weights, &mut self.state)?;
        if !grads.all_finite() {
            return Err(Error::Numerical(
                "non-finite gradient encountered; aborting the run".into(),
            ));
        }
        if self.lock_density {
            grads.rho.iter_mut().for_each(|g| *g = 0.0);
        }

        let lr = self.scheduler.lr;
        self.apply_update(&grads, lr);
        self.scheduler.observe(total);

        let gamma_min = fwd.min_solid_gamma();
        let record = ConvergenceRecord {
            iteration: self.iteration,
            phase: self.phase,
            l_obj: fwd.breakdown.l_obj,
            l_vol: fwd.breakdown.l_vol,
            l_lc: fwd.breakdown.l_lc,
            l_mo: fwd.breakdown.l_mo,
            l_ort: fwd.breakdown.l_ort,
            l_lt: fwd.breakdown.l_lt,
            l_yd: fwd.breakdown.l_yd,
            w_obj_applied: weights.obj,
            w_vol: weights.vol,
            w_lc: weights.lc,
            w_mo: weights.mo,
            w_ort: weights.ort,
            w_lt: weights.lt,
            w_yd: weights.yd,
            total,
            psi: fwd.breakdown.psi,
            degenerate_count: fwd.breakdown.degenerate_count,
            gamma_min,
            load_capacity: gamma_min * self.force_norm,
            grad_norm: grads.norm(),
            lr,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        self.records.push(record);
        self.iteration += 1;
        Ok(self.records.last().unwrap())
    }

    fn apply_update(&mut self, grads: &Gradients, lr: f64) {
        if !self.lock_density {
            self.adam_rho.step(&mut self.triple.theta_rho, &grads.rho, lr);
        }
        if self.triple.mode != MotionMode::TwoPointFiveAxis {
            self.adam_m.step(&mut self.triple.theta_m, &grads.m, lr);
        }
        self.adam_a.step(&mut self.triple.theta_a, &grads.a, lr);
        if self.triple.mode != MotionMode::FiveAxis {
            let mut n = [
                self.triple.setup_orientation.x,
                self.triple.setup_orientation.y,
                self.triple.setup_orientation.z,
            ];
            let g = [grads.n.x, grads.n.y, grads.n.z];
            self.adam_n.step(&mut n, &g, lr);
            self.triple.setup_orientation = Vector3::new(n[0], n[1], n[2]);
        }
    }

    fn should_stop_early(&self) -> bool {
        let w = self.config.early_stop_window;
        if self.scheduler.lr > self.config.min_lr || self.records.len() <= w {
            return false;
        }
        let now = self.records.last().unwrap().total;
        let then = self.records[self.records.len() - 1 - w].total;
        then - now < self.config.early_stop_improvement
    }

    /// Run until the iteration budget or the plateau stop fires.
    pub fn run_loop(&mut self, iterations: usize) -> Result<StopReason> {
        self.run_loop_with(iterations, &mut |_| Ok(()))
    }

    pub fn run_loop_with(
        &mut self,
        iterations: usize,
        after_step: &mut impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<StopReason> {
        if iterations == 0 {
            return Ok(StopReason::ZeroIterations);
        }
        for _ in 0..iterations {
            self.step()?;
            after_step(self)?;
            if self.should_stop_early() {
                return Ok(StopReason::Plateau);
            }
        }
        Ok(StopReason::MaxIterations)
    }

    pub fn into_result(self, stop: StopReason) -> OptimResult {
        let gamma_min = self
            .records
            .last()
            .map(|r| r.gamma_min)
            .unwrap_or(f64::INFINITY);
        let converged = stop != StopReason::MaxIterations
            || self
                .records
                .last()
                .map(|r| r.total.is_finite())
                .unwrap_or(false);
        OptimResult {
            triple: self.triple,
            records: self.records,
            stop,
            gamma_min,
            converged,
        }
    }
}

/// Network spec implied by the problem's domain (desk architecture).
fn network_spec_for(problem: &Problem) -> NetworkSpec {
    use crate::field::{Activation, DomainBox};
    let g = &problem.grid;
    let domain = DomainBox::new(
        g.origin,
        [
            g.dims[0] as f64 * g.h,
            g.dims[1] as f64 * g.h,
            g.dims[2] as f64 * g.h,
        ],
    );
    NetworkSpec {
        hidden_layer_count: 2,
        hidden_width: 64,
        activation: Activation::SigmoidWeightedLinear,
        domain,
        projection_sharpness: 5.0,
    }
}

/// Full co-optimization run from a fresh initialization.
pub fn run(problem: Problem, config: OptimConfig, spec: &NetworkSpec) -> Result<OptimResult> {
    run_with_callback(problem, config, spec, |_| Ok(()))
}

/// `run` with a per-iteration callback (checkpointing, progress logs).
pub fn run_with_callback(
    problem: Problem,
    config: OptimConfig,
    spec: &NetworkSpec,
    mut after_step: impl FnMut(&Trainer) -> Result<()>,
) -> Result<OptimResult> {
    config.validate()?;
    let triple = init_networks(spec, problem.mode, config.seed)?;
    let iterations = config.max_iterations;
    let mut trainer = Trainer::with_triple(problem, config, triple)?;
    let stop = trainer.run_loop_with(iterations, &mut after_step)?;
    Ok(trainer.into_result(stop))
}

/// Sequential baseline: phase one optimizes the design objectives only;
/// phase two locks the density network and re-optimizes the remaining
/// trainables under the full loss.
pub fn run_sequential(
    problem: Problem,
    config: OptimConfig,
    spec: &NetworkSpec,
) -> Result<OptimResult> {
    run_sequential_with_callback(problem, config, spec, |_| Ok(()))
}

pub fn run_sequential_with_callback(
    problem: Problem,
    config: OptimConfig,
    spec: &NetworkSpec,
    mut after_step: impl FnMut(&Trainer) -> Result<()>,
) -> Result<OptimResult> {
    config.validate()?;
    let triple = init_networks(spec, problem.mode, config.seed)?;
    let iterations = config.max_iterations;
    let mut trainer = Trainer::with_triple(problem, config.clone(), triple)?;
    trainer.weight_policy = WeightPolicy::DesignOnly;
    trainer.run_loop_with(iterations, &mut after_step)?;

    // Phase two starts from the phase-one state with the density locked and
    // the full loss; the ramp and objective calibration start over.
    let Trainer {
        problem, triple, mut records, ..
    } = trainer;
    let mut phase2 = Trainer::with_triple(problem, config, triple)?;
    phase2.phase = 1;
    phase2.lock_density = true;
    phase2.weight_policy = WeightPolicy::Full;
    let stop = phase2.run_loop_with(iterations, &mut after_step)?;
    records.append(&mut phase2.records);
    phase2.records = records;
    Ok(phase2.into_result(stop))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fea::{BoundaryConditions, Hex8Basis, SolverConfig, SolverKind, VoxelGrid};
    use crate::field::{Activation, DomainBox};
    use crate::loss::{CollisionMetric, ManufacturingLimits, OrientationPenalty};
    use crate::material::{hoffman_coeffs, MaterialSpec};

    fn tiny_problem(mode: MotionMode, seed_load: f64) -> (Problem, NetworkSpec) {
        let dims = [6, 3, 3];
        let h = 2.0;
        let grid = VoxelGrid::new(dims, h, [0.0; 3]);
        let domain = DomainBox::new([0.0; 3], [12.0, 6.0, 6.0]);
        let spec = NetworkSpec {
            hidden_layer_count: 2,
            hidden_width: 12,
            activation: Activation::SigmoidWeightedLinear,
            domain,
            projection_sharpness: 5.0,
        };
        let material = MaterialSpec::pla_cf();
        let mut bc = BoundaryConditions::new(grid.dof_count());
        let nd = grid.node_dims();
        for iy in 0..nd[1] {
            for iz in 0..nd[2] {
                for a in 0..3 {
                    bc.fix(3 * grid.node_index(0, iy, iz) + a);
                }
            }
        }
        for iz in 0..nd[2] {
            bc.load(3 * grid.node_index(dims[0], 0, iz) + 1, -seed_load);
        }
        let samples = Problem::halton_samples(&grid, 2);
        let hoffman = hoffman_coeffs(&material).unwrap();
        let c_material = material.stiffness_matrix().unwrap();
        let problem = Problem {
            grid,
            basis: Hex8Basis::new(h),
            bc,
            material,
            c_material,
            hoffman,
            limits: ManufacturingLimits::default(),
            mode,
            objective: ObjectiveKind::Strength,
            v_star: 0.35 * 12.0 * 6.0 * 6.0,
            samples,
            simp_exponent: 3.0,
            stress_exponent: 2.5,
            p_bar: 6.0,
            gamma_cap: 1e4,
            solver: SolverConfig {
                kind: SolverKind::Direct,
                ..Default::default()
            },
            collision_metric: CollisionMetric::SignedMax,
            orientation_penalty: OrientationPenalty::Printed,
            passive: Vec::new(),
            csr_pattern: None,
        };
        (problem, spec)
    }

    #[test]
    fn zero_iterations_returns_initial_fields() {
        let (problem, spec) = tiny_problem(MotionMode::FiveAxis, 0.02);
        let cfg = OptimConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let result = run(problem, cfg, &spec).unwrap();
        assert_eq!(result.stop, StopReason::ZeroIterations);
        assert!(result.records.is_empty());
        let fresh = init_networks(&spec, MotionMode::FiveAxis, 0).unwrap();
        assert_eq!(result.triple.theta_rho, fresh.theta_rho);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let (problem, spec) = tiny_problem(MotionMode::FiveAxis, 0.02);
        let triple = init_networks(&spec, MotionMode::FiveAxis, 0).unwrap();
        let mut trainer =
            Trainer::with_triple(problem, OptimConfig::default(), triple.clone()).unwrap();
        let zeros = Gradients {
            rho: vec![0.0; triple.theta_rho.len()],
            m: vec![0.0; triple.theta_m.len()],
            a: vec![0.0; triple.theta_a.len()],
            n: Vector3::zeros(),
        };
        trainer.apply_update(&zeros, 1e-3);
        assert_eq!(trainer.triple.theta_rho, triple.theta_rho);
        assert_eq!(trainer.triple.theta_m, triple.theta_m);
        assert_eq!(trainer.triple.theta_a, triple.theta_a);
    }

    #[test]
    fn single_step_decreases_total_for_most_seeds() {
        let mut wins = 0;
        for seed in 0..10u64 {
            let (problem, spec) = tiny_problem(MotionMode::FiveAxis, 0.02);
            let cfg = OptimConfig {
                max_iterations: 2,
                seed,
                ..Default::default()
            };
            let triple = init_networks(&spec, MotionMode::FiveAxis, seed).unwrap();
            let mut trainer = Trainer::with_triple(problem, cfg, triple).unwrap();
            // Weights at iteration 0: constraints are still at the ramp start.
            let mut weights = trainer.scheduled_weights();
            let first = trainer.step().unwrap().total;
            weights.obj = trainer.w_obj.unwrap();
            let fwd = forward(&trainer.problem, &trainer.triple, &mut trainer.state).unwrap();
            let after = total_loss(
                trainer.problem.mode,
                trainer.problem.objective,
                &fwd.breakdown,
                &weights,
            )
            .unwrap();
            if after < first {
                wins += 1;
            }
        }
        assert!(wins >= 8, "only {wins}/10 seeds improved after one step");
    }

    #[test]
    fn deterministic_records_for_fixed_seed() {
        let run_once = || {
            let (problem, spec) = tiny_problem(MotionMode::FiveAxis, 0.02);
            let cfg = OptimConfig {
                max_iterations: 5,
                seed: 7,
                ..Default::default()
            };
            run(problem, cfg, &spec).unwrap()
        };
        let a = run_once();
        let b = run_once();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.total.to_bits(), rb.total.to_bits());
            assert_eq!(ra.gamma_min.to_bits(), rb.gamma_min.to_bits());
            assert_eq!(ra.grad_norm.to_bits(), rb.grad_norm.to_bits());
        }
        assert_eq!(a.triple.theta_rho, b.triple.theta_rho);
    }

    #[test]
    fn constraint_weights_ramp_and_objective_band_holds() {
        let (problem, spec) = tiny_problem(MotionMode::FiveAxis, 0.02);
        let cfg = OptimConfig {
            max_iterations: 30,
            seed: 1,
            ..Default::default()
        };
        let result = run(problem, cfg, &spec).unwrap();
        let mut last = -1.0;
        for r in &result.records {
            assert!(r.w_lt >= last, "constraint weights must be nondecreasing");
            last = r.w_lt;
            let weighted_obj = (r.w_obj_applied * r.l_obj).abs();
            assert!(
                weighted_obj <= 10.0 + 1e-9,
                "weighted objective {weighted_obj} left the band at iteration {}",
                r.iteration
            );
            assert!(r.lr >= 1.0e-6 && r.lr <= 1.0e-3);
        }
        // ramp numbers match min(0.05 k, cap)
        for r in result.records.iter().take(10) {
            let expect = (0.05 * r.iteration as f64).min(10.0);
            assert!((r.w_lt - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn correction_step_zeroes_the_applied_objective_weight() {
        let (problem, spec) = tiny_problem(MotionMode::FiveAxis, 0.02);
        let cfg = OptimConfig {
            max_iterations: 3,
            // force the correction branch: any |L_obj| is below this
            correction_threshold: 1e9,
            seed: 0,
            ..Default::default()
        };
        let result = run(problem, cfg, &spec).unwrap();
        for r in &result.records {
            assert_eq!(r.w_obj_applied, 0.0);
        }
    }

    #[test]
    fn sequential_phase_two_locks_the_density_network() {
        let (problem, spec) = tiny_problem(MotionMode::FiveAxis, 0.02);
        let cfg = OptimConfig {
            max_iterations: 4,
            seed: 2,
            sequential: true,
            ..Default::default()
        };
        let result = run_sequential(problem, cfg, &spec).unwrap();
        let phase1_last = result
            .records
            .iter()
            .filter(|r| r.phase == 0)
            .last()
            .unwrap()
            .iteration;
        assert_eq!(phase1_last, 3);
        assert!(result.records.iter().any(|r| r.phase == 1));

        // Re-run phase boundaries by hand to check the density lock.
        let (problem, spec) = tiny_problem(MotionMode::FiveAxis, 0.02);
        let triple = init_networks(&spec, MotionMode::FiveAxis, 2).unwrap();
        let mut t = Trainer::with_triple(problem, cfg, triple).unwrap();
        t.lock_density = true;
        let rho_before = t.triple.theta_rho.clone();
        t.step().unwrap();
        assert_eq!(t.triple.theta_rho, rho_before);
    }
}
