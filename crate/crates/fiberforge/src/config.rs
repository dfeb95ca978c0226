//! Run configuration: one JSON document with problem, material, network,
//! optimizer, limits, and output sections, plus dotted-path flag overrides.

use serde::{Deserialize, Serialize};

use crate::fea::SolverConfig;
use crate::field::MotionMode;
use crate::loss::{CollisionMetric, ManufacturingLimits, ObjectiveKind, OrientationPenalty};
use crate::optim::OptimConfig;
use crate::problem::{preset, BuildOptions, MaterialChoice, ProblemDef};
use crate::{Error, Result};

/// Problem section: a named preset (optionally customized) or a full inline
/// definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSection {
    Inline(ProblemDef),
    Preset {
        #[serde(default = "default_preset_name")]
        preset: String,
        #[serde(default)]
        mode: Option<MotionMode>,
        #[serde(default)]
        volume_fraction: Option<f64>,
        #[serde(default)]
        load_scale: Option<f64>,
    },
}

fn default_preset_name() -> String {
    "mbb-desk".into()
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection::Preset {
            preset: "mbb-desk".into(),
            mode: None,
            volume_fraction: None,
            load_scale: None,
        }
    }
}

/// Network section with the workstation defaults; the full-scale
/// architecture is five hidden layers of 256.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub projection_sharpness: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_width: 64,
            projection_sharpness: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: String,
    pub checkpoint_every: usize,
    /// Marching cubes resolution for slicing.
    pub mc_resolution: usize,
    pub solver: SolverConfig,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "runs/run".into(),
            checkpoint_every: 100,
            mc_resolution: 128,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: ProblemSection,
    /// Overrides the problem's material when present.
    #[serde(default)]
    pub material: Option<MaterialChoice>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub optimizer: OptimConfig,
    #[serde(default)]
    pub objective: ObjectiveKind,
    /// Overrides the problem's limits when present.
    #[serde(default)]
    pub limits: Option<ManufacturingLimits>,
    #[serde(default)]
    pub collision_metric: CollisionMetric,
    #[serde(default)]
    pub orientation_penalty: OrientationPenalty,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Resolve the problem definition with every section-level override
    /// applied.
    pub fn problem_def(&self) -> Result<ProblemDef> {
        let mut def = match &self.problem {
            ProblemSection::Preset {
                preset: name,
                mode,
                volume_fraction,
                load_scale,
            } => {
                let mut def = preset(name)?;
                if let Some(m) = mode {
                    def.mode = *m;
                }
                if let Some(v) = volume_fraction {
                    def.volume_fraction = *v;
                }
                if let Some(s) = load_scale {
                    for l in def.loads.iter_mut() {
                        for a in 0..3 {
                            l.force_kn[a] *= s;
                        }
                    }
                }
                def
            }
            ProblemSection::Inline(def) => def.clone(),
        };
        if let Some(mat) = &self.material {
            def.material = mat.clone();
        }
        if let Some(l) = &self.limits {
            def.limits = *l;
        }
        def.validate()?;
        Ok(def)
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            objective: self.objective,
            solver: self.output.solver,
            collision_metric: self.collision_metric,
            orientation_penalty: self.orientation_penalty,
            simp_exponent: 3.0,
            stress_exponent: 2.5,
            gamma_cap: 1e4,
            p_bar: self.optimizer.p_bar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if let Err(e) = self.problem_def() {
            errors.push(e.to_string());
        }
        if let Err(e) = self.optimizer.validate() {
            errors.push(e.to_string());
        }
        if self.network.hidden_layers < 1 || self.network.hidden_width < 1 {
            errors.push("network must have at least one hidden layer and unit".into());
        }
        if self.output.mc_resolution < 2 {
            errors.push("output.mc_resolution must be at least 2".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors.join("; ")))
        }
    }

    /// Parse a config document and apply `key.path=value` overrides before
    /// deserialization.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let config: RunConfig = serde_json::from_value(value)?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Set a leaf in a JSON tree from a `dotted.path=value` expression. Values
/// parse as JSON scalars first and fall back to strings.
fn apply_override(root: &mut serde_json::Value, expr: &str) -> Result<()> {
    let (path, raw) = expr
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{expr}' is not of the form path=value")))?;
    let leaf: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            *node = serde_json::Value::Object(Default::default());
        }
        let obj = node.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), leaf);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override path in '{expr}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_json_pretty();
        let back = RunConfig::from_json(&text, &[]).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn dotted_overrides_reach_leaves() {
        let cfg = RunConfig::from_json(
            "{}",
            &[
                "optimizer.max_iterations=42".into(),
                "optimizer.seed=7".into(),
                "problem.mode=\"2.5axis\"".into(),
                "output.dir=\"runs/custom\"".into(),
                "objective=\"stiffness\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.optimizer.max_iterations, 42);
        assert_eq!(cfg.optimizer.seed, 7);
        assert_eq!(cfg.objective, ObjectiveKind::Stiffness);
        assert_eq!(cfg.output.dir, "runs/custom");
        let def = cfg.problem_def().unwrap();
        assert_eq!(def.mode, MotionMode::TwoPointFiveAxis);
    }

    #[test]
    fn invalid_volume_fraction_names_the_field() {
        let cfg = RunConfig::from_json("{}", &["problem.volume_fraction=1.5".into()]).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("volume_fraction"), "{err}");
    }

    #[test]
    fn unknown_preset_is_rejected() {
        let cfg = RunConfig::from_json("{}", &["problem.preset=\"nope\"".into()]).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn inline_problem_section_parses() {
        let def = preset("cantilever-desk").unwrap();
        let text = serde_json::json!({ "problem": def }).to_string();
        let cfg = RunConfig::from_json(&text, &[]).unwrap();
        assert_eq!(cfg.problem_def().unwrap().name, "cantilever-desk");
    }
}
