//! The four batch operations: optimize, slice, verify, report. The thin CLI
//! and the runnable examples both call straight into these.

use std::fs;
use std::path::{Path, PathBuf};

use crate::artifacts::{
    layer_manifest, read_checkpoint, read_convergence_csv, read_run_manifest,
    write_checkpoint, write_convergence_csv, write_gamma_csv, write_gamma_vtk,
    write_histogram_csv, write_layer_attributes_csv, write_layer_obj, write_run_manifest,
    write_timings_csv, RunManifest,
};
use crate::config::RunConfig;
use crate::optim::{run_sequential_with_callback, run_with_callback, OptimResult, Trainer};
use crate::pipeline::{verify_structure, VerificationReport};
use crate::problem::build_problem;
use crate::slicer::{
    extract_layers, fiber_alignment_report, layer_statistics, solid_deposition_range,
    CurvedLayer, IsoSchedule, LayerStatistics, SlicerConfig,
};
use crate::material::hoffman_coeffs;
use crate::{Error, Result};

/// Result of a completed optimization run.
pub struct OptimizeOutcome {
    pub run_dir: PathBuf,
    pub result: OptimResult,
    pub manifest: RunManifest,
}

/// Run co-optimization (or the sequential baseline) for a config and write
/// every artifact into the config's output directory.
pub fn cmd_optimize(config: &RunConfig) -> Result<OptimizeOutcome> {
    config.validate()?;
    let def = config.problem_def()?;
    let opts = config.build_options();
    let problem = build_problem(&def, &opts)?;
    let spec = crate::problem::network_spec(
        &def,
        config.network.hidden_layers,
        config.network.hidden_width,
        config.network.projection_sharpness,
    );

    let run_dir = PathBuf::from(&config.output.dir);
    fs::create_dir_all(&run_dir)?;
    let config_path = run_dir.join("config.json");
    fs::write(&config_path, config.to_json_pretty())?;

    let every = config.output.checkpoint_every.max(1);
    let mut checkpoint_paths: Vec<PathBuf> = Vec::new();
    let dir_for_cb = run_dir.clone();
    let checkpoint_cb = |trainer: &Trainer| -> Result<()> {
        if trainer.iteration % every == 0 {
            let path = dir_for_cb.join(format!(
                "checkpoint_p{}_{:06}.ffld",
                trainer.phase, trainer.iteration
            ));
            write_checkpoint(&path, &trainer.triple)?;
        }
        Ok(())
    };

    let result = if config.optimizer.sequential {
        run_sequential_with_callback(problem, config.optimizer.clone(), &spec, checkpoint_cb)?
    } else {
        run_with_callback(problem, config.optimizer.clone(), &spec, checkpoint_cb)?
    };

    // Final artifacts.
    let fields_path = run_dir.join("fields.ffld");
    write_checkpoint(&fields_path, &result.triple)?;
    let conv_path = run_dir.join("convergence.csv");
    write_convergence_csv(&conv_path, &result.records)?;
    let timing_path = run_dir.join("timings.csv");
    write_timings_csv(&timing_path, &result.records)?;

    // Collect checkpoints actually written this run.
    for entry in fs::read_dir(&run_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with("checkpoint_") && name.ends_with(".ffld") {
            checkpoint_paths.push(entry.path());
        }
    }
    checkpoint_paths.sort();

    let mut artifact_paths: Vec<(PathBuf, bool)> = vec![
        (config_path, false),
        (fields_path, false),
        (conv_path, false),
        (timing_path, true),
    ];
    for p in checkpoint_paths {
        artifact_paths.push((p, false));
    }
    let manifest = write_run_manifest(
        &run_dir,
        serde_json::to_value(config)?,
        config.optimizer.seed,
        &artifact_paths,
        vec![format!("stop: {:?}", result.stop), format!("gamma_min: {}", result.gamma_min)],
    )?;
    Ok(OptimizeOutcome {
        run_dir,
        result,
        manifest,
    })
}

/// Result of a slicing pass.
pub struct SliceOutcome {
    pub layers: Vec<CurvedLayer>,
    pub statistics: LayerStatistics,
    pub alignment: (f64, f64),
    pub schedule: IsoSchedule,
    pub layer_dir: PathBuf,
}

/// Extract curved layers from a completed run's fields.
pub fn cmd_slice(
    run_dir: &Path,
    resolution: Option<usize>,
    spacing: Option<f64>,
) -> Result<SliceOutcome> {
    let config = read_run_config(run_dir)?;
    let def = config.problem_def()?;
    let triple = read_checkpoint(&run_dir.join("fields.ffld")).map_err(|_| {
        Error::Config(format!(
            "{}: no trained fields found (run optimize first)",
            run_dir.display()
        ))
    })?;

    let spacing = spacing.unwrap_or_else(|| def.limits.iso_spacing_or_default());
    let resolution = resolution.unwrap_or(config.output.mc_resolution);
    let domain = def.domain();
    // An empty solid slices to an empty layer list with a warning note.
    let Some((m_lo, m_hi)) = solid_deposition_range(&triple, &domain, 0.5) else {
        eprintln!("warning: empty solid, writing an empty layer set");
        let layer_dir = run_dir.join("layers");
        fs::create_dir_all(&layer_dir)?;
        let schedule = IsoSchedule {
            isovalues: Vec::new(),
            spacing,
            m_range: (0.0, 0.0),
        };
        let stats = layer_statistics(&[], &def.limits);
        let manifest = layer_manifest(&[], &stats, spacing, resolution, 0.5, (0.0, 0.0), vec![]);
        fs::write(
            layer_dir.join("layers.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        return Ok(SliceOutcome {
            layers: Vec::new(),
            statistics: stats,
            alignment: (0.0, 0.0),
            schedule,
            layer_dir,
        });
    };
    let schedule = IsoSchedule::from_range(m_lo, m_hi, spacing)?;
    let slicer_cfg = SlicerConfig {
        resolution,
        trim_threshold: 0.5,
        spacing: Some(spacing),
    };
    let layers = extract_layers(&triple, &domain, &schedule, &slicer_cfg);
    let stats = layer_statistics(&layers, &def.limits);

    // Vertex-weighted aggregate fiber alignment.
    let mut mean_acc = 0.0;
    let mut m2_acc = 0.0;
    let mut count = 0usize;
    for layer in &layers {
        let (avg, std) = fiber_alignment_report(layer);
        let n = layer.vertices.len();
        mean_acc += avg * n as f64;
        m2_acc += (std * std + avg * avg) * n as f64;
        count += n;
    }
    let alignment = if count > 0 {
        let mean = mean_acc / count as f64;
        (mean, (m2_acc / count as f64 - mean * mean).max(0.0).sqrt())
    } else {
        (0.0, 0.0)
    };

    let layer_dir = run_dir.join("layers");
    fs::create_dir_all(&layer_dir)?;
    let mut files = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let obj = layer_dir.join(format!("layer_{i:04}.obj"));
        let csv = layer_dir.join(format!("layer_{i:04}.csv"));
        write_layer_obj(&obj, layer)?;
        write_layer_attributes_csv(&csv, layer)?;
        files.push(obj.file_name().unwrap().to_string_lossy().to_string());
        files.push(csv.file_name().unwrap().to_string_lossy().to_string());
    }
    write_histogram_csv(&layer_dir.join("thickness_histogram.csv"), "thickness", &stats.thickness)?;
    write_histogram_csv(&layer_dir.join("k_max_histogram.csv"), "k_max", &stats.k_max)?;
    write_histogram_csv(&layer_dir.join("k_f_histogram.csv"), "k_f", &stats.k_f)?;
    let manifest = layer_manifest(
        &layers,
        &stats,
        spacing,
        resolution,
        0.5,
        alignment,
        files,
    );
    fs::write(
        layer_dir.join("layers.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(SliceOutcome {
        layers,
        statistics: stats,
        alignment,
        schedule,
        layer_dir,
    })
}

/// Result of a verification pass.
pub struct VerifyOutcome {
    pub report: VerificationReport,
    pub load_scale: f64,
    pub refine: f64,
    pub grid_dims: [usize; 3],
}

/// Re-run the FEA on a (possibly finer) grid at a scaled load and export the
/// failure-index map.
pub fn cmd_verify(run_dir: &Path, load_scale: Option<f64>, refine: f64) -> Result<VerifyOutcome> {
    let config = read_run_config(run_dir)?;
    let def = config.problem_def()?;
    let triple = read_checkpoint(&run_dir.join("fields.ffld")).map_err(|_| {
        Error::Config(format!(
            "{}: no trained fields found (run optimize first)",
            run_dir.display()
        ))
    })?;
    let load_scale = match load_scale {
        Some(s) => s,
        None => {
            let series = read_convergence_csv(&run_dir.join("convergence.csv"))?;
            *series
                .gamma_min
                .last()
                .ok_or_else(|| Error::Config("empty convergence log".into()))?
        }
    };
    let grid = if (refine - 1.0).abs() < 1e-12 {
        def.grid()
    } else {
        def.refined_grid(refine)
    };
    let bc = def.boundary_conditions(&grid)?;
    let material = def.material.resolve()?;
    let hoffman = hoffman_coeffs(&material)?;
    let report = verify_structure(
        &triple,
        &material,
        &hoffman,
        &grid,
        &bc,
        load_scale,
        3.0,
        2.5,
        &config.output.solver,
        &def.passive,
    )?;
    let tag = if (refine - 1.0).abs() < 1e-12 {
        "base".to_string()
    } else {
        format!("x{refine}")
    };
    write_gamma_csv(&run_dir.join(format!("gamma_map_{tag}.csv")), &grid, &report, None)?;
    write_gamma_vtk(&run_dir.join(format!("gamma_map_{tag}.vtk")), &grid, &report)?;
    let summary = serde_json::json!({
        "load_scale": load_scale,
        "refine": refine,
        "grid": grid.dims,
        "max_solid_gamma_index": report.max_solid_index,
        "yielded_volume_fraction": report.yielded_fraction,
        "solid_elements": report.solid_count,
    });
    fs::write(
        run_dir.join(format!("verify_{tag}.json")),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(VerifyOutcome {
        report,
        load_scale,
        refine,
        grid_dims: grid.dims,
    })
}

/// Comparison tables across completed runs.
pub struct ReportOutcome {
    pub out_dir: PathBuf,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub run: String,
    pub iterations: usize,
    pub final_gamma_min: f64,
    pub final_capacity_kn: f64,
    pub wall_time_s: Option<f64>,
    pub layer_count: Option<usize>,
}

use serde::Serialize;

/// Emit convergence comparisons plus a summary table for a set of runs.
pub fn cmd_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<ReportOutcome> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut names = Vec::new();
    let mut series = Vec::new();
    let mut rows = Vec::new();
    for dir in run_dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.display().to_string());
        let conv = read_convergence_csv(&dir.join("convergence.csv"))?;
        let manifest = read_run_manifest(dir).ok();
        let _ = manifest;
        let wall = fs::read_to_string(dir.join("timings.csv")).ok().map(|text| {
            text.lines()
                .skip(1)
                .filter_map(|l| l.split(',').nth(1))
                .filter_map(|v| v.parse::<f64>().ok())
                .sum::<f64>()
                / 1e3
        });
        let layer_count = fs::read_to_string(dir.join("layers/layers.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
            .and_then(|v| v["layer_count"].as_u64())
            .map(|v| v as usize);
        rows.push(SummaryRow {
            run: name.clone(),
            iterations: conv.iterations.len(),
            final_gamma_min: conv.gamma_min.last().copied().unwrap_or(f64::NAN),
            final_capacity_kn: conv.capacity.last().copied().unwrap_or(f64::NAN),
            wall_time_s: wall,
            layer_count,
        });
        names.push(name);
        series.push(conv);
    }

    // Maximum yield-free load per iteration, one column per run.
    let longest = series.iter().map(|s| s.iterations.len()).max().unwrap_or(0);
    let mut out = String::from("iteration");
    for n in &names {
        out.push_str(&format!(",capacity_kn_{n}"));
    }
    out.push('\n');
    for i in 0..longest {
        out.push_str(&format!("{i}"));
        for s in &series {
            if i < s.capacity.len() {
                out.push_str(&format!(",{}", s.capacity[i]));
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    fs::write(out_dir.join("capacity_comparison.csv"), out)?;

    // Failure-index histograms from any verification maps present.
    let mut gamma_hist = String::from("run,bin_lo,bin_hi,count\n");
    for (dir, name) in run_dirs.iter().zip(&names) {
        let map_path = dir.join("gamma_map_base.csv");
        if let Ok(text) = fs::read_to_string(&map_path) {
            let mut values = Vec::new();
            for line in text.lines().skip(1) {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() >= 12 && fields[4] == "1" {
                    if let Ok(v) = fields[11].parse::<f64>() {
                        values.push(v);
                    }
                }
            }
            let bins = 40;
            let (lo, hi) = (0.0, 2.0);
            let mut counts = vec![0u64; bins];
            for v in values {
                let b = (((v - lo) / (hi - lo) * bins as f64).floor() as isize)
                    .clamp(0, bins as isize - 1) as usize;
                counts[b] += 1;
            }
            let width = (hi - lo) / bins as f64;
            for (b, c) in counts.iter().enumerate() {
                gamma_hist.push_str(&format!(
                    "{name},{},{},{c}\n",
                    lo + b as f64 * width,
                    lo + (b + 1) as f64 * width
                ));
            }
        }
    }
    fs::write(out_dir.join("gamma_histograms.csv"), gamma_hist)?;

    // Layer-metric histograms, concatenated across runs where present.
    let mut metric_hist = String::from("run,metric,bin_lo,bin_hi,count\n");
    for (dir, name) in run_dirs.iter().zip(&names) {
        for metric in ["thickness", "k_max", "k_f"] {
            let path = dir.join(format!("layers/{metric}_histogram.csv"));
            if let Ok(text) = fs::read_to_string(&path) {
                for line in text.lines().skip(1) {
                    metric_hist.push_str(&format!("{name},{metric},{line}\n"));
                }
            }
        }
    }
    fs::write(out_dir.join("layer_histograms.csv"), metric_hist)?;

    let mut summary = String::from(
        "run,iterations,final_gamma_min,final_capacity_kn,wall_time_s,layer_count\n",
    );
    for r in &rows {
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.run,
            r.iterations,
            r.final_gamma_min,
            r.final_capacity_kn,
            r.wall_time_s.map(|w| format!("{w}")).unwrap_or_default(),
            r.layer_count.map(|c| format!("{c}")).unwrap_or_default(),
        ));
    }
    fs::write(out_dir.join("summary.csv"), summary)?;
    Ok(ReportOutcome {
        out_dir: out_dir.to_path_buf(),
        rows,
    })
}

fn read_run_config(run_dir: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(run_dir.join("config.json")).map_err(|_| {
        Error::Config(format!("{}: missing config.json", run_dir.display()))
    })?;
    RunConfig::from_json(&text, &[])
}

/// Exit code mapping for the CLI: configuration problems exit 2, numerical
/// failures exit 3.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config(dir: &Path) -> RunConfig {
        RunConfig::from_json(
            "{}",
            &[
                "problem.preset=\"mbb-desk\"".into(),
                format!("output.dir=\"{}\"", dir.display()),
                "optimizer.max_iterations=3".into(),
                "optimizer.seed=11".into(),
                // shrink the run for test speed
                "problem.volume_fraction=0.6".into(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn optimize_slice_verify_report_round_trip() {
        let base = std::env::temp_dir().join(format!("fiberforge-cmd-{}", std::process::id()));
        let _ = fs::remove_dir_all(&base);
        fs::create_dir_all(&base).unwrap();
        let run_dir = base.join("run-a");
        let config = quick_config(&run_dir);
        let outcome = cmd_optimize(&config).unwrap();
        assert_eq!(outcome.result.records.len(), 3);
        assert!(run_dir.join("manifest.json").exists());
        assert!(run_dir.join("fields.ffld").exists());
        assert!(run_dir.join("convergence.csv").exists());

        let slice = cmd_slice(&run_dir, Some(24), None).unwrap();
        assert!(!slice.layers.is_empty());
        assert!(run_dir.join("layers/layers.json").exists());

        let verify = cmd_verify(&run_dir, None, 1.0).unwrap();
        assert!((verify.report.max_solid_index - 1.0).abs() < 0.05);
        assert!(run_dir.join("gamma_map_base.csv").exists());
        assert!(run_dir.join("gamma_map_base.vtk").exists());

        let report_dir = base.join("report");
        let report = cmd_report(&[run_dir.clone()], &report_dir).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report_dir.join("capacity_comparison.csv").exists());
        assert!(report_dir.join("summary.csv").exists());
        fs::remove_dir_all(&base).unwrap();
    }

    #[test]
    fn slice_without_fields_is_a_config_error() {
        let base = std::env::temp_dir().join(format!("fiberforge-nofields-{}", std::process::id()));
        let _ = fs::remove_dir_all(&base);
        fs::create_dir_all(&base).unwrap();
        let config = quick_config(&base.join("empty"));
        fs::create_dir_all(base.join("empty")).unwrap();
        fs::write(base.join("empty/config.json"), config.to_json_pretty()).unwrap();
        let err = match cmd_slice(&base.join("empty"), None, None) {
            Err(e) => e,
            Ok(_) => panic!("slice without fields should fail"),
        };
        assert_eq!(exit_code(&err), 2);
        fs::remove_dir_all(&base).unwrap();
    }
}
