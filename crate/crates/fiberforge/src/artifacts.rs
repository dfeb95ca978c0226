//! On-disk artifacts: field checkpoints, convergence logs, failure-index
//! maps, layer meshes, histograms, and the run manifest.
//!
//! Everything written here is deterministic for a fixed seed except the
//! timing log, which the manifest marks volatile so reproduction checks can
//! skip it.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::field::{FieldTriple, MotionMode, NetworkSpec};
use crate::optim::ConvergenceRecord;
use crate::pipeline::VerificationReport;
use crate::slicer::{CurvedLayer, Histogram, LayerStatistics};
use crate::fea::VoxelGrid;
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"FFLD";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetworkSpec,
    mode: MotionMode,
    setup_orientation: [f64; 3],
    seed: u64,
    theta_lens: [usize; 3],
}

/// Persist a field triple as a small JSON header plus a flat blob of 64-bit
/// floats.
pub fn write_checkpoint(path: &Path, triple: &FieldTriple) -> Result<()> {
    let header = CheckpointHeader {
        spec: triple.spec,
        mode: triple.mode,
        setup_orientation: [
            triple.setup_orientation.x,
            triple.setup_orientation.y,
            triple.setup_orientation.z,
        ],
        seed: triple.seed,
        theta_lens: [
            triple.theta_rho.len(),
            triple.theta_m.len(),
            triple.theta_a.len(),
        ],
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(header_json.len() + 16);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for &v in triple
        .theta_rho
        .iter()
        .chain(&triple.theta_m)
        .chain(&triple.theta_a)
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<FieldTriple> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Config(format!(
            "{} is not a field checkpoint",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)?;
    let total: usize = header.theta_lens.iter().sum();
    let mut blob = vec![0u8; total * 8];
    file.read_exact(&mut blob)?;
    let mut values = Vec::with_capacity(total);
    for chunk in blob.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let (rho, rest) = values.split_at(header.theta_lens[0]);
    let (m, a) = rest.split_at(header.theta_lens[1]);
    Ok(FieldTriple {
        spec: header.spec,
        mode: header.mode,
        theta_rho: rho.to_vec(),
        theta_m: m.to_vec(),
        theta_a: a.to_vec(),
        setup_orientation: Vector3::new(
            header.setup_orientation[0],
            header.setup_orientation[1],
            header.setup_orientation[2],
        ),
        seed: header.seed,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Deterministic per-iteration log (no wall times).
pub fn write_convergence_csv(path: &Path, records: &[ConvergenceRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "iteration,phase,l_obj,l_vol,l_lc,l_mo,l_ort,l_lt,l_yd,w_obj_applied,w_vol,w_lc,w_mo,w_ort,w_lt,w_yd,total,psi,degenerate_count,gamma_min,load_capacity_kn,grad_norm,lr\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.phase,
            r.l_obj,
            r.l_vol,
            fmt_opt(r.l_lc),
            fmt_opt(r.l_mo),
            fmt_opt(r.l_ort),
            fmt_opt(r.l_lt),
            fmt_opt(r.l_yd),
            r.w_obj_applied,
            r.w_vol,
            r.w_lc,
            r.w_mo,
            r.w_ort,
            r.w_lt,
            r.w_yd,
            r.total,
            r.psi,
            r.degenerate_count,
            r.gamma_min,
            r.load_capacity,
            r.grad_norm,
            r.lr,
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Wall-clock log; the manifest marks this file volatile.
pub fn write_timings_csv(path: &Path, records: &[ConvergenceRecord]) -> Result<()> {
    let mut out = String::from("iteration,wall_ms\n");
    for r in records {
        out.push_str(&format!("{},{}\n", r.iteration, r.wall_ms));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Minimal convergence reader for the comparison report.
pub struct ConvergenceSeries {
    pub iterations: Vec<usize>,
    pub capacity: Vec<f64>,
    pub gamma_min: Vec<f64>,
    pub total: Vec<f64>,
}

pub fn read_convergence_csv(path: &Path) -> Result<ConvergenceSeries> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty csv", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column {name}", path.display())))
    };
    let (ci, cc, cg, ct) = (
        col("iteration")?,
        col("load_capacity_kn")?,
        col("gamma_min")?,
        col("total")?,
    );
    let mut series = ConvergenceSeries {
        iterations: Vec::new(),
        capacity: Vec::new(),
        gamma_min: Vec::new(),
        total: Vec::new(),
    };
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        series.iterations.push(fields[ci].parse().map_err(|_| {
            Error::Config(format!("{}: bad iteration '{}'", path.display(), fields[ci]))
        })?);
        series.capacity.push(fields[cc].parse().unwrap_or(f64::NAN));
        series.gamma_min.push(fields[cg].parse().unwrap_or(f64::NAN));
        series.total.push(fields[ct].parse().unwrap_or(f64::NAN));
    }
    Ok(series)
}

/// Failure-index map as CSV rows of element index, center, stress, and index.
pub fn write_gamma_csv(
    path: &Path,
    grid: &VoxelGrid,
    report: &VerificationReport,
    sigma: Option<&[nalgebra::Vector6<f64>]>,
) -> Result<()> {
    let mut out = String::from(
        "element,cx,cy,cz,solid,sxx,syy,szz,sxy,syz,szx,gamma_index\n",
    );
    for e in 0..grid.element_count() {
        let c = grid.element_center(e);
        let s = sigma.map(|s| s[e]).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            e,
            c.x,
            c.y,
            c.z,
            report.solid[e] as u8,
            s[0],
            s[1],
            s[2],
            s[3],
            s[4],
            s[5],
            report.gamma_index[e],
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Failure-index map as a legacy-text structured grid for external viewers.
pub fn write_gamma_vtk(path: &Path, grid: &VoxelGrid, report: &VerificationReport) -> Result<()> {
    let nd = grid.node_dims();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("failure index map\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET STRUCTURED_POINTS\n");
    out.push_str(&format!("DIMENSIONS {} {} {}\n", nd[0], nd[1], nd[2]));
    out.push_str(&format!(
        "ORIGIN {} {} {}\n",
        grid.origin[0], grid.origin[1], grid.origin[2]
    ));
    out.push_str(&format!("SPACING {} {} {}\n", grid.h, grid.h, grid.h));
    out.push_str(&format!("CELL_DATA {}\n", grid.element_count()));
    out.push_str("SCALARS gamma_index double 1\nLOOKUP_TABLE default\n");
    // VTK cell order is x-fastest; the grid indexes z-fastest.
    for ez in 0..grid.dims[2] {
        for ey in 0..grid.dims[1] {
            for ex in 0..grid.dims[0] {
                let e = grid.element_index(ex, ey, ez);
                out.push_str(&format!("{}\n", report.gamma_index[e]));
            }
        }
    }
    out.push_str("SCALARS solid int 1\nLOOKUP_TABLE default\n");
    for ez in 0..grid.dims[2] {
        for ey in 0..grid.dims[1] {
            for ex in 0..grid.dims[0] {
                let e = grid.element_index(ex, ey, ez);
                out.push_str(&format!("{}\n", report.solid[e] as u8));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// ASCII OBJ positions and faces; attributes go to the sidecar CSV.
pub fn write_layer_obj(path: &Path, layer: &CurvedLayer) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# curved layer at isovalue {}\n", layer.isovalue));
    for v in &layer.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in &layer.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_layer_attributes_csv(path: &Path, layer: &CurvedLayer) -> Result<()> {
    let mut out =
        String::from("vertex,x,y,z,fiber_x,fiber_y,fiber_z,thickness_mm,k_max,k_f,rho\n");
    for i in 0..layer.vertices.len() {
        let v = layer.vertices[i];
        let f = layer.fiber[i];
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            i,
            v.x,
            v.y,
            v.z,
            f.x,
            f.y,
            f.z,
            layer.thickness[i],
            layer.k_max[i],
            layer.k_f[i],
            layer.rho[i],
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, name: &str, hist: &Histogram) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    let width = (hist.hi - hist.lo) / hist.counts.len() as f64;
    for (i, &c) in hist.counts.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            hist.lo + i as f64 * width,
            hist.lo + (i + 1) as f64 * width,
            c
        ));
    }
    fs::write(path, out)?;
    let _ = name;
    Ok(())
}

/// Summary of one slicing pass.
#[derive(Debug, Serialize, Deserialize)]
pub struct LayerManifest {
    pub layer_count: usize,
    pub isovalues: Vec<f64>,
    pub spacing: f64,
    pub resolution: usize,
    pub trim_threshold: f64,
    pub total_vertices: usize,
    pub total_faces: usize,
    pub non_manifold_edges: usize,
    pub thickness_violation_fraction: f64,
    pub k_max_violation_fraction: f64,
    pub k_f_violation_fraction: f64,
    pub fiber_alignment_mean_deg: f64,
    pub fiber_alignment_std_deg: f64,
    pub files: Vec<String>,
}

pub fn layer_manifest(
    layers: &[CurvedLayer],
    stats: &LayerStatistics,
    spacing: f64,
    resolution: usize,
    trim_threshold: f64,
    alignment: (f64, f64),
    files: Vec<String>,
) -> LayerManifest {
    LayerManifest {
        layer_count: layers.len(),
        isovalues: layers.iter().map(|l| l.isovalue).collect(),
        spacing,
        resolution,
        trim_threshold,
        total_vertices: layers.iter().map(|l| l.vertices.len()).sum(),
        total_faces: layers.iter().map(|l| l.faces.len()).sum(),
        non_manifold_edges: layers.iter().map(|l| l.non_manifold_edges).sum(),
        thickness_violation_fraction: stats.thickness_violation_fraction(),
        k_max_violation_fraction: stats.k_max_violation_fraction(),
        k_f_violation_fraction: stats.k_f_violation_fraction(),
        fiber_alignment_mean_deg: alignment.0,
        fiber_alignment_std_deg: alignment.1,
        files,
    }
}

/// Index entry for one artifact in the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
    /// Timing and other wall-clock artifacts differ across reproductions.
    pub volatile: bool,
}

/// Reproduction record: a config snapshot, the seed, a content hash of the
/// effective configuration, and an index of every artifact written.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub seed: u64,
    pub config_sha256: String,
    pub outputs: Vec<ArtifactEntry>,
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn hash_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path)?;
    Ok((bytes.len() as u64, sha256_hex(&bytes)))
}

/// Build and write the run manifest for a directory of declared artifacts.
pub fn write_run_manifest(
    dir: &Path,
    config_json: serde_json::Value,
    seed: u64,
    artifact_paths: &[(PathBuf, bool)],
    notes: Vec<String>,
) -> Result<RunManifest> {
    let config_sha256 = sha256_hex(serde_json::to_string(&config_json)?.as_bytes());
    let mut outputs = Vec::new();
    for (path, volatile) in artifact_paths {
        let (bytes, sha256) = hash_file(path)?;
        let rel = path
            .strip_prefix(dir)
            .unwrap_or(path)
            .to_string_lossy()
            .to_string();
        outputs.push(ArtifactEntry {
            path: rel,
            bytes,
            sha256,
            volatile: *volatile,
        });
    }
    let manifest = RunManifest {
        config: config_json,
        seed,
        config_sha256,
        outputs,
        notes,
    };
    let mut file = fs::File::create(dir.join("manifest.json"))?;
    file.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_run_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}
