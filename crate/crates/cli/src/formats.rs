//! On-disk formats: dataset directories (manifest + per-frame CSV + ground
//! truth), model/kinematic/metrics JSON documents, joint-state files, and
//! colored PLY export.
//!
//! All documents are written with a fixed field order and floats printed
//! with 17 significant digits, so round trips are bit-exact and repeated
//! runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use artigauss_core::gaussian::{GaussianPart, GaussianSet};
use artigauss_core::geometry::{Mat3, RigidTransform, Rot6D, ScrewKind, ScrewMotion, Vec3};
use artigauss_core::kinematics::{KinematicEdge, KinematicModel};
use artigauss_core::synth::{Dataset, GroundTruth, HeldOutPose, JointSpec};

use crate::error::{CliError, CliResult};

/// 17 significant digits: enough to reproduce any f64 exactly on parse.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_float(s: &str, context: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::format(format!("{context}: not a number: '{s}'")))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))
}

fn floats(values: &[f64]) -> String {
    let mut s = String::from("[");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&fmt_float(*v));
    }
    s.push(']');
    s
}

fn rigid_to_json(t: &RigidTransform) -> String {
    let mut flat = Vec::with_capacity(9);
    for row in &t.rotation {
        flat.extend_from_slice(row);
    }
    format!(
        "{{\"rotation\":{},\"translation\":{}}}",
        floats(&flat),
        floats(&t.translation)
    )
}

// --- serde_json::Value access helpers with diagnostics ---

fn as_obj<'a>(
    v: &'a serde_json::Value,
    context: &str,
) -> CliResult<&'a serde_json::Map<String, serde_json::Value>> {
    v.as_object()
        .ok_or_else(|| CliError::format(format!("{context}: expected an object")))
}

fn field<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    name: &str,
    context: &str,
) -> CliResult<&'a serde_json::Value> {
    obj.get(name)
        .ok_or_else(|| CliError::format(format!("{context}: missing field '{name}'")))
}

fn as_f64(v: &serde_json::Value, context: &str) -> CliResult<f64> {
    v.as_f64()
        .ok_or_else(|| CliError::format(format!("{context}: expected a number")))
}

fn as_usize(v: &serde_json::Value, context: &str) -> CliResult<usize> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| CliError::format(format!("{context}: expected a nonnegative integer")))
}

fn as_array<'a>(v: &'a serde_json::Value, context: &str) -> CliResult<&'a Vec<serde_json::Value>> {
    v.as_array()
        .ok_or_else(|| CliError::format(format!("{context}: expected an array")))
}

fn vec3_from(v: &serde_json::Value, context: &str) -> CliResult<Vec3> {
    let arr = as_array(v, context)?;
    if arr.len() != 3 {
        return Err(CliError::format(format!("{context}: expected 3 numbers")));
    }
    Ok([
        as_f64(&arr[0], context)?,
        as_f64(&arr[1], context)?,
        as_f64(&arr[2], context)?,
    ])
}

fn floats_from(v: &serde_json::Value, context: &str) -> CliResult<Vec<f64>> {
    as_array(v, context)?
        .iter()
        .map(|x| as_f64(x, context))
        .collect()
}

fn rigid_from(v: &serde_json::Value, context: &str) -> CliResult<RigidTransform> {
    let obj = as_obj(v, context)?;
    let r = floats_from(field(obj, "rotation", context)?, context)?;
    if r.len() != 9 {
        return Err(CliError::format(format!("{context}: rotation needs 9 numbers")));
    }
    let rotation: Mat3 = [
        [r[0], r[1], r[2]],
        [r[3], r[4], r[5]],
        [r[6], r[7], r[8]],
    ];
    let translation = vec3_from(field(obj, "translation", context)?, context)?;
    Ok(RigidTransform::new(rotation, translation))
}

fn parse_json(text: &str, context: &str) -> CliResult<serde_json::Value> {
    serde_json::from_str(text).map_err(|e| CliError::format(format!("{context}: {e}")))
}

// --- dataset directory ---

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.csv")
}

/// Writes manifest.json, one CSV per frame (x,y,z plus the label column when
/// ground truth exists), and gt.json.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
    let mut files = Vec::with_capacity(ds.frames.len());
    for (f, frame) in ds.frames.iter().enumerate() {
        let name = frame_file_name(f);
        let mut csv = String::new();
        for (i, p) in frame.iter().enumerate() {
            let _ = write!(csv, "{},{},{}", fmt_float(p[0]), fmt_float(p[1]), fmt_float(p[2]));
            if let Some(gt) = &ds.gt {
                let _ = write!(csv, ",{}", gt.labels[f][i]);
            }
            csv.push('\n');
        }
        write_file(&dir.join(&name), &csv)?;
        files.push(name);
    }
    let mut manifest = String::from("{\"version\":1,");
    let _ = write!(manifest, "\"frames\":{},", ds.frames.len());
    manifest.push_str("\"files\":[");
    for (i, name) in files.iter().enumerate() {
        if i > 0 {
            manifest.push(',');
        }
        let _ = write!(manifest, "\"{name}\"");
    }
    manifest.push_str("],");
    let _ = write!(manifest, "\"has_gt\":{}}}", ds.gt.is_some());
    manifest.push('\n');
    write_file(&dir.join("manifest.json"), &manifest)?;

    if let Some(gt) = &ds.gt {
        write_file(&dir.join("gt.json"), &ground_truth_to_json(gt))?;
    }
    Ok(())
}

fn ground_truth_to_json(gt: &GroundTruth) -> String {
    let mut s = String::from("{");
    let _ = write!(s, "\"root\":{},", gt.root);
    s.push_str("\"joints\":[");
    for (i, j) in gt.joints.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let kind = match j.kind {
            ScrewKind::Revolute => "revolute",
            ScrewKind::Prismatic => "prismatic",
        };
        let _ = write!(
            s,
            "{{\"parent\":{},\"child\":{},\"kind\":\"{kind}\",\"axis\":{},\"origin\":{}}}",
            j.parent,
            j.child,
            floats(&j.axis),
            floats(&j.origin)
        );
    }
    s.push_str("],\"trajectory\":[");
    for (i, track) in gt.trajectory.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&floats(track));
    }
    s.push_str("],\"poses\":[");
    for (i, track) in gt.poses.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push('[');
        for (u, pose) in track.iter().enumerate() {
            if u > 0 {
                s.push(',');
            }
            // Row-major homogeneous 4x4.
            let mut flat = Vec::with_capacity(16);
            for r in 0..3 {
                flat.extend_from_slice(&pose.rotation[r]);
                flat.push(pose.translation[r]);
            }
            flat.extend_from_slice(&[0.0, 0.0, 0.0, 1.0]);
            s.push_str(&floats(&flat));
        }
        s.push(']');
    }
    let _ = write!(s, "],\"noise_sigma\":{},", fmt_float(gt.noise_sigma));
    s.push_str("\"holdout\":[");
    for (i, held) in gt.holdout.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("{\"states\":");
        s.push_str(&floats(&held.states));
        s.push_str(",\"points\":[");
        for (p_idx, p) in held.points.iter().enumerate() {
            if p_idx > 0 {
                s.push(',');
            }
            s.push_str(&floats(p));
        }
        s.push_str("],\"labels\":[");
        for (l_idx, l) in held.labels.iter().enumerate() {
            if l_idx > 0 {
                s.push(',');
            }
            let _ = write!(s, "{l}");
        }
        s.push_str("]}");
    }
    s.push_str("]}\n");
    s
}

pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(CliError::format(format!(
            "missing manifest: {}",
            manifest_path.display()
        )));
    }
    let manifest = parse_json(&read_file(&manifest_path)?, "manifest.json")?;
    let obj = as_obj(&manifest, "manifest.json")?;
    let n_frames = as_usize(field(obj, "frames", "manifest.json")?, "manifest.frames")?;
    let files = as_array(field(obj, "files", "manifest.json")?, "manifest.files")?;
    if files.len() != n_frames {
        return Err(CliError::format(format!(
            "manifest.json: {n_frames} frames but {} files",
            files.len()
        )));
    }
    let has_gt = field(obj, "has_gt", "manifest.json")?
        .as_bool()
        .ok_or_else(|| CliError::format("manifest.has_gt: expected a bool".to_string()))?;

    let mut frames = Vec::with_capacity(n_frames);
    let mut labels = Vec::with_capacity(n_frames);
    for file in files {
        let name = file
            .as_str()
            .ok_or_else(|| CliError::format("manifest.files: expected strings".to_string()))?;
        let text = read_file(&dir.join(name))?;
        let mut frame = Vec::new();
        let mut frame_labels = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let expected = if has_gt { 4 } else { 3 };
            if cols.len() != expected {
                return Err(CliError::format(format!(
                    "{name}:{}: expected {expected} columns, found {}",
                    line_no + 1,
                    cols.len()
                )));
            }
            let context = format!("{name}:{}", line_no + 1);
            frame.push([
                parse_float(cols[0], &context)?,
                parse_float(cols[1], &context)?,
                parse_float(cols[2], &context)?,
            ]);
            if has_gt {
                let label: usize = cols[3].trim().parse().map_err(|_| {
                    CliError::format(format!("{context}: bad label '{}'", cols[3]))
                })?;
                frame_labels.push(label);
            }
        }
        frames.push(frame);
        labels.push(frame_labels);
    }

    let gt = if has_gt {
        let value = parse_json(&read_file(&dir.join("gt.json"))?, "gt.json")?;
        Some(ground_truth_from_json(&value, labels)?)
    } else {
        None
    };
    Ok(Dataset { frames, gt })
}

fn ground_truth_from_json(
    value: &serde_json::Value,
    labels: Vec<Vec<usize>>,
) -> CliResult<GroundTruth> {
    let obj = as_obj(value, "gt.json")?;
    let root = as_usize(field(obj, "root", "gt.json")?, "gt.root")?;
    let mut joints = Vec::new();
    for (i, j) in as_array(field(obj, "joints", "gt.json")?, "gt.joints")?
        .iter()
        .enumerate()
    {
        let context = format!("gt.joints[{i}]");
        let jo = as_obj(j, &context)?;
        let kind = match field(jo, "kind", &context)?.as_str() {
            Some("revolute") => ScrewKind::Revolute,
            Some("prismatic") => ScrewKind::Prismatic,
            _ => return Err(CliError::format(format!("{context}: bad joint kind"))),
        };
        joints.push(JointSpec {
            parent: as_usize(field(jo, "parent", &context)?, &context)?,
            child: as_usize(field(jo, "child", &context)?, &context)?,
            kind,
            axis: vec3_from(field(jo, "axis", &context)?, &context)?,
            origin: vec3_from(field(jo, "origin", &context)?, &context)?,
        });
    }
    let trajectory: Vec<Vec<f64>> = as_array(field(obj, "trajectory", "gt.json")?, "gt.trajectory")?
        .iter()
        .enumerate()
        .map(|(i, t)| floats_from(t, &format!("gt.trajectory[{i}]")))
        .collect::<CliResult<_>>()?;
    let mut poses = Vec::new();
    for (p_idx, track) in as_array(field(obj, "poses", "gt.json")?, "gt.poses")?
        .iter()
        .enumerate()
    {
        let mut part_track = Vec::new();
        for (u, pose) in as_array(track, &format!("gt.poses[{p_idx}]"))?.iter().enumerate() {
            let context = format!("gt.poses[{p_idx}][{u}]");
            let flat = floats_from(pose, &context)?;
            if flat.len() != 16 {
                return Err(CliError::format(format!("{context}: expected 16 numbers")));
            }
            let rotation: Mat3 = [
                [flat[0], flat[1], flat[2]],
                [flat[4], flat[5], flat[6]],
                [flat[8], flat[9], flat[10]],
            ];
            part_track.push(RigidTransform::new(rotation, [flat[3], flat[7], flat[11]]));
        }
        poses.push(part_track);
    }
    let noise_sigma = as_f64(field(obj, "noise_sigma", "gt.json")?, "gt.noise_sigma")?;
    let mut holdout = Vec::new();
    for (i, held) in as_array(field(obj, "holdout", "gt.json")?, "gt.holdout")?
        .iter()
        .enumerate()
    {
        let context = format!("gt.holdout[{i}]");
        let ho = as_obj(held, &context)?;
        let states = floats_from(field(ho, "states", &context)?, &context)?;
        let points: Vec<Vec3> = as_array(field(ho, "points", &context)?, &context)?
            .iter()
            .map(|p| vec3_from(p, &context))
            .collect::<CliResult<_>>()?;
        let labels: Vec<usize> = as_array(field(ho, "labels", &context)?, &context)?
            .iter()
            .map(|l| as_usize(l, &context))
            .collect::<CliResult<_>>()?;
        holdout.push(HeldOutPose {
            states,
            points,
            labels,
        });
    }
    Ok(GroundTruth {
        labels,
        poses,
        root,
        joints,
        trajectory,
        holdout,
        noise_sigma,
    })
}

// --- model.json ---

pub fn model_to_json(set: &GaussianSet) -> String {
    let mut s = String::from("{\"version\":1,");
    let _ = write!(s, "\"m\":{},\"K\":{},", set.num_parts(), set.num_timesteps);
    s.push_str("\"parts\":[");
    for (i, part) in set.parts.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("{\"rot6d\":[");
        for (u, r) in part.rotations.iter().enumerate() {
            if u > 0 {
                s.push(',');
            }
            s.push_str(&floats(&[
                r.a[0], r.a[1], r.a[2], r.b[0], r.b[1], r.b[2],
            ]));
        }
        s.push_str("],\"centers\":[");
        for (u, c) in part.centers.iter().enumerate() {
            if u > 0 {
                s.push(',');
            }
            s.push_str(&floats(c));
        }
        s.push_str("],\"log_scales\":");
        s.push_str(&floats(&part.log_scales));
        s.push('}');
    }
    s.push_str("]}\n");
    s
}

pub fn save_model(set: &GaussianSet, path: &Path) -> CliResult<()> {
    write_file(path, &model_to_json(set))
}

pub fn load_model(path: &Path) -> CliResult<GaussianSet> {
    let value = parse_json(&read_file(path)?, "model.json")?;
    let obj = as_obj(&value, "model.json")?;
    let k = as_usize(field(obj, "K", "model.json")?, "model.K")?;
    let mut parts = Vec::new();
    for (i, part) in as_array(field(obj, "parts", "model.json")?, "model.parts")?
        .iter()
        .enumerate()
    {
        let context = format!("model.parts[{i}]");
        let po = as_obj(part, &context)?;
        let mut rotations = Vec::with_capacity(k);
        for (u, r) in as_array(field(po, "rot6d", &context)?, &context)?.iter().enumerate() {
            let flat = floats_from(r, &format!("{context}.rot6d[{u}]"))?;
            if flat.len() != 6 {
                return Err(CliError::format(format!("{context}: rot6d needs 6 numbers")));
            }
            rotations.push(Rot6D::new(
                [flat[0], flat[1], flat[2]],
                [flat[3], flat[4], flat[5]],
            ));
        }
        let centers: Vec<Vec3> = as_array(field(po, "centers", &context)?, &context)?
            .iter()
            .map(|c| vec3_from(c, &context))
            .collect::<CliResult<_>>()?;
        let ls = vec3_from(field(po, "log_scales", &context)?, &context)?;
        if rotations.len() != k || centers.len() != k {
            return Err(CliError::format(format!("{context}: expected {k} timesteps")));
        }
        parts.push(
            GaussianPart::new(rotations, centers, ls)
                .map_err(|e| CliError::format(format!("{context}: {e}")))?,
        );
    }
    let m = as_usize(field(obj, "m", "model.json")?, "model.m")?;
    if parts.len() != m {
        return Err(CliError::format(format!(
            "model.json: m={m} but {} parts",
            parts.len()
        )));
    }
    GaussianSet::new(parts).map_err(|e| CliError::format(format!("model.json: {e}")))
}

// --- kinematic.json ---

pub fn kinematic_to_json(model: &KinematicModel) -> String {
    let mut s = String::from("{");
    let _ = write!(s, "\"root\":{},", model.root);
    s.push_str("\"parts\":[");
    for (i, id) in model.parts.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{id}");
    }
    s.push_str("],\"edges\":[");
    for (i, e) in model.edges.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let kind = match e.screw.kind {
            ScrewKind::Revolute => "revolute",
            ScrewKind::Prismatic => "prismatic",
        };
        let _ = write!(
            s,
            "{{\"parent\":{},\"child\":{},\"kind\":\"{kind}\",\"axis\":{},\"origin\":{},\"states\":{}}}",
            e.parent,
            e.child,
            floats(&e.screw.axis),
            floats(&e.screw.origin),
            floats(&e.screw.states)
        );
    }
    s.push_str("],\"rest_pose\":[");
    for (i, pose) in model.rest_pose.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&rigid_to_json(pose));
    }
    s.push_str("],\"root_track\":[");
    for (i, pose) in model.root_track.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&rigid_to_json(pose));
    }
    s.push_str("]}\n");
    s
}

pub fn save_kinematic(model: &KinematicModel, path: &Path) -> CliResult<()> {
    write_file(path, &kinematic_to_json(model))
}

pub fn load_kinematic(path: &Path) -> CliResult<KinematicModel> {
    let value = parse_json(&read_file(path)?, "kinematic.json")?;
    let obj = as_obj(&value, "kinematic.json")?;
    let root = as_usize(field(obj, "root", "kinematic.json")?, "kinematic.root")?;
    let parts: Vec<usize> = as_array(field(obj, "parts", "kinematic.json")?, "kinematic.parts")?
        .iter()
        .map(|v| as_usize(v, "kinematic.parts"))
        .collect::<CliResult<_>>()?;
    let mut edges = Vec::new();
    for (i, e) in as_array(field(obj, "edges", "kinematic.json")?, "kinematic.edges")?
        .iter()
        .enumerate()
    {
        let context = format!("kinematic.edges[{i}]");
        let eo = as_obj(e, &context)?;
        let kind = match field(eo, "kind", &context)?.as_str() {
            Some("revolute") => ScrewKind::Revolute,
            Some("prismatic") => ScrewKind::Prismatic,
            _ => return Err(CliError::format(format!("{context}: bad joint kind"))),
        };
        let screw = ScrewMotion::new(
            kind,
            vec3_from(field(eo, "axis", &context)?, &context)?,
            vec3_from(field(eo, "origin", &context)?, &context)?,
            floats_from(field(eo, "states", &context)?, &context)?,
        )
        .map_err(|e| CliError::format(format!("{context}: {e}")))?;
        edges.push(KinematicEdge {
            parent: as_usize(field(eo, "parent", &context)?, &context)?,
            child: as_usize(field(eo, "child", &context)?, &context)?,
            screw,
        });
    }
    let rest_pose: Vec<RigidTransform> =
        as_array(field(obj, "rest_pose", "kinematic.json")?, "kinematic.rest_pose")?
            .iter()
            .enumerate()
            .map(|(i, p)| rigid_from(p, &format!("kinematic.rest_pose[{i}]")))
            .collect::<CliResult<_>>()?;
    let root_track: Vec<RigidTransform> =
        as_array(field(obj, "root_track", "kinematic.json")?, "kinematic.root_track")?
            .iter()
            .enumerate()
            .map(|(i, p)| rigid_from(p, &format!("kinematic.root_track[{i}]")))
            .collect::<CliResult<_>>()?;
    Ok(KinematicModel {
        parts,
        root,
        edges,
        rest_pose,
        root_track,
    })
}

// --- metrics.json ---

pub struct MetricsReport {
    pub recon_error_raw: f64,
    pub flow_error_raw: f64,
    pub reanimate_error_raw: f64,
    pub rand_index_per_scan: f64,
    pub rand_index_multi_scan: f64,
    pub tree_edit_distance: usize,
}

pub fn metrics_to_json(m: &MetricsReport) -> String {
    let mut s = String::from("{");
    let _ = write!(s, "\"recon_error_raw\":{},", fmt_float(m.recon_error_raw));
    let _ = write!(s, "\"recon_error_x100\":{},", fmt_float(m.recon_error_raw * 100.0));
    let _ = write!(s, "\"flow_error_raw\":{},", fmt_float(m.flow_error_raw));
    let _ = write!(s, "\"flow_error_x100\":{},", fmt_float(m.flow_error_raw * 100.0));
    let _ = write!(s, "\"reanimate_error_raw\":{},", fmt_float(m.reanimate_error_raw));
    let _ = write!(
        s,
        "\"reanimate_error_x100\":{},",
        fmt_float(m.reanimate_error_raw * 100.0)
    );
    let _ = write!(s, "\"rand_index_per_scan\":{},", fmt_float(m.rand_index_per_scan));
    let _ = write!(
        s,
        "\"rand_index_multi_scan\":{},",
        fmt_float(m.rand_index_multi_scan)
    );
    let _ = write!(s, "\"tree_edit_distance\":{}", m.tree_edit_distance);
    s.push_str("}\n");
    s
}

pub fn metrics_table(m: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24}{:>16}{:>16}", "metric", "raw", "x100");
    let mut row = |name: &str, raw: f64| {
        let _ = writeln!(s, "{name:<24}{raw:>16.8}{:>16.8}", raw * 100.0);
    };
    row("recon_error", m.recon_error_raw);
    row("flow_error", m.flow_error_raw);
    row("reanimate_error", m.reanimate_error_raw);
    let _ = writeln!(
        s,
        "{:<24}{:>16.8}{:>16}",
        "rand_index_per_scan", m.rand_index_per_scan, "-"
    );
    let _ = writeln!(
        s,
        "{:<24}{:>16.8}{:>16}",
        "rand_index_multi_scan", m.rand_index_multi_scan, "-"
    );
    let _ = writeln!(
        s,
        "{:<24}{:>16}{:>16}",
        "tree_edit_distance", m.tree_edit_distance, "-"
    );
    s
}

pub fn load_metrics(path: &Path) -> CliResult<MetricsReport> {
    let value = parse_json(&read_file(path)?, "metrics.json")?;
    let obj = as_obj(&value, "metrics.json")?;
    Ok(MetricsReport {
        recon_error_raw: as_f64(field(obj, "recon_error_raw", "metrics.json")?, "metrics")?,
        flow_error_raw: as_f64(field(obj, "flow_error_raw", "metrics.json")?, "metrics")?,
        reanimate_error_raw: as_f64(
            field(obj, "reanimate_error_raw", "metrics.json")?,
            "metrics",
        )?,
        rand_index_per_scan: as_f64(
            field(obj, "rand_index_per_scan", "metrics.json")?,
            "metrics",
        )?,
        rand_index_multi_scan: as_f64(
            field(obj, "rand_index_multi_scan", "metrics.json")?,
            "metrics",
        )?,
        tree_edit_distance: as_usize(
            field(obj, "tree_edit_distance", "metrics.json")?,
            "metrics",
        )?,
    })
}

// --- joint-state files for reanimation ---

/// Parses a JSON object mapping edge ids to joint values, e.g.
/// {"0": 0.5, "1": -0.2}. Unknown edge ids are an error; unnamed edges stay
/// at their rest state.
pub fn load_states(path: &Path, n_edges: usize) -> CliResult<Vec<f64>> {
    let value = parse_json(&read_file(path)?, "states file")?;
    let obj = as_obj(&value, "states file")?;
    let mut states = vec![0.0; n_edges];
    for (key, v) in obj {
        let idx: usize = key
            .parse()
            .map_err(|_| CliError::usage(format!("states file: bad edge id '{key}'")))?;
        if idx >= n_edges {
            return Err(CliError::usage(format!(
                "states file: unknown edge id {idx} (model has {n_edges} edges)"
            )));
        }
        states[idx] = as_f64(v, &format!("states['{key}']")).map_err(CliError::into_usage)?;
    }
    Ok(states)
}

// --- PLY export ---

const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
];

pub fn palette_color(label: usize) -> [u8; 3] {
    PALETTE[label % PALETTE.len()]
}

/// ASCII PLY with one colored vertex per point; colors cycle through a fixed
/// 16-color palette by label.
pub fn export_ply(points: &[Vec3], labels: &[usize], path: &Path) -> CliResult<()> {
    if points.len() != labels.len() {
        return Err(CliError::usage(format!(
            "PLY export: {} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str(
        "property double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         end_header\n",
    );
    for (p, &l) in points.iter().zip(labels) {
        let [r, g, b] = palette_color(l);
        let _ = writeln!(
            s,
            "{} {} {} {r} {g} {b}",
            fmt_float(p[0]),
            fmt_float(p[1]),
            fmt_float(p[2])
        );
    }
    write_file(path, &s)
}

/// Reads back vertex coordinates (and colors) from an ASCII PLY written by
/// [`export_ply`].
pub fn import_ply(path: &Path) -> CliResult<(Vec<Vec3>, Vec<[u8; 3]>)> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let mut count = 0usize;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = rest
                .trim()
                .parse()
                .map_err(|_| CliError::format("PLY: bad vertex count".to_string()))?;
        }
        if line.trim() == "end_header" {
            break;
        }
    }
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for line in lines.take(count) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(CliError::format(format!("PLY: bad vertex line '{line}'")));
        }
        points.push([
            parse_float(cols[0], "PLY")?,
            parse_float(cols[1], "PLY")?,
            parse_float(cols[2], "PLY")?,
        ]);
        let c: Vec<u8> = cols[3..6]
            .iter()
            .map(|s| s.parse().map_err(|_| CliError::format("PLY: bad color".to_string())))
            .collect::<CliResult<_>>()?;
        colors.push([c[0], c[1], c[2]]);
    }
    Ok((points, colors))
}

/// Resolved artifact paths inside a fit output directory.
pub struct FitArtifacts {
    pub model: PathBuf,
    pub kinematic: PathBuf,
    pub report: PathBuf,
}

impl FitArtifacts {
    pub fn in_dir(dir: &Path) -> Self {
        FitArtifacts {
            model: dir.join("model.json"),
            kinematic: dir.join("kinematic.json"),
            report: dir.join("fit_report.json"),
        }
    }
}
