//! The six subcommands. Each takes a resolved [`RunConfig`], writes its
//! artifacts under `--out`, and cleans up partial outputs on failure via
//! [`OutputGuard`].

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nvf_core::ablation::{run_ablation, write_ablation_csv, SweepAxis, SweepOutcome};
use nvf_core::marching_cubes::marching_cubes;
use nvf_core::math::Point3;
use nvf_core::mesh::write_obj;
use nvf_core::metrics::{auc_pck, joint_errors, MetricAccumulator};
use nvf_core::nn::checkpoint::{load_model, save_model};
use nvf_core::nn::infer::{
    forward_points, infer, infer_field_with, inference_region, predict_sdf_grid,
};
use nvf_core::nn::model::{Model, ModelKind, QueryContext};
use nvf_core::nn::train::train;
use nvf_core::pose_field::{write_joint_set, JointSet, Space};
use nvf_core::sampling::{sample_inference_grid, GridSampleSpec};
use nvf_core::scene::{
    generate_dataset, read_dataset, read_scene_dir, reference_camera, scene_dir_name,
    write_scene_dir, SceneRandomization, SceneRecord,
};
use nvf_core::{Error, Result};

use crate::config::RunConfig;
use crate::guard::OutputGuard;

/// Per-scene decoder context: the ground-truth wrist doubles as the root
/// estimate in root-relative mode (the synthetic pipeline has no separate
/// root detector), and the scale input comes from the scene record.
fn scene_context(cfg_space: Space, rec: &SceneRecord<f32>) -> QueryContext<f32> {
    QueryContext {
        root: match cfg_space {
            Space::Camera => None,
            Space::RootRelative => Some(rec.joints.joints[0]),
        },
        hand_scale: Some(rec.hand_scale),
    }
}

/// Ground truth expressed in the model's output space.
fn ground_truth_in_space(space: Space, rec: &SceneRecord<f32>) -> JointSet<f32> {
    match space {
        Space::Camera => rec.joints.clone(),
        Space::RootRelative => rec.joints.root_relative(),
    }
}

fn load_scenes(dir: &Path) -> Result<Vec<SceneRecord<f32>>> {
    let records = read_dataset::<f32>(dir)?;
    if records.is_empty() {
        return Err(Error::Dataset(format!(
            "no scene directories under {}",
            dir.display()
        )));
    }
    Ok(records)
}

/// `gen`: write `n_scenes` synthetic scenes under the output directory.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut guard = OutputGuard::new();
    let cam = reference_camera::<f32>();
    let records = generate_dataset(
        cfg.n_scenes,
        &SceneRandomization::default(),
        &cam,
        cfg.seed,
        &cfg.scene_options(),
    )?;
    guard.ensure_dir(out)?;
    for (i, record) in records.iter().enumerate() {
        let dir = out.join(scene_dir_name(i));
        guard.track(&dir);
        write_scene_dir(&dir, record)?;
    }
    log::info!(
        "wrote {} scenes (seed {}) to {}",
        records.len(),
        cfg.seed,
        out.display()
    );
    guard.commit();
    Ok(())
}

/// `train`: fit the configured model on a dataset; writes `model.nvf` and
/// `loss.csv`.
pub fn cmd_train(cfg: &RunConfig, scenes_dir: &Path, out: &Path) -> Result<()> {
    let mut guard = OutputGuard::new();
    let records = load_scenes(scenes_dir)?;
    let mut model = Model::new(cfg.model_config(records[0].cam), cfg.seed);
    log::info!(
        "training a {} model ({} space) on {} scenes for {} steps",
        model.cfg.kind.as_str(),
        model.cfg.space.as_str(),
        records.len(),
        cfg.steps
    );
    let curve = train(&mut model, &records, &cfg.train_config())?;

    guard.ensure_dir(out)?;
    let ckpt = out.join("model.nvf");
    guard.track(&ckpt);
    save_model(&model, &ckpt)?;
    let loss_csv = out.join("loss.csv");
    guard.track(&loss_csv);
    let mut text = String::from("step,loss\n");
    for (step, loss) in curve.iter().enumerate() {
        let _ = writeln!(text, "{step},{loss:.6}");
    }
    std::fs::write(&loss_csv, text)?;
    log::info!(
        "final loss {:.6}; checkpoint at {}",
        curve.last().copied().unwrap_or(f32::NAN),
        ckpt.display()
    );
    guard.commit();
    Ok(())
}

/// `infer`: predict one scene's joints; writes `joints.json` and, on
/// request, the predicted signed-distance lattice as `sdf_grid.json`.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene_dir: &Path,
    out: &Path,
    expect_kind: Option<ModelKind>,
    dump_sdf: bool,
    sdf_pitch: f64,
) -> Result<()> {
    let mut guard = OutputGuard::new();
    let model: Model<f32> = load_model(checkpoint)?;
    check_kind(&model, expect_kind)?;
    let rec = read_scene_dir::<f32>(scene_dir)?;
    let ctx = scene_context(model.cfg.space, &rec);
    let result = infer(&model, &rec.image, cfg.step as f32, &ctx)?;

    guard.ensure_dir(out)?;
    let joints_path = out.join("joints.json");
    guard.track(&joints_path);
    write_joint_set(&joints_path, &result.joints, model.cfg.space, &result.invalid)?;
    if dump_sdf {
        let grid_path = out.join("sdf_grid.json");
        guard.track(&grid_path);
        let grid = predict_sdf_grid(&model, &rec.image, &ctx, sdf_pitch as f32)?;
        write_grid_json(&grid_path, &grid)?;
    }
    log::info!(
        "{} of {} query points were valid voters; {} joints fell back",
        result.n_valid,
        result.n_points,
        result.invalid.len()
    );
    guard.commit();
    Ok(())
}

fn check_kind(model: &Model<f32>, expect: Option<ModelKind>) -> Result<()> {
    if let Some(kind) = expect {
        if model.cfg.kind != kind {
            return Err(Error::Config(format!(
                "checkpoint holds a {} model, but --model asked for {}",
                model.cfg.kind.as_str(),
                kind.as_str()
            )));
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct GridDoc {
    unit: &'static str,
    origin: [f64; 3],
    pitch: f64,
    dims: [usize; 3],
    values: Vec<f32>,
}

fn write_grid_json(path: &Path, grid: &nvf_core::marching_cubes::ScalarGrid<f32>) -> Result<()> {
    let doc = GridDoc {
        unit: "mm",
        origin: [
            grid.origin.x as f64,
            grid.origin.y as f64,
            grid.origin.z as f64,
        ],
        pitch: grid.pitch as f64,
        dims: grid.dims,
        values: grid.values.clone(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &doc)?;
    Ok(())
}

/// `eval`: run inference over a dataset and write `eval.csv` — one row per
/// scene plus a closing summary row of the means and pooled AUC.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    scenes_dir: &Path,
    out: &Path,
    expect_kind: Option<ModelKind>,
) -> Result<()> {
    let mut guard = OutputGuard::new();
    let model: Model<f32> = load_model(checkpoint)?;
    check_kind(&model, expect_kind)?;
    let records = load_scenes(scenes_dir)?;

    let mut acc = MetricAccumulator::new();
    let mut per_scene_auc = Vec::with_capacity(records.len());
    let mut per_scene_invalid = Vec::with_capacity(records.len());
    for rec in &records {
        let ctx = scene_context(model.cfg.space, rec);
        let result = infer(&model, &rec.image, cfg.step as f32, &ctx)?;
        let gt = ground_truth_in_space(model.cfg.space, rec);
        per_scene_auc.push(auc_pck(&joint_errors(&result.joints, &gt)?)?);
        per_scene_invalid.push(result.invalid.len());
        acc.add(&result.joints, &gt)?;
    }
    let report = acc.finish()?;

    let mut text = String::from("scene,cs_mje,cs_auc,te,de,mje,rs_mje,invalid_joints\n");
    for i in 0..records.len() {
        let _ = writeln!(
            text,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            scene_dir_name(i),
            report.per_sample_cs_mje[i],
            per_scene_auc[i],
            report.per_sample_te[i],
            report.per_sample_de[i],
            report.per_sample_mje[i],
            report.per_sample_rs_mje[i],
            per_scene_invalid[i],
        );
    }
    let _ = writeln!(
        text,
        "summary,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
        report.cs_mje,
        report.cs_auc,
        report.te,
        report.de,
        report.mje,
        report.rs_mje,
        per_scene_invalid.iter().sum::<usize>(),
    );
    guard.ensure_dir(out)?;
    let csv = out.join("eval.csv");
    guard.track(&csv);
    std::fs::write(&csv, text)?;
    log::info!(
        "evaluated {} scenes: mean joint error {:.2} mm, AUC {:.3}",
        report.n_samples,
        report.cs_mje,
        report.cs_auc
    );
    guard.commit();
    Ok(())
}

/// `ablate`: sweep one voting/grid parameter over the given values, running
/// a full evaluation per value; writes `ablation.csv`. Field models only —
/// the baselines have none of the swept parameters.
pub fn cmd_ablate(
    cfg: &RunConfig,
    checkpoint: &Path,
    scenes_dir: &Path,
    axis: &str,
    values: &str,
    out: &Path,
) -> Result<()> {
    let mut guard = OutputGuard::new();
    let model: Model<f32> = load_model(checkpoint)?;
    if model.cfg.kind != ModelKind::Field {
        return Err(Error::Config(format!(
            "ablation sweeps need a field model; the checkpoint holds {}",
            model.cfg.kind.as_str()
        )));
    }
    let axis = SweepAxis::parse(axis)?;
    let values = parse_values(values)?;
    let records = load_scenes(scenes_dir)?;

    let rows = run_ablation(
        axis,
        &values,
        &model.cfg.voting,
        cfg.step as f32,
        |params, step| {
            let start = Instant::now();
            let mut acc = MetricAccumulator::new();
            let mut invalid_joint_count = 0usize;
            for rec in &records {
                let ctx = scene_context(model.cfg.space, rec);
                let result = infer_field_with(&model, &rec.image, step, &ctx, params)?;
                invalid_joint_count += result.invalid.len();
                acc.add(&result.joints, &ground_truth_in_space(model.cfg.space, rec))?;
            }
            let elapsed = start.elapsed().as_secs_f64().max(1e-9);
            Ok(SweepOutcome {
                report: acc.finish()?,
                pts_per_sec: records.len() as f64 / elapsed,
                invalid_joint_count,
            })
        },
    )?;

    guard.ensure_dir(out)?;
    let csv = out.join("ablation.csv");
    guard.track(&csv);
    write_ablation_csv(&csv, &rows)?;
    log::info!(
        "swept {} over {} values on {} scenes",
        axis.name(),
        values.len(),
        records.len()
    );
    guard.commit();
    Ok(())
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("--values: {v:?} is not a number")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Config("--values must list at least one value".into()));
    }
    Ok(values)
}

/// `render`: extract the predicted zero level set as an OBJ mesh and write
/// one vote-weight point cloud PLY per joint (brightness encodes the
/// predicted weight). Emits files even for an untrained model.
pub fn cmd_render(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene_dir: &Path,
    out: &Path,
    pitch: f64,
) -> Result<()> {
    let mut guard = OutputGuard::new();
    let model: Model<f32> = load_model(checkpoint)?;
    if model.cfg.kind != ModelKind::Field {
        return Err(Error::Config(format!(
            "render needs a field model; the checkpoint holds {}",
            model.cfg.kind.as_str()
        )));
    }
    let rec = read_scene_dir::<f32>(scene_dir)?;
    let ctx = scene_context(model.cfg.space, &rec);

    let grid = predict_sdf_grid(&model, &rec.image, &ctx, pitch as f32)?;
    let mesh = marching_cubes(&grid, 0.0f32)?;
    guard.ensure_dir(out)?;
    let obj = out.join("mesh.obj");
    guard.track(&obj);
    write_obj(&mesh, &obj)?;

    let region = inference_region(&model, &ctx)?;
    let points = sample_inference_grid(&GridSampleSpec {
        step: cfg.step as f32,
        region,
    })?;
    let f = model.encode(&rec.image)?;
    let preds = forward_points(&model, &f, &points, &ctx)?;
    let delta = model.cfg.voting.delta;
    for t in 0..model.cfg.joint_count {
        let cloud: Vec<(Point3<f32>, f32)> = points
            .iter()
            .zip(&preds)
            .filter(|(_, pred)| pred.s.abs() < delta)
            .map(|(&p, pred)| (p, pred.v[t].w))
            .collect();
        let ply = out.join(format!("votes_joint_{t:02}.ply"));
        guard.track(&ply);
        write_vote_ply(&ply, &cloud)?;
    }
    log::info!(
        "mesh: {} vertices, {} faces; vote clouds over {} voters",
        mesh.vertices.len(),
        mesh.faces.len(),
        preds.iter().filter(|p| p.s.abs() < delta).count()
    );
    guard.commit();
    Ok(())
}

/// ASCII PLY point cloud with the weight as 8-bit gray on vertex colors.
fn write_vote_ply(path: &Path, cloud: &[(Point3<f32>, f32)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    for channel in ["red", "green", "blue"] {
        writeln!(w, "property uchar {channel}")?;
    }
    writeln!(w, "end_header")?;
    for &(p, weight) in cloud {
        let gray = (weight.clamp(0.0, 1.0) * 255.0).round() as u8;
        writeln!(w, "{} {} {} {gray} {gray} {gray}", p.x, p.y, p.z)?;
    }
    Ok(())
}

