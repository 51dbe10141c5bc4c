//! Subcommand implementations.

use std::path::{Path, PathBuf};

use graspkit::dsmt::{
    run_many, toy_task_for_cloud, DsmtConfig, DsmtRun, EpochRecord, ToyTask, TrainMode,
};
use graspkit::geometry::{ObjectCloud, ObjectKind};
use graspkit::hand::{load_hand_config, HandModel, HandPose};
use graspkit::io::{
    read_json, to_json_text, write_atomic, write_csv, FileDigest, GraspMeta, GraspSetFile,
    Manifest, ObjectSpec, RunConfig,
};
use graspkit::matching::{cost_matrix, hungarian, CostWeights};
use graspkit::metrics::{evaluate_set, EvalParams, MetricsReport, Q1Params};
use graspkit::tta::{refine_set, DistanceTerm, TtaConfig};
use graspkit::Exec;
use serde::Serialize;
use serde_json::json;

use crate::{
    Cli, Command, Common, EvaluateArgs, MatchArgs, RefineArgs, RefineMode, ReportArgs, Scene,
    TrainArgs,
};

/// A failure classified for the exit status.
#[derive(Debug)]
pub struct CliError {
    pub validation: bool,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            validation: true,
            message: message.into(),
        }
    }
}

impl From<graspkit::Error> for CliError {
    fn from(e: graspkit::Error) -> Self {
        Self {
            validation: e.is_validation(),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: &Cli) -> CliResult {
    let ctx = Context::new(&cli.common)?;
    match &cli.command {
        Command::Refine(a) => refine(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::TrainToy(a) => train_toy(&ctx, a),
        Command::Match(a) => match_sets(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

/// Effective settings shared by all subcommands.
struct Context {
    config: Option<RunConfig>,
    seed: u64,
    scale: f64,
    out: PathBuf,
    exec: Exec,
}

impl Context {
    fn new(common: &Common) -> CliResult<Self> {
        if !(common.scale.is_finite() && common.scale > 0.0) {
            return Err(CliError::validation(format!(
                "--scale must be positive, got {}",
                common.scale
            )));
        }
        let config = common.config.as_deref().map(RunConfig::load).transpose()?;
        let seed = common.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
        let out = common
            .out
            .clone()
            .or(config.as_ref().map(|c| c.output.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        let exec = if common.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        };
        Ok(Self {
            config,
            seed,
            scale: common.scale,
            out,
            exec,
        })
    }

    fn hand_path(&self, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
        flag.clone()
            .or(self.config.as_ref().map(|c| c.hand.clone()))
            .ok_or_else(|| CliError::validation("no hand configuration: pass --hand or --config"))
    }

    fn hand(&self, flag: &Option<PathBuf>) -> CliResult<(PathBuf, HandModel)> {
        let path = self.hand_path(flag)?;
        let model = load_hand_config(&path)?;
        Ok((path, model))
    }

    /// Objects named on the command line, else those of the run config.
    fn objects(&self, scene: &Scene) -> CliResult<Vec<ObjectSpec>> {
        if let Some(text) = &scene.object {
            return Ok(vec![parse_object(text, scene.points, self.scale)?]);
        }
        match &self.config {
            Some(c) if !c.objects.is_empty() => Ok(c.objects.clone()),
            _ => Err(CliError::validation(
                "no object: pass --object or list objects in --config",
            )),
        }
    }

    fn object(&self, scene: &Scene) -> CliResult<(String, ObjectSpec, ObjectCloud)> {
        let spec = self.objects(scene)?.remove(0);
        let cloud = spec.load(self.seed)?;
        Ok((spec.name(0), spec, cloud))
    }

    fn tta(&self) -> TtaConfig {
        self.config.as_ref().map(|c| c.tta).unwrap_or_default()
    }

    fn q1(&self) -> Q1Params {
        self.config.as_ref().map(|c| c.q1).unwrap_or_default()
    }

    fn cost(&self) -> CostWeights {
        self.config.as_ref().map(|c| c.cost).unwrap_or_default()
    }

    fn manifest(&self, command: &str, settings: serde_json::Value) -> Manifest {
        Manifest::new(command, self.seed, settings)
    }
}

/// Parses `sphere:R`, `box:HX,HY,HZ`, `cylinder:R,HH` or a cloud file path.
fn parse_object(text: &str, points: usize, scale: f64) -> CliResult<ObjectSpec> {
    let shape = |kind: &str, args: &str| -> CliResult<ObjectKind> {
        let v = args
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CliError::validation(format!("bad numbers in object `{text}`")))?;
        match (kind, v.as_slice()) {
            ("sphere", [r]) => Ok(ObjectKind::Sphere { radius: *r }),
            ("box", [x, y, z]) => Ok(ObjectKind::Box { half: [*x, *y, *z] }),
            ("cylinder", [r, hh]) => Ok(ObjectKind::Cylinder {
                radius: *r,
                half_height: *hh,
            }),
            _ => Err(CliError::validation(format!(
                "object `{text}`: expected sphere:R, box:HX,HY,HZ or cylinder:R,HH"
            ))),
        }
    };
    match text.split_once(':') {
        Some((kind @ ("sphere" | "box" | "cylinder"), args)) => Ok(ObjectSpec::Synthetic {
            name: Some(kind.to_string()),
            shape: shape(kind, args)?,
            points,
            seed: None,
        }),
        _ => Ok(ObjectSpec::File {
            name: None,
            path: PathBuf::from(text),
            scale,
        }),
    }
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

fn object_inputs(spec: &ObjectSpec) -> CliResult<Vec<FileDigest>> {
    match spec {
        ObjectSpec::File { path, .. } => Ok(vec![FileDigest::of(path, label(path))?]),
        ObjectSpec::Synthetic { .. } => Ok(Vec::new()),
    }
}

/// Collects written files for the manifest.
struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self {
            dir,
            written: Vec::new(),
        }
    }

    fn text(&mut self, rel: impl AsRef<Path>, text: &str) -> CliResult {
        let rel = rel.as_ref();
        write_atomic(self.dir.join(rel), text.as_bytes())?;
        self.written.push(rel.to_path_buf());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> CliResult {
        self.text(rel, &to_json_text(value))
    }

    fn csv<T: Serialize>(&mut self, rel: impl AsRef<Path>, rows: &[T]) -> CliResult {
        let rel = rel.as_ref();
        write_csv(self.dir.join(rel), rows)?;
        self.written.push(rel.to_path_buf());
        Ok(())
    }

    fn finish(self, mut manifest: Manifest) -> CliResult {
        for rel in &self.written {
            let shown = rel.to_string_lossy().replace('\\', "/");
            manifest
                .outputs
                .push(FileDigest::of(self.dir.join(rel), shown)?);
        }
        manifest.save(self.dir.join("manifest.json"))?;
        Ok(())
    }
}

fn load_grasps(path: &Path, model: &HandModel) -> CliResult<(GraspSetFile, Vec<HandPose>)> {
    let file = GraspSetFile::load(path)?;
    let poses = file.to_poses(model)?;
    if poses.is_empty() {
        return Err(CliError::validation(format!(
            "{}: grasp set is empty",
            path.display()
        )));
    }
    Ok((file, poses))
}

#[derive(Serialize)]
struct RefineTraceRow {
    grasp: usize,
    step: usize,
    total: f64,
    pen: f64,
    dist: f64,
    spen: f64,
    max_depth: f64,
    contacts: usize,
}

fn refine(ctx: &Context, a: &RefineArgs) -> CliResult {
    let (hand_path, model) = ctx.hand(&a.scene.hand)?;
    let (object, spec, cloud) = ctx.object(&a.scene)?;
    let (input, poses) = load_grasps(&a.grasps, &model)?;
    let mut cfg = ctx.tta();
    if a.mode == RefineMode::PenVdis {
        let preset = TtaConfig::pen_vdis();
        cfg.beta_t = preset.beta_t;
        cfg.distance = DistanceTerm::Vanilla;
    }
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    cfg.validate()?;
    let (refined, summary) = refine_set(&model, &poses, &cloud, &cfg, ctx.exec)?;

    let mut set = GraspSetFile::from_poses(
        input.hand.clone(),
        object.clone(),
        &refined.iter().map(|r| r.pose.clone()).collect::<Vec<_>>(),
    );
    for (rec, r) in set.poses.iter_mut().zip(&refined) {
        let mut meta = GraspMeta {
            stage: Some("refined".into()),
            ..Default::default()
        };
        meta.losses.insert("initial_total".into(), r.initial.total);
        meta.losses.insert("final_total".into(), r.best.total);
        meta.losses
            .insert("initial_max_depth".into(), r.initial.max_depth);
        meta.losses
            .insert("final_max_depth".into(), r.best.max_depth);
        rec.meta = Some(meta);
    }
    let trace: Vec<RefineTraceRow> = refined
        .iter()
        .enumerate()
        .flat_map(|(g, r)| {
            r.trace.iter().map(move |t| RefineTraceRow {
                grasp: g,
                step: t.step,
                total: t.total,
                pen: t.pen,
                dist: t.dist,
                spen: t.spen,
                max_depth: t.max_depth,
                contacts: t.contacts,
            })
        })
        .collect();
    let per_grasp: Vec<_> = refined
        .iter()
        .enumerate()
        .map(|(g, r)| json!({"grasp": g, "best_step": r.best_step, "stop": r.stop}))
        .collect();

    let mut out = Outputs::new(&ctx.out);
    out.text("refined.json", &set.to_json())?;
    out.csv("refine_trace.csv", &trace)?;
    out.json(
        "refine_summary.json",
        &json!({"summary": summary, "grasps": per_grasp}),
    )?;
    let mode = match a.mode {
        RefineMode::AbTta => "ab-tta",
        RefineMode::PenVdis => "pen-vdis",
    };
    let mut manifest = ctx.manifest(
        "refine",
        json!({"object": object, "mode": mode, "tta": cfg}),
    );
    manifest
        .inputs
        .push(FileDigest::of(&hand_path, label(&hand_path))?);
    manifest.inputs.extend(object_inputs(&spec)?);
    manifest
        .inputs
        .push(FileDigest::of(&a.grasps, label(&a.grasps))?);
    out.finish(manifest)?;
    println!(
        "refined {} grasps: mean loss {:.6} -> {:.6}, mean max depth {:.3} -> {:.3} mm",
        summary.count,
        summary.mean_initial_loss,
        summary.mean_final_loss,
        summary.mean_initial_depth * 1e3,
        summary.mean_final_depth * 1e3
    );
    Ok(())
}

fn evaluate(ctx: &Context, a: &EvaluateArgs) -> CliResult {
    let (hand_path, model) = ctx.hand(&a.scene.hand)?;
    let (object, spec, cloud) = ctx.object(&a.scene)?;
    let (_, poses) = load_grasps(&a.grasps, &model)?;
    let params = EvalParams {
        q1: ctx.q1(),
        bins: a.bins,
    };
    let report = evaluate_set(&model, &poses, &cloud, &params, ctx.exec)?;

    let mut out = Outputs::new(&ctx.out);
    out.json("metrics.json", &report)?;
    out.csv("metrics.csv", &report.grasps)?;
    let mut manifest = ctx.manifest(
        "evaluate",
        json!({"object": object, "q1": params.q1, "bins": params.bins}),
    );
    manifest
        .inputs
        .push(FileDigest::of(&hand_path, label(&hand_path))?);
    manifest.inputs.extend(object_inputs(&spec)?);
    manifest
        .inputs
        .push(FileDigest::of(&a.grasps, label(&a.grasps))?);
    out.finish(manifest)?;
    let s = &report.set;
    println!(
        "{} grasps: Q1 {:.4}  eta_np {:.2}%  eta_tb {:.2}%  Pen {:.3} cm  delta_t {:.2}%  delta_r {:.2}%  delta_q {:.2}%",
        s.count, s.mean_q1, s.eta_np, s.eta_tb, s.mean_pen_cm, s.delta_t, s.delta_r, s.delta_q
    );
    Ok(())
}

fn mode_label(mode: &TrainMode) -> String {
    match mode {
        TrainMode::Dsmt => "dsmt".into(),
        TrainMode::Dynamic { lambda6 } => format!("dynamic-l{lambda6}"),
    }
}

fn train_toy(ctx: &Context, a: &TrainArgs) -> CliResult {
    let (hand_path, model) = ctx.hand(&a.scene.hand)?;
    let specs = ctx.objects(&a.scene)?;
    let base = match &ctx.config {
        Some(c) => c.clone(),
        None => RunConfig {
            seed: ctx.seed,
            hand: hand_path.clone(),
            objects: Vec::new(),
            loss: Default::default(),
            cost: Default::default(),
            schedule: Default::default(),
            tta: Default::default(),
            q1: Default::default(),
            toy: Default::default(),
            output: ctx.out.clone(),
        },
    };
    let mut modes = base.toy.modes.clone();
    for &l in &a.baselines {
        if !(l.is_finite() && l >= 0.0) {
            return Err(CliError::validation(format!(
                "--baseline must be ≥ 0, got {l}"
            )));
        }
        modes.push(TrainMode::Dynamic { lambda6: l });
    }
    let mut names: Vec<String> = specs.iter().enumerate().map(|(i, s)| s.name(i)).collect();
    // keep output directories distinct when names repeat
    for i in 0..names.len() {
        if names[..i].contains(&names[i]) {
            names[i] = format!("{}-{i}", names[i]);
        }
    }
    let tasks: Vec<ToyTask> = specs
        .iter()
        .zip(&names)
        .map(|(s, name)| {
            let cloud = s.load(ctx.seed)?;
            Ok(toy_task_for_cloud(
                &model,
                name.clone(),
                cloud,
                base.toy.ground_truths,
                ctx.seed,
            )?)
        })
        .collect::<CliResult<_>>()?;
    let mut jobs: Vec<(ToyTask, DsmtConfig)> = Vec::new();
    for task in &tasks {
        for mode in &modes {
            let mut cfg = base.dsmt_config(*mode);
            cfg.seed = ctx.seed;
            jobs.push((task.clone(), cfg));
        }
    }
    let runs = run_many(&model, &jobs, ctx.exec)?;

    let mut out = Outputs::new(&ctx.out);
    let mut summary = Vec::new();
    for task in &tasks {
        out.text(
            Path::new(&task.name).join("ground_truth.json"),
            &GraspSetFile::from_poses(label(&hand_path), task.name.clone(), &task.ground_truths)
                .with_stage("ground-truth")
                .to_json(),
        )?;
    }
    for ((task, cfg), run) in jobs.iter().zip(&runs) {
        let dir = Path::new(&task.name).join(mode_label(&cfg.mode));
        write_run(&mut out, &dir, &model, &hand_path, task, run)?;
        let last: Option<&EpochRecord> = run.trace.last();
        summary.push(json!({
            "object": task.name,
            "mode": mode_label(&cfg.mode),
            "final": last,
            "snapshot_instability": run.snapshot_instability,
            "mean_dynamic_instability": mean(run.trace.records.iter().filter(|r| r.hungarian_solves > 0).map(|r| r.instability)),
        }));
        if let Some(l) = last {
            println!(
                "{} {}: similarity {:.3}  mean pen {:.3} cm  max pen {:.3} cm",
                task.name,
                mode_label(&cfg.mode),
                l.similarity,
                l.mean_pen_cm,
                l.max_pen_cm
            );
        }
    }
    out.json("train_summary.json", &summary)?;
    let mut manifest = ctx.manifest(
        "train-toy",
        json!({
            "objects": specs,
            "modes": modes,
            "loss": base.loss,
            "cost": base.cost,
            "schedule": base.schedule,
            "toy": base.toy,
        }),
    );
    manifest
        .inputs
        .push(FileDigest::of(&hand_path, label(&hand_path))?);
    for s in &specs {
        manifest.inputs.extend(object_inputs(s)?);
    }
    out.finish(manifest)
}

fn write_run(
    out: &mut Outputs<'_>,
    dir: &Path,
    model: &HandModel,
    hand: &Path,
    task: &ToyTask,
    run: &DsmtRun,
) -> CliResult {
    out.csv(dir.join("trace.csv"), &run.trace.records)?;
    let poses: Vec<HandPose> = run.table.poses(model);
    out.text(
        dir.join("table.json"),
        &GraspSetFile::from_poses(label(hand), task.name.clone(), &poses)
            .with_stage("trained")
            .to_json(),
    )?;
    if let Some(a) = &run.static_matching {
        out.json(dir.join("static_matching.json"), a)?;
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn match_sets(ctx: &Context, a: &MatchArgs) -> CliResult {
    let (hand_path, model) = ctx.hand(&a.hand)?;
    let (_, preds) = load_grasps(&a.pred, &model)?;
    let (_, gts) = load_grasps(&a.gt, &model)?;
    let weights = ctx.cost();
    let cost = cost_matrix(&model, &preds, &gts, &weights)?;
    let assignment = hungarian(&cost)?;

    let mut out = Outputs::new(&ctx.out);
    out.json("assignment.json", &assignment)?;
    let mut manifest = ctx.manifest("match", json!({"cost": weights}));
    manifest
        .inputs
        .push(FileDigest::of(&hand_path, label(&hand_path))?);
    manifest
        .inputs
        .push(FileDigest::of(&a.pred, label(&a.pred))?);
    manifest.inputs.push(FileDigest::of(&a.gt, label(&a.gt))?);
    out.finish(manifest)?;
    println!(
        "{} pairs, total cost {:.6}",
        assignment.pairs.len(),
        assignment.total_cost
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportRow {
    method: String,
    q1: f64,
    eta_np: f64,
    eta_tb: f64,
    pen_cm: f64,
    delta_t: f64,
    delta_r: f64,
    delta_q: f64,
}

fn report(ctx: &Context, a: &ReportArgs) -> CliResult {
    let mut rows = Vec::new();
    let mut inputs = Vec::new();
    for item in &a.inputs {
        let (name, path) = match item.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(item);
                let name = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .filter(|_| p.file_name().is_some_and(|f| f == "metrics.json"))
                    .or(p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| item.clone());
                (name, p)
            }
        };
        let m: MetricsReport = read_json(&path)?;
        let s = &m.set;
        rows.push(ReportRow {
            method: name,
            q1: s.mean_q1,
            eta_np: s.eta_np,
            eta_tb: s.eta_tb,
            pen_cm: s.mean_pen_cm,
            delta_t: s.delta_t,
            delta_r: s.delta_r,
            delta_q: s.delta_q,
        });
        inputs.push(FileDigest::of(&path, label(&path))?);
    }
    let mut md = String::from(
        "| Method | Q1 ↑ | η_np ↑ | η_tb ↑ | Pen. (cm) ↓ | δ_t ↑ | δ_r ↑ | δ_q ↑ |\n|---|---|---|---|---|---|---|---|\n",
    );
    for r in &rows {
        md.push_str(&format!(
            "| {} | {:.4} | {:.2} | {:.2} | {:.3} | {:.2} | {:.2} | {:.2} |\n",
            r.method, r.q1, r.eta_np, r.eta_tb, r.pen_cm, r.delta_t, r.delta_r, r.delta_q
        ));
    }
    let mut out = Outputs::new(&ctx.out);
    out.text("report.md", &md)?;
    out.csv("report.csv", &rows)?;
    let mut manifest = ctx.manifest("report", json!({"inputs": a.inputs}));
    manifest.inputs = inputs;
    out.finish(manifest)?;
    print!("{md}");
    Ok(())
}
