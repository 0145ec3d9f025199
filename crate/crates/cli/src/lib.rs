//! Command implementations behind the `purify3d` binary.
//!
//! Exit codes: 0 ok, 1 I/O, 2 config, 3 selection, 4 training input,
//! 5 file integrity, 6 evaluation input.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use purify3d::config::RunConfig;
use purify3d::distill::{train, TeacherField, TeacherSource, TrainScene};
use purify3d::geometry::ply::{read_ply_file, write_ply_file, PlyEncoding};
use purify3d::gpff::Tensor;
use purify3d::lifting::{save_views, ViewMeta};
use purify3d::pooling::purify;
use purify3d::selection::{scene_stats, select_subset, SelectionReport};
use purify3d::student::StudentNet;
use purify3d::synth::{assign_labels, evaluate, STRUCTURAL_CLASSES};
use purify3d::{Error, FeatureField, Granularity, PointCloud};

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SELECTION: i32 = 3;
pub const EXIT_TRAIN_INPUT: i32 = 4;
pub const EXIT_INTEGRITY: i32 = 5;
pub const EXIT_EVAL_INPUT: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "purify3d", version, about = "Geometry-guided purification of lifted 3D semantic features")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides paths.out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every stage (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Gen,
    /// Pick a diverse training subset.
    Select {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Distill the student from the teacher fields.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Selection report; all scenes are used when omitted.
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Purify the semantic field of one or more scenes.
    Purify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene id; repeat for several, omit for all.
        #[arg(long)]
        scene: Vec<String>,
    },
    /// Score a prediction against a scene's ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scene: String,
        /// GPFF feature field or a text file with one class id per line.
        #[arg(long)]
        pred: PathBuf,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

/// Maps a library error to an exit code, using `fallback` for data-level
/// problems specific to the calling command.
fn failure(err: Error, fallback: i32) -> Failure {
    let code = match &err {
        Error::Format(_) => EXIT_INTEGRITY,
        Error::Io(_) => EXIT_IO,
        _ => fallback,
    };
    Failure::new(code, err.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub id: String,
    pub ply: String,
    pub teacher: String,
    pub semantic: String,
    pub points: usize,
    pub views: Vec<ViewMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub class_names: Vec<String>,
    pub prototypes: String,
    pub excluded: Vec<usize>,
    pub scenes: Vec<SceneEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> CmdResult<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Failure::new(EXIT_INTEGRITY, format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }

    pub fn scene(&self, id: &str) -> Option<&SceneEntry> {
        self.scenes.iter().find(|s| s.id == id)
    }
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn load_config(common: &Common) -> CmdResult<Context> {
    let path = common.config.as_ref().ok_or_else(|| Failure::new(EXIT_CONFIG, "--config is required"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.paths.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Context { cfg, out, quiet: common.quiet })
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_IO, format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))
}

fn write_tensor(path: &Path, t: &Tensor) -> CmdResult {
    t.write_file(path).map_err(|e| failure(e, EXIT_IO))
}

fn read_field(path: &Path, code: i32) -> CmdResult<FeatureField> {
    let t = Tensor::read_file(path).map_err(|e| failure(e, code))?;
    t.to_field(Granularity::Point).map_err(|e| failure(e, code))
}

pub fn read_prototypes(path: &Path) -> CmdResult<Vec<Vec<f64>>> {
    let f = read_field(path, EXIT_INTEGRITY)?;
    Ok(f.iter_rows().map(<[f64]>::to_vec).collect())
}

fn read_cloud(dir: &Path, entry: &SceneEntry, code: i32) -> CmdResult<PointCloud> {
    read_ply_file(dir.join(&entry.ply), &entry.id).map_err(|e| failure(e, code))
}

pub fn cmd_gen(ctx: &Context) -> CmdResult {
    let synth = &ctx.cfg.synth;
    ensure_dir(&ctx.out)?;
    let protos = synth.prototypes();
    let proto_vals: Vec<f64> = protos.iter().flatten().copied().collect();
    let proto_field = FeatureField::new(proto_vals, synth.d_sem, Granularity::Point).map_err(|e| failure(e, EXIT_CONFIG))?;
    write_tensor(&ctx.out.join("prototypes.gpff"), &Tensor::from_field(&proto_field))?;

    let mut scenes = Vec::with_capacity(synth.scenes);
    for i in 0..synth.scenes {
        let b = synth.build_scene(i, &protos, ctx.cfg.lifting.depth_tol).map_err(|e| failure(e, EXIT_CONFIG))?;
        let id = b.scene.cloud.scene_id().to_string();
        let ply = format!("{id}.ply");
        write_ply_file(ctx.out.join(&ply), &b.scene.cloud, PlyEncoding::BinaryLittleEndian).map_err(|e| failure(e, EXIT_IO))?;
        let teacher = format!("{id}_teacher.gpff");
        write_tensor(&ctx.out.join(&teacher), &Tensor::from_field(b.teacher.field()))?;
        let semantic = format!("{id}_sem.gpff");
        write_tensor(&ctx.out.join(&semantic), &Tensor::from_field(&b.sem))?;
        let views = save_views(&ctx.out, &id, &b.scene.views).map_err(|e| failure(e, EXIT_IO))?;
        ctx.say(format!("{id}: {} points, {} views", b.scene.cloud.len(), views.len()));
        scenes.push(SceneEntry { id, ply, teacher, semantic, points: b.scene.cloud.len(), views });
    }
    let manifest = Manifest {
        seed: synth.seed,
        class_names: synth.class_names.clone(),
        prototypes: "prototypes.gpff".into(),
        excluded: STRUCTURAL_CLASSES.to_vec(),
        scenes,
    };
    write(&ctx.out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
}

pub fn cmd_select(ctx: &Context, manifest: &Path) -> CmdResult<SelectionReport> {
    let (m, dir) = Manifest::load(manifest)?;
    let mut stats = Vec::with_capacity(m.scenes.len());
    for entry in &m.scenes {
        let cloud = read_cloud(&dir, entry, EXIT_SELECTION)?;
        stats.push(scene_stats(&cloud, m.class_names.len()).map_err(|e| failure(e, EXIT_SELECTION))?);
    }
    let report = select_subset(&stats, &ctx.cfg.selection).map_err(|e| failure(e, EXIT_SELECTION))?;
    ensure_dir(&ctx.out)?;
    write(&ctx.out.join("selection.json"), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    ctx.say(format!("selected {}", report.selected.join(", ")));
    Ok(report)
}

pub fn cmd_train(ctx: &Context, manifest: &Path, selection: Option<&Path>) -> CmdResult<StudentNet> {
    let (m, dir) = Manifest::load(manifest)?;
    let ids: Vec<String> = match selection {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", p.display())))?;
            let r: SelectionReport = serde_json::from_str(&text)
                .map_err(|e| Failure::new(EXIT_TRAIN_INPUT, format!("{}: {e}", p.display())))?;
            r.selected
        }
        None => m.scenes.iter().map(|s| s.id.clone()).collect(),
    };
    let student = ctx.cfg.student_config();
    let mut scenes = Vec::with_capacity(ids.len());
    for id in &ids {
        let entry = m
            .scene(id)
            .ok_or_else(|| Failure::new(EXIT_TRAIN_INPUT, format!("scene {id} is not in the manifest")))?;
        let cloud = read_cloud(&dir, entry, EXIT_TRAIN_INPUT)?;
        let tpath = dir.join(&entry.teacher);
        if !tpath.exists() {
            return Err(Failure::new(EXIT_TRAIN_INPUT, format!("scene {id}: teacher file {} is missing", tpath.display())));
        }
        let field = read_field(&tpath, EXIT_TRAIN_INPUT)?;
        let teacher = TeacherField::new(field, TeacherSource::File)
            .map_err(|e| Failure::new(EXIT_TRAIN_INPUT, format!("scene {id}: {e}")))?;
        let semantic = if student.concat_mode {
            Some(read_field(&dir.join(&entry.semantic), EXIT_TRAIN_INPUT)?)
        } else {
            None
        };
        scenes.push(TrainScene { cloud, teacher, semantic });
    }
    let (net, log) = train(&scenes, &ctx.cfg.distill, &student).map_err(|e| failure(e, EXIT_TRAIN_INPUT))?;
    for w in &log.warnings {
        ctx.say(format!("warning: {w}"));
    }
    if let Some(last) = log.epoch_losses().last() {
        ctx.say(format!("final mean loss {last:.4}"));
    }
    ensure_dir(&ctx.out)?;
    write_tensor(&ctx.out.join("student.gpff"), &net.to_checkpoint())?;
    write(&ctx.out.join("train_log.csv"), log.to_csv())?;
    Ok(net)
}

pub fn cmd_purify(ctx: &Context, manifest: &Path, checkpoint: &Path, scenes: &[String]) -> CmdResult {
    let (m, dir) = Manifest::load(manifest)?;
    let t = Tensor::read_file(checkpoint).map_err(|e| failure(e, EXIT_INTEGRITY))?;
    let net = StudentNet::from_checkpoint(&t).map_err(|e| failure(e, EXIT_INTEGRITY))?;
    let ids: Vec<String> = if scenes.is_empty() { m.scenes.iter().map(|s| s.id.clone()).collect() } else { scenes.to_vec() };
    let cfg = ctx.cfg.purify_config();
    ensure_dir(&ctx.out)?;
    for id in &ids {
        let entry = m.scene(id).ok_or_else(|| Failure::new(EXIT_CONFIG, format!("scene {id} is not in the manifest")))?;
        let cloud = read_cloud(&dir, entry, EXIT_INTEGRITY)?;
        let sem = read_field(&dir.join(&entry.semantic), EXIT_INTEGRITY)?;
        let out = purify(&cloud, &sem, &net, &cfg).map_err(|e| failure(e, EXIT_CONFIG))?;
        write_tensor(&ctx.out.join(format!("{id}_purified.gpff")), &Tensor::from_field(&out))?;
        ctx.say(format!("{id}: purified {} points", out.rows()));
    }
    Ok(())
}

/// Reads predicted labels: a GPFF feature field is assigned against the
/// prototypes, anything else is parsed as one integer per line.
pub fn read_prediction(path: &Path, prototypes: &[Vec<f64>]) -> CmdResult<Vec<i32>> {
    let bytes = fs::read(path).map_err(|e| Failure::new(EXIT_EVAL_INPUT, format!("{}: {e}", path.display())))?;
    if bytes.starts_with(purify3d::gpff::MAGIC) {
        let t = Tensor::from_bytes(&bytes).map_err(|e| failure(e, EXIT_EVAL_INPUT))?;
        let f = t.to_field(Granularity::Point).map_err(|e| failure(e, EXIT_EVAL_INPUT))?;
        return Ok(assign_labels(&f, prototypes).map_err(|e| failure(e, EXIT_EVAL_INPUT))?.labels);
    }
    let text = String::from_utf8(bytes).map_err(|_| Failure::new(EXIT_EVAL_INPUT, "label file is not text"))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| l.parse::<i32>().map_err(|_| Failure::new(EXIT_EVAL_INPUT, format!("bad label {l:?} on line {}", i + 1))))
        .collect()
}

pub fn cmd_eval(ctx: &Context, manifest: &Path, scene: &str, pred: &Path) -> CmdResult<purify3d::synth::EvalReport> {
    let (m, dir) = Manifest::load(manifest)?;
    let entry = m.scene(scene).ok_or_else(|| Failure::new(EXIT_EVAL_INPUT, format!("scene {scene} is not in the manifest")))?;
    let cloud = read_cloud(&dir, entry, EXIT_EVAL_INPUT)?;
    let gt = cloud.labels().ok_or_else(|| Failure::new(EXIT_EVAL_INPUT, format!("scene {scene} has no labels")))?;
    let protos = read_prototypes(&dir.join(&m.prototypes))?;
    let labels = read_prediction(pred, &protos)?;
    let report = evaluate(&labels, gt, m.class_names.len(), &m.excluded).map_err(|e| failure(e, EXIT_EVAL_INPUT))?;
    ensure_dir(&ctx.out)?;
    write(&ctx.out.join(format!("{scene}_eval.json")), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write(&ctx.out.join(format!("{scene}_eval.csv")), report.to_csv())?;
    ctx.say(format!("{scene}: mIoU {:.4} mAcc {:.4}", report.miou, report.macc));
    Ok(report)
}

pub fn run(cli: Cli) -> i32 {
    let result = load_config(&cli.common).and_then(|ctx| match &cli.command {
        Command::Gen => cmd_gen(&ctx),
        Command::Select { manifest } => cmd_select(&ctx, manifest).map(drop),
        Command::Train { manifest, selection } => cmd_train(&ctx, manifest, selection.as_deref()).map(drop),
        Command::Purify { manifest, checkpoint, scene } => cmd_purify(&ctx, manifest, checkpoint, scene),
        Command::Eval { manifest, scene, pred } => cmd_eval(&ctx, manifest, scene, pred).map(drop),
    });
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
