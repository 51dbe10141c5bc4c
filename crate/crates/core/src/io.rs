//! File formats and reproducibility plumbing: grasp-set and run-config JSON,
//! CSV traces, atomic writes and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsmt::{DsmtConfig, StageSchedule, TrainMode};
use crate::error::{Error, Result};
use crate::geometry::{load_cloud, synth_object, ObjectCloud, ObjectKind};
use crate::hand::{load_hand_config, HandModel, HandPose};
use crate::losses::LossWeights;
use crate::matching::CostWeights;
use crate::math::{quat_norm, Vec3};
use crate::metrics::Q1Params;
use crate::tta::TtaConfig;

/// Current grasp-set schema version.
pub const GRASP_SET_SCHEMA: u32 = 1;

/// Quaternions further than this from unit norm are rejected on load.
pub const QUAT_REJECT_TOL: f64 = 1e-6;
/// Quaternions further than this (but within the reject tolerance) are
/// renormalized on load with a warning.
pub const QUAT_RENORM_TOL: f64 = 1e-9;

/// Joint values this far outside their limits are clamped rather than rejected.
const LIMIT_SLACK: f64 = 1e-9;

/// Unit of the joint angles in a grasp-set file. Files are always written in
/// radians; degrees are accepted on input only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

impl AngleUnit {
    fn is_radians(&self) -> bool {
        *self == AngleUnit::Radians
    }
}

/// Optional per-pose annotations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspMeta {
    /// Producing stage, e.g. `coarse`, `refined`, `dsmt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    /// Named loss values at this pose.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub losses: BTreeMap<String, f64>,
}

/// One pose: scalar-first unit quaternion, translation (m), joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspRecord {
    pub r: [f64; 4],
    pub t: [f64; 3],
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<GraspMeta>,
}

/// A set of grasp poses of one hand on one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspSetFile {
    pub schema_version: u32,
    /// Hand-config reference (name or path).
    pub hand: String,
    /// Object reference (name or path).
    pub object: String,
    #[serde(default, skip_serializing_if = "AngleUnit::is_radians")]
    pub angle_unit: AngleUnit,
    pub poses: Vec<GraspRecord>,
}

impl GraspSetFile {
    pub fn from_poses(
        hand: impl Into<String>,
        object: impl Into<String>,
        poses: &[HandPose],
    ) -> Self {
        Self {
            schema_version: GRASP_SET_SCHEMA,
            hand: hand.into(),
            object: object.into(),
            angle_unit: AngleUnit::Radians,
            poses: poses
                .iter()
                .map(|p| GraspRecord {
                    r: p.rotation,
                    t: [p.translation.x, p.translation.y, p.translation.z],
                    q: p.joints.clone(),
                    meta: None,
                })
                .collect(),
        }
    }

    /// Attaches the same stage label to every pose.
    pub fn with_stage(mut self, stage: &str) -> Self {
        for p in &mut self.poses {
            p.meta.get_or_insert_with(GraspMeta::default).stage = Some(stage.to_string());
        }
        self
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let set: GraspSetFile = serde_json::from_str(text).map_err(|e| Error::Json {
            path: origin.to_path_buf(),
            source: e,
        })?;
        if set.schema_version != GRASP_SET_SCHEMA {
            return Err(Error::parse(
                "schema_version",
                format!(
                    "unsupported grasp-set schema {}, expected {GRASP_SET_SCHEMA}",
                    set.schema_version
                ),
            ));
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_json(&self) -> String {
        to_json_text(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    /// Validated poses: `J` must match the hand, quaternions must be unit
    /// within [`QUAT_REJECT_TOL`] (renormalized with a warning beyond
    /// [`QUAT_RENORM_TOL`]), and joints must respect the limits.
    pub fn to_poses(&self, model: &HandModel) -> Result<Vec<HandPose>> {
        self.poses
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let field = |name: &str| format!("poses[{i}].{name}");
                if rec.q.len() != model.dof() {
                    return Err(Error::parse(
                        field("q"),
                        format!("{} joint angles, hand has {}", rec.q.len(), model.dof()),
                    ));
                }
                let finite = rec
                    .r
                    .iter()
                    .chain(&rec.t)
                    .chain(&rec.q)
                    .all(|v| v.is_finite());
                if !finite {
                    return Err(Error::parse(format!("poses[{i}]"), "non-finite value"));
                }
                let n = quat_norm(&rec.r);
                let dev = (n - 1.0).abs();
                let rotation = if dev > QUAT_REJECT_TOL {
                    return Err(Error::parse(
                        field("r"),
                        format!("quaternion norm {n} is not 1"),
                    ));
                } else if dev > QUAT_RENORM_TOL {
                    log::warn!("poses[{i}]: renormalizing quaternion of norm {n}");
                    rec.r.map(|c| c / n)
                } else {
                    rec.r
                };
                let joints = rec
                    .q
                    .iter()
                    .zip(model.joints())
                    .enumerate()
                    .map(|(k, (&v, j))| {
                        let v = match self.angle_unit {
                            AngleUnit::Radians => v,
                            AngleUnit::Degrees => v.to_radians(),
                        };
                        if v < j.lower - LIMIT_SLACK || v > j.upper + LIMIT_SLACK {
                            return Err(Error::parse(
                                format!("poses[{i}].q[{k}]"),
                                format!(
                                    "{v} rad outside [{}, {}] of joint `{}`",
                                    j.lower, j.upper, j.name
                                ),
                            ));
                        }
                        Ok(v.clamp(j.lower, j.upper))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(HandPose {
                    rotation,
                    translation: Vec3::from(rec.t),
                    joints,
                })
            })
            .collect()
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json_text<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s =
        serde_json::to_string_pretty(value).expect("in-memory JSON serialization cannot fail");
    s.push('\n');
    s
}

/// Reads and deserializes a JSON file.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `bytes` to a temporary sibling, then renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Serializes rows to CSV text with a header line.
pub fn csv_text<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidInput(format!("csv serialization: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv serialization: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_atomic(path, csv_text(rows)?.as_bytes())
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Where an object's point cloud comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObjectSpec {
    /// Analytic primitive sampled with exact normals.
    Synthetic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        shape: ObjectKind,
        #[serde(default = "default_points")]
        points: usize,
        /// Sampling seed; the run seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// PLY, OBJ or XYZ file; coordinates are multiplied by `scale`.
    File {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        path: PathBuf,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
}

fn default_points() -> usize {
    2048
}

fn unit_scale() -> f64 {
    1.0
}

impl ObjectSpec {
    /// Display name: the explicit name, else the file stem or the shape
    /// kind with the object's position in the list.
    pub fn name(&self, index: usize) -> String {
        match self {
            ObjectSpec::Synthetic { name: Some(n), .. }
            | ObjectSpec::File { name: Some(n), .. } => n.clone(),
            ObjectSpec::Synthetic { shape, .. } => {
                let kind = match shape {
                    ObjectKind::Sphere { .. } => "sphere",
                    ObjectKind::Box { .. } => "box",
                    ObjectKind::Cylinder { .. } => "cylinder",
                };
                format!("{kind}-{index}")
            }
            ObjectSpec::File { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("object-{index}")),
        }
    }

    pub fn load(&self, seed: u64) -> Result<ObjectCloud> {
        match self {
            ObjectSpec::Synthetic {
                shape,
                points,
                seed: s,
                ..
            } => synth_object(shape, *points, s.unwrap_or(seed)),
            ObjectSpec::File { path, scale, .. } => load_cloud(path, *scale),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let ObjectSpec::File { path, .. } = self {
            *path = resolve_path(base, path);
        }
    }
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parameters of the toy training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyParams {
    /// Table size `N`.
    pub queries: usize,
    /// Ground-truth grasps per object.
    pub ground_truths: usize,
    /// Radius of the initialization sphere (m).
    pub init_radius: f64,
    /// Training schedules to run; the first is the reference.
    pub modes: Vec<TrainMode>,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            queries: 16,
            ground_truths: 16,
            init_radius: 0.15,
            modes: vec![TrainMode::Dsmt],
        }
    }
}

/// Everything a CLI run needs; relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub hand: PathBuf,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    /// Training-loss weights (regression stages of the schedule).
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub cost: CostWeights,
    #[serde(default)]
    pub schedule: StageSchedule,
    #[serde(default)]
    pub tta: TtaConfig,
    #[serde(default)]
    pub q1: Q1Params,
    #[serde(default)]
    pub toy: ToyParams,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses a config; `base` is the directory relative paths refer to.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Json {
            path: origin.to_path_buf(),
            source: e,
        })?;
        cfg.hand = resolve_path(base, &cfg.hand);
        cfg.output = resolve_path(base, &cfg.output);
        for o in &mut cfg.objects {
            o.resolve(base);
        }
        Ok(cfg)
    }

    /// Loads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let cfg = Self::parse(&text, path, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks weights and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        let exists = |p: &Path| -> Result<()> {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ))
            }
        };
        exists(&self.hand)?;
        for o in &self.objects {
            if let ObjectSpec::File { path, scale, .. } = o {
                exists(path)?;
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::parse("objects.scale", "must be > 0"));
                }
            }
        }
        self.loss.validate()?;
        self.cost.validate()?;
        self.schedule_with_loss().validate()?;
        self.tta.validate()?;
        self.q1.validate()?;
        if self.toy.queries == 0 || self.toy.ground_truths == 0 {
            return Err(Error::parse("toy", "queries and ground_truths must be ≥ 1"));
        }
        if self.toy.modes.is_empty() {
            return Err(Error::parse(
                "toy.modes",
                "at least one training mode is required",
            ));
        }
        Ok(())
    }

    pub fn hand_model(&self) -> Result<HandModel> {
        load_hand_config(&self.hand)
    }

    fn schedule_with_loss(&self) -> StageSchedule {
        StageSchedule {
            regress: self.loss,
            ..self.schedule
        }
    }

    /// Training configuration for one mode.
    pub fn dsmt_config(&self, mode: TrainMode) -> DsmtConfig {
        DsmtConfig {
            seed: self.seed,
            queries: self.toy.queries,
            init_radius: self.toy.init_radius,
            schedule: self.schedule_with_loss(),
            cost: self.cost,
            mode,
        }
    }

    /// SHA-256 of the canonical JSON form (independent of formatting).
    pub fn digest(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("in-memory JSON serialization cannot fail")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: impl AsRef<Path>, label: impl Into<String>) -> Result<Self> {
        Ok(Self {
            path: label.into(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the effective settings.
    pub settings_sha256: String,
    pub settings: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, settings: serde_json::Value) -> Self {
        let text =
            serde_json::to_string(&settings).expect("in-memory JSON serialization cannot fail");
        Self {
            tool: "graspkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            settings_sha256: sha256_hex(text.as_bytes()),
            settings,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, to_json_text(self).as_bytes())
    }
}
