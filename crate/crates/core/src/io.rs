//! File formats. Everything row-oriented is JSON lines with a typed header
//! on the first line; single-document formats (kinematic chains, pipeline
//! configs) are plain JSON. Writes go through a temp file and rename, and
//! serialization is deterministic, so re-running a stage with the same
//! inputs reproduces artifacts byte for byte. Manifests are the exception:
//! they record wall-clock timings and creation time.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{DiscreteGp, FramedDemo, FramedGp, Trajectory};
use crate::kinematics::KinematicChain;
use crate::manifold::{quat, Factor, ManifoldPoint, ManifoldSpec};
use crate::mixture::{GpMixture, Mode, PartitionProvenance, SkillChain};
use crate::partition::{Partition, PartitionMethod};
use crate::rigid::RigidTransform;
use crate::updating::{Constraint, OccupancyGrid, Plane};

pub const DATASET_SCHEMA: &str = "gausstube.dataset";
pub const MODEL_SCHEMA: &str = "gausstube.model.tube";
pub const MIXTURE_SCHEMA: &str = "gausstube.model.mixture";
pub const CHAIN_MODEL_SCHEMA: &str = "gausstube.model.chain";
pub const FRAMED_SCHEMA: &str = "gausstube.model.framed";
pub const PARTITION_SCHEMA: &str = "gausstube.partition";
pub const CONSTRAINTS_SCHEMA: &str = "gausstube.constraints";
pub const MANIFEST_SCHEMA: &str = "gausstube.manifest";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn schema_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Schema { path: path.display().to_string(), detail: detail.into() }
}

fn parse_err(path: &Path, line: usize, detail: impl ToString) -> Error {
    Error::Parse { path: path.display().to_string(), line, detail: detail.to_string() }
}

/// Write a file atomically: contents land under a temp name in the same
/// directory and are renamed into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(contents.as_bytes()).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

fn header_and_records<H: DeserializeOwned>(path: &Path, text: &str) -> Result<(H, Vec<(usize, String)>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (idx, first) = lines
        .next()
        .ok_or_else(|| schema_err(path, "empty file"))?;
    let header: H = serde_json::from_str(first).map_err(|e| parse_err(path, idx + 1, e))?;
    let records = lines.map(|(i, l)| (i + 1, l.to_string())).collect();
    Ok((header, records))
}

/// Schema string from a file's header line, for dispatching on model kind.
pub fn sniff_schema(path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct AnyHeader {
        schema: String,
    }
    let text = read_to_string(path)?;
    let (header, _) = header_and_records::<AnyHeader>(path, &text)?;
    Ok(header.schema)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PoseRecord {
    position: [f64; 3],
    quaternion: [f64; 4],
}

impl PoseRecord {
    fn to_transform(&self) -> Result<RigidTransform> {
        RigidTransform::new(self.position, self.quaternion)
    }

    fn of(t: &RigidTransform) -> Self {
        Self { position: t.translation, quaternion: t.rotation }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub version: u32,
    pub manifold: String,
    pub sample_rate_hz: f64,
    pub aux_dims: usize,
    pub n_demos: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<String>,
    /// Ground-truth mode per demo when the generator knows it, in file order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mode_labels: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetRecord {
    demo_id: String,
    t: usize,
    position: [f64; 3],
    quaternion: [f64; 4],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    aux: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    frame_poses: BTreeMap<String, PoseRecord>,
}

/// Supported dataset manifolds: a single scalar channel (stored in
/// `position[0]`), a pose, or a pose with trailing channels.
fn dataset_shape(spec: &ManifoldSpec) -> Result<usize> {
    let f = spec.factors();
    match f {
        [Factor::Euclidean(1)] => Ok(0),
        [Factor::Euclidean(3), Factor::UnitQuaternion] => Ok(0),
        [Factor::Euclidean(3), Factor::UnitQuaternion, Factor::Euclidean(aux)] => Ok(*aux),
        _ => Err(Error::SpecMismatch {
            expected: "R1, R3xS3, or R3xS3xRk".into(),
            got: spec.to_string(),
        }),
    }
}

fn point_to_record(p: &ManifoldPoint) -> ([f64; 3], [f64; 4], Vec<f64>) {
    let c = p.coords();
    if p.spec().factors() == [Factor::Euclidean(1)] {
        ([c[0], 0.0, 0.0], quat::IDENTITY, Vec::new())
    } else {
        let aux = c.as_slice()[7..].to_vec();
        ([c[0], c[1], c[2]], [c[3], c[4], c[5], c[6]], aux)
    }
}

fn record_to_point(spec: &ManifoldSpec, rec: &DatasetRecord) -> Result<ManifoldPoint> {
    if spec.factors() == [Factor::Euclidean(1)] {
        return ManifoldPoint::new(spec.clone(), DVector::from_vec(vec![rec.position[0]]));
    }
    let mut c = Vec::with_capacity(spec.ambient_dim());
    c.extend_from_slice(&rec.position);
    c.extend_from_slice(&rec.quaternion);
    c.extend_from_slice(&rec.aux);
    ManifoldPoint::new(spec.clone(), DVector::from_vec(c))
}

pub fn save_dataset(
    path: &Path,
    demos: &[Trajectory],
    frame_poses: &[BTreeMap<String, Vec<RigidTransform>>],
    mode_labels: &[usize],
    sample_rate_hz: f64,
) -> Result<()> {
    let first = demos.first().ok_or(Error::Empty { what: "demos" })?;
    let spec = first.spec().clone();
    let aux_dims = dataset_shape(&spec)?;
    if !frame_poses.is_empty() && frame_poses.len() != demos.len() {
        return Err(Error::DimensionMismatch {
            context: "frame pose sets",
            expected: demos.len(),
            got: frame_poses.len(),
        });
    }
    if !mode_labels.is_empty() && mode_labels.len() != demos.len() {
        return Err(Error::DimensionMismatch {
            context: "dataset mode labels",
            expected: demos.len(),
            got: mode_labels.len(),
        });
    }
    let frames: Vec<String> = frame_poses
        .first()
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    let header = DatasetHeader {
        schema: DATASET_SCHEMA.into(),
        version: 1,
        manifold: spec.to_string(),
        sample_rate_hz,
        aux_dims,
        n_demos: demos.len(),
        frames,
        mode_labels: mode_labels.to_vec(),
    };
    let mut out = String::new();
    out.push_str(&to_line(&header));
    out.push('\n');
    for (d, demo) in demos.iter().enumerate() {
        for t in 0..demo.len() {
            let (position, quaternion, aux) = point_to_record(demo.point(t));
            let fp = frame_poses
                .get(d)
                .map(|m| {
                    m.iter()
                        .map(|(name, poses)| (name.clone(), PoseRecord::of(&poses[t])))
                        .collect()
                })
                .unwrap_or_default();
            let rec = DatasetRecord {
                demo_id: demo.demo_id().to_string(),
                t,
                position,
                quaternion,
                aux,
                frame_poses: fp,
            };
            out.push_str(&to_line(&rec));
            out.push('\n');
        }
    }
    write_atomic(path, &out)
}

pub struct LoadedDataset {
    pub demos: Vec<FramedDemo>,
    pub header: DatasetHeader,
}

impl LoadedDataset {
    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.demos.iter().map(|d| d.traj.clone()).collect()
    }
}

pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let text = read_to_string(path)?;
    let (header, records) = header_and_records::<DatasetHeader>(path, &text)?;
    if header.schema != DATASET_SCHEMA {
        return Err(schema_err(path, format!("schema {:?}, expected {DATASET_SCHEMA:?}", header.schema)));
    }
    let spec: ManifoldSpec = header
        .manifold
        .parse()
        .map_err(|e: Error| schema_err(path, e.to_string()))?;
    dataset_shape(&spec)?;

    // demos appear in file order; steps must be consecutive within a demo
    let mut order: Vec<String> = Vec::new();
    let mut points: BTreeMap<String, Vec<ManifoldPoint>> = BTreeMap::new();
    let mut frames: BTreeMap<String, BTreeMap<String, Vec<RigidTransform>>> = BTreeMap::new();
    for (line_no, line) in &records {
        let rec: DatasetRecord =
            serde_json::from_str(line).map_err(|e| parse_err(path, *line_no, e))?;
        let entry = points.entry(rec.demo_id.clone()).or_insert_with(|| {
            order.push(rec.demo_id.clone());
            Vec::new()
        });
        if rec.t != entry.len() {
            return Err(parse_err(
                path,
                *line_no,
                format!("demo {:?} step {} out of order (expected {})", rec.demo_id, rec.t, entry.len()),
            ));
        }
        entry.push(record_to_point(&spec, &rec)?);
        let fmap = frames.entry(rec.demo_id.clone()).or_default();
        for (name, pose) in &rec.frame_poses {
            fmap.entry(name.clone())
                .or_default()
                .push(pose.to_transform()?);
        }
    }
    let mut demos = Vec::with_capacity(order.len());
    for id in order {
        let traj = Trajectory::new(id.clone(), points.remove(&id).expect("grouped"))?;
        let frame_poses = frames.remove(&id).unwrap_or_default();
        let demo = FramedDemo { traj, frame_poses };
        demo.validate()?;
        demos.push(demo);
    }
    if demos.is_empty() {
        return Err(schema_err(path, "dataset has no records"));
    }
    Ok(LoadedDataset { demos, header })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelHeader {
    pub schema: String,
    pub version: u32,
    pub manifold: String,
    pub sample_rate_hz: f64,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StepRecord {
    t: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn model_lines(model: &DiscreteGp, extra: Option<(usize, usize)>) -> Vec<String> {
    // extra = (skill, mode) tags rows inside composite files
    (0..model.len())
        .map(|t| {
            let mean = model.mean(t).coords().as_slice().to_vec();
            let var = model.var(t).as_slice().to_vec();
            match extra {
                None => to_line(&StepRecord { t, mean, var }),
                Some((skill, mode)) => to_line(&TaggedStepRecord { skill, mode, t, mean, var }),
            }
        })
        .collect()
}

fn steps_to_model(
    path: &Path,
    spec: &ManifoldSpec,
    rate: f64,
    steps: Vec<(usize, Vec<f64>, Vec<f64>)>,
) -> Result<DiscreteGp> {
    let mut means = Vec::with_capacity(steps.len());
    let mut vars = Vec::with_capacity(steps.len());
    for (i, (t, mean, var)) in steps.into_iter().enumerate() {
        if t != i {
            return Err(schema_err(path, format!("step {t} out of order (expected {i})")));
        }
        means.push(ManifoldPoint::new(spec.clone(), DVector::from_vec(mean))?);
        vars.push(DVector::from_vec(var));
    }
    DiscreteGp::from_parts(means, vars, rate)
}

pub fn save_model(path: &Path, model: &DiscreteGp) -> Result<()> {
    let header = ModelHeader {
        schema: MODEL_SCHEMA.into(),
        version: 1,
        manifold: model.spec().to_string(),
        sample_rate_hz: model.sample_rate_hz(),
        len: model.len(),
    };
    let mut out = to_line(&header);
    out.push('\n');
    for line in model_lines(model, None) {
        out.push_str(&line);
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn load_model(path: &Path) -> Result<DiscreteGp> {
    let text = read_to_string(path)?;
    let (header, records) = header_and_records::<ModelHeader>(path, &text)?;
    if header.schema != MODEL_SCHEMA {
        return Err(schema_err(path, format!("schema {:?}, expected {MODEL_SCHEMA:?}", header.schema)));
    }
    let spec: ManifoldSpec = header.manifold.parse()?;
    let mut steps = Vec::with_capacity(records.len());
    for (line_no, line) in &records {
        let rec: StepRecord = serde_json::from_str(line).map_err(|e| parse_err(path, *line_no, e))?;
        steps.push((rec.t, rec.mean, rec.var));
    }
    steps_to_model(path, &spec, header.sample_rate_hz, steps)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureHeader {
    pub schema: String,
    pub version: u32,
    pub manifold: String,
    pub sample_rate_hz: f64,
    pub len: usize,
    pub n_modes: usize,
    pub priors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<PartitionProvenance>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TaggedStepRecord {
    #[serde(default)]
    skill: usize,
    mode: usize,
    t: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
}

pub fn save_mixture(path: &Path, mixture: &GpMixture) -> Result<()> {
    let header = MixtureHeader {
        schema: MIXTURE_SCHEMA.into(),
        version: 1,
        manifold: mixture.spec().to_string(),
        sample_rate_hz: mixture.mode(0).model.sample_rate_hz(),
        len: mixture.len(),
        n_modes: mixture.n_modes(),
        priors: mixture.priors(),
        provenance: mixture.provenance.clone(),
    };
    let mut out = to_line(&header);
    out.push('\n');
    for (m, mode) in mixture.modes().iter().enumerate() {
        for line in model_lines(&mode.model, Some((0, m))) {
            out.push_str(&line);
            out.push('\n');
        }
    }
    write_atomic(path, &out)
}

pub fn load_mixture(path: &Path) -> Result<GpMixture> {
    let text = read_to_string(path)?;
    let (header, records) = header_and_records::<MixtureHeader>(path, &text)?;
    if header.schema != MIXTURE_SCHEMA {
        return Err(schema_err(path, format!("schema {:?}, expected {MIXTURE_SCHEMA:?}", header.schema)));
    }
    if header.priors.len() != header.n_modes {
        return Err(schema_err(path, "priors do not match mode count"));
    }
    let spec: ManifoldSpec = header.manifold.parse()?;
    let mut per_mode: Vec<Vec<(usize, Vec<f64>, Vec<f64>)>> = vec![Vec::new(); header.n_modes];
    for (line_no, line) in &records {
        let rec: TaggedStepRecord =
            serde_json::from_str(line).map_err(|e| parse_err(path, *line_no, e))?;
        if rec.mode >= header.n_modes {
            return Err(parse_err(path, *line_no, format!("mode {} out of range", rec.mode)));
        }
        per_mode[rec.mode].push((rec.t, rec.mean, rec.var));
    }
    let mut modes = Vec::with_capacity(header.n_modes);
    for (m, steps) in per_mode.into_iter().enumerate() {
        let model = steps_to_model(path, &spec, header.sample_rate_hz, steps)?;
        modes.push(Mode { prior: header.priors[m], model });
    }
    GpMixture::from_modes(modes, header.provenance.clone())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainModelHeader {
    pub schema: String,
    pub version: u32,
    pub manifold: String,
    pub sample_rate_hz: f64,
    pub skills: Vec<SkillSummary>,
    /// One row-major matrix per junction.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkillSummary {
    pub n_modes: usize,
    pub len: usize,
    pub priors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<PartitionProvenance>,
}

pub fn save_chain_model(path: &Path, chain: &SkillChain) -> Result<()> {
    let skills = chain
        .skills()
        .iter()
        .map(|s| SkillSummary {
            n_modes: s.n_modes(),
            len: s.len(),
            priors: s.priors(),
            provenance: s.provenance.clone(),
        })
        .collect();
    let transitions = chain
        .transitions()
        .iter()
        .map(|t| {
            (0..t.nrows())
                .map(|k| t.row(k).iter().cloned().collect())
                .collect()
        })
        .collect();
    let header = ChainModelHeader {
        schema: CHAIN_MODEL_SCHEMA.into(),
        version: 1,
        manifold: chain.skill(0).spec().to_string(),
        sample_rate_hz: chain.skill(0).mode(0).model.sample_rate_hz(),
        skills,
        transitions,
    };
    let mut out = to_line(&header);
    out.push('\n');
    for (j, skill) in chain.skills().iter().enumerate() {
        for (m, mode) in skill.modes().iter().enumerate() {
            for line in model_lines(&mode.model, Some((j, m))) {
                out.push_str(&line);
                out.push('\n');
            }
        }
    }
    write_atomic(path, &out)
}

pub fn load_chain_model(path: &Path) -> Result<SkillChain> {
    let text = read_to_string(path)?;
    let (header, records) = header_and_records::<ChainModelHeader>(path, &text)?;
    if header.schema != CHAIN_MODEL_SCHEMA {
        return Err(schema_err(path, format!("schema {:?}, expected {CHAIN_MODEL_SCHEMA:?}", header.schema)));
    }
    let spec: ManifoldSpec = header.manifold.parse()?;
    let mut per_skill: Vec<Vec<Vec<(usize, Vec<f64>, Vec<f64>)>>> = header
        .skills
        .iter()
        .map(|s| vec![Vec::new(); s.n_modes])
        .collect();
    for (line_no, line) in &records {
        let rec: TaggedStepRecord =
            serde_json::from_str(line).map_err(|e| parse_err(path, *line_no, e))?;
        let bucket = per_skill
            .get_mut(rec.skill)
            .and_then(|s| s.get_mut(rec.mode))
            .ok_or_else(|| parse_err(path, *line_no, "skill/mode out of range"))?;
        bucket.push((rec.t, rec.mean, rec.var));
    }
    let mut skills = Vec::with_capacity(header.skills.len());
    for (summary, mode_steps) in header.skills.iter().zip(per_skill) {
        let mut modes = Vec::with_capacity(summary.n_modes);
        for (m, steps) in mode_steps.into_iter().enumerate() {
            let model = steps_to_model(path, &spec, header.sample_rate_hz, steps)?;
            modes.push(Mode { prior: summary.priors[m], model });
        }
        skills.push(GpMixture::from_modes(modes, summary.provenance.clone())?);
    }
    let transitions = header
        .transitions
        .iter()
        .map(|rows| {
            let nrows = rows.len();
            let ncols = rows.first().map_or(0, Vec::len);
            DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c])
        })
        .collect();
    SkillChain::new(skills, transitions)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FramedHeader {
    pub schema: String,
    pub version: u32,
    pub manifold: String,
    pub sample_rate_hz: f64,
    pub len: usize,
    pub windows: BTreeMap<String, (usize, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FramedStepRecord {
    frame: String,
    t: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
}

pub fn save_framed(path: &Path, framed: &FramedGp) -> Result<()> {
    let any = framed
        .models()
        .values()
        .next()
        .ok_or(Error::Empty { what: "framed model" })?;
    let header = FramedHeader {
        schema: FRAMED_SCHEMA.into(),
        version: 1,
        manifold: any.spec().to_string(),
        sample_rate_hz: any.sample_rate_hz(),
        len: framed.len(),
        windows: framed.windows().clone(),
    };
    let mut out = to_line(&header);
    out.push('\n');
    for (name, model) in framed.models() {
        for t in 0..model.len() {
            let rec = FramedStepRecord {
                frame: name.clone(),
                t,
                mean: model.mean(t).coords().as_slice().to_vec(),
                var: model.var(t).as_slice().to_vec(),
            };
            out.push_str(&to_line(&rec));
            out.push('\n');
        }
    }
    write_atomic(path, &out)
}

pub fn load_framed(path: &Path) -> Result<FramedGp> {
    let text = read_to_string(path)?;
    let (header, records) = header_and_records::<FramedHeader>(path, &text)?;
    if header.schema != FRAMED_SCHEMA {
        return Err(schema_err(path, format!("schema {:?}, expected {FRAMED_SCHEMA:?}", header.schema)));
    }
    let spec: ManifoldSpec = header.manifold.parse()?;
    let mut per_frame: BTreeMap<String, Vec<(usize, Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for (line_no, line) in &records {
        let rec: FramedStepRecord =
            serde_json::from_str(line).map_err(|e| parse_err(path, *line_no, e))?;
        per_frame.entry(rec.frame).or_default().push((rec.t, rec.mean, rec.var));
    }
    let mut models = BTreeMap::new();
    for (name, steps) in per_frame {
        models.insert(name, steps_to_model(path, &spec, header.sample_rate_hz, steps)?);
    }
    FramedGp::from_parts(models, header.windows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionHeader {
    pub schema: String,
    pub version: u32,
    pub method: PartitionMethod,
    pub n_parts: usize,
    pub subsample_len: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bic_table: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PartitionRecord {
    demo_id: String,
    mode_id: usize,
}

pub fn save_partition(path: &Path, partition: &Partition, demo_ids: &[String]) -> Result<()> {
    if demo_ids.len() != partition.labels().len() {
        return Err(Error::DimensionMismatch {
            context: "partition demo ids",
            expected: partition.labels().len(),
            got: demo_ids.len(),
        });
    }
    let header = PartitionHeader {
        schema: PARTITION_SCHEMA.into(),
        version: 1,
        method: partition.method,
        n_parts: partition.n_parts(),
        subsample_len: partition.subsample_len,
        bic_table: partition.bic_table.clone(),
    };
    let mut out = to_line(&header);
    out.push('\n');
    for (id, label) in demo_ids.iter().zip(partition.labels()) {
        let rec = PartitionRecord { demo_id: id.clone(), mode_id: *label };
        out.push_str(&to_line(&rec));
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn load_partition(path: &Path) -> Result<(Partition, Vec<String>)> {
    let text = read_to_string(path)?;
    let (header, records) = header_and_records::<PartitionHeader>(path, &text)?;
    if header.schema != PARTITION_SCHEMA {
        return Err(schema_err(path, format!("schema {:?}, expected {PARTITION_SCHEMA:?}", header.schema)));
    }
    let mut labels = Vec::with_capacity(records.len());
    let mut ids = Vec::with_capacity(records.len());
    for (line_no, line) in &records {
        let rec: PartitionRecord =
            serde_json::from_str(line).map_err(|e| parse_err(path, *line_no, e))?;
        labels.push(rec.mode_id);
        ids.push(rec.demo_id);
    }
    let partition = Partition::new(labels, header.method, header.subsample_len, header.bic_table)?;
    if partition.n_parts() != header.n_parts {
        return Err(schema_err(path, "n_parts does not match labels"));
    }
    Ok((partition, ids))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintsHeader {
    pub schema: String,
    pub version: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ConstraintRecord {
    ReachSphere { center: Vec<f64>, radius: f64 },
    HalfSpace { point: Vec<f64>, normal: Vec<f64>, d_safe: f64 },
    HalfSpaceSet { halves: Vec<Plane>, d_safe: f64, d_uni: f64 },
    SelfCollision { center: Vec<f64>, d_min: f64 },
    Occupancy { grid: OccupancyGrid, tau: f64 },
}

impl ConstraintRecord {
    fn into_constraint(self) -> Result<Constraint> {
        Ok(match self {
            ConstraintRecord::ReachSphere { center, radius } => Constraint::ReachSphere { center, radius },
            ConstraintRecord::HalfSpace { point, normal, d_safe } => {
                Constraint::HalfSpace { point, normal, d_safe }
            }
            ConstraintRecord::HalfSpaceSet { halves, d_safe, d_uni } => {
                Constraint::half_space_set(halves, d_safe, d_uni)?
            }
            ConstraintRecord::SelfCollision { center, d_min } => Constraint::SelfCollision { center, d_min },
            ConstraintRecord::Occupancy { grid, tau } => Constraint::Occupancy { grid, tau },
        })
    }

    fn of(c: &Constraint) -> Result<Self> {
        Ok(match c {
            Constraint::ReachSphere { center, radius } => {
                ConstraintRecord::ReachSphere { center: center.clone(), radius: *radius }
            }
            Constraint::HalfSpace { point, normal, d_safe } => ConstraintRecord::HalfSpace {
                point: point.clone(),
                normal: normal.clone(),
                d_safe: *d_safe,
            },
            Constraint::HalfSpaceSet { halves, d_safe, d_uni } => ConstraintRecord::HalfSpaceSet {
                halves: halves.clone(),
                d_safe: *d_safe,
                d_uni: *d_uni,
            },
            Constraint::SelfCollision { center, d_min } => {
                ConstraintRecord::SelfCollision { center: center.clone(), d_min: *d_min }
            }
            Constraint::Occupancy { grid, tau } => {
                ConstraintRecord::Occupancy { grid: grid.clone(), tau: *tau }
            }
            Constraint::Custom(_) => {
                return Err(Error::InvalidValue {
                    what: "constraint",
                    detail: "custom predicates cannot be serialized".into(),
                })
            }
        })
    }
}

pub fn save_constraints(path: &Path, constraints: &[Constraint]) -> Result<()> {
    let header = ConstraintsHeader { schema: CONSTRAINTS_SCHEMA.into(), version: 1 };
    let mut out = to_line(&header);
    out.push('\n');
    for c in constraints {
        out.push_str(&to_line(&ConstraintRecord::of(c)?));
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn load_constraints(path: &Path) -> Result<Vec<Constraint>> {
    let text = read_to_string(path)?;
    let (header, records) = header_and_records::<ConstraintsHeader>(path, &text)?;
    if header.schema != CONSTRAINTS_SCHEMA {
        return Err(schema_err(path, format!("schema {:?}, expected {CONSTRAINTS_SCHEMA:?}", header.schema)));
    }
    let mut out = Vec::with_capacity(records.len());
    for (line_no, line) in &records {
        let rec: ConstraintRecord =
            serde_json::from_str(line).map_err(|e| parse_err(path, *line_no, e))?;
        out.push(rec.into_constraint()?);
    }
    Ok(out)
}

pub fn save_kinematic_chain(path: &Path, chain: &KinematicChain) -> Result<()> {
    write_atomic(path, &chain.to_json())
}

pub fn load_kinematic_chain(path: &Path) -> Result<KinematicChain> {
    let text = read_to_string(path)?;
    KinematicChain::from_json(&text).map_err(|e| match e {
        Error::Schema { detail, .. } => schema_err(path, detail),
        other => other,
    })
}

/// Run record written next to pipeline outputs. Deliberately not
/// deterministic: it captures wall-clock timings and creation time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: u32,
    pub tool_version: String,
    pub created_unix_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings_ms: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(seed: Option<u64>) -> Self {
        let created_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            schema: MANIFEST_SCHEMA.into(),
            version: 1,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            created_unix_ms,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(path, &format!("{}\n", serde_json::to_string_pretty(manifest).expect("serializable")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit, FitOptions};
    use crate::synth::{generate, Family, SynthSpec};

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("gausstube-io-{name}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn pose_dataset() -> crate::synth::SynthDataset {
        generate(&SynthSpec {
            family: Family::MultiModePose { modes: 2, separation: 8.0, gripper: true },
            n_demos: 6,
            len: 12,
            noise_sigma: 0.01,
            smooth_jitter: 0.0,
            seed: 9,
            sample_rate_hz: 20.0,
        })
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_with_frames_is_byte_identical() {
        let dir = tmpdir("dataset");
        let data = pose_dataset();
        let path = dir.join("demos.jsonl");
        save_dataset(&path, &data.demos, &data.frame_poses, &data.mode_labels, 20.0).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.demos.len(), 6);
        assert_eq!(loaded.header.aux_dims, 1);
        assert_eq!(loaded.header.frames, vec!["base".to_string(), "goal".to_string()]);
        for (orig, back) in data.demos.iter().zip(&loaded.demos) {
            assert_eq!(orig.demo_id(), back.traj.demo_id());
            for t in 0..orig.len() {
                assert_eq!(orig.point(t).coords(), back.traj.point(t).coords());
            }
        }
        // saving the loaded data reproduces the file byte for byte
        let path2 = dir.join("demos2.jsonl");
        let frames: Vec<_> = loaded.demos.iter().map(|d| d.frame_poses.clone()).collect();
        save_dataset(
            &path2,
            &loaded.trajectories(),
            &frames,
            &loaded.header.mode_labels,
            loaded.header.sample_rate_hz,
        )
        .unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn scalar_dataset_embeds_into_position() {
        let dir = tmpdir("scalar");
        let data = generate(&SynthSpec {
            family: Family::Sine,
            n_demos: 3,
            len: 10,
            noise_sigma: 0.05,
            smooth_jitter: 0.0,
            seed: 1,
            sample_rate_hz: 20.0,
        })
        .unwrap();
        let path = dir.join("sine.jsonl");
        save_dataset(&path, &data.demos, &data.frame_poses, &data.mode_labels, 20.0).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.header.manifold, "R1");
        assert_eq!(loaded.demos[0].traj.spec(), data.demos[0].spec());
        assert_eq!(
            loaded.demos[1].traj.point(4).coords()[0],
            data.demos[1].point(4).coords()[0]
        );
    }

    #[test]
    fn model_and_mixture_round_trip() {
        let dir = tmpdir("model");
        let data = pose_dataset();
        let model = fit(&data.demos[..3], &FitOptions::default()).unwrap();
        let mpath = dir.join("model.jsonl");
        save_model(&mpath, &model).unwrap();
        let back = load_model(&mpath).unwrap();
        assert_eq!(back.len(), model.len());
        assert_eq!(back.mean(3).coords(), model.mean(3).coords());
        assert_eq!(back.var(3), model.var(3));

        let partition = Partition::new(
            data.mode_labels.clone(),
            PartitionMethod::KMeansBic,
            20,
            vec![(1, 10.0), (2, 5.0)],
        )
        .unwrap();
        let mixture = crate::mixture::fit_mixture(&data.demos, &partition, &FitOptions::default()).unwrap();
        let xpath = dir.join("mixture.jsonl");
        save_mixture(&xpath, &mixture).unwrap();
        let back = load_mixture(&xpath).unwrap();
        assert_eq!(back.n_modes(), 2);
        assert_eq!(back.priors(), mixture.priors());
        assert_eq!(back.mode(1).model.mean(5).coords(), mixture.mode(1).model.mean(5).coords());
        // a second save of the loaded mixture is byte-identical
        let xpath2 = dir.join("mixture2.jsonl");
        save_mixture(&xpath2, &back).unwrap();
        assert_eq!(fs::read(&xpath).unwrap(), fs::read(&xpath2).unwrap());
    }

    #[test]
    fn partition_and_constraints_round_trip() {
        let dir = tmpdir("partition");
        let partition =
            Partition::new(vec![0, 1, 0, 1], PartitionMethod::Dbscan, 20, vec![]).unwrap();
        let ids: Vec<String> = (0..4).map(|i| format!("demo{i:03}")).collect();
        let ppath = dir.join("parts.jsonl");
        save_partition(&ppath, &partition, &ids).unwrap();
        let (back, back_ids) = load_partition(&ppath).unwrap();
        assert_eq!(back.labels(), partition.labels());
        assert_eq!(back_ids, ids);

        let constraints = vec![
            Constraint::ReachSphere { center: vec![0.0, 0.0, 0.5], radius: 0.4 },
            Constraint::half_space_set(
                vec![
                    Plane { point: vec![0.0, 0.0, 0.0], normal: vec![0.0, 0.0, 1.0] },
                    Plane { point: vec![2.0, 0.0, 0.0], normal: vec![1.0, 0.0, 0.0] },
                ],
                0.1,
                0.2,
            )
            .unwrap(),
        ];
        let cpath = dir.join("constraints.jsonl");
        save_constraints(&cpath, &constraints).unwrap();
        let back = load_constraints(&cpath).unwrap();
        assert_eq!(back.len(), 2);
        assert!(matches!(&back[0], Constraint::ReachSphere { radius, .. } if *radius == 0.4));
        assert!(matches!(&back[1], Constraint::HalfSpaceSet { halves, .. } if halves.len() == 2));
    }

    #[test]
    fn chain_model_round_trip() {
        use nalgebra::DMatrix;
        let data = pose_dataset();
        let partition = Partition::new(
            data.mode_labels.clone(),
            PartitionMethod::GmmBic,
            20,
            vec![],
        )
        .unwrap();
        let skill = crate::mixture::fit_mixture(&data.demos, &partition, &FitOptions::default()).unwrap();
        let t = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.5, 0.5]);
        let chain = SkillChain::new(vec![skill.clone(), skill], vec![t]).unwrap();
        let dir = tmpdir("chainmodel");
        let path = dir.join("chain.jsonl");
        save_chain_model(&path, &chain).unwrap();
        let back = load_chain_model(&path).unwrap();
        assert_eq!(back.n_skills(), 2);
        assert_eq!(back.transitions()[0][(0, 1)], 0.25);
        assert_eq!(
            back.skill(1).mode(0).model.mean(2).coords(),
            chain.skill(1).mode(0).model.mean(2).coords()
        );
    }

    #[test]
    fn kinematic_chain_file_round_trip() {
        let dir = tmpdir("chainfile");
        let chain = crate::kinematics::arm6();
        let path = dir.join("arm.chain");
        save_kinematic_chain(&path, &chain).unwrap();
        let back = load_kinematic_chain(&path).unwrap();
        assert_eq!(back.n_joints(), 6);
        assert_eq!(back.q_home, chain.q_home);
    }
}
