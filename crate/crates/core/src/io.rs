//! On-disk containers for datasets, predictions and fitted surrogates.
//!
//! A container is a directory holding `manifest.json` and one binary file per
//! tensor. Each tensor file is a 32-byte header followed by the values as
//! little-endian `f64` in row-major order:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `MPCETNSR`                          |
//! | 8      | 4    | dtype, `u32` LE, `1` = f64 little-endian  |
//! | 12     | 4    | ndim, `u32` LE, at most 4                 |
//! | 16     | 16   | four `u32` LE dims, unused slots zero     |
//!
//! The manifest lists every tensor with its dims and the SHA-256 of its file,
//! and a content hash over those digests. Both are verified on load.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IoError, ModelError};
use crate::kpca::{InverseMap, KernelSpec, KpcaModel};
use crate::model::{CaseLabel, Dataset, GenerationConfig, Grid2D, ScalarField, Trajectory};
use crate::mpce::{MpceConfig, MpceSurrogate, NodeScaling, OutputMode, OutputReduction, TrainingInfo};
use crate::pce::{MultiIndexSet, PceModel, PolyFamily, SolveMethod, Standardization};

pub const SCHEMA_VERSION: u32 = 1;
pub const MAGIC: &[u8; 8] = b"MPCETNSR";
pub const HEADER_LEN: usize = 32;
pub const DTYPE_F64_LE: u32 = 1;
pub const MAX_NDIM: usize = 4;
pub const MANIFEST: &str = "manifest.json";
const FORMAT_NAME: &str = "mpce-container";

type IoResult<T> = std::result::Result<T, IoError>;

/// A named dense `f64` array.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> IoResult<Self> {
        let name = name.into();
        if dims.len() > MAX_NDIM {
            return Err(IoError::Corrupt { name, message: format!("{} dims exceed {MAX_NDIM}", dims.len()) });
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(IoError::Corrupt { name, message: "dimension exceeds u32".into() });
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(IoError::Corrupt {
                name,
                message: format!("dims {dims:?} do not match {} values", data.len()),
            });
        }
        Ok(Self { name, dims, data })
    }

    pub fn vector(name: &str, data: &[f64]) -> Self {
        Self::new(name, vec![data.len()], data.to_vec()).expect("1-d shape always matches")
    }

    /// Row-major copy of a matrix.
    pub fn matrix(name: &str, m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for row in m.row_iter() {
            data.extend(row.iter());
        }
        Self::new(name, vec![m.nrows(), m.ncols()], data).expect("2-d shape always matches")
    }

    pub fn to_matrix(&self) -> IoResult<DMatrix<f64>> {
        match self.dims[..] {
            [r, c] => Ok(DMatrix::from_row_slice(r, c, &self.data)),
            _ => Err(IoError::Corrupt { name: self.name.clone(), message: format!("expected 2 dims, found {:?}", self.dims) }),
        }
    }

    pub fn to_vector(&self) -> IoResult<Vec<f64>> {
        match self.dims[..] {
            [_] => Ok(self.data.clone()),
            _ => Err(IoError::Corrupt { name: self.name.clone(), message: format!("expected 1 dim, found {:?}", self.dims) }),
        }
    }

    /// Header plus payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DTYPE_F64_LE.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for k in 0..MAX_NDIM {
            let d = self.dims.get(k).copied().unwrap_or(0) as u32;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(name: &str, bytes: &[u8]) -> IoResult<Self> {
        let corrupt = |message: String| IoError::Corrupt { name: name.to_string(), message };
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
        let dtype = word(8);
        if dtype != DTYPE_F64_LE {
            return Err(corrupt(format!("unsupported dtype {dtype}")));
        }
        let ndim = word(12) as usize;
        if ndim > MAX_NDIM {
            return Err(corrupt(format!("ndim {ndim} exceeds {MAX_NDIM}")));
        }
        let dims: Vec<usize> = (0..ndim).map(|k| word(16 + 4 * k) as usize).collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt("element count overflows".into()))?;
        let expected = count.checked_mul(8).and_then(|b| b.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(corrupt(format!(
                "expected {} payload bytes for dims {dims:?}, found {}",
                count.saturating_mul(8),
                bytes.len() - HEADER_LEN
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { name: name.to_string(), dims, data })
    }
}

/// Kind of content a container holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Dataset,
    Predictions,
    Model,
}

impl std::fmt::Display for ContainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ContainerKind::Dataset => "dataset",
            ContainerKind::Predictions => "predictions",
            ContainerKind::Model => "model",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub dtype: String,
    pub dims: Vec<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u32,
    pub kind: ContainerKind,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 over the tensor digests in manifest order.
    pub content_hash: String,
    /// Kind-specific metadata.
    pub meta: serde_json::Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn content_hash<'a>(digests: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut h = Sha256::new();
    for (name, digest) in digests {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(digest.as_bytes());
        h.update([b'\n']);
    }
    hex::encode(h.finalize())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn manifest_err(path: &Path, message: impl std::fmt::Display) -> IoError {
    IoError::Manifest { path: path.to_path_buf(), message: message.to_string() }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) && !name.starts_with('.')
}

/// Write tensors first and the manifest last, so an interrupted write never
/// leaves a loadable container.
pub fn write_container(
    dir: &Path,
    kind: ContainerKind,
    meta: serde_json::Value,
    tensors: &[TensorRecord],
) -> IoResult<Manifest> {
    let mut seen = std::collections::HashSet::new();
    for t in tensors {
        if !valid_name(&t.name) {
            return Err(IoError::Corrupt { name: t.name.clone(), message: "invalid tensor name".into() });
        }
        if !seen.insert(t.name.as_str()) {
            return Err(IoError::Corrupt { name: t.name.clone(), message: "duplicate tensor name".into() });
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(io_err(&manifest_path))?;
    }
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        let bytes = t.encode();
        let file = format!("{}.bin", t.name);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        entries.push(TensorEntry {
            name: t.name.clone(),
            file,
            dtype: "f64le".into(),
            dims: t.dims.clone(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        schema_version: SCHEMA_VERSION,
        kind,
        content_hash: content_hash(entries.iter().map(|e| (e.name.as_str(), e.sha256.as_str()))),
        tensors: entries,
        meta,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Read and verify a container of the expected kind.
pub fn read_container(dir: &Path, kind: ContainerKind) -> IoResult<(Manifest, Vec<TensorRecord>)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| manifest_err(&path, e))?;
    let version = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| manifest_err(&path, "missing schema_version"))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(IoError::SchemaVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: SCHEMA_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| manifest_err(&path, e))?;
    if manifest.format != FORMAT_NAME {
        return Err(manifest_err(&path, format!("unknown format {:?}", manifest.format)));
    }
    if manifest.kind != kind {
        return Err(IoError::Kind { expected: kind.to_string(), found: manifest.kind.to_string() });
    }
    let expected_hash = content_hash(manifest.tensors.iter().map(|e| (e.name.as_str(), e.sha256.as_str())));
    if expected_hash != manifest.content_hash {
        return Err(IoError::HashMismatch { name: MANIFEST.into() });
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if !valid_name(&e.name) || e.file != format!("{}.bin", e.name) {
            return Err(manifest_err(&path, format!("bad tensor entry {:?}", e.name)));
        }
        if e.dtype != "f64le" {
            return Err(IoError::Corrupt { name: e.name.clone(), message: format!("unsupported dtype {}", e.dtype) });
        }
        let tpath = dir.join(&e.file);
        let bytes = fs::read(&tpath).map_err(io_err(&tpath))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(IoError::HashMismatch { name: e.name.clone() });
        }
        let t = TensorRecord::decode(&e.name, &bytes)?;
        if t.dims != e.dims {
            return Err(IoError::Corrupt { name: e.name.clone(), message: "dims disagree with manifest".into() });
        }
        tensors.push(t);
    }
    Ok((manifest, tensors))
}

struct Tensors {
    items: Vec<TensorRecord>,
}

impl Tensors {
    fn take(&mut self, name: &str) -> IoResult<TensorRecord> {
        let pos = self
            .items
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| IoError::Corrupt { name: name.into(), message: "missing tensor".into() })?;
        Ok(self.items.swap_remove(pos))
    }

    fn matrix(&mut self, name: &str) -> IoResult<DMatrix<f64>> {
        self.take(name)?.to_matrix()
    }

    fn vector(&mut self, name: &str) -> IoResult<Vec<f64>> {
        self.take(name)?.to_vector()
    }
}

fn meta_field<T: DeserializeOwned>(meta: &serde_json::Value, key: &str, dir: &Path) -> IoResult<T> {
    let v = meta.get(key).cloned().unwrap_or(serde_json::Value::Null);
    serde_json::from_value(v).map_err(|e| manifest_err(&dir.join(MANIFEST), format!("meta.{key}: {e}")))
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    case_label: CaseLabel,
    grid: Grid2D,
    nt: usize,
    n_fields: usize,
    generation: Option<GenerationConfig>,
    kle_modes: Option<usize>,
}

fn dataset_tensors(ds: &Dataset) -> [TensorRecord; 3] {
    [
        TensorRecord::matrix("inputs", &ds.input_matrix()),
        TensorRecord::matrix("outputs", &ds.output_matrix()),
        TensorRecord::vector("times", ds.times()),
    ]
}

/// Content hash of a dataset's arrays: the container content hash of its
/// `inputs`, `outputs` and `times` tensors.
pub fn dataset_hash(ds: &Dataset) -> String {
    let tensors = dataset_tensors(ds);
    let digests: Vec<(String, String)> =
        tensors.iter().map(|t| (t.name.clone(), sha256_hex(&t.encode()))).collect();
    content_hash(digests.iter().map(|(n, d)| (n.as_str(), d.as_str())))
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> IoResult<Manifest> {
    let grid = ds
        .grid()
        .copied()
        .ok_or_else(|| IoError::Corrupt { name: "inputs".into(), message: "cannot write an empty dataset".into() })?;
    let meta = DatasetMeta {
        case_label: ds.case_label.clone(),
        grid,
        nt: ds.nt(),
        n_fields: ds.n_fields(),
        generation: ds.generation.clone(),
        kle_modes: ds.kle_modes,
    };
    let meta = serde_json::to_value(meta).expect("metadata serializes");
    write_container(dir, ContainerKind::Dataset, meta, &dataset_tensors(ds))
}

pub fn read_dataset(dir: &Path) -> IoResult<Dataset> {
    let (manifest, items) = read_container(dir, ContainerKind::Dataset)?;
    let meta: DatasetMeta = serde_json::from_value(manifest.meta.clone())
        .map_err(|e| manifest_err(&dir.join(MANIFEST), format!("meta: {e}")))?;
    let mut t = Tensors { items };
    let inputs = t.matrix("inputs")?;
    let outputs = t.matrix("outputs")?;
    let times = t.vector("times")?;
    let npts = meta.grid.len();
    let n = meta.n_fields;
    if inputs.shape() != (n, npts) || outputs.shape() != (n, npts * meta.nt) || times.len() != meta.nt {
        return Err(IoError::Corrupt { name: "dataset".into(), message: "tensor shapes disagree with metadata".into() });
    }
    let trajectories = (0..n)
        .map(|i| {
            let input = ScalarField::new(meta.grid, inputs.row(i).iter().copied().collect())?;
            let flat: Vec<f64> = outputs.row(i).iter().copied().collect();
            Trajectory::unflatten(input, &flat, times.clone())
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let mut ds = Dataset::new(meta.case_label, trajectories, meta.generation)?;
    ds.kle_modes = meta.kle_modes;
    Ok(ds)
}

/// Flattened predicted trajectories for the inputs of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// [`dataset_hash`] of the dataset whose inputs were predicted.
    pub source_dataset_hash: String,
    /// Free-form name of the model that produced them.
    pub producer: String,
    pub grid: Grid2D,
    pub times: Vec<f64>,
    /// `n x (nt * nx * ny)`, rows in dataset order.
    pub outputs: DMatrix<f64>,
}

impl Predictions {
    pub fn from_dataset(pred: &Dataset, source: &Dataset, producer: impl Into<String>) -> IoResult<Self> {
        let grid = source
            .grid()
            .copied()
            .ok_or_else(|| IoError::Corrupt { name: "outputs".into(), message: "empty source dataset".into() })?;
        if pred.n_fields() != source.n_fields() || (!pred.is_empty() && pred.grid() != Some(&grid)) {
            return Err(IoError::Corrupt { name: "outputs".into(), message: "predictions do not match the source dataset".into() });
        }
        Ok(Self {
            source_dataset_hash: dataset_hash(source),
            producer: producer.into(),
            grid,
            times: source.times().to_vec(),
            outputs: pred.output_matrix(),
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Refuse to pair these predictions with any dataset but their source.
    pub fn check_source(&self, truth: &Dataset) -> IoResult<()> {
        let truth_hash = dataset_hash(truth);
        if truth_hash != self.source_dataset_hash {
            return Err(IoError::DatasetMismatch { predicted: self.source_dataset_hash.clone(), truth: truth_hash });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionMeta {
    source_dataset_hash: String,
    producer: String,
    grid: Grid2D,
    n_records: usize,
}

pub fn write_predictions(preds: &Predictions, dir: &Path) -> IoResult<Manifest> {
    let expected = preds.grid.len() * preds.times.len();
    if preds.outputs.ncols() != expected {
        return Err(IoError::Corrupt { name: "outputs".into(), message: format!("expected {expected} columns") });
    }
    let meta = PredictionMeta {
        source_dataset_hash: preds.source_dataset_hash.clone(),
        producer: preds.producer.clone(),
        grid: preds.grid,
        n_records: preds.len(),
    };
    let tensors = [TensorRecord::matrix("outputs", &preds.outputs), TensorRecord::vector("times", &preds.times)];
    write_container(dir, ContainerKind::Predictions, serde_json::to_value(meta).expect("serializes"), &tensors)
}

pub fn read_predictions(dir: &Path) -> IoResult<Predictions> {
    let (manifest, items) = read_container(dir, ContainerKind::Predictions)?;
    let meta: PredictionMeta = serde_json::from_value(manifest.meta.clone())
        .map_err(|e| manifest_err(&dir.join(MANIFEST), format!("meta: {e}")))?;
    let mut t = Tensors { items };
    let outputs = t.matrix("outputs")?;
    let times = t.vector("times")?;
    if outputs.shape() != (meta.n_records, meta.grid.len() * times.len()) {
        return Err(IoError::Corrupt { name: "outputs".into(), message: "shape disagrees with metadata".into() });
    }
    Ok(Predictions {
        source_dataset_hash: meta.source_dataset_hash,
        producer: meta.producer,
        grid: meta.grid,
        times,
        outputs,
    })
}

#[derive(Serialize, Deserialize)]
struct KpcaMeta {
    kernel: KernelSpec,
    requested_d: usize,
    total_mean: f64,
    inverse: Option<InverseMeta>,
}

#[derive(Serialize, Deserialize)]
struct InverseMeta {
    kernel: KernelSpec,
    ridge: f64,
    train_reconstruction: f64,
}

#[derive(Serialize, Deserialize)]
struct PceMeta {
    dim: usize,
    s_max: usize,
    family: PolyFamily,
    ridge: f64,
    method: SolveMethod,
}

fn kpca_tensors(prefix: &str, k: &KpcaModel, out: &mut Vec<TensorRecord>) -> KpcaMeta {
    out.push(TensorRecord::matrix(&format!("{prefix}.train"), &k.train));
    out.push(TensorRecord::matrix(&format!("{prefix}.alphas"), &k.alphas));
    out.push(TensorRecord::vector(&format!("{prefix}.lambdas"), &k.lambdas));
    out.push(TensorRecord::vector(&format!("{prefix}.row_means"), &k.row_means));
    out.push(TensorRecord::matrix(&format!("{prefix}.latents"), &k.train_latents));
    let inverse = k.inverse.as_ref().map(|inv| {
        out.push(TensorRecord::matrix(&format!("{prefix}.inverse.latents"), &inv.latents));
        out.push(TensorRecord::vector(&format!("{prefix}.inverse.mean"), inv.mean.as_slice()));
        out.push(TensorRecord::matrix(&format!("{prefix}.inverse.coefficients"), &inv.coefficients));
        InverseMeta { kernel: inv.kernel.clone(), ridge: inv.ridge, train_reconstruction: inv.train_reconstruction }
    });
    KpcaMeta { kernel: k.kernel.clone(), requested_d: k.requested_d, total_mean: k.total_mean, inverse }
}

fn kpca_from(prefix: &str, meta: KpcaMeta, t: &mut Tensors) -> IoResult<KpcaModel> {
    let inverse = match meta.inverse {
        Some(m) => Some(InverseMap {
            latents: t.matrix(&format!("{prefix}.inverse.latents"))?,
            kernel: m.kernel,
            ridge: m.ridge,
            mean: DVector::from_vec(t.vector(&format!("{prefix}.inverse.mean"))?),
            coefficients: t.matrix(&format!("{prefix}.inverse.coefficients"))?,
            train_reconstruction: m.train_reconstruction,
        }),
        None => None,
    };
    let model = KpcaModel {
        train: Arc::new(t.matrix(&format!("{prefix}.train"))?),
        kernel: meta.kernel,
        alphas: t.matrix(&format!("{prefix}.alphas"))?,
        lambdas: t.vector(&format!("{prefix}.lambdas"))?,
        requested_d: meta.requested_d,
        row_means: t.vector(&format!("{prefix}.row_means"))?,
        total_mean: meta.total_mean,
        train_latents: t.matrix(&format!("{prefix}.latents"))?,
        inverse,
    };
    let n = model.train.nrows();
    let d = model.alphas.ncols();
    let consistent = model.alphas.nrows() == n
        && model.row_means.len() == n
        && model.lambdas.len() == d
        && model.train_latents.shape() == (n, d)
        && model.inverse.as_ref().is_none_or(|inv| {
            inv.latents.shape() == (n, d)
                && inv.coefficients.shape() == (n, model.train.ncols())
                && inv.mean.len() == model.train.ncols()
        });
    if !consistent {
        return Err(IoError::Corrupt { name: prefix.into(), message: "inconsistent kernel PCA shapes".into() });
    }
    Ok(model)
}

/// Persist a fitted surrogate.
pub fn save_model(model: &MpceSurrogate, dir: &Path) -> IoResult<Manifest> {
    let mut tensors = Vec::new();
    if let Some(s) = &model.input_scaling {
        tensors.push(TensorRecord::vector("input.node_mean", &s.mean));
        tensors.push(TensorRecord::vector("input.node_std", &s.std));
    }
    let input = kpca_tensors("input", &model.input_kpca, &mut tensors);
    let output = match &model.output {
        OutputReduction::Kpca(k) => Some(kpca_tensors("output", k, &mut tensors)),
        OutputReduction::Identity => None,
    };
    tensors.push(TensorRecord::matrix("pce.coeffs", &model.pce.coeffs));
    tensors.push(TensorRecord::vector("pce.center", &model.pce.standardization.center));
    tensors.push(TensorRecord::vector("pce.scale", &model.pce.standardization.scale));
    tensors.push(TensorRecord::vector("times", &model.times));
    let pce = PceMeta {
        dim: model.pce.index_set.dim(),
        s_max: model.pce.index_set.max_degree(),
        family: model.pce.family,
        ridge: model.pce.ridge,
        method: model.pce.method,
    };
    let meta = serde_json::json!({
        "config": model.config,
        "info": model.info,
        "grid": model.grid,
        "input_kpca": input,
        "output_kpca": output,
        "pce": pce,
    });
    write_container(dir, ContainerKind::Model, meta, &tensors)
}

pub fn load_model(dir: &Path) -> IoResult<MpceSurrogate> {
    let (manifest, items) = read_container(dir, ContainerKind::Model)?;
    let meta = &manifest.meta;
    let config: MpceConfig = meta_field(meta, "config", dir)?;
    let info: TrainingInfo = meta_field(meta, "info", dir)?;
    let grid: Grid2D = meta_field(meta, "grid", dir)?;
    let pce_meta: PceMeta = meta_field(meta, "pce", dir)?;
    let mut t = Tensors { items };
    let input_scaling = if config.standardize_inputs {
        let s = NodeScaling { mean: t.vector("input.node_mean")?, std: t.vector("input.node_std")? };
        if s.mean.len() != grid.len() || s.std.len() != grid.len() {
            return Err(IoError::Corrupt { name: "input.node_mean".into(), message: "length disagrees with the grid".into() });
        }
        Some(s)
    } else {
        None
    };
    let input_kpca = kpca_from("input", meta_field(meta, "input_kpca", dir)?, &mut t)?;
    let output_meta: Option<KpcaMeta> = meta_field(meta, "output_kpca", dir)?;
    let output = match (config.output_mode, output_meta) {
        (OutputMode::Kpca, Some(m)) => OutputReduction::Kpca(kpca_from("output", m, &mut t)?),
        (OutputMode::Identity, None) => OutputReduction::Identity,
        _ => return Err(manifest_err(&dir.join(MANIFEST), "output reduction disagrees with config")),
    };
    let corrupt = |message: &str| IoError::Corrupt { name: "pce".into(), message: message.into() };
    let index_set = MultiIndexSet::total_degree(pce_meta.dim, pce_meta.s_max).map_err(|e| corrupt(&e.to_string()))?;
    let coeffs = t.matrix("pce.coeffs")?;
    let standardization = Standardization { center: t.vector("pce.center")?, scale: t.vector("pce.scale")? };
    if coeffs.nrows() != index_set.len()
        || standardization.center.len() != pce_meta.dim
        || standardization.scale.len() != pce_meta.dim
        || pce_meta.dim != input_kpca.d()
    {
        return Err(corrupt("coefficient shape disagrees with the multi-index set"));
    }
    let out_dim = match &output {
        OutputReduction::Kpca(k) => k.d(),
        OutputReduction::Identity => grid.len() * info_times_len(&t)?,
    };
    if coeffs.ncols() != out_dim {
        return Err(corrupt("output dimension disagrees with the decoder"));
    }
    let times = t.vector("times")?;
    let pce = PceModel {
        index_set,
        family: pce_meta.family,
        coeffs,
        standardization,
        ridge: pce_meta.ridge,
        method: pce_meta.method,
    };
    if input_kpca.input_dim() != grid.len() {
        return Err(IoError::Corrupt { name: "input.train".into(), message: "width disagrees with the grid".into() });
    }
    Ok(MpceSurrogate { config, input_scaling, input_kpca, output, pce, grid, times, info })
}

fn info_times_len(t: &Tensors) -> IoResult<usize> {
    t.items
        .iter()
        .find(|r| r.name == "times")
        .map(|r| r.data.len())
        .ok_or_else(|| IoError::Corrupt { name: "times".into(), message: "missing tensor".into() })
}

/// Path of a tensor file inside a container.
pub fn tensor_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}
