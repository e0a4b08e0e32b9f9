//! Checkpoint format shared by every trained module: a JSON manifest
//! (kind, dims, seed, frozen flag, id-map digests, tensor shapes) plus one
//! raw little-endian float32 payload file per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneModel, DktModel, SaktModel, TokenGranularity};
use crate::dataset::QMatrix;
use crate::error::{Error, Result};
use crate::fusion::DiscriminationPredictor;
use crate::nn::{Mat, ParamTensors};
use crate::tendency::{ConceptAggregation, TendencyEstimator, TendencyParams};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

/// Digests tying a checkpoint to the id maps it was trained against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMapDigest {
    pub questions: usize,
    pub concepts: usize,
    pub questions_sha256: String,
    pub concepts_sha256: String,
}

impl IdMapDigest {
    pub fn of(qmatrix: &QMatrix) -> IdMapDigest {
        IdMapDigest {
            questions: qmatrix.num_questions(),
            concepts: qmatrix.num_concepts(),
            questions_sha256: sha_of_ids(qmatrix.question_ids()),
            concepts_sha256: sha_of_ids(qmatrix.concept_ids()),
        }
    }
}

fn sha_of_ids(ids: &[String]) -> String {
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    hex(&hasher.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 digest of a file's contents, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex(&hasher.finalize()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// "tendency", "dkt", "sakt" or "predictor".
    pub kind: String,
    pub tool_version: String,
    pub seed: u64,
    pub frozen: bool,
    pub dims: BTreeMap<String, usize>,
    #[serde(default)]
    pub aggregation: Option<ConceptAggregation>,
    pub id_maps: IdMapDigest,
    pub tensors: Vec<TensorEntry>,
}

fn payload_name(tensor: &str) -> String {
    format!("{}.f32", tensor.replace('.', "_"))
}

fn write_payload(path: &Path, mat: &Mat) -> Result<()> {
    let mut bytes = Vec::with_capacity(mat.len() * 4);
    for &v in mat.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_payload(path: &Path, rows: usize, cols: usize) -> Result<Mat> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Data(format!(
            "{}: expected {} float32 values, found {} bytes",
            path.display(),
            rows * cols,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok(Mat::from_vec(rows, cols, data))
}

fn save_tensors(
    dir: &Path,
    kind: &str,
    seed: u64,
    frozen: bool,
    dims: BTreeMap<String, usize>,
    aggregation: Option<ConceptAggregation>,
    id_maps: IdMapDigest,
    tensors: &[(&'static str, &Mat)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (name, mat) in tensors {
        let file = payload_name(name);
        write_payload(&dir.join(&file), mat)?;
        entries.push(TensorEntry {
            name: (*name).to_string(),
            rows: mat.rows(),
            cols: mat.cols(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        kind: kind.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        frozen,
        dims,
        aggregation,
        id_maps,
        tensors: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json).map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn load_into(
    dir: &Path,
    manifest: &CheckpointManifest,
    model: &mut dyn ParamTensors,
) -> Result<()> {
    let mut by_name: BTreeMap<&str, &TensorEntry> = manifest
        .tensors
        .iter()
        .map(|e| (e.name.as_str(), e))
        .collect();
    for (name, mat) in model.tensors_mut() {
        let entry = by_name.remove(name).ok_or_else(|| {
            Error::Data(format!(
                "checkpoint in {} is missing tensor `{name}`",
                dir.display()
            ))
        })?;
        if entry.rows != mat.rows() || entry.cols != mat.cols() {
            return Err(Error::Data(format!(
                "tensor `{name}`: checkpoint shape {}x{} does not match model {}x{}",
                entry.rows,
                entry.cols,
                mat.rows(),
                mat.cols()
            )));
        }
        *mat = read_payload(&dir.join(&entry.file), entry.rows, entry.cols)?;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Data(format!(
            "checkpoint has unknown tensor `{extra}`"
        )));
    }
    Ok(())
}

pub fn save_tendency(
    dir: &Path,
    estimator: &TendencyEstimator,
    seed: u64,
    qmatrix: &QMatrix,
) -> Result<()> {
    let p = estimator.params();
    let dims: BTreeMap<String, usize> = [
        ("d_q".to_string(), estimator.question_dim()),
        ("d_c".to_string(), estimator.concept_dim()),
        ("d_hidden".to_string(), p.mlp.hidden_dim()),
        ("num_questions".to_string(), estimator.num_questions()),
        ("num_concepts".to_string(), estimator.num_concepts()),
    ]
    .into();
    save_tensors(
        dir,
        "tendency",
        seed,
        estimator.is_frozen(),
        dims,
        Some(estimator.aggregation()),
        IdMapDigest::of(qmatrix),
        &p.tensors(),
    )
}

pub fn load_tendency(dir: &Path, qmatrix: &QMatrix) -> Result<TendencyEstimator> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != "tendency" {
        return Err(Error::Data(format!(
            "expected a tendency checkpoint in {}, found kind `{}`",
            dir.display(),
            manifest.kind
        )));
    }
    let expect = IdMapDigest::of(qmatrix);
    if manifest.id_maps != expect {
        return Err(Error::Data(format!(
            "checkpoint in {} was trained against different id maps",
            dir.display()
        )));
    }
    let dim = |k: &str| -> Result<usize> {
        manifest
            .dims
            .get(k)
            .copied()
            .ok_or_else(|| Error::Data(format!("manifest missing dim `{k}`")))
    };
    let mut estimator = TendencyEstimator::new(
        dim("num_questions")?,
        dim("num_concepts")?,
        dim("d_q")?,
        dim("d_c")?,
        dim("d_hidden")?,
        manifest.aggregation.unwrap_or_default(),
        manifest.seed,
    );
    load_into(dir, &manifest, estimator.params_mut()?)?;
    if manifest.frozen {
        estimator.freeze();
    }
    Ok(estimator)
}

pub fn save_backbone(
    dir: &Path,
    model: &BackboneModel,
    seed: u64,
    qmatrix: &QMatrix,
) -> Result<()> {
    let mut dims: BTreeMap<String, usize> = [
        ("d_m".to_string(), model.state_dim()),
        ("num_questions".to_string(), qmatrix.num_questions()),
        ("num_concepts".to_string(), qmatrix.num_concepts()),
    ]
    .into();
    match model {
        BackboneModel::Dkt(m) => {
            dims.insert("d_e".to_string(), m.emb.dim());
            dims.insert("d_readout".to_string(), m.readout.hidden_dim());
            dims.insert(
                "question_tokens".to_string(),
                usize::from(m.emb.tokens == TokenGranularity::Question),
            );
        }
        BackboneModel::Sakt(m) => {
            dims.insert("d_e".to_string(), m.emb.dim());
            dims.insert("max_len".to_string(), m.max_len());
            dims.insert("d_readout".to_string(), m.readout.hidden_dim());
            dims.insert(
                "question_tokens".to_string(),
                usize::from(m.emb.tokens == TokenGranularity::Question),
            );
        }
    }
    save_tensors(
        dir,
        &model.kind().to_string(),
        seed,
        false,
        dims,
        None,
        IdMapDigest::of(qmatrix),
        &model.tensors(),
    )
}

pub fn load_backbone(dir: &Path, qmatrix: &QMatrix) -> Result<BackboneModel> {
    let manifest = read_manifest(dir)?;
    if manifest.id_maps != IdMapDigest::of(qmatrix) {
        return Err(Error::Data(format!(
            "checkpoint in {} was trained against different id maps",
            dir.display()
        )));
    }
    let dim = |k: &str| -> Result<usize> {
        manifest
            .dims
            .get(k)
            .copied()
            .ok_or_else(|| Error::Data(format!("manifest missing dim `{k}`")))
    };
    let mut model = match manifest.kind.as_str() {
        "dkt" => BackboneModel::Dkt(DktModel::new(
            dim("num_questions")?,
            dim("num_concepts")?,
            dim("d_e")?,
            dim("d_m")?,
            dim("d_readout")?,
            manifest.seed,
        )),
        "sakt" => BackboneModel::Sakt(SaktModel::new(
            dim("num_questions")?,
            dim("num_concepts")?,
            dim("d_e")?,
            dim("max_len")?,
            dim("d_readout")?,
            manifest.seed,
        )),
        other => {
            return Err(Error::Data(format!(
                "unknown backbone kind `{other}` in {}",
                dir.display()
            )))
        }
    };
    load_into(dir, &manifest, &mut model)?;
    let tokens = if manifest.dims.get("question_tokens").copied().unwrap_or(1) == 1 {
        TokenGranularity::Question
    } else {
        TokenGranularity::Concept
    };
    match &mut model {
        BackboneModel::Dkt(m) => m.emb.tokens = tokens,
        BackboneModel::Sakt(m) => m.emb.tokens = tokens,
    }
    Ok(model)
}

pub fn save_predictor(
    dir: &Path,
    predictor: &DiscriminationPredictor,
    d_q: usize,
    d_c: usize,
    seed: u64,
    qmatrix: &QMatrix,
) -> Result<()> {
    let dims: BTreeMap<String, usize> = [
        ("d_m".to_string(), predictor.state_dim()),
        ("d_q".to_string(), d_q),
        ("d_c".to_string(), d_c),
        ("d_hidden".to_string(), predictor.mlp.hidden_dim()),
    ]
    .into();
    save_tensors(
        dir,
        "predictor",
        seed,
        false,
        dims,
        None,
        IdMapDigest::of(qmatrix),
        &predictor.mlp.tensors(),
    )
}

pub fn load_predictor(dir: &Path, qmatrix: &QMatrix) -> Result<DiscriminationPredictor> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != "predictor" {
        return Err(Error::Data(format!(
            "expected a predictor checkpoint in {}, found kind `{}`",
            dir.display(),
            manifest.kind
        )));
    }
    if manifest.id_maps != IdMapDigest::of(qmatrix) {
        return Err(Error::Data(format!(
            "checkpoint in {} was trained against different id maps",
            dir.display()
        )));
    }
    let dim = |k: &str| -> Result<usize> {
        manifest
            .dims
            .get(k)
            .copied()
            .ok_or_else(|| Error::Data(format!("manifest missing dim `{k}`")))
    };
    let mut predictor = DiscriminationPredictor::new(
        dim("d_m")?,
        dim("d_q")?,
        dim("d_c")?,
        dim("d_hidden")?,
        manifest.seed,
    );
    load_into(dir, &manifest, &mut predictor.mlp)?;
    Ok(predictor)
}

/// Byte-level serialization of a parameter set; used by the stage-separation
/// tests to prove stage II leaves stage-I parameters untouched.
pub fn parameter_bytes(params: &TendencyParams) -> Vec<u8> {
    let mut bytes = Vec::new();
    for (_, mat) in params.tensors() {
        for &v in mat.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}
