//! Model checkpoint container.
//!
//! Layout: 8-byte magic `AUGRCKPT`, u32 LE format version, u32 LE header
//! length H, H bytes of UTF-8 JSON header, then the flat parameter vector as
//! little-endian `f64`. The header records the model kind, its metadata
//! (dimensions, seed, architecture), the inventory fingerprint and the
//! parameter layout; loading refuses any mismatch.

use std::fs;
use std::path::Path;

use augrec_core::acoustic::{AcousticMeta, AcousticModel, DurationMeta, DurationModel};
use augrec_core::classifier::{ClassifierMeta, PhoneClassifier};
use augrec_core::nn::ParamLayout;
use augrec_core::PhonemeInventory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 8] = b"AUGRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub meta: serde_json::Value,
    pub inventory_fingerprint: u64,
    pub layout: ParamLayout,
    pub frozen: bool,
}

/// A model that can be written into the container.
pub trait Checkpointable: Sized {
    const KIND: &'static str;
    type Meta: Serialize + DeserializeOwned;

    fn meta(&self) -> Self::Meta;
    fn layout(&self) -> &ParamLayout;
    fn params(&self) -> &[f64];
    fn frozen(&self) -> bool {
        false
    }
    fn rebuild(meta: Self::Meta, params: Vec<f64>) -> augrec_core::Result<Self>;
}

impl Checkpointable for PhoneClassifier {
    const KIND: &'static str = "phone-classifier";
    type Meta = ClassifierMeta;
    fn meta(&self) -> ClassifierMeta {
        *PhoneClassifier::meta(self)
    }
    fn layout(&self) -> &ParamLayout {
        PhoneClassifier::layout(self)
    }
    fn params(&self) -> &[f64] {
        PhoneClassifier::params(self)
    }
    fn frozen(&self) -> bool {
        self.is_frozen()
    }
    fn rebuild(meta: ClassifierMeta, params: Vec<f64>) -> augrec_core::Result<Self> {
        PhoneClassifier::from_parts(meta, params)
    }
}

impl Checkpointable for AcousticModel {
    const KIND: &'static str = "acoustic-model";
    type Meta = AcousticMeta;
    fn meta(&self) -> AcousticMeta {
        *AcousticModel::meta(self)
    }
    fn layout(&self) -> &ParamLayout {
        AcousticModel::layout(self)
    }
    fn params(&self) -> &[f64] {
        AcousticModel::params(self)
    }
    fn rebuild(meta: AcousticMeta, params: Vec<f64>) -> augrec_core::Result<Self> {
        AcousticModel::from_parts(meta, params)
    }
}

impl Checkpointable for DurationModel {
    const KIND: &'static str = "duration-model";
    type Meta = DurationMeta;
    fn meta(&self) -> DurationMeta {
        *DurationModel::meta(self)
    }
    fn layout(&self) -> &ParamLayout {
        DurationModel::layout(self)
    }
    fn params(&self) -> &[f64] {
        DurationModel::params(self)
    }
    fn rebuild(meta: DurationMeta, params: Vec<f64>) -> augrec_core::Result<Self> {
        DurationModel::from_parts(meta, params)
    }
}

pub fn encode<M: Checkpointable>(model: &M, inventory: &PhonemeInventory) -> Vec<u8> {
    let header = Header {
        kind: M::KIND.into(),
        meta: serde_json::to_value(model.meta()).expect("meta serializes"),
        inventory_fingerprint: inventory.fingerprint(),
        layout: model.layout().clone(),
        frozen: model.frozen(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Parses only the container header.
pub fn read_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(Header, &'a [u8])> {
    let malformed = |detail: String| AppError::Malformed {
        path: path.to_owned(),
        detail,
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(malformed("not a checkpoint container".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(AppError::Incompatible(format!("{}: container version {version}", path.display())));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| malformed("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| malformed(e.to_string()))?;
    Ok((header, &bytes[16 + len..]))
}

pub fn decode<M: Checkpointable>(bytes: &[u8], path: &Path, inventory: &PhonemeInventory) -> Result<M> {
    let (header, body) = read_header(bytes, path)?;
    let incompatible = |what: String| AppError::Incompatible(format!("{}: {what}", path.display()));
    if header.kind != M::KIND {
        return Err(incompatible(format!("holds a {}, expected a {}", header.kind, M::KIND)));
    }
    if header.inventory_fingerprint != inventory.fingerprint() {
        return Err(incompatible("built for a different phoneme inventory".into()));
    }
    if body.len() % 8 != 0 {
        return Err(AppError::Malformed {
            path: path.to_owned(),
            detail: "parameter blob is not a whole number of f64".into(),
        });
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(index) = params.iter().position(|v| !v.is_finite()) {
        return Err(AppError::NonFinite {
            path: path.to_owned(),
            index,
        });
    }
    let meta: M::Meta = serde_json::from_value(header.meta).map_err(|e| incompatible(e.to_string()))?;
    let model = M::rebuild(meta, params).map_err(|e| incompatible(e.to_string()))?;
    if model.layout() != &header.layout {
        return Err(incompatible("parameter layout differs from this build".into()));
    }
    Ok(model)
}

pub fn save<M: Checkpointable>(path: &Path, model: &M, inventory: &PhonemeInventory) -> Result<()> {
    fs::write(path, encode(model, inventory)).map_err(AppError::io(path))
}

pub fn load<M: Checkpointable>(path: &Path, inventory: &PhonemeInventory) -> Result<M> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    decode(&bytes, path, inventory)
}
