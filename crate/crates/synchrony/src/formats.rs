//! Little-endian binary files: `SYNC` checkpoints and `FTRK` datasets, plus
//! the JSON manifest written next to every generated dataset.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use synchrony_core::featuretracker::{ConditionTag, GeneratorConfig, VideoSample};
use synchrony_core::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SYNC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DATASET_MAGIC: &[u8; 4] = b"FTRK";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Byte cursor that turns short reads into [`FormatError::Truncated`].
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<(), FormatError> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(FormatError::Magic {
                expected: String::from_utf8_lossy(magic).into(),
                found: String::from_utf8_lossy(m).into(),
            });
        }
        let v = self.u32("version")?;
        if v != version {
            return Err(FormatError::Version { expected: version, found: v });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Invalid(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// One named `f32` tensor of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn scalar(name: &str, v: f32) -> Self {
        Self { name: name.into(), shape: vec![1], data: vec![v] }
    }
}

pub fn encode_checkpoint(tensors: &[NamedTensor]) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| FormatError::Invalid(format!("name too long: {}", t.name)))?;
        let rank = u8::try_from(t.shape.len()).map_err(|_| FormatError::Invalid(format!("rank too high: {}", t.name)))?;
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(FormatError::Invalid(format!("{}: shape {:?} holds {} values", t.name, t.shape, t.data.len())));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<NamedTensor>, FormatError> {
    let mut r = Reader::new(buf);
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let count = r.u64("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| FormatError::Invalid("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64("extent")?).map_err(|_| FormatError::Invalid("extent overflow".into()))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FormatError::Invalid(format!("{name}: extent overflow")))?;
        let bytes = r.take(n.checked_mul(4).ok_or(FormatError::Truncated("payload"))?, "payload")?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(NamedTensor { name, shape, data });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_checkpoint(path: &Path, tensors: &[NamedTensor]) -> Result<(), FormatError> {
    write_atomic(path, &encode_checkpoint(tensors)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedTensor>, FormatError> {
    decode_checkpoint(&fs::read(path)?)
}

/// Parameters of a store as checkpoint tensors, in store order.
pub fn store_tensors(store: &ParamStore) -> Vec<NamedTensor> {
    store.iter().map(|p| NamedTensor { name: p.name.clone(), shape: p.shape.clone(), data: p.data.clone() }).collect()
}

/// Copies every parameter of `store` from the matching checkpoint tensor.
pub fn load_into(store: &mut ParamStore, tensors: &[NamedTensor]) -> Result<(), FormatError> {
    let mut src = ParamStore::new();
    for t in tensors.iter().filter(|t| store.find(&t.name).is_some()) {
        src.add(&t.name, &t.shape, t.data.clone()).map_err(|e| FormatError::Invalid(e.to_string()))?;
    }
    store.load_from(&src).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Option<&'a NamedTensor> {
    tensors.iter().find(|t| t.name == name)
}

/// Reads a one-element metadata tensor.
pub fn meta(tensors: &[NamedTensor], name: &str) -> Result<f32, FormatError> {
    match find(tensors, name) {
        Some(t) if t.data.len() == 1 => Ok(t.data[0]),
        Some(_) => Err(FormatError::Invalid(format!("{name} is not a scalar"))),
        None => Err(FormatError::Invalid(format!("checkpoint lacks {name}"))),
    }
}

/// A generated dataset: one condition, many videos.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub condition: ConditionTag,
    pub samples: Vec<VideoSample>,
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let per = VideoSample::FRAME_BYTES + 1 + VideoSample::MASK_BYTES;
    let mut out = Vec::with_capacity(17 + ds.samples.len() * per);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.samples.len() as u64).to_le_bytes());
    out.push(ds.condition.code());
    for s in &ds.samples {
        out.extend_from_slice(&s.frames);
        out.push(s.label);
        out.extend_from_slice(&s.masks);
    }
    out
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset, FormatError> {
    let mut r = Reader::new(buf);
    r.header(DATASET_MAGIC, DATASET_VERSION)?;
    let count = r.u64("sample count")?;
    let code = r.u8("condition")?;
    let condition =
        ConditionTag::from_code(code).ok_or_else(|| FormatError::Invalid(format!("unknown condition code {code}")))?;
    let per = VideoSample::FRAME_BYTES + 1 + VideoSample::MASK_BYTES;
    if (((buf.len() - r.pos) / per) as u64) < count {
        return Err(FormatError::Truncated("samples"));
    }
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let frames = r.take(VideoSample::FRAME_BYTES, "frames")?.to_vec();
        let label = r.u8("label")?;
        if label > 1 {
            return Err(FormatError::Invalid(format!("label {label}")));
        }
        let masks = r.take(VideoSample::MASK_BYTES, "masks")?.to_vec();
        samples.push(VideoSample { frames, label, masks });
    }
    r.finish()?;
    Ok(Dataset { condition, samples })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), FormatError> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    decode_dataset(&fs::read(path)?)
}

/// Writes through a temporary sibling so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Generation record written as `<condition>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub format_version: u32,
    pub condition: String,
    pub seed: u64,
    pub count: usize,
    pub positives: usize,
    pub negatives: usize,
    pub dataset_file: String,
    pub config: ManifestConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestConfig {
    pub hue_speed: f64,
    pub irregular_hue_step: f64,
    pub object_speed: f64,
    pub smooth_halfwidth: f64,
    pub irregular_halfwidth: f64,
    pub shape_density: f64,
    pub min_marker_distance: f64,
    pub negative_goal_distance: f64,
    pub distractor_clearance: f64,
    pub max_retries: usize,
}

impl Manifest {
    pub fn new(cfg: &GeneratorConfig, ds: &Dataset, dataset_file: &str) -> Self {
        let positives = ds.samples.iter().filter(|s| s.label == 1).count();
        Self {
            format: "FTRK".into(),
            format_version: DATASET_VERSION,
            condition: cfg.condition.tag.name().into(),
            seed: cfg.seed,
            count: ds.samples.len(),
            positives,
            negatives: ds.samples.len() - positives,
            dataset_file: dataset_file.into(),
            config: ManifestConfig {
                hue_speed: cfg.hue_speed,
                irregular_hue_step: cfg.irregular_hue_step,
                object_speed: cfg.object_speed,
                smooth_halfwidth: cfg.smooth_halfwidth,
                irregular_halfwidth: cfg.irregular_halfwidth,
                shape_density: cfg.shape_density,
                min_marker_distance: cfg.min_marker_distance,
                negative_goal_distance: cfg.negative_goal_distance,
                distractor_clearance: cfg.distractor_clearance,
                max_retries: cfg.max_retries,
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
