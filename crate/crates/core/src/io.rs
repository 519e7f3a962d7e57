//! File formats.
//!
//! Volumes use the AVOL container:
//!
//! ```text
//! "AVOL0001" | u32 LE header length | UTF-8 JSON header | payload
//! ```
//!
//! The payload is little-endian in storage order (x-fastest, class-fastest
//! within a voxel). Labels are `u8` when at most 256 classes are declared and
//! `u16` otherwise; probabilities and logits are `f32`.
//!
//! Adjacency matrices are JSON documents tagged `"format": "adjprior/1"`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::adjacency::{AdjCounts, AdjMatrix, BinaryAdj, PriorAdj};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::phantom::TraceEntry;
use crate::volume::{ClassVolume, GridDims, LabelMap, LogitMap, ProbMap, Spacing};

pub const MAGIC: &[u8; 8] = b"AVOL0001";
pub const PRIOR_FORMAT: &str = "adjprior/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Label,
    Prob,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    F32,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub num_classes: usize,
    pub kind: VolumeKind,
    pub dtype: Dtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_algorithm: Option<String>,
}

impl VolumeHeader {
    fn payload_len(&self) -> usize {
        let voxels: usize = self.dims.iter().product();
        let per_voxel = match self.kind {
            VolumeKind::Label => 1,
            _ => self.num_classes,
        };
        voxels * per_voxel * self.dtype.size()
    }

    fn validate(&self) -> Result<(GridDims, Spacing)> {
        let bad = |m: String| Error::InvalidHeader(m);
        let [h, w, d] = self.dims;
        let dims = GridDims::new(h, w, d).map_err(|e| bad(e.to_string()))?;
        let [sx, sy, sz] = self.spacing;
        let spacing = Spacing::new(sx, sy, sz).map_err(|e| bad(e.to_string()))?;
        if self.num_classes == 0 {
            return Err(bad("num_classes must be >= 1".into()));
        }
        match (self.kind, self.dtype) {
            (VolumeKind::Label, Dtype::U8) if self.num_classes <= 256 => {}
            (VolumeKind::Label, Dtype::U16) if self.num_classes <= 65536 => {}
            (VolumeKind::Prob | VolumeKind::Logit, Dtype::F32) => {}
            (k, t) => {
                return Err(bad(format!(
                    "kind {k:?} cannot be stored as {t:?} with {} classes",
                    self.num_classes
                )))
            }
        }
        Ok((dims, spacing))
    }
}

/// Any volume the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Label(LabelMap),
    Prob(ProbMap),
    Logit(LogitMap),
}

impl Volume {
    pub fn kind(&self) -> VolumeKind {
        match self {
            Volume::Label(_) => VolumeKind::Label,
            Volume::Prob(_) => VolumeKind::Prob,
            Volume::Logit(_) => VolumeKind::Logit,
        }
    }

    pub fn dims(&self) -> GridDims {
        match self {
            Volume::Label(v) => v.dims(),
            Volume::Prob(v) => v.dims(),
            Volume::Logit(v) => v.dims(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Volume::Label(v) => v.num_classes(),
            Volume::Prob(v) => v.num_classes(),
            Volume::Logit(v) => v.num_classes(),
        }
    }
}

/// A volume together with its optional provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub volume: Volume,
    pub rng_algorithm: Option<String>,
}

fn header_for(v: &Volume, rng_algorithm: Option<&str>) -> VolumeHeader {
    let (dims, spacing, num_classes) = match v {
        Volume::Label(l) => (l.dims(), l.spacing(), l.num_classes()),
        Volume::Prob(p) => (p.dims(), p.spacing(), p.num_classes()),
        Volume::Logit(z) => (z.dims(), z.spacing(), z.num_classes()),
    };
    let dtype = match v {
        Volume::Label(_) if num_classes <= 256 => Dtype::U8,
        Volume::Label(_) => Dtype::U16,
        _ => Dtype::F32,
    };
    VolumeHeader {
        dims: dims.as_array(),
        spacing: spacing.as_array(),
        num_classes,
        kind: v.kind(),
        dtype,
        rng_algorithm: rng_algorithm.map(str::to_owned),
    }
}

/// Serializes a volume to bytes.
pub fn encode_volume(v: &Volume, rng_algorithm: Option<&str>) -> Result<Vec<u8>> {
    let header = header_for(v, rng_algorithm);
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + header.payload_len());
    out.extend_from_slice(MAGIC);
    let len =
        u32::try_from(json.len()).map_err(|_| Error::InvalidHeader("header too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    match v {
        Volume::Label(l) => match header.dtype {
            Dtype::U8 => out.extend(l.voxels().iter().map(|&x| x as u8)),
            _ => l
                .voxels()
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        },
        Volume::Prob(p) => write_f32(&mut out, p.values()),
        Volume::Logit(z) => write_f32(&mut out, z.values()),
    }
    Ok(out)
}

fn write_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Parses a volume from bytes, validating every field.
pub fn decode_volume(bytes: &[u8]) -> Result<VolumeFile> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(Error::TruncatedHeader);
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(Error::TruncatedHeader);
    }
    let header: VolumeHeader =
        serde_json::from_slice(&rest[..hlen]).map_err(|e| Error::InvalidHeader(e.to_string()))?;
    let (dims, spacing) = header.validate()?;
    let payload = &rest[hlen..];
    let expected = header.payload_len();
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::PayloadMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let n = header.num_classes;
    let volume = match header.kind {
        VolumeKind::Label => {
            let voxels: Vec<u16> = match header.dtype {
                Dtype::U8 => payload.iter().map(|&b| b as u16).collect(),
                _ => payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            };
            Volume::Label(LabelMap::new(dims, spacing, n, voxels)?)
        }
        VolumeKind::Prob => {
            Volume::Prob(ProbMap::from_volume(read_f32(dims, spacing, n, payload)?)?)
        }
        VolumeKind::Logit => {
            Volume::Logit(LogitMap::from_volume(read_f32(dims, spacing, n, payload)?)?)
        }
    };
    Ok(VolumeFile {
        volume,
        rng_algorithm: header.rng_algorithm,
    })
}

fn read_f32(dims: GridDims, spacing: Spacing, n: usize, payload: &[u8]) -> Result<ClassVolume> {
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ClassVolume::new(dims, spacing, n, values)
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    save_volume_tagged(v, None, path)
}

pub fn save_volume_tagged(
    v: &Volume,
    rng_algorithm: Option<&str>,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode_volume(v, rng_algorithm)?)?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    Ok(load_volume_file(path)?.volume)
}

pub fn load_volume_file(path: impl AsRef<Path>) -> Result<VolumeFile> {
    decode_volume(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Counts,
    Binary,
    Probabilistic,
}

/// An adjacency matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyDocument {
    pub kind: PriorKind,
    pub num_subjects: usize,
    pub labels: Option<Vec<String>>,
    pub matrix: AdjMatrix,
}

impl AdjacencyDocument {
    pub fn from_prior(p: &PriorAdj) -> Self {
        AdjacencyDocument {
            kind: PriorKind::Probabilistic,
            num_subjects: p.num_subjects(),
            labels: None,
            matrix: p.matrix().clone(),
        }
    }

    pub fn from_binary(b: &BinaryAdj) -> Self {
        AdjacencyDocument {
            kind: PriorKind::Binary,
            num_subjects: 1,
            labels: None,
            matrix: b.matrix().clone(),
        }
    }

    pub fn from_counts(c: &AdjCounts, num_subjects: usize) -> Self {
        AdjacencyDocument {
            kind: PriorKind::Counts,
            num_subjects,
            labels: None,
            matrix: c.matrix().clone(),
        }
    }

    /// The matrix as a prior; counts are not accepted.
    pub fn into_prior(self) -> Result<PriorAdj> {
        match self.kind {
            PriorKind::Probabilistic | PriorKind::Binary => {
                PriorAdj::new(self.matrix, self.num_subjects)
            }
            PriorKind::Counts => Err(Error::InvalidDocument(
                "expected a binary or probabilistic matrix, found counts".into(),
            )),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_subjects == 0 {
            return Err(Error::InvalidDocument("num_subjects must be >= 1".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.matrix.num_classes() {
                return Err(Error::InvalidDocument(format!(
                    "{} label names for {} classes",
                    labels.len(),
                    self.matrix.num_classes()
                )));
            }
        }
        let entries = self.matrix.row_major();
        let bad = match self.kind {
            PriorKind::Counts => None,
            PriorKind::Binary => entries.iter().find(|&&v| v != 0.0 && v != 1.0),
            PriorKind::Probabilistic => entries.iter().find(|&&v| v > 1.0),
        };
        if let Some(v) = bad {
            return Err(Error::InvalidMatrix(format!(
                "entry {v} outside the range of kind {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct PriorOut<'a> {
    format: &'static str,
    num_classes: usize,
    num_subjects: usize,
    kind: PriorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<&'a [String]>,
    matrix: Box<RawValue>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorIn {
    format: String,
    num_classes: usize,
    num_subjects: usize,
    kind: PriorKind,
    #[serde(default)]
    labels: Option<Vec<String>>,
    matrix: Vec<f64>,
}

/// Integers print exactly; everything else with 17 significant digits.
fn format_entry(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.16e}")
    }
}

pub fn encode_prior(doc: &AdjacencyDocument) -> Result<String> {
    doc.validate()?;
    let entries: Vec<String> = doc
        .matrix
        .row_major()
        .iter()
        .map(|&v| format_entry(v))
        .collect();
    let matrix = RawValue::from_string(format!("[{}]", entries.join(",")))?;
    let out = PriorOut {
        format: PRIOR_FORMAT,
        num_classes: doc.matrix.num_classes(),
        num_subjects: doc.num_subjects,
        kind: doc.kind,
        labels: doc.labels.as_deref(),
        matrix,
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

pub fn decode_prior(text: &str) -> Result<AdjacencyDocument> {
    let raw: PriorIn =
        serde_json::from_str(text).map_err(|e| Error::InvalidDocument(e.to_string()))?;
    if raw.format != PRIOR_FORMAT {
        return Err(Error::InvalidDocument(format!(
            "unsupported format {:?}",
            raw.format
        )));
    }
    let doc = AdjacencyDocument {
        kind: raw.kind,
        num_subjects: raw.num_subjects,
        labels: raw.labels,
        matrix: AdjMatrix::from_row_major(raw.num_classes, raw.matrix)?,
    };
    doc.validate()?;
    Ok(doc)
}

pub fn save_prior(doc: &AdjacencyDocument, path: impl AsRef<Path>) -> Result<()> {
    let mut text = encode_prior(doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_prior(path: impl AsRef<Path>) -> Result<AdjacencyDocument> {
    decode_prior(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "label",
    "name",
    "vol_gt_cm3",
    "vol_pred_cm3",
    "err_cm3",
    "err_pct",
    "dsc",
    "hd95_mm",
];

fn num(v: f64) -> String {
    // Debug keeps a trailing ".0" on integral values, matching serde_json
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn encode_report_csv(r: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for m in &r.labels {
        w.write_record([
            m.label.to_string(),
            m.name.clone().unwrap_or_default(),
            num(m.vol_gt_cm3),
            num(m.vol_pred_cm3),
            num(m.err_cm3),
            opt(m.err_pct),
            opt(m.dsc),
            opt(m.hd95_mm),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn encode_report_json(r: &MetricReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(r)?)
}

pub fn save_report(r: &MetricReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let mut text = match format {
        ReportFormat::Json => encode_report_json(r)?,
        ReportFormat::Csv => encode_report_csv(r)?,
    };
    if format == ReportFormat::Json {
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub const TRACE_COLUMNS: [&str; 7] = ["step", "phase", "total", "seg", "dice", "ce", "nonadj"];

pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for t in trace {
        w.write_record([
            t.step.to_string(),
            t.phase.to_string(),
            num(t.total),
            num(t.seg),
            num(t.dice),
            num(t.ce),
            num(t.nonadj),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(trace: &[TraceEntry], path: impl AsRef<Path>) -> Result<()> {
    write_trace_csv(trace, fs::File::create(path)?)
}
