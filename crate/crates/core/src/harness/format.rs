//! Binary carriers for test-feature streams (`BMMF`) and prompt embeddings (`BMMT`).
//!
//! Both are little-endian with 32-bit float payloads.
//!
//! Feature stream:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BMMF"
//! 4       4     version (u32) = 1
//! 8       4     flags (u32), bit 0 = features are unit-normalized
//! 12      4     d (u32)
//! 16      4     C (u32)
//! 20      8     N (u64)
//! 28      ...   N records of [label i32 (-1 = unlabeled), d × f32]
//! ```
//!
//! Prompt embeddings:
//!
//! ```text
//! 0       4     magic "BMMT"
//! 4       4     version (u32) = 1
//! 8       4     d (u32)
//! 12      4     C (u32)
//! 16      4     M (u32)
//! 20      ...   C·M·d × f32, class-major then prompt
//! ```
//!
//! A JSON sidecar next to the prompt file maps class index to class name.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::textual::PromptEmbeddingSet;

pub const STREAM_MAGIC: [u8; 4] = *b"BMMF";
pub const PROMPT_MAGIC: [u8; 4] = *b"BMMT";
pub const FORMAT_VERSION: u32 = 1;
pub const STREAM_HEADER_LEN: u64 = 28;
pub const PROMPT_HEADER_LEN: u64 = 20;
pub const FLAG_NORMALIZED: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub flags: u32,
    pub dim: u32,
    pub classes: u32,
    pub count: u64,
}

impl StreamHeader {
    pub fn normalized(&self) -> bool {
        self.flags & FLAG_NORMALIZED != 0
    }

    fn record_len(&self) -> u64 {
        4 + 4 * self.dim as u64
    }

    /// Total file length implied by the header.
    pub fn file_len(&self) -> Result<u64> {
        self.count
            .checked_mul(self.record_len())
            .and_then(|b| b.checked_add(STREAM_HEADER_LEN))
            .ok_or_else(|| FormatError::InvalidHeader(format!("record count {} overflows", self.count)).into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    /// `-1` marks an unlabeled sample.
    pub label: i32,
    pub feature: Vec<f32>,
}

impl StreamRecord {
    pub fn label(&self) -> Option<usize> {
        usize::try_from(self.label).ok()
    }

    pub fn feature_f64(&self) -> DVector<f64> {
        DVector::from_iterator(self.feature.len(), self.feature.iter().map(|&v| v as f64))
    }
}

/// A fully loaded feature stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub flags: u32,
    pub dim: u32,
    pub classes: u32,
    pub records: Vec<StreamRecord>,
}

impl FeatureStream {
    pub fn header(&self) -> StreamHeader {
        StreamHeader { flags: self.flags, dim: self.dim, classes: self.classes, count: self.records.len() as u64 }
    }

    pub fn normalized(&self) -> bool {
        self.flags & FLAG_NORMALIZED != 0
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The same stream in reverse order.
    pub fn reversed(&self) -> FeatureStream {
        let mut s = self.clone();
        s.records.reverse();
        s
    }

    fn validate(&self) -> Result<()> {
        validate_shape(self.dim, self.classes)?;
        for (i, r) in self.records.iter().enumerate() {
            if r.feature.len() != self.dim as usize {
                return Err(Error::DimensionMismatch { expected: self.dim as usize, found: r.feature.len() });
            }
            check_label(i as u64, r.label, self.classes)?;
        }
        Ok(())
    }
}

fn validate_shape(dim: u32, classes: u32) -> Result<()> {
    if dim == 0 {
        return Err(FormatError::InvalidHeader("dimension must be positive".into()).into());
    }
    if classes == 0 {
        return Err(FormatError::InvalidHeader("class count must be positive".into()).into());
    }
    Ok(())
}

fn check_label(index: u64, label: i32, classes: u32) -> Result<()> {
    if label == -1 || (label >= 0 && (label as u32) < classes) {
        Ok(())
    } else {
        Err(FormatError::LabelOutOfRange { index, label, classes }.into())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_magic(r: &mut impl Read, expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if found != expected {
        return Err(FormatError::BadMagic { expected, found }.into());
    }
    Ok(())
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(v).into());
    }
    Ok(())
}

fn check_length(expected: u64, found: u64) -> Result<()> {
    if found < expected {
        Err(FormatError::Truncated { expected, found }.into())
    } else if found > expected {
        Err(FormatError::TrailingData { expected, found }.into())
    } else {
        Ok(())
    }
}

/// Header bytes shorter than the fixed header are reported as truncation.
fn short_header(total_len: u64, header_len: u64) -> Result<()> {
    if total_len < header_len {
        return Err(FormatError::Truncated { expected: header_len, found: total_len }.into());
    }
    Ok(())
}

/// Incremental reader. The header and the total length are validated before any
/// record is yielded; labels are checked as records are read.
pub struct StreamReader<R> {
    reader: R,
    header: StreamHeader,
    next: u64,
    failed: bool,
}

impl StreamReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        StreamReader::new(BufReader::new(file), len)
    }
}

impl<R: Read> StreamReader<R> {
    /// `total_len` is the full byte length of the source, header included.
    pub fn new(mut reader: R, total_len: u64) -> Result<Self> {
        short_header(total_len, STREAM_HEADER_LEN)?;
        read_magic(&mut reader, STREAM_MAGIC)?;
        check_version(read_u32(&mut reader)?)?;
        let flags = read_u32(&mut reader)?;
        let dim = read_u32(&mut reader)?;
        let classes = read_u32(&mut reader)?;
        let mut n = [0u8; 8];
        reader.read_exact(&mut n)?;
        let header = StreamHeader { flags, dim, classes, count: u64::from_le_bytes(n) };
        validate_shape(dim, classes)?;
        check_length(header.file_len()?, total_len)?;
        Ok(StreamReader { reader, header, next: 0, failed: false })
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    fn read_record(&mut self) -> Result<StreamRecord> {
        let mut b = [0u8; 4];
        self.reader.read_exact(&mut b)?;
        let label = i32::from_le_bytes(b);
        check_label(self.next, label, self.header.classes)?;
        let mut raw = vec![0u8; 4 * self.header.dim as usize];
        self.reader.read_exact(&mut raw)?;
        let feature = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(StreamRecord { label, feature })
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<StreamRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.header.count {
            return None;
        }
        let r = self.read_record();
        self.next += 1;
        if r.is_err() {
            self.failed = true;
        }
        Some(r)
    }
}

pub fn decode_stream(bytes: &[u8]) -> Result<FeatureStream> {
    let reader = StreamReader::new(bytes, bytes.len() as u64)?;
    collect_stream(reader)
}

fn collect_stream<R: Read>(reader: StreamReader<R>) -> Result<FeatureStream> {
    let h = reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok(FeatureStream { flags: h.flags, dim: h.dim, classes: h.classes, records })
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<FeatureStream> {
    collect_stream(StreamReader::open(path)?)
}

pub fn encode_stream(stream: &FeatureStream, w: &mut impl Write) -> Result<()> {
    stream.validate()?;
    w.write_all(&STREAM_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&stream.flags.to_le_bytes())?;
    w.write_all(&stream.dim.to_le_bytes())?;
    w.write_all(&stream.classes.to_le_bytes())?;
    w.write_all(&(stream.records.len() as u64).to_le_bytes())?;
    for r in &stream.records {
        w.write_all(&r.label.to_le_bytes())?;
        for v in &r.feature {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn stream_to_bytes(stream: &FeatureStream) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(stream.header().file_len()? as usize);
    encode_stream(stream, &mut buf)?;
    Ok(buf)
}

pub fn write_stream(path: impl AsRef<Path>, stream: &FeatureStream) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_stream(stream, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Prompt embeddings for every class.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFile {
    pub dim: u32,
    pub classes: u32,
    pub prompts_per_class: u32,
    /// `C·M·d` values, class-major then prompt.
    pub values: Vec<f32>,
}

impl PromptFile {
    pub fn expected_values(&self) -> usize {
        self.classes as usize * self.prompts_per_class as usize * self.dim as usize
    }

    pub fn file_len(&self) -> u64 {
        PROMPT_HEADER_LEN + 4 * self.expected_values() as u64
    }

    /// Embedding `i` of class `c`.
    pub fn embedding(&self, class: usize, prompt: usize) -> &[f32] {
        let d = self.dim as usize;
        let start = (class * self.prompts_per_class as usize + prompt) * d;
        &self.values[start..start + d]
    }

    pub fn to_prompt_sets(&self) -> Result<Vec<PromptEmbeddingSet>> {
        (0..self.classes as usize)
            .map(|c| {
                let embeddings = (0..self.prompts_per_class as usize)
                    .map(|i| DVector::from_iterator(self.dim as usize, self.embedding(c, i).iter().map(|&v| v as f64)))
                    .collect();
                PromptEmbeddingSet::new(c, embeddings)
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        validate_shape(self.dim, self.classes)?;
        if self.prompts_per_class == 0 {
            return Err(FormatError::InvalidHeader("prompt count must be positive".into()).into());
        }
        if self.values.len() != self.expected_values() {
            return Err(Error::invalid(format!(
                "prompt file holds {} values, header implies {}",
                self.values.len(),
                self.expected_values()
            )));
        }
        Ok(())
    }
}

pub fn encode_prompts(prompts: &PromptFile, w: &mut impl Write) -> Result<()> {
    prompts.validate()?;
    w.write_all(&PROMPT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&prompts.dim.to_le_bytes())?;
    w.write_all(&prompts.classes.to_le_bytes())?;
    w.write_all(&prompts.prompts_per_class.to_le_bytes())?;
    for v in &prompts.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn prompts_to_bytes(prompts: &PromptFile) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(prompts.file_len() as usize);
    encode_prompts(prompts, &mut buf)?;
    Ok(buf)
}

pub fn decode_prompts(bytes: &[u8]) -> Result<PromptFile> {
    read_prompts_from(bytes, bytes.len() as u64)
}

fn read_prompts_from(mut r: impl Read, total_len: u64) -> Result<PromptFile> {
    short_header(total_len, PROMPT_HEADER_LEN)?;
    read_magic(&mut r, PROMPT_MAGIC)?;
    check_version(read_u32(&mut r)?)?;
    let dim = read_u32(&mut r)?;
    let classes = read_u32(&mut r)?;
    let prompts_per_class = read_u32(&mut r)?;
    validate_shape(dim, classes)?;
    if prompts_per_class == 0 {
        return Err(FormatError::InvalidHeader("prompt count must be positive".into()).into());
    }
    let mut file = PromptFile { dim, classes, prompts_per_class, values: Vec::new() };
    check_length(file.file_len(), total_len)?;
    let mut raw = vec![0u8; 4 * file.expected_values()];
    r.read_exact(&mut raw)?;
    file.values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(file)
}

pub fn read_prompts(path: impl AsRef<Path>) -> Result<PromptFile> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    read_prompts_from(BufReader::new(file), len)
}

pub fn write_prompts(path: impl AsRef<Path>, prompts: &PromptFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_prompts(prompts, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Class names for a prompt file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassManifest {
    pub classes: Vec<String>,
}

/// `<prompt path>.classes.json`
pub fn manifest_path(prompt_path: impl AsRef<Path>) -> PathBuf {
    let mut p = prompt_path.as_ref().as_os_str().to_owned();
    p.push(".classes.json");
    PathBuf::from(p)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &ClassManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<ClassManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("bad class manifest: {e}")))
}
