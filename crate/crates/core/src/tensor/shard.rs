//! Binary shard container for samples.
//!
//! Little-endian throughout. Header (32 bytes):
//!
//! ```text
//! magic "DHCPSHRD" (8) | version u32 | tokens u32 | layers u32 | heads u32 | count u64
//! ```
//!
//! Each record:
//!
//! ```text
//! id_len u16 | id bytes | answer u8 | ground_truth u8 | category u8 | cluster u8 | flags u8
//! [p_yes f32 | p_no f32]   when flags bit 0 is set
//! T*L*H f32 values
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Answer, AnswerProbs, AttentionTensor, Category, Cluster, GroundTruth, Sample, TensorShape};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 8] = b"DHCPSHRD";
pub const SHARD_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 8 + 4 + 4 * 3 + 8;

const FLAG_PROBS: u8 = 1;

/// Encoded size of one record.
pub fn record_len(shape: TensorShape, id_len: usize, has_probs: bool) -> u64 {
    2 + id_len as u64 + 5 + if has_probs { 8 } else { 0 } + 4 * shape.len() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub shape: TensorShape,
    pub samples: Vec<Sample>,
}

impl Shard {
    pub fn new(shape: TensorShape, samples: Vec<Sample>) -> Self {
        Shard { shape, samples }
    }
}

pub fn write_shard(path: impl AsRef<Path>, shape: TensorShape, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    write_shard_to(&mut w, shape, samples).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<Shard> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_shard_from(BufReader::with_capacity(1 << 20, file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })
}

/// Writes a shard. Samples are checked before any byte is written.
pub fn write_shard_to<W: Write>(mut w: W, shape: TensorShape, samples: &[Sample]) -> Result<()> {
    shape.check()?;
    let mut ids = HashSet::with_capacity(samples.len());
    for s in samples {
        if s.tensor.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                found: s.tensor.shape().to_string(),
            });
        }
        if s.id.len() > u16::MAX as usize {
            return Err(Error::InvalidInput(format!(
                "sample id longer than {} bytes",
                u16::MAX
            )));
        }
        if !ids.insert(s.id.as_str()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
        s.validate()?;
    }

    let io = |e| Error::io("<shard>", e);
    let mut header = Vec::with_capacity(HEADER_LEN as usize);
    header.extend_from_slice(SHARD_MAGIC);
    header.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    header.extend_from_slice(&shape.tokens.to_le_bytes());
    header.extend_from_slice(&shape.layers.to_le_bytes());
    header.extend_from_slice(&shape.heads.to_le_bytes());
    header.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    w.write_all(&header).map_err(io)?;

    let mut buf = Vec::new();
    for s in samples {
        buf.clear();
        buf.extend_from_slice(&(s.id.len() as u16).to_le_bytes());
        buf.extend_from_slice(s.id.as_bytes());
        buf.push(s.answer.code());
        buf.push(s.ground_truth.code());
        buf.push(s.category.code());
        buf.push(s.cluster.code());
        match s.probs {
            Some(p) => {
                buf.push(FLAG_PROBS);
                buf.extend_from_slice(&p.yes.to_le_bytes());
                buf.extend_from_slice(&p.no.to_le_bytes());
            }
            None => buf.push(0),
        }
        buf.reserve(4 * shape.len());
        for v in s.tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::TruncatedFile,
        _ => Error::io("<shard>", e),
    })
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn read_shard_from<R: Read>(mut r: R) -> Result<Shard> {
    let mut header = [0u8; HEADER_LEN as usize];
    read_exact_or_truncated(&mut r, &mut header[..8])?;
    if &header[..8] != SHARD_MAGIC {
        return Err(Error::BadMagic);
    }
    read_exact_or_truncated(&mut r, &mut header[8..])?;
    let version = u32_at(&header, 8);
    if version != SHARD_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let shape = TensorShape::new(u32_at(&header, 12), u32_at(&header, 16), u32_at(&header, 20))?;
    let count = u64::from_le_bytes(header[24..32].try_into().unwrap());

    let n = shape.len();
    let mut samples = Vec::with_capacity(count.min(1 << 16) as usize);
    let mut ids = HashSet::new();
    let mut payload = vec![0u8; 4 * n];
    for index in 0..count {
        let corrupt = |reason: &str| Error::CorruptRecord {
            index,
            reason: reason.to_string(),
        };
        let mut len = [0u8; 2];
        read_exact_or_truncated(&mut r, &mut len)?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or_truncated(&mut r, &mut id)?;
        let id = String::from_utf8(id).map_err(|_| corrupt("id is not UTF-8"))?;

        let mut fields = [0u8; 5];
        read_exact_or_truncated(&mut r, &mut fields)?;
        let answer = Answer::from_code(fields[0]).ok_or_else(|| corrupt("answer code"))?;
        let ground_truth =
            GroundTruth::from_code(fields[1]).ok_or_else(|| corrupt("ground truth code"))?;
        let category = Category::from_code(fields[2]).ok_or_else(|| corrupt("category code"))?;
        let cluster = Cluster::from_code(fields[3]).ok_or_else(|| corrupt("cluster code"))?;
        let flags = fields[4];
        if flags & !FLAG_PROBS != 0 {
            return Err(corrupt("unknown flag bits"));
        }
        let probs = if flags & FLAG_PROBS != 0 {
            let mut p = [0u8; 8];
            read_exact_or_truncated(&mut r, &mut p)?;
            Some(AnswerProbs {
                yes: f32::from_le_bytes(p[..4].try_into().unwrap()),
                no: f32::from_le_bytes(p[4..].try_into().unwrap()),
            })
        } else {
            None
        };

        read_exact_or_truncated(&mut r, &mut payload)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let sample = Sample {
            id,
            tensor: AttentionTensor::from_raw(shape, values),
            answer,
            ground_truth,
            category,
            cluster,
            probs,
        };
        sample.validate()?;
        samples.push(sample);
    }

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::CorruptRecord {
                index: count,
                reason: "trailing bytes after last record".into(),
            })
        }
        Err(e) => return Err(Error::io("<shard>", e)),
    }
    Ok(Shard { shape, samples })
}
