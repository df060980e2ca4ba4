//! Binary batch storage with an offset table for random access.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "NTRN" | u32 version | u32 src_vocab | u32 tgt_vocab | u64 batch_count
//! u64 offset[batch_count]                 absolute byte offsets
//! per batch: u32 rows | u32 src_cols | u32 tgt_cols | u32 src ids | u32 tgt ids
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::batch::BatchUnit;
use crate::error::{CorpusError, Result};

pub const MAGIC: &[u8; 4] = b"NTRN";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub src_vocab: u32,
    pub tgt_vocab: u32,
    pub batch_count: u64,
}

/// A fully loaded dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub offsets: Vec<u64>,
    pub batches: Vec<BatchUnit>,
}

fn batch_bytes(b: &BatchUnit) -> u64 {
    12 + 4 * (b.src.len() + b.tgt.len()) as u64
}

fn encode_batch(b: &BatchUnit, out: &mut Vec<u8>) {
    out.extend_from_slice(&(b.rows as u32).to_le_bytes());
    out.extend_from_slice(&(b.src_cols as u32).to_le_bytes());
    out.extend_from_slice(&(b.tgt_cols as u32).to_le_bytes());
    for &id in b.src.iter().chain(&b.tgt) {
        out.extend_from_slice(&id.to_le_bytes());
    }
}

pub fn write_dataset(batches: &[BatchUnit], src_vocab: u32, tgt_vocab: u32, path: &Path) -> Result<()> {
    if batches.is_empty() {
        return Err(CorpusError::Invalid("refusing to write a dataset without batches".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&src_vocab.to_le_bytes())?;
    w.write_all(&tgt_vocab.to_le_bytes())?;
    w.write_all(&(batches.len() as u64).to_le_bytes())?;
    let mut off = HEADER_LEN + 8 * batches.len() as u64;
    for b in batches {
        w.write_all(&off.to_le_bytes())?;
        off += batch_bytes(b);
    }
    let mut buf = Vec::new();
    for b in batches {
        buf.clear();
        encode_batch(b, &mut buf);
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| CorpusError::Format("truncated dataset".into()))
}

fn u64_at(bytes: &[u8], at: usize) -> Result<u64> {
    bytes
        .get(at..at + 8)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| CorpusError::Format("truncated dataset".into()))
}

fn parse_header(bytes: &[u8]) -> Result<DatasetHeader> {
    if bytes.len() < HEADER_LEN as usize {
        return Err(CorpusError::Format("truncated dataset header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(CorpusError::Format("bad dataset magic".into()));
    }
    let version = u32_at(bytes, 4)?;
    if version != VERSION {
        return Err(CorpusError::Format(format!("unsupported dataset version {version}")));
    }
    Ok(DatasetHeader {
        src_vocab: u32_at(bytes, 8)?,
        tgt_vocab: u32_at(bytes, 12)?,
        batch_count: u64_at(bytes, 16)?,
    })
}

/// Validates the offset table against the total file length.
fn check_offsets(offsets: &[u64], total_len: u64) -> Result<()> {
    let table_end = HEADER_LEN + 8 * offsets.len() as u64;
    let mut prev = table_end;
    for (i, &o) in offsets.iter().enumerate() {
        if o < prev || o.checked_add(12).map_or(true, |e| e > total_len) {
            return Err(CorpusError::Format(format!("batch {i} offset {o} out of range")));
        }
        prev = o + 12;
    }
    Ok(())
}

/// Decodes one batch from `bytes`, which must hold exactly that batch.
fn decode_batch(bytes: &[u8], header: &DatasetHeader) -> Result<BatchUnit> {
    let rows = u32_at(bytes, 0)? as usize;
    let src_cols = u32_at(bytes, 4)? as usize;
    let tgt_cols = u32_at(bytes, 8)? as usize;
    let n_src = rows.checked_mul(src_cols);
    let n_tgt = rows.checked_mul(tgt_cols);
    let need = n_src
        .zip(n_tgt)
        .and_then(|(a, b)| a.checked_add(b))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| CorpusError::Format("batch dimensions overflow".into()))?;
    if need != bytes.len() {
        return Err(CorpusError::Format(format!(
            "batch needs {need} bytes but its slot holds {}",
            bytes.len()
        )));
    }
    let ids: Vec<u32> = bytes[12..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (src, tgt) = ids.split_at(rows * src_cols);
    if src.iter().any(|&i| i >= header.src_vocab) || tgt.iter().any(|&i| i >= header.tgt_vocab) {
        return Err(CorpusError::Format("token id outside vocabulary".into()));
    }
    let b = BatchUnit {
        rows,
        src_cols,
        tgt_cols,
        src: src.to_vec(),
        tgt: tgt.to_vec(),
    };
    b.validate()?;
    Ok(b)
}

impl DatasetFile {
    /// Parses a complete dataset image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let n = usize::try_from(header.batch_count)
            .ok()
            .filter(|&n| n.checked_mul(8).is_some_and(|t| t <= bytes.len()))
            .ok_or_else(|| CorpusError::Format("batch count exceeds file size".into()))?;
        let offsets = (0..n)
            .map(|i| u64_at(bytes, HEADER_LEN as usize + 8 * i))
            .collect::<Result<Vec<_>>>()?;
        check_offsets(&offsets, bytes.len() as u64)?;
        let mut batches = Vec::with_capacity(n);
        for i in 0..n {
            let start = offsets[i] as usize;
            let end = offsets.get(i + 1).map_or(bytes.len(), |&o| o as usize);
            batches.push(decode_batch(&bytes[start..end], &header)?);
        }
        Ok(Self {
            header,
            offsets,
            batches,
        })
    }
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    DatasetFile::from_bytes(&std::fs::read(path)?)
}

/// Random access to batches on disk: reads the header and offset table up
/// front, then only the byte range of each requested batch.
#[derive(Debug)]
pub struct DatasetReader {
    file: File,
    header: DatasetHeader,
    offsets: Vec<u64>,
    len: u64,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let len = file.metadata()?.len();
        let mut head = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut head)
            .map_err(|_| CorpusError::Format("truncated dataset header".into()))?;
        let header = parse_header(&head)?;
        if header.batch_count.checked_mul(8).map_or(true, |t| t + HEADER_LEN > len) {
            return Err(CorpusError::Format("batch count exceeds file size".into()));
        }
        let mut table = vec![0u8; 8 * header.batch_count as usize];
        file.read_exact(&mut table)?;
        let offsets: Vec<u64> = table
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        check_offsets(&offsets, len)?;
        Ok(Self {
            file,
            header,
            offsets,
            len,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn read_batch(&mut self, i: usize) -> Result<BatchUnit> {
        let start = *self
            .offsets
            .get(i)
            .ok_or_else(|| CorpusError::Invalid(format!("batch {i} out of range {}", self.offsets.len())))?;
        let end = self.offsets.get(i + 1).copied().unwrap_or(self.len);
        let mut buf = vec![0u8; (end - start) as usize];
        self.file.seek(SeekFrom::Start(start))?;
        self.file.read_exact(&mut buf)?;
        decode_batch(&buf, &self.header)
    }

    pub fn read_all(&mut self) -> Result<Vec<BatchUnit>> {
        (0..self.len()).map(|i| self.read_batch(i)).collect()
    }
}
