//! Exact flat-scan cosine store of boundary records.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "HALMITVS"
//! version    u32
//! dimension  u32
//! count      u64
//! meta_len   u64      bytes of record metadata that follow the header
//! checksum   u64      first 8 bytes of SHA-256 over metadata ++ embeddings
//! metadata   one JSON object per line, embedding omitted
//! embeddings count * dimension f32
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::explorer::TransformKind;

const MAGIC: &[u8; 8] = b"HALMITVS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8 + 8;
const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("embedding dimension {got} does not match store dimension {want}")]
    Dimension { got: usize, want: usize },
    #[error("record id {0} already present")]
    DuplicateId(u64),
    #[error("record id {id} is not above the current maximum {max}")]
    NonIncreasingId { id: u64, max: u64 },
    #[error("embedding is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("not a store file")]
    BadMagic,
    #[error("store format version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("store file is corrupt: checksum or length mismatch")]
    Checksum,
    #[error("store metadata is malformed: {0}")]
    Metadata(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent_id: u64,
    pub transform: TransformKind,
}

/// One discovered point of the generalization bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    /// Zero asks the store to assign the next id.
    pub id: u64,
    pub domain: String,
    pub query: String,
    pub responses: Vec<String>,
    /// Nats.
    pub semantic_entropy: f64,
    pub embedding: Vec<f32>,
    pub hallucinated: bool,
    pub lineage: Option<Lineage>,
    pub iteration: u64,
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    id: u64,
    domain: String,
    query: String,
    responses: Vec<String>,
    semantic_entropy: f64,
    hallucinated: bool,
    lineage: Option<Lineage>,
    iteration: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub record: BoundaryRecord,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorStore {
    dimension: usize,
    records: Vec<BoundaryRecord>,
    norms: Vec<f64>,
    index: HashMap<u64, usize>,
}

fn norm32(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt()
}

impl VectorStore {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, records: Vec::new(), norms: Vec::new(), index: HashMap::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_id(&self) -> u64 {
        self.records.last().map(|r| r.id).unwrap_or(0)
    }

    pub fn records(&self) -> &[BoundaryRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&BoundaryRecord> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    pub fn insert(&mut self, mut record: BoundaryRecord) -> Result<u64, StoreError> {
        if record.embedding.len() != self.dimension {
            return Err(StoreError::Dimension { got: record.embedding.len(), want: self.dimension });
        }
        let norm = norm32(&record.embedding);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(StoreError::NotUnit(norm));
        }
        let max = self.max_id();
        if record.id == 0 {
            record.id = max + 1;
        } else if self.index.contains_key(&record.id) {
            return Err(StoreError::DuplicateId(record.id));
        } else if record.id <= max {
            return Err(StoreError::NonIncreasingId { id: record.id, max });
        }
        let id = record.id;
        self.index.insert(id, self.records.len());
        self.records.push(record);
        self.norms.push(norm);
        Ok(id)
    }

    /// Exact top-k by cosine similarity, descending; ties go to the smaller id.
    pub fn top_k(&self, query: &[f64], k: usize, domain: Option<&str>) -> Vec<Neighbor> {
        if k == 0 || query.len() != self.dimension {
            return Vec::new();
        }
        let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        if qn == 0.0 {
            return Vec::new();
        }
        let mut scored: Vec<(f64, u64, usize)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| domain.is_none_or(|d| r.domain == d))
            .map(|(i, r)| {
                let dot: f64 = query.iter().zip(&r.embedding).map(|(a, b)| a * f64::from(*b)).sum();
                ((dot / (qn * self.norms[i])).clamp(-1.0, 1.0), r.id, i)
            })
            .collect();
        let order = |a: &(f64, u64, usize), b: &(f64, u64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        scored
            .into_iter()
            .map(|(similarity, _, i)| Neighbor { record: self.records[i].clone(), similarity })
            .collect()
    }

    pub fn count_domain(&self, domain: &str) -> usize {
        self.records.iter().filter(|r| r.domain == domain).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Vec::new();
        for r in &self.records {
            let m = RecordMeta {
                id: r.id,
                domain: r.domain.clone(),
                query: r.query.clone(),
                responses: r.responses.clone(),
                semantic_entropy: r.semantic_entropy,
                hallucinated: r.hallucinated,
                lineage: r.lineage.clone(),
                iteration: r.iteration,
            };
            serde_json::to_writer(&mut meta, &m).expect("metadata serializes");
            meta.push(b'\n');
        }
        let mut block = Vec::with_capacity(self.records.len() * self.dimension * 4);
        for r in &self.records {
            for x in &r.embedding {
                block.extend_from_slice(&x.to_le_bytes());
            }
        }
        let checksum = checksum(&meta, &block);
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + block.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&checksum.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&block);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::Checksum);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(StoreError::VersionMismatch { found: version });
        }
        let dimension = u32_at(12) as usize;
        let count = u64_at(16) as usize;
        let meta_len = u64_at(24) as usize;
        let expected = u64_at(32);
        let block_len = count.checked_mul(dimension).and_then(|n| n.checked_mul(4)).ok_or(StoreError::Checksum)?;
        if bytes.len() != HEADER_LEN + meta_len + block_len {
            return Err(StoreError::Checksum);
        }
        let meta = &bytes[HEADER_LEN..HEADER_LEN + meta_len];
        let block = &bytes[HEADER_LEN + meta_len..];
        if checksum(meta, block) != expected {
            return Err(StoreError::Checksum);
        }
        let text = std::str::from_utf8(meta).map_err(|e| StoreError::Metadata(e.to_string()))?;
        let metas: Vec<RecordMeta> = text
            .lines()
            .map(|l| serde_json::from_str(l).map_err(|e| StoreError::Metadata(e.to_string())))
            .collect::<Result<_, _>>()?;
        if metas.len() != count {
            return Err(StoreError::Metadata(format!("{} metadata lines for {count} records", metas.len())));
        }
        let mut store = Self::new(dimension);
        for (i, m) in metas.into_iter().enumerate() {
            let embedding = block[i * dimension * 4..(i + 1) * dimension * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(BoundaryRecord {
                id: m.id,
                domain: m.domain,
                query: m.query,
                responses: m.responses,
                semantic_entropy: m.semantic_entropy,
                embedding,
                hallucinated: m.hallucinated,
                lineage: m.lineage,
                iteration: m.iteration,
            })?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        {
            let mut file = std::fs::File::create(&tmp)?;
            file.write_all(&self.to_bytes())?;
            file.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Writes every record as one JSON object per line.
    pub fn export_jsonl(&self, mut out: impl Write) -> Result<(), StoreError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| StoreError::Metadata(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn checksum(meta: &[u8], block: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(meta);
    hasher.update(block);
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Converts a unit f64 vector for storage.
pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}
