//! Entity embedding store.
//!
//! Binary layout (little-endian), version 1:
//!
//! ```text
//! 0   magic     b"KGQAEMB\0"
//! 8   version   u32
//! 12  dim       u32
//! 16  count     u64
//! 24  ids_at    u64   byte offset of the id table
//! 32  vectors   count * dim * f32
//! ..  id table  count * (u32 byte length, UTF-8 bytes), same order as vectors
//! ```
//!
//! Opening a store maps the file and builds only the id -> slot table; vector
//! values are decoded from the mapping on access.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use memmap2::Mmap;
use thiserror::Error;

use super::{truncate_values, FullEmbedding, TruncatedEmbedding, TruncationConfig};

pub const FULL_EMBEDDING_DIM: usize = 200;

const MAGIC: &[u8; 8] = b"KGQAEMB\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corrupt embedding store: {0}")]
    Format(String),
}

#[derive(Debug)]
enum Backing {
    Memory(Vec<f32>),
    Mapped(Mmap),
}

#[derive(Debug)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    slots: HashMap<String, usize>,
    backing: Backing,
}

impl Default for EmbeddingStore {
    fn default() -> Self {
        Self {
            dim: FULL_EMBEDDING_DIM,
            ids: Vec::new(),
            slots: HashMap::new(),
            backing: Backing::Memory(Vec::new()),
        }
    }
}

impl EmbeddingStore {
    /// In-memory store; later duplicates of an id replace earlier ones.
    pub fn from_embeddings(embeddings: impl IntoIterator<Item = FullEmbedding>) -> Self {
        let mut store = Self::default();
        let Backing::Memory(data) = &mut store.backing else {
            unreachable!()
        };
        for emb in embeddings {
            match store.slots.get(&emb.entity_id) {
                Some(&slot) => {
                    data[slot * FULL_EMBEDDING_DIM..(slot + 1) * FULL_EMBEDDING_DIM]
                        .copy_from_slice(&emb.values);
                }
                None => {
                    store.slots.insert(emb.entity_id.clone(), store.ids.len());
                    store.ids.push(emb.entity_id);
                    data.extend_from_slice(&emb.values);
                }
            }
        }
        store
    }

    /// Reads the text ingest format: `<id>\t<v1> <v2> ... <v200>` per line.
    pub fn from_text(reader: impl BufRead) -> Result<Self, StoreError> {
        let mut embeddings = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            embeddings.push(parse_text_line(&line).map_err(|message| StoreError::Parse {
                line: i + 1,
                message,
            })?);
        }
        Ok(Self::from_embeddings(embeddings))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let file = File::open(path)?;
        // SAFETY: the store file is treated as immutable while mapped.
        let mmap = unsafe { Mmap::map(&file)? };
        if mmap.len() < HEADER_LEN || &mmap[..8] != MAGIC {
            return Err(StoreError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(mmap[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(StoreError::Format(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(mmap[12..16].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(mmap[16..24].try_into().unwrap()) as usize;
        let ids_at = u64::from_le_bytes(mmap[24..32].try_into().unwrap()) as usize;
        if dim != FULL_EMBEDDING_DIM {
            return Err(StoreError::Format(format!("dimension {dim}, expected {FULL_EMBEDDING_DIM}")));
        }
        let vectors_end = count
            .checked_mul(dim * 4)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| StoreError::Format("count overflow".into()))?;
        if vectors_end != ids_at || ids_at > mmap.len() {
            return Err(StoreError::Format("vector block size mismatch".into()));
        }
        let mut ids = Vec::with_capacity(count);
        let mut slots = HashMap::with_capacity(count);
        let mut pos = ids_at;
        for slot in 0..count {
            let len_bytes = mmap
                .get(pos..pos + 4)
                .ok_or_else(|| StoreError::Format("truncated id table".into()))?;
            let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += 4;
            let bytes = mmap
                .get(pos..pos + len)
                .ok_or_else(|| StoreError::Format("truncated id table".into()))?;
            let id = std::str::from_utf8(bytes)
                .map_err(|_| StoreError::Format("id is not UTF-8".into()))?
                .to_string();
            pos += len;
            slots.insert(id.clone(), slot);
            ids.push(id);
        }
        Ok(Self {
            dim,
            ids,
            slots,
            backing: Backing::Mapped(mmap),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let mut out = BufWriter::new(File::create(path)?);
        let count = self.ids.len();
        let ids_at = HEADER_LEN + count * self.dim * 4;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(count as u64).to_le_bytes())?;
        out.write_all(&(ids_at as u64).to_le_bytes())?;
        for slot in 0..count {
            for v in self.slot_values(slot, self.dim).iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        for id in &self.ids {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.slots.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<Cow<'_, [f32]>> {
        let &slot = self.slots.get(id)?;
        Some(self.slot_values(slot, self.dim))
    }

    pub fn full_embedding(&self, id: &str) -> Option<FullEmbedding> {
        self.get(id).map(|v| FullEmbedding {
            entity_id: id.to_string(),
            values: v.into_owned(),
        })
    }

    /// Truncated view of a stored vector, decoding only the leading coordinates.
    pub fn truncated(&self, id: &str, config: TruncationConfig) -> Option<TruncatedEmbedding> {
        let &slot = self.slots.get(id)?;
        let prefix = self.slot_values(slot, config.length.min(self.dim));
        Some(truncate_values(&prefix, config))
    }

    fn slot_values(&self, slot: usize, n: usize) -> Cow<'_, [f32]> {
        let start = slot * self.dim;
        match &self.backing {
            Backing::Memory(data) => Cow::Borrowed(&data[start..start + n]),
            Backing::Mapped(mmap) => {
                let base = HEADER_LEN + start * 4;
                Cow::Owned(
                    mmap[base..base + n * 4]
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
        }
    }
}

fn parse_text_line(line: &str) -> Result<FullEmbedding, String> {
    let (id, rest) = line
        .split_once('\t')
        .ok_or_else(|| "expected <id>\\t<values>".to_string())?;
    let values = rest
        .split_whitespace()
        .map(|t| t.parse::<f32>().map_err(|_| format!("bad float {t:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    FullEmbedding::new(id.trim(), values).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(id: &str, seed: f32) -> FullEmbedding {
        FullEmbedding::new(id, (0..200).map(|i| seed + i as f32 * 0.001).collect()).unwrap()
    }

    #[test]
    fn text_ingest_and_binary_roundtrip() {
        let line = |id: &str, v: f32| {
            let vals: Vec<String> = (0..200).map(|i| (v + i as f32).to_string()).collect();
            format!("{id}\t{}\n", vals.join(" "))
        };
        let text = format!("{}{}{}", line("Q76", 0.5), line("Q77", -1.25), line("Q76", 2.0));
        let store = EmbeddingStore::from_text(text.as_bytes()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("Q76").unwrap()[0], 2.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        store.write(&path).unwrap();
        let reopened = EmbeddingStore::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        for id in ["Q76", "Q77"] {
            assert_eq!(reopened.get(id).unwrap(), store.get(id).unwrap());
            assert_eq!(
                reopened.truncated(id, TruncationConfig::default()),
                store.truncated(id, TruncationConfig::default())
            );
        }
        assert!(reopened.get("Q1").is_none());
    }

    #[test]
    fn text_ingest_reports_line_numbers() {
        let err = EmbeddingStore::from_text("Q1\t0.1 0.2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, StoreError::Parse { line: 1, .. }), "{err}");
        let err = EmbeddingStore::from_text("\nQ1 0.1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, StoreError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn open_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a store at all, definitely not").unwrap();
        assert!(matches!(EmbeddingStore::open(&path), Err(StoreError::Format(_))));
    }

    #[test]
    fn duplicates_overwrite_in_memory() {
        let store = EmbeddingStore::from_embeddings([emb("Q1", 0.0), emb("Q2", 1.0), emb("Q1", 5.0)]);
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("Q1").unwrap()[0], 5.0);
        assert_eq!(store.ids().collect::<Vec<_>>(), ["Q1", "Q2"]);
    }
}
