//! On-disk label index, version 1, little-endian:
//!
//! ```text
//! header   magic b"KGQALBL\0" | version u32 | reserved u32
//!          | doc_count u64 | term_count u64 | total_len u64
//! docs     doc_count * (str id | str label | u32 token_count)
//! terms    term_count * (str term | u32 n | n * (u32 doc, u32 tf)), terms sorted
//! str      u32 byte length, UTF-8 bytes
//! ```
//!
//! Reopening maps the file and decodes the tables directly; labels are not
//! re-tokenized.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;

use super::{EntityRecord, LabelIndex, LabelIndexError, Posting};

const MAGIC: &[u8; 8] = b"KGQALBL\0";
const VERSION: u32 = 1;
const FILE_NAME: &str = "labels.idx";

impl LabelIndex {
    pub fn index_file(dir: &Path) -> PathBuf {
        dir.join(FILE_NAME)
    }

    /// Writes the index into `dir` (created if missing).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), LabelIndexError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(Self::index_file(dir))?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&0u32.to_le_bytes())?;
        out.write_all(&(self.docs.len() as u64).to_le_bytes())?;
        out.write_all(&(self.postings.len() as u64).to_le_bytes())?;
        out.write_all(&self.total_len.to_le_bytes())?;
        for (record, len) in self.docs.iter().zip(&self.doc_lens) {
            write_str(&mut out, &record.id)?;
            write_str(&mut out, &record.label)?;
            out.write_all(&len.to_le_bytes())?;
        }
        let mut terms: Vec<_> = self.postings.iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        for (term, list) in terms {
            write_str(&mut out, term)?;
            out.write_all(&(list.len() as u32).to_le_bytes())?;
            for p in list {
                out.write_all(&p.doc.to_le_bytes())?;
                out.write_all(&p.tf.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, LabelIndexError> {
        let file = File::open(Self::index_file(dir.as_ref()))?;
        // SAFETY: index files are written once and not modified while mapped.
        let mmap = unsafe { Mmap::map(&file)? };
        let mut r = Reader { buf: &mmap, pos: 0 };
        if r.bytes(8)? != MAGIC {
            return Err(LabelIndexError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(LabelIndexError::Format(format!("unsupported version {version}")));
        }
        r.u32()?;
        let doc_count = r.u64()? as usize;
        let term_count = r.u64()? as usize;
        let total_len = r.u64()?;

        let mut docs = Vec::with_capacity(doc_count.min(1 << 24));
        let mut doc_lens = Vec::with_capacity(doc_count.min(1 << 24));
        let mut by_id = HashMap::with_capacity(doc_count.min(1 << 24));
        for doc in 0..doc_count {
            let id = r.string()?;
            let label = r.string()?;
            let len = r.u32()?;
            let record = EntityRecord::new(id, label)
                .map_err(|e| LabelIndexError::Format(e.to_string()))?;
            by_id.insert(record.id.clone(), doc as u32);
            docs.push(record);
            doc_lens.push(len);
        }
        let mut postings = HashMap::with_capacity(term_count.min(1 << 24));
        for _ in 0..term_count {
            let term = r.string()?;
            let n = r.u32()? as usize;
            let mut list = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                let doc = r.u32()?;
                let tf = r.u32()?;
                if doc as usize >= doc_count {
                    return Err(LabelIndexError::Format(format!("posting for unknown doc {doc}")));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        if r.pos != mmap.len() {
            return Err(LabelIndexError::Format("trailing bytes".into()));
        }
        Ok(Self {
            docs,
            doc_lens,
            by_id,
            postings,
            total_len,
        })
    }
}

fn write_str(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], LabelIndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| LabelIndexError::Format("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, LabelIndexError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LabelIndexError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, LabelIndexError> {
        let n = self.u32()? as usize;
        let bytes = self.bytes(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| LabelIndexError::Format("string is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_index::Bm25Params;

    #[test]
    fn save_and_reopen() {
        let index = LabelIndex::build([
            EntityRecord::new("Q76", "Barack Obama").unwrap(),
            EntityRecord::new("Q47513588", "Barack Obama").unwrap(),
            EntityRecord::new("Q77", "Uruguay").unwrap(),
        ]);
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let reopened = LabelIndex::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 3);
        for q in ["barack", "obama uruguay", "Barack Obama"] {
            assert_eq!(
                reopened.search(q, 10, Bm25Params::default()).unwrap(),
                index.search(q, 10, Bm25Params::default()).unwrap()
            );
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let index = LabelIndex::build([EntityRecord::new("Q1", "one").unwrap()]);
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let path = LabelIndex::index_file(dir.path());
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(LabelIndex::open(dir.path()), Err(LabelIndexError::Format(_))));
    }
}
