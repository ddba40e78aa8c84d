//! On-disk formats.
//!
//! Matrix files: 8-byte magic, `u32` version, `u64` rows, `u64` cols, then
//! `rows * cols` row-major `f32` values, all little-endian. Embedding files
//! carry a sidecar `<file>.manifest` with one `index<TAB>id` line per row.
//!
//! Checkpoints: magic, `u32` version, `u32` length plus UTF-8 metadata text,
//! `u32` tensor count, then per tensor `u32` name length, name, `u64` rows,
//! `u64` cols and the `f32` values.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::objective::RelevanceMatrix;
use crate::retrieval::EmbeddingMatrix;
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"TRETEMB1";
pub const RELEVANCE_MAGIC: &[u8; 8] = b"TRETREL1";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TRETCKP1";
pub const FORMAT_VERSION: u32 = 1;

const MATRIX_HEADER: usize = 8 + 4 + 8 + 8;

fn magic_str(m: &[u8]) -> String {
    String::from_utf8_lossy(m).into_owned()
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_matrix<T: Scalar>(magic: &[u8; 8], m: &Matrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(MATRIX_HEADER + 4 * m.as_slice().len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &x in m.as_slice() {
        out.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

/// Little-endian reader that reports truncation against the whole file.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            }),
        }
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let found = self.take(8).map_err(|_| Error::BadMagic {
            path: self.path.to_path_buf(),
            expected: magic_str(expected),
            found: magic_str(self.bytes),
        })?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected: magic_str(expected),
                found: magic_str(found),
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: self.path.to_path_buf(),
                found: v,
                supported: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    fn shape(&mut self) -> Result<(usize, usize)> {
        let rows = self.u64()?;
        let cols = self.u64()?;
        let too_big = || Error::Malformed {
            path: self.path.to_path_buf(),
            reason: format!("shape {rows}x{cols} does not fit in memory"),
        };
        let r = usize::try_from(rows).map_err(|_| too_big())?;
        let c = usize::try_from(cols).map_err(|_| too_big())?;
        r.checked_mul(c).and_then(|n| n.checked_mul(4)).ok_or_else(too_big)?;
        Ok((r, c))
    }

    fn f32s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Malformed {
                path: self.path.to_path_buf(),
                reason: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Parses a matrix file; `path` is only used in error messages.
pub fn decode_matrix<T: Scalar>(path: &Path, magic: &[u8; 8], bytes: &[u8]) -> Result<Matrix<T>> {
    let mut r = Reader::new(path, bytes);
    r.magic(magic)?;
    r.version()?;
    let (rows, cols) = r.shape()?;
    let data = r.f32s(rows * cols)?;
    r.finish()?;
    Matrix::new(rows, cols, data)
}

pub fn write_matrix<T: Scalar>(path: &Path, magic: &[u8; 8], m: &Matrix<T>) -> Result<()> {
    write_file(path, &encode_matrix(magic, m))
}

pub fn read_matrix<T: Scalar>(path: &Path, magic: &[u8; 8]) -> Result<Matrix<T>> {
    decode_matrix(path, magic, &read_file(path)?)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn encode_manifest(ids: &[String]) -> String {
    ids.iter().enumerate().map(|(i, id)| format!("{i}\t{id}\n")).collect()
}

pub fn decode_manifest(path: &Path, text: &str) -> Result<Vec<String>> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let (idx, id) = line
                .split_once('\t')
                .ok_or_else(|| malformed(format!("line {}: expected index<TAB>id", n + 1)))?;
            if idx.parse::<usize>().ok() != Some(n) {
                return Err(malformed(format!("line {}: expected index {n}, found {idx:?}", n + 1)));
            }
            Ok(id.to_string())
        })
        .collect()
}

pub fn save_embeddings<T: Scalar>(path: &Path, emb: &EmbeddingMatrix<T>) -> Result<()> {
    write_matrix(path, EMBEDDING_MAGIC, emb.data())?;
    write_file(&manifest_path(path), encode_manifest(emb.ids()).as_bytes())
}

/// Loads a matrix file and its manifest; nothing is returned unless both parse
/// and agree on the row count.
pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<EmbeddingMatrix<T>> {
    let data = read_matrix(path, EMBEDDING_MAGIC)?;
    let mpath = manifest_path(path);
    let text = String::from_utf8(read_file(&mpath)?).map_err(|_| Error::Malformed {
        path: mpath.clone(),
        reason: "manifest is not UTF-8".into(),
    })?;
    let ids = decode_manifest(&mpath, &text)?;
    if ids.len() != data.rows() {
        return Err(Error::Malformed {
            path: mpath,
            reason: format!("{} ids for {} rows", ids.len(), data.rows()),
        });
    }
    EmbeddingMatrix::new(ids, data)
}

pub fn save_relevance<T: Scalar>(path: &Path, r: &RelevanceMatrix<T>) -> Result<()> {
    write_matrix(path, RELEVANCE_MAGIC, r.data())
}

pub fn load_relevance<T: Scalar>(path: &Path) -> Result<RelevanceMatrix<T>> {
    RelevanceMatrix::new(read_matrix(path, RELEVANCE_MAGIC)?)
}

/// A named tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: (usize, usize),
    pub data: Vec<f32>,
}

pub fn encode_checkpoint(meta: &str, tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.0 as u64).to_le_bytes());
        out.extend_from_slice(&(t.shape.1 as u64).to_le_bytes());
        for &x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<(String, Vec<NamedTensor>)> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let utf8 = |b: &[u8], what: &str| {
        String::from_utf8(b.to_vec()).map_err(|_| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("{what} is not UTF-8"),
        })
    };
    let meta_len = r.u32()? as usize;
    let meta = utf8(r.take(meta_len)?, "metadata")?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = utf8(r.take(name_len)?, "tensor name")?;
        let shape = r.shape()?;
        let data = r.f32s(shape.0 * shape.1)?;
        tensors.push(NamedTensor { name, shape, data });
    }
    r.finish()?;
    Ok((meta, tensors))
}
