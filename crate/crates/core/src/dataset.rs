//! Dense vector storage and the `fvecs` / `bvecs` / `ivecs` file formats.
//!
//! Every record in these formats is a little-endian `i32` dimension followed
//! by that many components (`f32` for fvecs, `u8` for bvecs, `i32` for ivecs).

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorFormat {
    Fvecs,
    Bvecs,
}

impl FromStr for VectorFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fvecs" => Ok(VectorFormat::Fvecs),
            "bvecs" => Ok(VectorFormat::Bvecs),
            other => Err(Error::invalid(format!("unknown vector format {other:?}"))),
        }
    }
}

/// Fixed-dimension `f32` vectors, each tagged with a unique external id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<u64>,
}

impl VectorSet {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        VectorSet {
            dim,
            data: Vec::new(),
            ids: Vec::new(),
        }
    }

    /// Builds a set from row-major data with ids `0..count`.
    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} floats is not a multiple of dim {dim}",
                data.len()
            )));
        }
        let ids = (0..(data.len() / dim) as u64).collect();
        Ok(VectorSet { dim, data, ids })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("vector rows"))?;
        let mut set = VectorSet::new(first.as_ref().len());
        for (i, r) in rows.iter().enumerate() {
            set.push(i as u64, r.as_ref())?;
        }
        Ok(set)
    }

    pub fn push(&mut self, id: u64, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        // Linear uniqueness checks would be quadratic; callers building large
        // sets go through `from_flat`, and `validate` checks the whole set.
        self.data.extend_from_slice(v);
        self.ids.push(id);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn id(&self, index: usize) -> u64 {
        self.ids[index]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f32])> + '_ {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    /// Checks the structural invariants: consistent length and unique ids.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.ids.len() * self.dim {
            return Err(Error::format("vector set", "data length does not match count"));
        }
        let mut seen = HashSet::with_capacity(self.ids.len());
        for &id in &self.ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(())
    }

    /// Returns the subset at the given positions, keeping their ids.
    pub fn select(&self, positions: &[usize]) -> VectorSet {
        let mut out = VectorSet::new(self.dim);
        for &p in positions {
            out.data.extend_from_slice(self.vector(p));
            out.ids.push(self.ids[p]);
        }
        out
    }
}

fn read_dim(bytes: &[u8], offset: usize, what: &'static str) -> Result<usize> {
    let raw = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::format(what, format!("truncated header at byte {offset}")))?;
    let d = i32::from_le_bytes(raw.try_into().unwrap());
    if d <= 0 {
        return Err(Error::format(what, format!("non-positive dimension {d} at byte {offset}")));
    }
    Ok(d as usize)
}

/// Parses an in-memory fvecs/bvecs image. Ids are assigned `0..count`.
pub fn parse_vectors(bytes: &[u8], format: VectorFormat) -> Result<VectorSet> {
    let what = match format {
        VectorFormat::Fvecs => "fvecs",
        VectorFormat::Bvecs => "bvecs",
    };
    if bytes.is_empty() {
        return Err(Error::Empty("vector file has no records"));
    }
    let dim = read_dim(bytes, 0, what)?;
    let elem = match format {
        VectorFormat::Fvecs => 4,
        VectorFormat::Bvecs => 1,
    };
    let record = 4 + dim * elem;
    if bytes.len() % record != 0 {
        // Distinguish a dimension change from a short tail.
        let mut off = 0;
        while off + record <= bytes.len() {
            let d = read_dim(bytes, off, what)?;
            if d != dim {
                return Err(Error::format(what, format!("record at byte {off} has dim {d}, expected {dim}")));
            }
            off += record;
        }
        return Err(Error::format(what, format!("truncated record at byte {off}")));
    }
    let count = bytes.len() / record;
    let mut data = Vec::with_capacity(count * dim);
    for r in 0..count {
        let off = r * record;
        let d = read_dim(bytes, off, what)?;
        if d != dim {
            return Err(Error::format(what, format!("record {r} has dim {d}, expected {dim}")));
        }
        let body = &bytes[off + 4..off + record];
        match format {
            VectorFormat::Fvecs => data.extend(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            ),
            VectorFormat::Bvecs => data.extend(body.iter().map(|&b| b as f32)),
        }
    }
    VectorSet::from_flat(dim, data)
}

pub fn load_vectors(path: impl AsRef<Path>, format: VectorFormat) -> Result<VectorSet> {
    let bytes = fs::read(path)?;
    parse_vectors(&bytes, format)
}

pub fn write_fvecs(path: impl AsRef<Path>, set: &VectorSet) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (_, v) in set.iter() {
        w.write_all(&(set.dim() as i32).to_le_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes bvecs; components are rounded and clamped to `0..=255`.
pub fn write_bvecs(path: impl AsRef<Path>, set: &VectorSet) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (_, v) in set.iter() {
        w.write_all(&(set.dim() as i32).to_le_bytes())?;
        let bytes: Vec<u8> = v.iter().map(|x| x.round().clamp(0.0, 255.0) as u8).collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an ivecs image into one row per record. Rows may differ in length.
pub fn parse_ivecs(bytes: &[u8]) -> Result<Vec<Vec<i32>>> {
    let mut rows = Vec::new();
    let mut off = 0;
    while off < bytes.len() {
        let k = read_dim(bytes, off, "ivecs")?;
        let end = off + 4 + 4 * k;
        let body = bytes
            .get(off + 4..end)
            .ok_or_else(|| Error::format("ivecs", format!("truncated record at byte {off}")))?;
        rows.push(
            body.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
        off = end;
    }
    Ok(rows)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    parse_ivecs(&fs::read(path)?)
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        w.write_all(&(row.len() as i32).to_le_bytes())?;
        for x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fvecs_bytes(rows: &[&[f32]]) -> Vec<u8> {
        let mut out = Vec::new();
        for r in rows {
            out.extend_from_slice(&(r.len() as i32).to_le_bytes());
            for x in *r {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn single_record() {
        let set = parse_vectors(&fvecs_bytes(&[&[3.0, 4.0]]), VectorFormat::Fvecs).unwrap();
        assert_eq!(set.dim(), 2);
        assert_eq!(set.len(), 1);
        assert_eq!(set.vector(0), &[3.0, 4.0]);
        assert_eq!(set.ids(), &[0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_vectors(&[], VectorFormat::Fvecs), Err(Error::Empty(_))));
    }

    #[test]
    fn inconsistent_dims() {
        let bytes = fvecs_bytes(&[&[1.0, 2.0], &[1.0, 2.0, 3.0]]);
        let err = parse_vectors(&bytes, VectorFormat::Fvecs).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn truncated_file() {
        let mut bytes = fvecs_bytes(&[&[1.0, 2.0], &[3.0, 4.0]]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_vectors(&bytes, VectorFormat::Fvecs), Err(Error::Format { .. })));
    }

    #[test]
    fn negative_dim_header() {
        let bytes = (-3i32).to_le_bytes();
        assert!(parse_vectors(&bytes, VectorFormat::Fvecs).is_err());
    }

    #[test]
    fn bvecs_count_from_file_size() {
        let dim = 128;
        let n = 7;
        let mut bytes = Vec::new();
        for r in 0..n {
            bytes.extend_from_slice(&(dim as i32).to_le_bytes());
            bytes.extend((0..dim).map(|c| ((r * 31 + c) % 256) as u8));
        }
        let set = parse_vectors(&bytes, VectorFormat::Bvecs).unwrap();
        assert_eq!(set.len(), bytes.len() / (4 + 128));
        assert_eq!(set.vector(1)[0], 31.0);
        assert_eq!(set.vector(6)[127], ((6 * 31 + 127) % 256) as f32);
    }

    #[test]
    fn ivecs_rows() {
        let mut bytes = Vec::new();
        for row in [[5i32, 9, 1], [2, 3, 4]] {
            bytes.extend_from_slice(&3i32.to_le_bytes());
            for x in row {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        assert_eq!(parse_ivecs(&bytes).unwrap(), vec![vec![5, 9, 1], vec![2, 3, 4]]);
        assert!(parse_ivecs(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn duplicate_ids_rejected_by_validate() {
        let mut set = VectorSet::new(1);
        set.push(4, &[0.0]).unwrap();
        set.push(4, &[1.0]).unwrap();
        assert!(matches!(set.validate(), Err(Error::DuplicateId(4))));
    }
}
