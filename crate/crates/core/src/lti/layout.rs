//! On-disk layout of the long-term index.
//!
//! ```text
//! header sector (4096 bytes, zero padded):
//!   "FDA2" | version u32 | count u64 | dim u32 | R u32 | start u64 | record_size u32 | sector_size u32
//! body: node records packed into 4096-byte sectors, never straddling one
//!   record = dim × f32 | degree u32 | R × neighbor u32 (unused = 0xFFFF_FFFF)
//! ```
//!
//! Records larger than a sector start on a sector boundary and occupy
//! `ceil(record_size / 4096)` whole sectors. A degree of `0xFFFF_FFFF`
//! marks a tombstoned slot (only present in intermediate merge output).

use crate::error::{Error, Result};
use crate::io_util::Cursor;

pub const LTI_MAGIC: &[u8; 4] = b"FDA2";
pub const LTI_VERSION: u32 = 1;
pub const SECTOR_SIZE: usize = 4096;
pub const HEADER_SIZE: u64 = SECTOR_SIZE as u64;
pub const NO_NEIGHBOR: u32 = u32::MAX;
pub const TOMBSTONE_DEGREE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LtiHeader {
    pub count: u64,
    pub dim: u32,
    pub max_degree: u32,
    pub start: u64,
    pub record_size: u32,
    pub sector_size: u32,
}

impl LtiHeader {
    pub fn new(count: u64, dim: usize, max_degree: usize, start: u64) -> Self {
        LtiHeader {
            count,
            dim: dim as u32,
            max_degree: max_degree as u32,
            start,
            record_size: record_size(dim, max_degree) as u32,
            sector_size: SECTOR_SIZE as u32,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; SECTOR_SIZE];
        let mut o = 0;
        let mut put = |b: &[u8]| {
            out[o..o + b.len()].copy_from_slice(b);
            o += b.len();
        };
        put(LTI_MAGIC);
        put(&LTI_VERSION.to_le_bytes());
        put(&self.count.to_le_bytes());
        put(&self.dim.to_le_bytes());
        put(&self.max_degree.to_le_bytes());
        put(&self.start.to_le_bytes());
        put(&self.record_size.to_le_bytes());
        put(&self.sector_size.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "lti header";
        if bytes.len() < SECTOR_SIZE {
            return Err(Error::format(WHAT, "shorter than one sector"));
        }
        let mut c = Cursor::new(&bytes[..SECTOR_SIZE], WHAT);
        if c.take(4)? != LTI_MAGIC {
            return Err(Error::format(WHAT, "bad magic"));
        }
        let version = c.u32()?;
        if version != LTI_VERSION {
            return Err(Error::format(WHAT, format!("unsupported version {version}")));
        }
        let h = LtiHeader {
            count: c.u64()?,
            dim: c.u32()?,
            max_degree: c.u32()?,
            start: c.u64()?,
            record_size: c.u32()?,
            sector_size: c.u32()?,
        };
        if h.sector_size as usize != SECTOR_SIZE {
            return Err(Error::format(WHAT, format!("sector size {}", h.sector_size)));
        }
        if h.dim == 0 || h.record_size as usize != record_size(h.dim as usize, h.max_degree as usize) {
            return Err(Error::format(WHAT, "record size does not match dim and R"));
        }
        if h.count > 0 && h.start >= h.count {
            return Err(Error::format(WHAT, format!("start {} outside {} records", h.start, h.count)));
        }
        Ok(h)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dim as usize, self.max_degree as usize)
    }
}

/// `4·dim + 4 + 4·R` bytes.
pub fn record_size(dim: usize, max_degree: usize) -> usize {
    4 * dim + 4 + 4 * max_degree
}

/// Slot ↔ byte-offset arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dim: usize,
    pub max_degree: usize,
    pub record_size: usize,
    /// Records per sector when records are packed, otherwise 1.
    pub records_per_sector: usize,
    /// Sectors per record (1 when packed).
    pub sectors_per_record: usize,
}

impl Layout {
    pub fn new(dim: usize, max_degree: usize) -> Self {
        let rs = record_size(dim, max_degree);
        if rs <= SECTOR_SIZE {
            Layout {
                dim,
                max_degree,
                record_size: rs,
                records_per_sector: SECTOR_SIZE / rs,
                sectors_per_record: 1,
            }
        } else {
            Layout {
                dim,
                max_degree,
                record_size: rs,
                records_per_sector: 1,
                sectors_per_record: rs.div_ceil(SECTOR_SIZE),
            }
        }
    }

    /// First body sector (0-based, excluding the header) holding `slot`.
    pub fn sector_of(&self, slot: u64) -> u64 {
        if self.sectors_per_record == 1 {
            slot / self.records_per_sector as u64
        } else {
            slot * self.sectors_per_record as u64
        }
    }

    pub fn offset_in_sector(&self, slot: u64) -> usize {
        (slot % self.records_per_sector as u64) as usize * self.record_size
    }

    /// Absolute byte offset of `slot` in the file.
    pub fn byte_offset(&self, slot: u64) -> u64 {
        HEADER_SIZE + self.sector_of(slot) * SECTOR_SIZE as u64 + self.offset_in_sector(slot) as u64
    }

    pub fn body_sectors(&self, count: u64) -> u64 {
        if count == 0 {
            0
        } else {
            self.sector_of(count - 1) + self.sectors_per_record as u64
        }
    }

    pub fn file_size(&self, count: u64) -> u64 {
        HEADER_SIZE + self.body_sectors(count) * SECTOR_SIZE as u64
    }

    /// Bytes read to fetch one record.
    pub fn read_span(&self) -> usize {
        self.sectors_per_record * SECTOR_SIZE
    }
}

/// A node record. `neighbors` holds only the valid entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub vector: Vec<f32>,
    pub neighbors: Vec<u32>,
    pub tombstone: bool,
}

impl NodeRecord {
    pub fn new(vector: Vec<f32>, neighbors: Vec<u32>) -> Self {
        NodeRecord {
            vector,
            neighbors,
            tombstone: false,
        }
    }

    pub fn tombstone(dim: usize) -> Self {
        NodeRecord {
            vector: vec![0.0; dim],
            neighbors: Vec::new(),
            tombstone: true,
        }
    }

    /// Serializes into exactly `layout.record_size` bytes.
    pub fn encode_into(&self, layout: &Layout, out: &mut [u8]) -> Result<()> {
        debug_assert_eq!(out.len(), layout.record_size);
        if self.vector.len() != layout.dim {
            return Err(Error::DimensionMismatch {
                expected: layout.dim,
                actual: self.vector.len(),
            });
        }
        if self.neighbors.len() > layout.max_degree {
            return Err(Error::DegreeBound {
                degree: self.neighbors.len(),
                bound: layout.max_degree,
            });
        }
        let mut o = 0;
        for x in &self.vector {
            out[o..o + 4].copy_from_slice(&x.to_le_bytes());
            o += 4;
        }
        let degree = if self.tombstone {
            TOMBSTONE_DEGREE
        } else {
            self.neighbors.len() as u32
        };
        out[o..o + 4].copy_from_slice(&degree.to_le_bytes());
        o += 4;
        for i in 0..layout.max_degree {
            let n = self.neighbors.get(i).copied().unwrap_or(NO_NEIGHBOR);
            out[o..o + 4].copy_from_slice(&n.to_le_bytes());
            o += 4;
        }
        Ok(())
    }

    pub fn decode(layout: &Layout, bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "lti record";
        if bytes.len() < layout.record_size {
            return Err(Error::format(WHAT, "short record"));
        }
        let mut c = Cursor::new(&bytes[..layout.record_size], WHAT);
        let vector = (0..layout.dim).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;
        let degree = c.u32()?;
        if degree == TOMBSTONE_DEGREE {
            return Ok(NodeRecord {
                vector,
                neighbors: Vec::new(),
                tombstone: true,
            });
        }
        let degree = degree as usize;
        if degree > layout.max_degree {
            return Err(Error::DegreeBound {
                degree,
                bound: layout.max_degree,
            });
        }
        // Only the first `degree` entries are read; the rest are sentinels.
        let neighbors = (0..degree).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        Ok(NodeRecord {
            vector,
            neighbors,
            tombstone: false,
        })
    }
}
