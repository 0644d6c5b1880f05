//! Sector-level reads and writes for the long-term index, with pass and
//! sector counters.

use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{Layout, LtiHeader, NodeRecord, HEADER_SIZE, SECTOR_SIZE};
use crate::error::{Error, Result};

/// Positional reads. Implemented for `File`; tests wrap it to count reads.
pub trait SectorSource: Send + Sync {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()>;
}

impl SectorSource for File {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()> {
        self.read_exact_at(buf, offset)
    }
}

#[derive(Debug, Default)]
pub struct IoStats {
    random_reads: AtomicU64,
    random_sectors: AtomicU64,
    read_passes: AtomicU64,
    scanned_sectors: AtomicU64,
    write_passes: AtomicU64,
    written_sectors: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoCounters {
    pub random_reads: u64,
    pub random_sectors: u64,
    pub read_passes: u64,
    pub scanned_sectors: u64,
    pub write_passes: u64,
    pub written_sectors: u64,
}

impl IoStats {
    pub fn new() -> Arc<Self> {
        Arc::new(IoStats::default())
    }

    pub fn snapshot(&self) -> IoCounters {
        IoCounters {
            random_reads: self.random_reads.load(Ordering::Relaxed),
            random_sectors: self.random_sectors.load(Ordering::Relaxed),
            read_passes: self.read_passes.load(Ordering::Relaxed),
            scanned_sectors: self.scanned_sectors.load(Ordering::Relaxed),
            write_passes: self.write_passes.load(Ordering::Relaxed),
            written_sectors: self.written_sectors.load(Ordering::Relaxed),
        }
    }

    /// Counts `sectors` one-sector random reads.
    pub(crate) fn add_random_sectors(&self, sectors: u64) {
        self.random_reads.fetch_add(sectors, Ordering::Relaxed);
        self.random_sectors.fetch_add(sectors, Ordering::Relaxed);
    }

    pub(crate) fn random_read(&self, sectors: u64) {
        self.random_reads.fetch_add(1, Ordering::Relaxed);
        self.random_sectors.fetch_add(sectors, Ordering::Relaxed);
    }
}

impl IoCounters {
    pub fn since(&self, earlier: &IoCounters) -> IoCounters {
        IoCounters {
            random_reads: self.random_reads - earlier.random_reads,
            random_sectors: self.random_sectors - earlier.random_sectors,
            read_passes: self.read_passes - earlier.read_passes,
            scanned_sectors: self.scanned_sectors - earlier.scanned_sectors,
            write_passes: self.write_passes - earlier.write_passes,
            written_sectors: self.written_sectors - earlier.written_sectors,
        }
    }
}

/// Appends node records in slot order. The header is written last, so a
/// file whose writer did not finish fails to parse.
pub struct LtiWriter {
    out: BufWriter<File>,
    layout: Layout,
    count: u64,
    sector: Vec<u8>,
    stats: Arc<IoStats>,
}

/// Write buffer size: 256 sectors.
const WRITE_BLOCK: usize = 256 * SECTOR_SIZE;

impl LtiWriter {
    pub fn create(path: impl AsRef<Path>, dim: usize, max_degree: usize, stats: Arc<IoStats>) -> Result<Self> {
        let layout = Layout::new(dim, max_degree);
        let file = File::create(path)?;
        let mut out = BufWriter::with_capacity(WRITE_BLOCK, file);
        out.write_all(&[0u8; SECTOR_SIZE])?;
        stats.write_passes.fetch_add(1, Ordering::Relaxed);
        Ok(LtiWriter {
            out,
            layout,
            count: 0,
            sector: vec![0u8; layout.read_span()],
            stats,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, record: &NodeRecord) -> Result<()> {
        let l = self.layout;
        let off = l.offset_in_sector(self.count);
        record.encode_into(&l, &mut self.sector[off..off + l.record_size])?;
        self.count += 1;
        if self.count % l.records_per_sector as u64 == 0 {
            self.flush_sector()?;
        }
        Ok(())
    }

    fn flush_sector(&mut self) -> Result<()> {
        self.out.write_all(&self.sector)?;
        self.stats
            .written_sectors
            .fetch_add(self.layout.sectors_per_record as u64, Ordering::Relaxed);
        self.sector.fill(0);
        Ok(())
    }

    /// Pads the last sector, writes the header and syncs.
    pub fn finish(mut self, start: u64) -> Result<LtiHeader> {
        if self.count % self.layout.records_per_sector as u64 != 0 {
            self.flush_sector()?;
        }
        let header = LtiHeader::new(
            self.count,
            self.layout.dim,
            self.layout.max_degree,
            if self.count == 0 { 0 } else { start },
        );
        if self.count > 0 && start >= self.count {
            return Err(Error::invalid(format!("start {start} outside {} records", self.count)));
        }
        self.out.flush()?;
        let mut file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.seek(SeekFrom::Start(0))?;
        file.write_all(&header.to_bytes())?;
        self.stats.written_sectors.fetch_add(1, Ordering::Relaxed);
        file.sync_all()?;
        Ok(header)
    }
}

/// One sequential block of records.
#[derive(Debug)]
pub struct Block {
    pub first_slot: u64,
    pub records: Vec<NodeRecord>,
}

/// Sequential block-by-block reader. Creating one counts a read pass.
pub struct BlockScanner<'a> {
    source: &'a dyn SectorSource,
    layout: Layout,
    count: u64,
    next_slot: u64,
    block_records: u64,
    buf: Vec<u8>,
    stats: Arc<IoStats>,
}

impl<'a> BlockScanner<'a> {
    pub fn new(
        source: &'a dyn SectorSource,
        header: &LtiHeader,
        block_sectors: usize,
        stats: Arc<IoStats>,
    ) -> Self {
        let layout = header.layout();
        let block_sectors = block_sectors.max(layout.sectors_per_record);
        let block_records = (block_sectors / layout.sectors_per_record * layout.records_per_sector) as u64;
        stats.read_passes.fetch_add(1, Ordering::Relaxed);
        BlockScanner {
            source,
            layout,
            count: header.count,
            next_slot: 0,
            block_records,
            buf: Vec::new(),
            stats,
        }
    }

    pub fn next_block(&mut self) -> Result<Option<Block>> {
        if self.next_slot >= self.count {
            return Ok(None);
        }
        let l = self.layout;
        let first = self.next_slot;
        let end = (first + self.block_records).min(self.count);
        let first_sector = l.sector_of(first);
        let sectors = l.body_sectors(end) - first_sector;
        self.buf.resize(sectors as usize * SECTOR_SIZE, 0);
        self.source
            .read_at(HEADER_SIZE + first_sector * SECTOR_SIZE as u64, &mut self.buf)?;
        self.stats.scanned_sectors.fetch_add(sectors, Ordering::Relaxed);
        let base = HEADER_SIZE + first_sector * SECTOR_SIZE as u64;
        let mut records = Vec::with_capacity((end - first) as usize);
        for slot in first..end {
            let off = (l.byte_offset(slot) - base) as usize;
            records.push(NodeRecord::decode(&l, &self.buf[off..off + l.record_size])?);
        }
        self.next_slot = end;
        Ok(Some(Block {
            first_slot: first,
            records,
        }))
    }
}
