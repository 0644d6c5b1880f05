//! Graph snapshot file.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "FVG1" | version u32 | dim u32 | count u64 | R u32 | alpha f32 | start id u64 | L_c u32
//! count × { id u64 | dim × f32 | degree u32 | degree × neighbor id u64 }
//! delete count u64 | sorted deleted ids u64
//! ```
//!
//! Nodes are written in slot order, so a snapshot re-written after loading is
//! byte-identical to the original.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::Ordering;

use super::{DynGraph, GraphParams, Point, DELETED, LIVE, NO_SLOT};
use crate::error::{Error, Result};
use crate::io_util::Cursor;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"FVG1";
const VERSION: u32 = 1;

pub fn write_snapshot(graph: &DynGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&snapshot_bytes(graph))?;
    w.flush()?;
    w.get_ref().sync_all()?;
    Ok(())
}

pub fn snapshot_bytes(graph: &DynGraph) -> Vec<u8> {
    let slots: Vec<u32> = graph.used_slots().collect();
    let params = graph.params();
    let mut out = Vec::with_capacity(64 + slots.len() * (12 + 4 * graph.dim() + 8 * params.max_degree));
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(graph.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(slots.len() as u64).to_le_bytes());
    out.extend_from_slice(&(params.max_degree as u32).to_le_bytes());
    out.extend_from_slice(&params.alpha.to_le_bytes());
    out.extend_from_slice(&graph.start_id().unwrap_or(u64::MAX).to_le_bytes());
    out.extend_from_slice(&(params.build_list_size as u32).to_le_bytes());
    for &s in &slots {
        let p = graph.point(s).expect("used slot has a point");
        out.extend_from_slice(&p.id.to_le_bytes());
        for x in p.vector.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let nbrs = graph.adjacency[s as usize].read().clone();
        out.extend_from_slice(&(nbrs.len() as u32).to_le_bytes());
        for n in nbrs {
            let id = graph.point(n).map(|p| p.id).unwrap_or(u64::MAX);
            out.extend_from_slice(&id.to_le_bytes());
        }
    }
    let deleted = graph.delete_list();
    out.extend_from_slice(&(deleted.len() as u64).to_le_bytes());
    for id in deleted {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out
}

/// Loads a snapshot. `capacity` defaults to the node count.
pub fn read_snapshot(path: impl AsRef<Path>, capacity: Option<usize>) -> Result<DynGraph> {
    parse_snapshot(&fs::read(path)?, capacity)
}

pub fn parse_snapshot(bytes: &[u8], capacity: Option<usize>) -> Result<DynGraph> {
    const WHAT: &str = "graph snapshot";
    let mut c = Cursor::new(bytes, WHAT);
    if c.take(4)? != SNAPSHOT_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let dim = c.u32()? as usize;
    let count = c.u64()? as usize;
    let max_degree = c.u32()? as usize;
    let alpha = c.f32()?;
    let start = c.u64()?;
    let build_list_size = c.u32()? as usize;
    let params = GraphParams::new(max_degree, build_list_size, alpha);
    let graph = DynGraph::new(dim, capacity.unwrap_or(count).max(count), params)?;

    let mut adjacency_ids = Vec::with_capacity(count);
    for _ in 0..count {
        let id = c.u64()?;
        let vector: Box<[f32]> = (0..dim).map(|_| c.f32()).collect::<Result<_>>()?;
        let degree = c.u32()? as usize;
        if degree > max_degree {
            return Err(Error::DegreeBound { degree, bound: max_degree });
        }
        let nbrs: Vec<u64> = (0..degree).map(|_| c.u64()).collect::<Result<_>>()?;
        let slot = graph.reserve_slot(id)?;
        let _ = graph.points[slot as usize].set(Point { id, vector });
        graph.state[slot as usize].store(LIVE, Ordering::Relaxed);
        adjacency_ids.push((slot, nbrs));
    }
    {
        let map = graph.id_map.read();
        for (slot, nbrs) in adjacency_ids {
            let resolved = nbrs
                .iter()
                .map(|n| {
                    map.get(n)
                        .copied()
                        .ok_or_else(|| Error::format(WHAT, format!("neighbor {n} is not a node")))
                })
                .collect::<Result<Vec<u32>>>()?;
            *graph.adjacency[slot as usize].write() = resolved;
        }
        let start_slot = if start == u64::MAX {
            NO_SLOT
        } else {
            *map.get(&start)
                .ok_or_else(|| Error::format(WHAT, format!("start {start} is not a node")))?
        };
        graph.start.store(start_slot, Ordering::Release);
    }
    let deleted = c.u64()? as usize;
    for _ in 0..deleted {
        let id = c.u64()?;
        let slot = graph
            .raw_slot(id)
            .ok_or_else(|| Error::format(WHAT, format!("deleted id {id} is not a node")))?;
        graph.state[slot as usize].store(DELETED, Ordering::Relaxed);
        graph.deleted.fetch_add(1, Ordering::Relaxed);
    }
    if !c.is_empty() {
        return Err(Error::format(WHAT, "trailing bytes"));
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VectorSet;
    use crate::graph::build_static;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_is_byte_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data = (0..300 * 5).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let set = VectorSet::from_flat(5, data).unwrap();
        let g = build_static(&set, GraphParams::new(8, 16, 1.2), 1).unwrap();
        g.delete(17).unwrap();
        g.delete(3).unwrap();
        let bytes = snapshot_bytes(&g);
        let back = parse_snapshot(&bytes, Some(400)).unwrap();
        assert_eq!(snapshot_bytes(&back), bytes);
        assert_eq!(back.delete_list(), vec![3, 17]);
        assert_eq!(back.capacity(), 400);
        assert_eq!(back.neighbors(42), g.neighbors(42));
        back.check_invariants().unwrap();
    }

    #[test]
    fn rejects_corruption() {
        let g = DynGraph::new(2, 2, GraphParams::new(4, 4, 1.2)).unwrap();
        g.insert(1, &[0.0, 1.0]).unwrap();
        let bytes = snapshot_bytes(&g);
        assert!(parse_snapshot(&bytes[..bytes.len() - 1], None).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(parse_snapshot(&bad, None).is_err());
        let empty = DynGraph::new(2, 0, GraphParams::new(4, 4, 1.2)).unwrap();
        let back = parse_snapshot(&snapshot_bytes(&empty), None).unwrap();
        assert!(back.is_empty());
    }
}
