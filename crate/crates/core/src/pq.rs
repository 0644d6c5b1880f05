//! Product quantization.
//!
//! The vector is split into `m` contiguous chunks; each chunk is replaced by
//! the index of its nearest centroid in a 256-entry per-chunk table, giving
//! an `m`-byte code. Distances from a full-precision query to a code are
//! computed through a per-query lookup table.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::VectorSet;
use crate::distance::l2_squared;
use crate::error::{Error, Result};
use crate::io_util::Cursor;

pub const CENTROIDS: usize = 256;
pub const CODEBOOK_MAGIC: &[u8; 4] = b"FPQ1";
pub const CODES_MAGIC: &[u8; 4] = b"FPC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub subspaces: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Training points are subsampled to at most this many.
    pub max_samples: usize,
}

impl TrainConfig {
    pub fn new(subspaces: usize) -> Self {
        TrainConfig {
            subspaces,
            iterations: 12,
            seed: 0,
            max_samples: 100 * CENTROIDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    dim: usize,
    sub_dims: Vec<usize>,
    offsets: Vec<usize>,
    /// One table per subspace, `CENTROIDS × sub_dims[j]` row-major.
    tables: Vec<Vec<f32>>,
}

/// Split `dim` into `m` chunks; the first `dim % m` chunks get one extra
/// component.
pub fn split_dims(dim: usize, m: usize) -> Vec<usize> {
    let base = dim / m;
    let extra = dim % m;
    (0..m).map(|j| base + usize::from(j < extra)).collect()
}

impl PqCodebook {
    pub fn from_tables(dim: usize, sub_dims: Vec<usize>, tables: Vec<Vec<f32>>) -> Result<Self> {
        if sub_dims.iter().sum::<usize>() != dim || sub_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("sub-dimensions must be positive and sum to dim"));
        }
        if tables.len() != sub_dims.len()
            || tables.iter().zip(&sub_dims).any(|(t, &d)| t.len() != CENTROIDS * d)
        {
            return Err(Error::invalid("each subspace needs exactly 256 centroids"));
        }
        let offsets = sub_dims
            .iter()
            .scan(0, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();
        Ok(PqCodebook {
            dim,
            sub_dims,
            offsets,
            tables,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subspaces(&self) -> usize {
        self.sub_dims.len()
    }

    pub fn sub_dims(&self) -> &[usize] {
        &self.sub_dims
    }

    pub fn centroid(&self, subspace: usize, index: usize) -> &[f32] {
        let d = self.sub_dims[subspace];
        &self.tables[subspace][index * d..(index + 1) * d]
    }

    fn chunk<'a>(&self, x: &'a [f32], subspace: usize) -> &'a [f32] {
        let o = self.offsets[subspace];
        &x[o..o + self.sub_dims[subspace]]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }

    /// Nearest centroid per subspace; ties go to the lowest index.
    pub fn encode(&self, x: &[f32]) -> Result<Vec<u8>> {
        self.check_dim(x.len())?;
        let mut code = vec![0u8; self.subspaces()];
        self.encode_into(x, &mut code);
        Ok(code)
    }

    pub(crate) fn encode_into(&self, x: &[f32], code: &mut [u8]) {
        for (j, out) in code.iter_mut().enumerate() {
            *out = nearest(&self.tables[j], self.sub_dims[j], self.chunk(x, j)).0 as u8;
        }
    }

    /// Encodes every vector of `set`, in order.
    pub fn encode_set(&self, set: &VectorSet) -> Result<PqCodes> {
        self.check_dim(set.dim())?;
        let m = self.subspaces();
        let mut codes = vec![0u8; set.len() * m];
        codes
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, c)| self.encode_into(set.vector(i), c));
        Ok(PqCodes { m, codes })
    }

    /// Concatenated centroids selected by `code`.
    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim);
        self.decode_into(code, &mut out);
        out
    }

    pub(crate) fn decode_into(&self, code: &[u8], out: &mut Vec<f32>) {
        out.clear();
        self.decode_extend(code, out);
    }

    /// Appends the reconstruction of `code` to `out`.
    pub(crate) fn decode_extend(&self, code: &[u8], out: &mut Vec<f32>) {
        for (j, &c) in code.iter().enumerate() {
            out.extend_from_slice(self.centroid(j, c as usize));
        }
    }

    /// Per-query table of squared distances from each query chunk to each
    /// centroid.
    pub fn lookup_table(&self, q: &[f32]) -> Result<DistanceTable> {
        self.check_dim(q.len())?;
        let m = self.subspaces();
        let mut table = vec![0.0f32; m * CENTROIDS];
        for j in 0..m {
            let qc = self.chunk(q, j);
            let d = self.sub_dims[j];
            for (c, slot) in table[j * CENTROIDS..(j + 1) * CENTROIDS].iter_mut().enumerate() {
                *slot = l2_squared(qc, &self.tables[j][c * d..(c + 1) * d]);
            }
        }
        Ok(DistanceTable { m, table })
    }

    /// Asymmetric distance computed directly, without a lookup table.
    /// Summation runs over subspaces `0..m`, matching [`DistanceTable`].
    pub fn asymmetric_distance(&self, q: &[f32], code: &[u8]) -> Result<f32> {
        self.check_dim(q.len())?;
        if code.len() != self.subspaces() {
            return Err(Error::DimensionMismatch {
                expected: self.subspaces(),
                actual: code.len(),
            });
        }
        let mut sum = 0.0f32;
        for (j, &c) in code.iter().enumerate() {
            sum += l2_squared(self.chunk(q, j), self.centroid(j, c as usize));
        }
        Ok(sum.sqrt())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.subspaces() as u32).to_le_bytes());
        for &d in &self.sub_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for t in &self.tables {
            for x in t {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "pq codebook";
        let mut c = Cursor::new(bytes, WHAT);
        if c.take(4)? != CODEBOOK_MAGIC {
            return Err(Error::format(WHAT, "bad magic"));
        }
        let dim = c.u32()? as usize;
        let m = c.u32()? as usize;
        if m == 0 || m > dim {
            return Err(Error::format(WHAT, format!("bad subspace count {m} for dim {dim}")));
        }
        let sub_dims = (0..m).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if sub_dims.iter().sum::<usize>() != dim {
            return Err(Error::format(WHAT, "sub-dimensions do not sum to dim"));
        }
        let tables = sub_dims
            .iter()
            .map(|&d| (0..CENTROIDS * d).map(|_| c.f32()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        if !c.is_empty() {
            return Err(Error::format(WHAT, "trailing bytes"));
        }
        PqCodebook::from_tables(dim, sub_dims, tables)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn nearest(table: &[f32], d: usize, x: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (c, cent) in table.chunks_exact(d).enumerate() {
        let dist = l2_squared(x, cent);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

/// Squared distances from one query's chunks to every centroid.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    m: usize,
    table: Vec<f32>,
}

impl DistanceTable {
    #[inline]
    pub fn distance_sq(&self, code: &[u8]) -> f32 {
        debug_assert_eq!(code.len(), self.m);
        let mut sum = 0.0f32;
        for (j, &c) in code.iter().enumerate() {
            sum += self.table[j * CENTROIDS + c as usize];
        }
        sum
    }

    pub fn distance(&self, code: &[u8]) -> f32 {
        self.distance_sq(code).sqrt()
    }
}

/// Codes for a sequence of points, `m` bytes each.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PqCodes {
    m: usize,
    codes: Vec<u8>,
}

impl PqCodes {
    pub fn new(m: usize) -> Self {
        PqCodes { m, codes: Vec::new() }
    }

    pub fn from_raw(m: usize, codes: Vec<u8>) -> Result<Self> {
        if m == 0 || codes.len() % m != 0 {
            return Err(Error::invalid("code buffer is not a multiple of m"));
        }
        Ok(PqCodes { m, codes })
    }

    pub fn subspaces(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        if self.m == 0 {
            0
        } else {
            self.codes.len() / self.m
        }
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[u8] {
        &self.codes[i * self.m..(i + 1) * self.m]
    }

    pub fn push(&mut self, code: &[u8]) {
        debug_assert_eq!(code.len(), self.m);
        self.codes.extend_from_slice(code);
    }

    pub fn size_bytes(&self) -> usize {
        self.codes.len()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.codes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.codes.len());
        out.extend_from_slice(CODES_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&self.codes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "pq codes";
        let mut c = Cursor::new(bytes, WHAT);
        if c.take(4)? != CODES_MAGIC {
            return Err(Error::format(WHAT, "bad magic"));
        }
        let count = c.u64()? as usize;
        let m = c.u32()? as usize;
        let raw = c.take(count.checked_mul(m).ok_or_else(|| Error::format(WHAT, "size overflow"))?)?;
        if !c.is_empty() {
            return Err(Error::format(WHAT, "trailing bytes"));
        }
        Ok(PqCodes { m, codes: raw.to_vec() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Trains a codebook with per-subspace k-means (k-means++ seeding).
pub fn train(set: &VectorSet, subspaces: usize, iterations: usize, seed: u64) -> Result<PqCodebook> {
    let cfg = TrainConfig {
        iterations,
        seed,
        ..TrainConfig::new(subspaces)
    };
    train_with_trace(set, &cfg).map(|(cb, _)| cb)
}

/// Trains a codebook and also returns the mean squared reconstruction error
/// over the training sample after seeding and after each iteration.
pub fn train_with_trace(set: &VectorSet, cfg: &TrainConfig) -> Result<(PqCodebook, Vec<f64>)> {
    let dim = set.dim();
    let m = cfg.subspaces;
    if m == 0 || m > dim {
        return Err(Error::invalid(format!("cannot split dim {dim} into {m} subspaces")));
    }
    if set.is_empty() {
        return Err(Error::Empty("pq training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows: Vec<usize> = if set.len() > cfg.max_samples {
        let mut s = sample(&mut rng, set.len(), cfg.max_samples).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..set.len()).collect()
    };
    let sub_dims = split_dims(dim, m);
    let mut offset = 0;
    let jobs: Vec<(usize, usize, usize)> = sub_dims
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            let o = offset;
            offset += d;
            (j, o, d)
        })
        .collect();
    let results: Vec<(Vec<f32>, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(j, o, d)| {
            let points: Vec<f32> = rows
                .iter()
                .flat_map(|&r| set.vector(r)[o..o + d].iter().copied())
                .collect();
            kmeans(&points, d, cfg.iterations, cfg.seed.wrapping_add(j as u64 * 0x9e37_79b9))
        })
        .collect();
    let n = rows.len() as f64;
    let steps = results.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let trace = (0..steps)
        .map(|i| {
            results
                .iter()
                .map(|r| r.1.get(i).or(r.1.last()).copied().unwrap_or(0.0))
                .sum::<f64>()
                / n
        })
        .collect();
    let tables = results.into_iter().map(|r| r.0).collect();
    Ok((PqCodebook::from_tables(dim, sub_dims, tables)?, trace))
}

/// k-means over `n × d` row-major points, always returning 256 rows. With
/// at most 256 distinct points the distinct points are the centroids (the
/// remaining rows repeat the first, so encoding never selects them).
/// The second value is the total squared error after seeding and after
/// each iteration.
fn kmeans(points: &[f32], d: usize, iterations: usize, seed: u64) -> (Vec<f32>, Vec<f64>) {
    let n = points.len() / d;
    let mut distinct: Vec<&[f32]> = Vec::new();
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    for p in points.chunks_exact(d) {
        if seen.insert(p.iter().map(|x| x.to_bits()).collect()) {
            distinct.push(p);
            if distinct.len() > CENTROIDS {
                break;
            }
        }
    }
    if distinct.len() <= CENTROIDS {
        let mut table = Vec::with_capacity(CENTROIDS * d);
        for p in &distinct {
            table.extend_from_slice(p);
        }
        while table.len() < CENTROIDS * d {
            table.extend_from_slice(distinct[0]);
        }
        return (table, vec![0.0]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding.
    let mut centroids: Vec<f32> = Vec::with_capacity(CENTROIDS * d);
    let first = sample(&mut rng, n, 1).index(0);
    centroids.extend_from_slice(&points[first * d..(first + 1) * d]);
    let mut best: Vec<f32> = points
        .chunks_exact(d)
        .map(|p| l2_squared(p, &centroids[..d]))
        .collect();
    for _ in 1..CENTROIDS {
        let pick = match WeightedIndex::new(best.iter().map(|&w| w as f64 + 1e-30)) {
            Ok(dist) => dist.sample(&mut rng),
            Err(_) => sample(&mut rng, n, 1).index(0),
        };
        let c = points[pick * d..(pick + 1) * d].to_vec();
        for (b, p) in best.iter_mut().zip(points.chunks_exact(d)) {
            *b = b.min(l2_squared(p, &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut assign = vec![0usize; n];
    let mut dist = vec![0f32; n];
    let mut trace = Vec::with_capacity(iterations + 1);
    let assign_all = |centroids: &[f32], assign: &mut [usize], dist: &mut [f32]| -> f64 {
        let mut total = 0.0f64;
        for (i, p) in points.chunks_exact(d).enumerate() {
            let (c, dd) = nearest(centroids, d, p);
            assign[i] = c;
            dist[i] = dd;
            total += dd as f64;
        }
        total
    };
    trace.push(assign_all(&centroids, &mut assign, &mut dist));
    for _ in 0..iterations {
        let mut sums = vec![0f64; CENTROIDS * d];
        let mut counts = vec![0usize; CENTROIDS];
        for (i, p) in points.chunks_exact(d).enumerate() {
            let c = assign[i];
            counts[c] += 1;
            for (s, &x) in sums[c * d..(c + 1) * d].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        for c in 0..CENTROIDS {
            if counts[c] > 0 {
                for k in 0..d {
                    centroids[c * d + k] = (sums[c * d + k] / counts[c] as f64) as f32;
                }
            }
        }
        // Re-seed each empty cluster at the point worst served by its
        // current centroid.
        for c in 0..CENTROIDS {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n > 256");
                centroids[c * d..(c + 1) * d].copy_from_slice(&points[far * d..(far + 1) * d]);
                dist[far] = 0.0;
            }
        }
        trace.push(assign_all(&centroids, &mut assign, &mut dist));
    }
    (centroids, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_set(n: usize, dim: usize, seed: u64) -> VectorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorSet::from_flat(dim, (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
    }

    #[test]
    fn split_rule() {
        assert_eq!(split_dims(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(split_dims(8, 8), vec![1; 8]);
        assert_eq!(split_dims(128, 32), vec![4; 32]);
    }

    #[test]
    fn few_distinct_points_are_lossless() {
        let set = random_set(200, 6, 1);
        let cb = train(&set, 3, 5, 7).unwrap();
        for (_, v) in set.iter() {
            let code = cb.encode(v).unwrap();
            assert_eq!(cb.decode(&code), v);
            let d = cb.asymmetric_distance(v, &code).unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn per_coordinate_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f32> = (0..3000 * 4).map(|_| rng.gen_range(0..200) as f32).collect();
        let set = VectorSet::from_flat(4, data).unwrap();
        let cb = train(&set, 4, 5, 0).unwrap();
        for (_, v) in set.iter().take(500) {
            assert_eq!(cb.decode(&cb.encode(v).unwrap()), v);
        }
    }

    #[test]
    fn encode_picks_nearest_and_lowest_on_ties() {
        let mut table = vec![0.0f32; CENTROIDS * 2];
        table[2] = 3.0;
        table[3] = 4.0;
        let cb = PqCodebook::from_tables(2, vec![2], vec![table]).unwrap();
        assert_eq!(cb.encode(&[3.0, 4.0]).unwrap(), vec![1]);
        // All remaining rows are (0, 0); the first one wins.
        assert_eq!(cb.encode(&[0.1, 0.1]).unwrap(), vec![0]);
        assert_eq!(cb.asymmetric_distance(&[0.0, 0.0], &[1]).unwrap(), 5.0);
        assert!(cb.encode(&[1.0]).is_err());
    }

    #[test]
    fn training_objective_descends() {
        let set = random_set(3000, 64, 2);
        let cfg = TrainConfig {
            iterations: 8,
            seed: 3,
            ..TrainConfig::new(8)
        };
        let (_, trace) = train_with_trace(&set, &cfg).unwrap();
        assert_eq!(trace.len(), 9);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{trace:?}");
        }
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let set = random_set(1500, 16, 5);
        assert_eq!(train(&set, 4, 4, 11).unwrap(), train(&set, 4, 4, 11).unwrap());
    }

    #[test]
    fn lut_matches_direct_bit_for_bit() {
        let set = random_set(2000, 20, 6);
        let cb = train(&set, 6, 4, 1).unwrap();
        let q = set.vector(17);
        let lut = cb.lookup_table(q).unwrap();
        for i in 0..200 {
            let code = cb.encode(set.vector(i)).unwrap();
            assert_eq!(lut.distance(&code).to_bits(), cb.asymmetric_distance(q, &code).unwrap().to_bits());
        }
    }

    #[test]
    fn encode_decode_idempotent() {
        let set = random_set(2000, 12, 8);
        let cb = train(&set, 4, 4, 1).unwrap();
        for i in 0..300 {
            let code = cb.encode(set.vector(i)).unwrap();
            assert_eq!(cb.encode(&cb.decode(&code)).unwrap(), code);
        }
    }

    #[test]
    fn rank_correlation_with_exact() {
        let set = random_set(4000, 64, 9);
        let cb = train(&set, 16, 8, 2).unwrap();
        let codes = cb.encode_set(&set).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut approx = Vec::new();
        let mut exact = Vec::new();
        for _ in 0..1000 {
            let a = rng.gen_range(0..set.len());
            let b = rng.gen_range(0..set.len());
            approx.push(cb.asymmetric_distance(set.vector(a), codes.get(b)).unwrap() as f64);
            exact.push(l2_squared(set.vector(a), set.vector(b)).sqrt() as f64);
        }
        let rho = spearman(&approx, &exact);
        assert!(rho > 0.9, "spearman {rho}");
    }

    fn ranks(xs: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let mut r = vec![0.0; xs.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
        let var: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
        cov / var
    }

    #[test]
    fn file_round_trips() {
        let set = random_set(600, 10, 12);
        let cb = train(&set, 3, 3, 4).unwrap();
        let bytes = cb.to_bytes();
        assert_eq!(PqCodebook::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        let codes = cb.encode_set(&set).unwrap();
        let cbytes = codes.to_bytes();
        assert_eq!(PqCodes::from_bytes(&cbytes).unwrap(), codes);
        assert!(PqCodes::from_bytes(&cbytes[..cbytes.len() - 1]).is_err());
        assert!(PqCodebook::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn too_many_subspaces() {
        let set = random_set(10, 4, 1);
        assert!(train(&set, 5, 3, 0).is_err());
    }
}
