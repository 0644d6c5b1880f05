use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use super::*;
use crate::graph::DeletePolicy;
use crate::pq::train;
use crate::recall::{brute_force_knn, recall_at_k};

fn random_set(n: usize, dim: usize, seed: u64, first_id: u64) -> VectorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = VectorSet::new(dim);
    for i in 0..n {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        set.push(first_id + i as u64, &v).unwrap();
    }
    set
}

fn params() -> GraphParams {
    GraphParams::new(12, 30, 1.2)
}

fn disk_index(set: &VectorSet, dir: &Path, name: &str) -> LtiIndex {
    let cb = train(set, set.dim().min(4), 6, 1).unwrap();
    build_lti(set, params(), &cb, dir.join(name)).unwrap()
}

fn id_set(lti: &LtiIndex) -> FxHashSet<u64> {
    lti.ids().iter().copied().collect()
}

#[test]
fn cost_formula() {
    let c = estimate_delete_cost(1000, 64, 0.05).unwrap();
    assert!((c.expected_candidates - 255.36).abs() < 1e-9);
    let c = estimate_delete_cost(1000, 32, 0.0).unwrap();
    assert_eq!((c.expected_candidates, c.expected_total_ops), (32.0, 32_000.0));
    let c = estimate_delete_cost(1000, 32, 1.0).unwrap();
    assert_eq!((c.expected_candidates, c.expected_total_ops), (0.0, 0.0));
    assert!(estimate_delete_cost(10, 4, 1.5).is_err());
}

#[test]
fn empty_job_keeps_the_graph() {
    let dir = tempfile::tempdir().unwrap();
    let set = random_set(400, 6, 1, 0);
    let lti = disk_index(&set, dir.path(), "in");
    let none = VectorSet::new(6);
    let job = MergeJob::new(&none, &[], params());
    let (out, report) = merge(&lti, &job, dir.path().join("out")).unwrap();
    assert_eq!(lti.adjacency().unwrap(), out.adjacency().unwrap());
    assert_eq!(report.io.read_passes, 2);
    assert_eq!(report.io.write_passes, 2);
    assert_eq!(out.start_id(), lti.start_id());
    assert!(!dir.path().join("out.merging").exists());
}

#[test]
fn delete_phase_without_deletes_copies_the_body() {
    let dir = tempfile::tempdir().unwrap();
    let set = random_set(300, 5, 2, 0);
    let lti = disk_index(&set, dir.path(), "in");
    let none = VectorSet::new(5);
    let job = MergeJob::new(&none, &[], params());
    let ctx = MergeCtx::new();
    let mid = dir.path().join("mid");
    delete_phase(&lti, &job, &mid, &ctx).unwrap();
    assert_eq!(fs::read(lti.path()).unwrap(), fs::read(&mid).unwrap());
    let io = ctx.io.snapshot();
    assert_eq!((io.read_passes, io.write_passes), (1, 1));
}

#[test]
fn chain_delete_matches_in_memory_consolidate() {
    let dir = tempfile::tempdir().unwrap();
    let set = VectorSet::from_rows(&[[0.0f32], [1.0], [2.0]]).unwrap();
    let p = GraphParams::new(2, 4, 1.2);
    let mut g = DynGraph::from_edges(&set, p, &[vec![1], vec![0, 2], vec![1]], 0).unwrap();
    let cb = train(&set, 1, 3, 1).unwrap();
    let lti = write_lti(&g, &cb, dir.path().join("in")).unwrap();
    let none = VectorSet::new(1);
    let job = MergeJob::new(&none, &[1], p);
    let (out, _) = merge(&lti, &job, dir.path().join("out")).unwrap();
    g.delete(1).unwrap();
    g.consolidate_deletes(DeletePolicy::FreshVamana);
    let mut disk = out.adjacency().unwrap();
    disk.sort();
    assert_eq!(disk, vec![(0, vec![2]), (2, vec![0])]);
    for (id, nbrs) in disk {
        assert_eq!(g.neighbors(id).unwrap(), nbrs);
    }
}

#[test]
fn one_insert_into_one_node() {
    let dir = tempfile::tempdir().unwrap();
    let set = VectorSet::from_rows(&[[0.0f32, 0.0]]).unwrap();
    let lti = disk_index(&set, dir.path(), "in");
    let mut add = VectorSet::new(2);
    add.push(7, &[1.0, 1.0]).unwrap();
    let job = MergeJob::new(&add, &[], params());
    let ctx = MergeCtx::new();
    let inter = delete_phase(&lti, &job, &dir.path().join("mid"), &ctx).unwrap();
    let new = new_points(&lti, &job).unwrap();
    let delta = insert_phase(&inter, &job, &new, &ctx).unwrap();
    assert_eq!(delta.neighbors(0), &[0]);
    assert_eq!(delta.entries(), 1);
    let (out, _) = merge(&lti, &job, dir.path().join("out")).unwrap();
    let mut adj = out.adjacency().unwrap();
    adj.sort();
    assert_eq!(adj, vec![(0, vec![7]), (7, vec![0])]);
}

#[test]
fn rejects_bad_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let set = random_set(50, 4, 3, 0);
    let lti = disk_index(&set, dir.path(), "in");
    let dup = random_set(1, 4, 4, 5);
    let job = MergeJob::new(&dup, &[], params());
    assert!(matches!(merge(&lti, &job, dir.path().join("o")), Err(Error::DuplicateId(5))));
    let none = VectorSet::new(4);
    let job = MergeJob::new(&none, &[], params());
    assert!(merge(&lti, &job, lti.path()).is_err());
    let wrong = VectorSet::new(3);
    let job = MergeJob::new(&wrong, &[], params());
    assert!(merge(&lti, &job, dir.path().join("o")).is_err());
}

fn unreachable(lti: &LtiIndex) -> usize {
    let adj: FxHashMap<u64, Vec<u64>> = lti.adjacency().unwrap().into_iter().collect();
    let mut seen = FxHashSet::default();
    let mut stack: Vec<u64> = lti.start_id().into_iter().collect();
    while let Some(x) = stack.pop() {
        if seen.insert(x) {
            stack.extend(adj[&x].iter().copied());
        }
    }
    adj.len() - seen.len()
}

#[test]
fn large_batches_into_small_indices_stay_connected() {
    let dir = tempfile::tempdir().unwrap();
    for round in 0..8u64 {
        let set = random_set(30, 6, 40 + round, 0);
        let lti = disk_index(&set, dir.path(), &format!("s{round}"));
        let adds = random_set(25, 6, 60 + round, 1000);
        let deletes: Vec<u64> = (0..8).collect();
        let job = MergeJob::new(&adds, &deletes, params());
        let (out, report) = merge(&lti, &job, dir.path().join(format!("t{round}"))).unwrap();
        assert!(report.rebuilt);
        assert_eq!((report.deleted, report.inserted, out.len()), (8, 25, 47));
        assert_eq!(unreachable(&out), 0);
    }
}

#[test]
fn deleting_everything_rebuilds_from_inserts() {
    let dir = tempfile::tempdir().unwrap();
    let set = random_set(40, 4, 5, 0);
    let lti = disk_index(&set, dir.path(), "in");
    let add = random_set(30, 4, 6, 100);
    let all: Vec<u64> = (0..40).collect();
    let job = MergeJob::new(&add, &all, params());
    let (out, _) = merge(&lti, &job, dir.path().join("out")).unwrap();
    out.validate().unwrap();
    assert_eq!(id_set(&out), (100..130).collect());
}

#[test]
fn fuzzed_jobs_produce_valid_indices() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for round in 0..6u64 {
        let n = rng.gen_range(20..400);
        let set = random_set(n, 6, round, 0);
        let lti = disk_index(&set, dir.path(), &format!("in{round}"));
        let adds = random_set(rng.gen_range(0..150), 6, 100 + round, 10_000);
        let mut deletes: Vec<u64> = (0..n as u64).filter(|_| rng.gen_bool(0.2)).collect();
        // A few deletes of points being inserted in the same merge.
        deletes.extend(adds.ids().iter().copied().filter(|_| rng.gen_bool(0.1)));
        let mut job = MergeJob::new(&adds, &deletes, params());
        job.options.block_sectors = rng.gen_range(1..4);
        let (out, report) = merge(&lti, &job, dir.path().join(format!("out{round}"))).unwrap();
        out.validate().unwrap();
        let gone: FxHashSet<u64> = deletes.iter().copied().collect();
        let want: FxHashSet<u64> = set
            .ids()
            .iter()
            .chain(adds.ids())
            .copied()
            .filter(|id| !gone.contains(id))
            .collect();
        assert_eq!(id_set(&out), want);
        assert!(out.adjacency().unwrap().iter().all(|(_, nb)| nb.len() <= 12));
        assert!(report.delta_entries <= report.inserted * 12);
        assert_eq!(report.rebuilt, 2 * report.inserted >= n - report.deleted);
        if !report.rebuilt {
            assert_eq!((report.io.read_passes, report.io.write_passes), (2, 2));
            assert!(report.memory.within_bound(), "{:?}", report.memory);
        }
    }
}

#[test]
fn merged_recall_tracks_a_fresh_build() {
    let dir = tempfile::tempdir().unwrap();
    let base = random_set(3000, 8, 11, 0);
    let lti = disk_index(&base, dir.path(), "in");
    let adds = random_set(300, 8, 12, 5000);
    let deletes: Vec<u64> = (0..300).map(|i| i * 10).collect();
    let mut job = MergeJob::new(&adds, &deletes, params());
    job.options.threads = 2;
    let (merged, report) = merge(&lti, &job, dir.path().join("out")).unwrap();
    assert_eq!(report.deleted, 300);
    assert_eq!(report.inserted, 300);
    assert!(report.candidates.pruned_nodes > 0);

    let final_set = merged.load_points().unwrap();
    let fresh = build_lti(&final_set, params(), lti.codebook(), dir.path().join("fresh")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut a, mut b) = (0.0, 0.0);
    for _ in 0..200 {
        let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let truth = brute_force_knn(&final_set, &q, 5).unwrap().ids;
        let (r1, _) = merged.beam_search(&q, 5, 40, 4, |_| false).unwrap();
        let (r2, _) = fresh.beam_search(&q, 5, 40, 4, |_| false).unwrap();
        a += recall_at_k(&r1.ids(), &truth, 5).unwrap();
        b += recall_at_k(&r2.ids(), &truth, 5).unwrap();
    }
    let (a, b) = (a / 200.0, b / 200.0);
    assert!(a >= b - 0.03, "merged {a} vs fresh {b}");
}

#[test]
fn union_with_temp_graphs_links_new_points() {
    let dir = tempfile::tempdir().unwrap();
    let base = random_set(500, 4, 20, 0);
    let lti = disk_index(&base, dir.path(), "in");
    let adds = random_set(200, 4, 21, 1000);
    let temp = build_static(&adds, params(), 1).unwrap();
    let mut job = MergeJob::new(&adds, &[], params());
    job.options.union_temp_candidates = true;
    job.temp_graphs.push(&temp);
    let (out, _) = merge(&lti, &job, dir.path().join("out")).unwrap();
    out.validate().unwrap();
    let new_to_new = out
        .adjacency()
        .unwrap()
        .into_iter()
        .filter(|(id, _)| *id >= 1000)
        .flat_map(|(_, nb)| nb)
        .filter(|&n| n >= 1000)
        .count();
    assert!(new_to_new > 0);
}
