use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const DIM: usize = 8;

fn config(temp_cap: usize) -> SystemConfig {
    let mut cfg = SystemConfig::new(DIM, GraphParams::new(12, 24, 1.2), temp_cap);
    cfg.pq_subspaces = 4;
    cfg.flush = FlushPolicy {
        max_ops: 8,
        max_wait: Duration::from_millis(1),
    };
    cfg
}

fn point(rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn top_ids(sys: &FreshSystem, q: &[f32], k: usize) -> Vec<u64> {
    sys.search(q, k, 40).unwrap().neighbors.iter().map(|n| n.id).collect()
}

fn finds(sys: &FreshSystem, x: &[f32], id: u64) -> bool {
    top_ids(sys, x, 5).contains(&id)
}

#[test]
fn insert_then_search_then_delete() {
    let dir = tempfile::tempdir().unwrap();
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    assert!(matches!(sys.search(&[0.0; DIM], 1, 10), Err(Error::Empty(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Vec<f32>> = (0..30).map(|_| point(&mut rng)).collect();
    let ids: Vec<u64> = pts.iter().map(|p| sys.insert(p).unwrap()).collect();
    for (p, &id) in pts.iter().zip(&ids) {
        assert!(finds(&sys, p, id));
    }
    sys.delete(ids[3]).unwrap();
    assert!(!finds(&sys, &pts[3], ids[3]));
    assert!(matches!(sys.delete(ids[3]), Err(Error::AlreadyDeleted(_))));
    assert!(matches!(sys.delete(9999), Err(Error::UnknownId(9999))));
    assert!(matches!(sys.insert(&[1.0]), Err(Error::DimensionMismatch { .. })));
    assert!(sys.search(&pts[0], 11, 10).is_err());
}

#[test]
fn freezes_at_threshold_and_finds_read_only_points() {
    let dir = tempfile::tempdir().unwrap();
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Vec<f32>> = (0..60).map(|_| point(&mut rng)).collect();
    let ids: Vec<u64> = pts.iter().map(|p| sys.insert(p).unwrap()).collect();
    let stats = sys.stats();
    assert_eq!(stats.freezes, 6);
    assert_eq!(stats.ro_temps, 6);
    assert_eq!(stats.rw_points, 0);
    assert_eq!(sys.locate(ids[0]), Some(Location::ReadOnly(0)));
    for (p, &id) in pts.iter().zip(&ids) {
        assert!(finds(&sys, p, id));
    }
    sys.audit().unwrap();
}

#[test]
fn merge_moves_points_and_purges_deletes() {
    let dir = tempfile::tempdir().unwrap();
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    assert!(sys.run_merge().unwrap().is_none());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<Vec<f32>> = (0..75).map(|_| point(&mut rng)).collect();
    let ids: Vec<u64> = pts.iter().map(|p| sys.insert(p).unwrap()).collect();
    // Ids 0..10 are frozen; 70..75 stay in the read-write index.
    sys.delete(ids[0]).unwrap();
    sys.delete(ids[72]).unwrap();
    let report = sys.run_merge().unwrap().unwrap();
    assert_eq!(report.output_points, 69);
    let stats = sys.stats();
    assert_eq!((stats.ro_temps, stats.lti_points, stats.rw_points), (0, 69, 5));
    // The frozen delete was purged; the one still in memory stays listed.
    assert!(!sys.is_deleted(ids[0]));
    assert!(sys.is_deleted(ids[72]));
    assert_eq!(sys.locate(ids[0]), None);
    assert_eq!(sys.locate(ids[1]), Some(Location::Lti));
    let mut found = 0;
    for (i, (p, &id)) in pts.iter().zip(&ids).enumerate() {
        if i == 0 || i == 72 {
            assert!(!finds(&sys, p, id));
        } else if finds(&sys, p, id) {
            found += 1;
        }
    }
    assert!(found >= 70, "found {found}");

    // A second merge folds into the existing long-term index.
    for p in pts.iter().take(20) {
        sys.insert(p).unwrap();
    }
    sys.delete(ids[5]).unwrap();
    sys.freeze_rw().unwrap();
    sys.run_merge().unwrap().unwrap();
    let stats = sys.stats();
    assert_eq!(stats.ro_temps, 0);
    assert_eq!(stats.lti_points, 69 - 1 + 25 - 1);
    assert_eq!(sys.merge_events().len(), 2);
    let files: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("ro-") || n.starts_with("lti-"))
        .collect();
    assert_eq!(files.len(), 4, "{files:?}");
}

#[test]
fn young_codebook_is_retrained_as_the_index_doubles() {
    let dir = tempfile::tempdir().unwrap();
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let trained = |dir: &Path| Manifest::load(dir).unwrap().unwrap().codebook_points;
    let mut pts = Vec::new();
    let mut insert = |sys: &FreshSystem, n: usize| {
        for _ in 0..n {
            let p = point(&mut rng);
            let id = sys.insert(&p).unwrap();
            pts.push((id, p));
        }
        sys.freeze_rw().unwrap();
        sys.run_merge().unwrap().unwrap()
    };
    let first = insert(&sys, 10);
    assert!(!first.rebuilt);
    assert_eq!(trained(dir.path()), 10);
    let patched = insert(&sys, 4);
    assert!(!patched.rebuilt);
    assert_eq!(trained(dir.path()), 10);
    let rebuilt = insert(&sys, 30);
    assert!(rebuilt.rebuilt);
    assert_eq!((rebuilt.input_points, rebuilt.inserted, rebuilt.output_points), (14, 30, 44));
    assert_eq!(trained(dir.path()), 44);
    for (id, p) in &pts {
        assert!(finds(&sys, p, *id));
    }
    sys.audit().unwrap();
}

#[test]
fn reinsert_under_new_id() {
    let dir = tempfile::tempdir().unwrap();
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        sys.insert(&point(&mut rng)).unwrap();
    }
    let x = point(&mut rng);
    let old = sys.insert(&x).unwrap();
    sys.delete(old).unwrap();
    let new = sys.insert(&x).unwrap();
    assert_ne!(old, new);
    let hits = top_ids(&sys, &x, 3);
    assert_eq!(hits[0], new);
    assert!(!hits.contains(&old));
}

#[test]
fn duplicate_hits_are_merged_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        sys.insert(&point(&mut rng)).unwrap();
    }
    let q = point(&mut rng);
    let res = sys.search(&q, 10, 40).unwrap().neighbors;
    let mut ids: Vec<u64> = res.iter().map(|n| n.id).collect();
    assert!(res.windows(2).all(|w| w[0].distance <= w[1].distance));
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 10);
}

#[test]
fn clean_reopen_gives_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let queries: Vec<Vec<f32>> = (0..20).map(|_| point(&mut rng)).collect();
    let before: Vec<Vec<u64>>;
    {
        let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
        for _ in 0..85 {
            sys.insert(&point(&mut rng)).unwrap();
        }
        sys.run_merge().unwrap();
        for id in [1, 20, 80] {
            sys.delete(id).unwrap();
        }
        before = queries.iter().map(|q| top_ids(&sys, q, 5)).collect();
        sys.close().unwrap();
    }
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    let after: Vec<Vec<u64>> = queries.iter().map(|q| top_ids(&sys, q, 5)).collect();
    assert_eq!(before, after);
    assert_eq!(sys.next_id(), 85);
    assert_eq!(sys.insert(&point(&mut rng)).unwrap(), 85);
}

#[test]
fn crash_replays_insert_and_delete() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = point(&mut rng);
    let y = point(&mut rng);
    let (xi, yi) = {
        let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
        let yi = sys.insert(&y).unwrap();
        let xi = sys.insert(&x).unwrap();
        sys.delete(yi).unwrap();
        sys.simulate_crash();
        (xi, yi)
    };
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    assert!(finds(&sys, &x, xi));
    assert!(!finds(&sys, &y, yi));
    assert!(sys.is_deleted(yi));
}

#[test]
fn torn_final_record_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = point(&mut rng);
    let xi = {
        let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
        let xi = sys.insert(&x).unwrap();
        sys.simulate_crash();
        xi
    };
    let torn = LogOp::Insert { id: 77, vector: point(&mut rng) }.encode();
    let mut f = fs::OpenOptions::new().append(true).open(dir.path().join(LOG_NAME)).unwrap();
    f.write_all(&torn[..torn.len() - 3]).unwrap();
    drop(f);
    let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    assert!(finds(&sys, &x, xi));
    assert_eq!(sys.locate(77), None);
    assert_eq!(sys.next_id(), xi + 1);
}

#[test]
fn crash_after_freezes_and_merge_recovers_everything() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<Vec<f32>> = (0..97).map(|_| point(&mut rng)).collect();
    let mut live = Vec::new();
    {
        let sys = FreshSystem::open(dir.path(), config(30)).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let id = sys.insert(p).unwrap();
            live.push((id, i));
            if i == 50 {
                sys.run_merge().unwrap();
            }
            if i % 7 == 3 {
                let (gone, _) = live.remove(live.len() / 2);
                sys.delete(gone).unwrap();
            }
        }
        sys.simulate_crash();
    }
    // Replay refills the read-write index past its threshold and freezes.
    let sys = FreshSystem::open(dir.path(), config(30)).unwrap();
    sys.audit().unwrap();
    for id in 0..97 {
        let expect = live.iter().any(|&(l, _)| l == id);
        assert_eq!(sys.locate(id).is_some() && !sys.is_deleted(id), expect, "id {id}");
    }
    for &(id, i) in &live {
        assert!(finds(&sys, &pts[i], id), "id {id}");
    }
}

#[test]
fn orphans_are_removed() {
    let dir = tempfile::tempdir().unwrap();
    {
        let sys = FreshSystem::open(dir.path(), config(60)).unwrap();
        sys.close().unwrap();
    }
    for name in ["lti-9.fda", "lti-9.fda.pq", "ro-8.fvg", "MANIFEST.json.tmp", "notes.txt"] {
        fs::write(dir.path().join(name), b"x").unwrap();
    }
    let _sys = FreshSystem::open(dir.path(), config(60)).unwrap();
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, vec!["MANIFEST.json", "notes.txt", "redo.log"]);
}

#[test]
fn concurrent_inserters_with_background_merge() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(400);
    cfg.background_merge = true;
    let sys = Arc::new(FreshSystem::open(dir.path(), cfg).unwrap());
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let sys = sys.clone();
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
                (0..1000)
                    .map(|_| {
                        let p = point(&mut rng);
                        let id = sys.insert(&p).unwrap();
                        assert!(sys.temp_points() <= 800);
                        (id, p)
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let all: Vec<(u64, Vec<f32>)> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    assert_eq!(all.len(), 4000);
    sys.audit().unwrap();
    assert!(sys.stats().merges >= 1);
    let found = all.iter().filter(|(id, p)| finds(&sys, p, *id)).count();
    assert!(found as f64 >= 0.98 * all.len() as f64, "found {found}");
    for (id, _) in &all {
        assert!(sys.locate(*id).is_some(), "id {id} unreachable");
    }
}
