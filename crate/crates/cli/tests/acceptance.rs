//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p confdb-cli --test acceptance`. Exits nonzero if
//! any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use confdb::alias::AliasTree;
use confdb::client::configure_run;
use confdb::commit::commit_alias_tree;
use confdb::model::{Kind, Name, ObjectIdentity, Payload, Value};
use confdb::service::Server;
use confdb::store::{ObjectReader, Store, LOG_FILE, SLOW_COMMIT_ENV};
use confdb::tree::{
    activate, active_trees, resolve_run_type, runtypes_bindings, runtypes_identity, walk_tree, TreePath,
};
use confdb_testkit::{
    balanced_alias_tree, fresh_leaf, leaf_pool, map_alias_paths, naive_commit, object_alias_paths, random_alias_tree,
    random_edit, random_identity, random_payload, Dedup,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn n(s: &str) -> Name {
    Name::new(s).unwrap()
}

fn physics() -> Vec<Name> {
    vec![n("PHYSICS")]
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn node_count(tree: &AliasTree) -> usize {
    tree.nodes().len()
}

/// Criterion 1: every historical root reproduces its manifest snapshot byte for byte.
fn history_reconstruction() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let pool = leaf_pool(&store, 8, 4);
    let mut tree = random_alias_tree(&mut rng, &pool, 6, 50);
    while node_count(&tree) < 45 {
        random_edit(&mut rng, &mut tree, &pool, &[], 6);
    }
    let mut snapshots: Vec<(ObjectIdentity, String)> = Vec::new();
    let mut sizes = Vec::new();
    for _ in 0..200 {
        for _ in 0..rng.gen_range(1..4) {
            random_edit(&mut rng, &mut tree, &pool, &[], 6);
            // Hold the tree near 50 nodes.
            while node_count(&tree) < 40 {
                let parent = map_alias_paths(&tree).choose(&mut rng).unwrap().clone();
                let name = format!("n{}", rng.gen_range(0..1000));
                let _ = tree.set_object_alias(&parent, &name, pool.choose(&mut rng).unwrap().clone());
            }
            while node_count(&tree) > 60 {
                let victim = object_alias_paths(&tree).choose(&mut rng).unwrap().clone();
                tree.remove_node(&victim).unwrap();
            }
        }
        sizes.push(node_count(&tree));
        let outcome = commit_alias_tree(&store, &tree, &physics()).map_err(|e| e.to_string())?;
        snapshots.push((
            outcome.root.clone(),
            walk_tree(&store, &outcome.root).unwrap().to_text(),
        ));
    }
    drop(store);
    let reopened = Store::open(dir.path()).unwrap();
    for (root, text) in &snapshots {
        let again = walk_tree(&reopened, root).map_err(|e| e.to_string())?.to_text();
        check(&again == text, || format!("snapshot of {root} differs after reopen"))?;
    }
    // Every run-type version still points at the root it bound.
    let latest = reopened.latest_key(&n("@runtypes"), None).unwrap_or(0);
    let bound: HashSet<ObjectIdentity> = (1..=latest)
        .map(|k| runtypes_bindings(&reopened, &runtypes_identity(k).unwrap()).unwrap()["PHYSICS"].clone())
        .collect();
    for (root, _) in &snapshots {
        check(bound.contains(root), || format!("{root} missing from run-type history"))?;
    }
    let avg = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    Ok(format!(
        "200 cycles, mean tree size {avg:.1} nodes, {} distinct roots",
        bound.len()
    ))
}

/// Paths of maps on the way from the root to `target` (exclusive).
fn ancestors(target: &TreePath) -> Vec<TreePath> {
    let mut out = vec![TreePath::root()];
    let segs = target.segments();
    for i in 1..segs.len() {
        out.push(segs[..i].iter().fold(TreePath::root(), |p, s| p.child(s)));
    }
    out
}

/// Criterion 2: a retarget at depth d creates exactly d maps and at most one run-type
/// record, matching the rebuild-with-dedup oracle.
fn minimal_rebuild() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let mut per_depth = [0usize; 4];
    for case in 0..1000 {
        let d = case % 4 + 1;
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let pool = leaf_pool(&store, 3, 2);
        let mut tree = balanced_alias_tree(&pool, d - 1, rng.gen_range(1..=3), rng.gen_range(1..=3));
        let first = commit_alias_tree(&store, &tree, &physics()).unwrap();
        let before = walk_tree(&store, &first.root).unwrap();

        let targets = object_alias_paths(&tree);
        let path = targets.choose(&mut rng).unwrap().clone();
        check(path.segments().len() == d, || {
            format!("case {case}: alias at wrong depth {path}")
        })?;
        let (parent, last) = path.parent().unwrap();
        let fresh = fresh_leaf(&store, "Fresh");
        tree.set_object_alias(&parent, last.as_str(), fresh).unwrap();

        let expected = naive_commit(&store, &tree, None, Dedup::StoreSeries);
        let records_before = store.object_count();
        let outcome = commit_alias_tree(&store, &tree, &physics()).unwrap();
        let written = store.object_count() - records_before;

        check(outcome.maps_created.len() == d, || {
            format!("case {case}: depth {d} created {} maps", outcome.maps_created.len())
        })?;
        check(expected.new_maps == d && outcome.root == expected.root, || {
            format!(
                "case {case}: oracle predicts {} maps, root {}",
                expected.new_maps, expected.root
            )
        })?;
        check(written >= d && written <= d + 1, || {
            format!("case {case}: {written} records written")
        })?;
        let after = walk_tree(&store, &outcome.root).unwrap();
        check(after.to_text() == expected.manifest, || {
            format!("case {case}: manifest differs from oracle")
        })?;

        let on_path: HashSet<TreePath> = ancestors(&path).into_iter().collect();
        let old: BTreeMap<_, _> = before.entries.into_iter().collect();
        for (p, id) in &after.entries {
            if store.kind_of(id) == Some(Kind::Map) && !on_path.contains(p) {
                check(old.get(p) == Some(id), || {
                    format!("case {case}: off-path map {p} not reused")
                })?;
            }
        }
        per_depth[d - 1] += 1;
    }
    Ok(format!("1000 cases, per depth {per_depth:?}"))
}

/// Criterion 3: committing an unedited tree writes nothing and returns the prior root.
fn fixed_point() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let pool = leaf_pool(&store, 4, 3);
    for case in 0..100 {
        let tree = random_alias_tree(&mut rng, &pool, 5, 40);
        let first = commit_alias_tree(&store, &tree, &physics()).unwrap();
        let len = store.log_len().unwrap();
        let again = commit_alias_tree(&store, &tree, &physics()).unwrap();
        check(again.records_created() == 0 && again.root == first.root, || {
            format!("case {case}: second commit wrote {} records", again.records_created())
        })?;
        check(store.log_len().unwrap() == len, || format!("case {case}: log grew"))?;
    }
    Ok("100 trees".into())
}

/// Criterion 4: resolution follows the highest @runtypes key; older versions keep
/// their bindings.
fn active_tree_rule() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    for k in 1..=10u64 {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let pool = leaf_pool(&store, 2, 2);
        let mut roots = Vec::new();
        for leaf in &pool {
            let mut t = AliasTree::new("t", "Top").unwrap();
            t.set_object_alias(&TreePath::root(), "x", leaf.clone()).unwrap();
            roots.push(commit_alias_tree(&store, &t, &[]).unwrap().root);
        }
        let mut history = Vec::new();
        for _ in 0..k {
            let mut bindings = BTreeMap::new();
            for rt in ["PHYSICS", "COSMICS", "CALIB"] {
                if rng.gen_bool(0.7) || rt == "PHYSICS" {
                    bindings.insert(n(rt), roots.choose(&mut rng).unwrap().clone());
                }
            }
            let mut txn = store.begin().unwrap();
            let id = activate(&mut txn, bindings.clone()).unwrap();
            txn.commit().unwrap();
            history.push((id, bindings));
        }
        let (last_id, last) = history.last().unwrap();
        check(last_id.key() == k, || format!("k={k}: last activation is {last_id}"))?;
        check(&active_trees(&store).unwrap() == last, || {
            format!("k={k}: active bindings differ")
        })?;
        for rt in ["PHYSICS", "COSMICS", "CALIB"] {
            let resolved = resolve_run_type(&store, rt).ok();
            check(resolved.as_ref() == last.get(rt), || {
                format!("k={k}: {rt} resolves to {resolved:?}")
            })?;
        }
        for (id, bindings) in &history {
            check(&runtypes_bindings(&store, id).unwrap() == bindings, || {
                format!("k={k}: {id} changed")
            })?;
        }
    }
    Ok("k = 1..10".into())
}

/// Criterion 5: 100 clients, 20 GETs each, with an activation between their fetches.
fn configure_transition_load() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let pool = leaf_pool(&store, 8, 2);
    let tree = balanced_alias_tree(&pool, 2, 4, 2);
    let root = commit_alias_tree(&store, &tree, &physics()).unwrap().root;
    let manifest: BTreeMap<String, ObjectIdentity> = walk_tree(&store, &root)
        .unwrap()
        .entries
        .into_iter()
        .filter(|(_, id)| store.kind_of(id) == Some(Kind::Leaf))
        .map(|(p, id)| (p.to_string(), id))
        .collect();
    let paths: Vec<String> = manifest.keys().cloned().collect();
    if paths.len() < 20 {
        return Err(format!("fixture has only {} leaf paths", paths.len()));
    }

    let server = Server::bind(store.clone(), "127.0.0.1:0").unwrap().spawn().unwrap();
    let addr = server.addr();
    const CLIENTS: usize = 100;
    let mid = Arc::new(Barrier::new(CLIENTS + 1));
    let resumed = Arc::new(Barrier::new(CLIENTS + 1));
    let started = Instant::now();
    let workers: Vec<_> = (0..CLIENTS)
        .map(|c| {
            let paths = paths.clone();
            let (mid, resumed) = (mid.clone(), resumed.clone());
            thread::spawn(
                move || -> Result<(ObjectIdentity, Vec<(String, ObjectIdentity)>), String> {
                    let result = (|| {
                        let mut handle = configure_run(addr, "PHYSICS").map_err(|e| e.to_string())?;
                        let mut got = Vec::new();
                        for i in 0..10 {
                            let p = &paths[(c + i) % paths.len()];
                            got.push((p.clone(), handle.fetch_raw(p).map_err(|e| e.to_string())?.0));
                        }
                        Ok::<_, String>((handle, got))
                    })();
                    mid.wait();
                    resumed.wait();
                    let (mut handle, mut got) = result?;
                    for i in 10..20 {
                        let p = &paths[(c + i) % paths.len()];
                        got.push((p.clone(), handle.fetch_raw(p).map_err(|e| e.to_string())?.0));
                    }
                    Ok((handle.root().clone(), got))
                },
            )
        })
        .collect();

    // Every client has resolved and fetched half its paths: re-point PHYSICS.
    mid.wait();
    let mut other = tree.clone();
    let (parent, last) = object_alias_paths(&other)[0]
        .parent()
        .map(|(p, l)| (p, l.clone()))
        .unwrap();
    other
        .set_object_alias(&parent, last.as_str(), fresh_leaf(&store, "Injected"))
        .unwrap();
    let new_root = commit_alias_tree(&store, &other, &physics()).unwrap().root;
    resumed.wait();

    let mut fetches = 0;
    let mut roots = HashSet::new();
    for w in workers {
        let (root_seen, got) = w.join().map_err(|_| "client thread panicked".to_string())??;
        roots.insert(root_seen);
        for (p, id) in got {
            check(manifest[&p] == id, || {
                format!("{p} returned {id}, expected {}", manifest[&p])
            })?;
            fetches += 1;
        }
    }
    let elapsed = started.elapsed();
    server.shutdown();
    check(fetches == CLIENTS * 20, || format!("{fetches} fetches"))?;
    check(roots.len() == 1 && roots.contains(&root), || {
        format!("clients saw roots {roots:?}")
    })?;
    check(new_root != root, || "injected activation produced no new tree".into())?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{fetches} fetches by {CLIENTS} clients in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn confdb_bin() -> &'static str {
    env!("CARGO_BIN_EXE_confdb")
}

/// Criterion 6: killing the writer during a 20-object commit never leaves a partial
/// transaction.
fn crash_atomicity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db");
    let leaf = dir.path().join("leaf.cfg");
    fs::write(
        &leaf,
        "kind=leaf\nv=s:\"payload for the crash trial, long enough to span chunks\"\n",
    )
    .unwrap();
    let mut script = String::from("begin\n");
    for _ in 0..20 {
        script.push_str(&format!("new-object Crash --from {}\n", leaf.display()));
    }
    script.push_str("commit\n");

    let run = |kill_after: Option<Duration>| -> bool {
        let mut child = Command::new(confdb_bin())
            .arg("--store")
            .arg(&db)
            .args(["script", "-"])
            .env(SLOW_COMMIT_ENV, "300")
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(script.as_bytes()).unwrap();
        match kill_after {
            Some(d) => {
                thread::sleep(d);
                let killed = matches!(child.try_wait(), Ok(None));
                let _ = child.kill();
                let _ = child.wait();
                killed
            }
            None => child.wait().unwrap().success(),
        }
    };

    // Time one undisturbed run to aim the kills.
    let t0 = Instant::now();
    check(run(None), || "unkilled run failed".into())?;
    let full = t0.elapsed();
    let crash = n("Crash");

    let (mut pre, mut post, mut mid_write) = (0, 0, 0);
    for trial in 0..100 {
        let store = Store::open(&db).unwrap();
        let before_count = store.latest_key(&crash, None).unwrap_or(0);
        let before_len = store.log_len().unwrap();
        drop(store);

        let delay = full.mul_f64(rng.gen_range(0.4..1.4));
        run(Some(delay));
        let raw_len = fs::metadata(db.join(LOG_FILE)).unwrap().len();

        let store = Store::open(&db).map_err(|e| format!("trial {trial}: reopen failed: {e}"))?;
        let after = store.latest_key(&crash, None).unwrap_or(0);
        let versions = store.list_versions(&crash, None);
        check(versions == (1..=after).collect::<Vec<_>>(), || {
            format!("trial {trial}: keys not dense")
        })?;
        for k in 1..=after {
            store
                .get_object(&ObjectIdentity::from_parts("Crash", None, k).unwrap())
                .map_err(|e| format!("trial {trial}: {e}"))?;
        }
        if after == before_count {
            pre += 1;
            check(store.log_len().unwrap() == before_len, || {
                format!("trial {trial}: log not restored")
            })?;
            if raw_len != before_len {
                mid_write += 1;
            }
        } else if after == before_count + 20 {
            post += 1;
        } else {
            return Err(format!(
                "trial {trial}: partial state with {} new objects",
                after - before_count
            ));
        }
    }
    Ok(format!(
        "100 kills: {pre} pre-commit ({mid_write} with a torn tail), {post} post-commit"
    ))
}

/// Criterion 7: identities and payloads round-trip bit-exactly.
fn codec_round_trips() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let mut seen = BTreeMap::from([
        ("nan", 0),
        ("neg-zero", 0),
        ("subnormal", 0),
        ("empty-map", 0),
        ("control-char", 0),
    ]);
    let mut note = |p: &Payload| {
        if let Some(fields) = p.fields() {
            for v in fields.values() {
                let floats: Vec<f64> = match v {
                    Value::Float(f) => vec![*f],
                    Value::FloatArray(fs) => fs.clone(),
                    _ => vec![],
                };
                for f in floats {
                    *seen.get_mut("nan").unwrap() += f.is_nan() as usize;
                    *seen.get_mut("neg-zero").unwrap() += (f == 0.0 && f.is_sign_negative()) as usize;
                    *seen.get_mut("subnormal").unwrap() += f.is_subnormal() as usize;
                }
                let strs: Vec<&String> = match v {
                    Value::Str(s) => vec![s],
                    Value::StrArray(ss) => ss.iter().collect(),
                    _ => vec![],
                };
                for s in strs {
                    *seen.get_mut("control-char").unwrap() += s.chars().any(|c| c.is_control()) as usize;
                }
            }
        }
        if matches!(p, Payload::Map(m) if m.is_empty()) {
            *seen.get_mut("empty-map").unwrap() += 1;
        }
    };
    for i in 0..10_000 {
        let id = random_identity(&mut rng);
        let back = ObjectIdentity::parse(&id.to_string()).map_err(|e| format!("#{i} {id}: {e}"))?;
        check(back == id, || format!("#{i}: identity {id} came back as {back}"))?;

        let p = random_payload(&mut rng);
        note(&p);
        let bytes = p.encode();
        let back = Payload::decode(&bytes).map_err(|e| format!("#{i}: {e}"))?;
        check(back == p && back.encode() == bytes, || {
            format!("#{i}: payload changed in round trip")
        })?;
    }
    let missing: Vec<_> = seen.iter().filter(|(_, c)| **c == 0).map(|(k, _)| *k).collect();
    check(missing.is_empty(), || format!("generator never produced {missing:?}"))?;
    Ok(format!("10000 identities + 10000 payloads, coverage {seen:?}"))
}

/// Criterion 8: interleaved committed and aborted transactions from several store
/// handles leave every series dense.
fn key_density() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path: PathBuf = dir.path().to_path_buf();
    let committed = Arc::new(Mutex::new(BTreeMap::<String, u64>::new()));
    let workers: Vec<_> = (0..4)
        .map(|w| {
            let path = path.clone();
            let committed = committed.clone();
            thread::spawn(move || {
                let mut rng = StdRng::seed_from_u64(80 + w);
                let store = Store::open(&path).unwrap();
                for _ in 0..60 {
                    let mut txn = store.begin().unwrap();
                    let mut made = Vec::new();
                    for _ in 0..rng.gen_range(1..=3) {
                        let class = ["A", "B", "C"].choose(&mut rng).unwrap();
                        let sec = ["x", "y"].choose(&mut rng).map(|s| n(s)).filter(|_| rng.gen_bool(0.5));
                        let p = Payload::Leaf([(n("w"), Value::Int(w as i64))].into());
                        let id = txn.create_object(&n(class), sec.as_ref(), p).unwrap();
                        made.push(id);
                    }
                    match rng.gen_range(0..3) {
                        0 => txn.abort(),
                        1 => drop(txn),
                        _ => {
                            txn.commit().unwrap();
                            let mut c = committed.lock().unwrap();
                            for id in made {
                                let series = id.to_string().rsplit_once('[').unwrap().0.to_string();
                                *c.entry(series).or_default() += 1;
                            }
                        }
                    }
                }
            })
        })
        .collect();
    for w in workers {
        w.join().map_err(|_| "worker panicked".to_string())?;
    }
    let store = Store::open(&path).unwrap();
    let committed = committed.lock().unwrap();
    for (series, count) in committed.iter() {
        let (class, sec) = confdb::model::parse_series(series).unwrap();
        let versions = store.list_versions(&class, sec.as_ref());
        check(versions == (1..=*count).collect::<Vec<_>>(), || {
            format!("{series}: versions {versions:?}, expected 1..={count}")
        })?;
        for k in versions {
            store
                .get_object(&ObjectIdentity::new(class.clone(), sec.clone(), k.try_into().unwrap()))
                .map_err(|e| e.to_string())?;
        }
    }
    let total: u64 = committed.values().sum();
    check(store.object_count() as u64 == total, || {
        "stray objects in the log".into()
    })?;
    Ok(format!(
        "{} series, {total} objects from 4 concurrent writers",
        committed.len()
    ))
}

/// Criterion 9: the golden script replays to identical log bytes and manifest.
fn script_replayability() -> Outcome {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let script = golden.join("two_subsystems.confdb");
    let expected = fs::read_to_string(golden.join("two_subsystems.manifest")).unwrap();
    let mut logs = Vec::new();
    for _ in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(confdb_bin())
            .arg("--store")
            .arg(dir.path())
            .args(["--epoch", "0", "script"])
            .arg(&script)
            .output()
            .unwrap();
        check(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })?;
        let stdout = String::from_utf8(out.stdout).unwrap();
        check(stdout.ends_with(&expected), || {
            "manifest output differs from golden file".into()
        })?;
        let m = Command::new(confdb_bin())
            .arg("--store")
            .arg(dir.path())
            .args(["manifest", "TopMap[2]"])
            .output()
            .unwrap();
        check(m.stdout == expected.as_bytes(), || {
            "manifest command differs from golden file".into()
        })?;
        logs.push(fs::read(dir.path().join(LOG_FILE)).unwrap());
    }
    check(logs.windows(2).all(|w| w[0] == w[1]), || {
        "objects.log differs between runs".into()
    })?;
    Ok(format!("3 runs, {} identical log bytes", logs[0].len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("history reconstruction", history_reconstruction),
        ("minimal rebuild", minimal_rebuild),
        ("fixed point", fixed_point),
        ("active-tree rule", active_tree_rule),
        ("configure-transition load", configure_transition_load),
        ("crash atomicity", crash_atomicity),
        ("codec round trips", codec_round_trips),
        ("key density", key_density),
        ("script replayability", script_replayability),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let num = i + 1;
        if only.is_some_and(|o| o != num) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {num}. {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {num}. {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
