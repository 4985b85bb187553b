mod common;

use std::fs;
use std::sync::Arc;
use std::thread;

use fedfeed_core::persona::build_persona;
use fedfeed_core::pipeline;
use fedfeed_core::storage::{self, IngestPaths, StorageError};
use fedfeed_core::{InteractionEvent, InteractionKind, Store};

#[test]
fn fixture_counts() {
    let snap = common::fixture_snapshot();
    assert_eq!(snap.counts().to_string(), "users: 4, posts: 20, interactions: 60");
    assert!(snap.recount_mismatches().is_empty());
    for u in snap.users.values() {
        for f in &u.friends {
            assert!(snap.users[f].friends.contains(&u.user_id));
        }
    }
}

fn copy_corpus(dir: &std::path::Path) -> IngestPaths {
    let src = common::corpus_paths();
    let paths = IngestPaths {
        users: dir.join("users.jsonl"),
        posts: dir.join("posts.jsonl"),
        interactions: dir.join("interactions.jsonl"),
    };
    fs::copy(&src.users, &paths.users).unwrap();
    fs::copy(&src.posts, &paths.posts).unwrap();
    fs::copy(&src.interactions, &paths.interactions).unwrap();
    paths
}

#[test]
fn malformed_line_is_reported_with_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let paths = copy_corpus(dir.path());
    let text = fs::read_to_string(&paths.posts).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "{\"post_id\": \"p7\", oops";
    fs::write(&paths.posts, lines.join("\n")).unwrap();
    let err = storage::ingest(&paths, None, common::INGEST_NOW).unwrap_err();
    assert!(err.to_string().starts_with("posts.jsonl:7"), "{err}");
}

#[test]
fn duplicate_post_reports_both_lines() {
    let dir = tempfile::tempdir().unwrap();
    let paths = copy_corpus(dir.path());
    let text = fs::read_to_string(&paths.posts).unwrap();
    let first = text.lines().next().unwrap().to_string();
    fs::write(&paths.posts, format!("{text}{first}\n")).unwrap();
    match storage::ingest(&paths, None, common::INGEST_NOW).unwrap_err() {
        StorageError::Duplicate { first_line, second_line, .. } => assert_eq!((first_line, second_line), (1, 21)),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = copy_corpus(dir.path());
    paths.users = dir.path().join("nope.jsonl");
    let err = storage::ingest(&paths, None, common::INGEST_NOW).unwrap_err();
    assert!(err.to_string().contains("nope.jsonl"), "{err}");
}

#[test]
fn empty_files_give_an_empty_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let paths = IngestPaths {
        users: dir.path().join("u.jsonl"),
        posts: dir.path().join("p.jsonl"),
        interactions: dir.path().join("i.jsonl"),
    };
    for p in [&paths.users, &paths.posts, &paths.interactions] {
        fs::write(p, "").unwrap();
    }
    let snap = storage::ingest(&paths, None, common::INGEST_NOW).unwrap();
    assert_eq!(snap.counts().to_string(), "users: 0, posts: 0, interactions: 0");
}

#[test]
fn trained_fixture_round_trips_byte_identically() {
    let snap = common::trained_fixture();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    storage::persist(&snap, &a.path().join("state.json")).unwrap();
    let back = storage::restore(&a.path().join("state.json")).unwrap();
    assert_eq!(back, snap);
    storage::persist(&back, &b.path().join("state.json")).unwrap();
    for name in ["state.json", "state.json.model"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn corrupted_restore_leaves_store_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let store = Store::new(common::trained_fixture());
    store.persist(&path).unwrap();
    let before = store.snapshot();
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(store.restore_from(&path).is_err());
    assert!(Arc::ptr_eq(&before, &store.snapshot()));
}

#[test]
fn readers_keep_their_snapshot_during_writes_and_persist() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::new(common::fixture_snapshot()));
    let pinned = store.snapshot();
    let pinned_counts = pinned.counts();
    let writer = {
        let store = Arc::clone(&store);
        let path = dir.path().join("state.json");
        thread::spawn(move || {
            for i in 0..50 {
                store
                    .write(|s| {
                        s.add_interaction(InteractionEvent {
                            user_id: "u1".into(),
                            post_id: "p20".into(),
                            kind: InteractionKind::Like,
                            timestamp: common::INGEST_NOW + i,
                            comment_text: None,
                        })
                    })
                    .unwrap();
                store.persist(&path).unwrap();
            }
        })
    };
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let store = Arc::clone(&store);
            thread::spawn(move || {
                for _ in 0..200 {
                    let s = store.snapshot();
                    assert!(s.recount_mismatches().is_empty(), "torn snapshot");
                }
            })
        })
        .collect();
    writer.join().unwrap();
    readers.into_iter().for_each(|r| r.join().unwrap());
    assert_eq!(pinned.counts(), pinned_counts);
    assert_eq!(store.snapshot().interactions.len(), 110);
}

#[test]
fn served_persona_matches_direct_build() {
    let snap = common::trained_fixture();
    let config = common::fixture_config();
    let res = config.text_resources().unwrap();
    for user in snap.users.keys() {
        let served = pipeline::persona_for(&snap, user, &config, &res).unwrap();
        let clock = snap
            .interactions
            .iter()
            .filter(|e| &e.user_id == user && e.kind.is_engagement())
            .map(|e| e.timestamp)
            .max()
            .unwrap_or(0);
        let direct = build_persona(
            user,
            &snap.interactions,
            &snap.posts,
            &config.persona,
            &snap.model.params,
            &snap.categories,
            &res,
            clock,
        )
        .unwrap();
        assert_eq!(served, direct, "{user}");
        assert!((served.distribution.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
