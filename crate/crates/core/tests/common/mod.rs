#![allow(dead_code)]

use std::path::PathBuf;

use fedfeed_core::pipeline::{self, ClientAssignment};
use fedfeed_core::storage::{self, IngestPaths};
use fedfeed_core::{Config, Snapshot};

/// Ingest clock for fixture data; later than every fixture timestamp.
pub const INGEST_NOW: i64 = 1_800_000_000;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn corpus_paths() -> IngestPaths {
    let dir = fixtures().join("corpus");
    IngestPaths {
        users: dir.join("users.jsonl"),
        posts: dir.join("posts.jsonl"),
        interactions: dir.join("interactions.jsonl"),
    }
}

pub fn fixture_config() -> Config {
    Config::load(&fixtures().join("fedfeed.toml")).unwrap()
}

pub fn fixture_snapshot() -> Snapshot {
    storage::ingest(&corpus_paths(), None, INGEST_NOW).unwrap()
}

/// Fixture store with the categorizer trained by the fixture config.
pub fn trained_fixture() -> Snapshot {
    let cfg = fixture_config();
    let mut snap = fixture_snapshot();
    let out = pipeline::train_on_snapshot(&snap, &cfg.train, ClientAssignment::ByUser).unwrap();
    let acc = out.reports.last().map(|r| r.eval_acc);
    snap.swap_model(out.params, out.reports.len() as u64, acc).unwrap();
    snap
}
