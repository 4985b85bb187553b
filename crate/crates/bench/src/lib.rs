//! Shared inputs for the benchmarks.

use fedfeed_core::model::{featurize, Example};
use fedfeed_core::pipeline::{self, ClientAssignment};
use fedfeed_core::storage::Snapshot;
use fedfeed_core::synth::{self, SynthConfig};
use fedfeed_core::{CategorySet, Post, TrainConfig};

pub const DIM: usize = 4096;

pub fn corpus(users: usize, posts_per_user: usize) -> (CategorySet, Vec<Post>) {
    let c = synth::generate(&SynthConfig { users, posts_per_user, ..SynthConfig::default() }).expect("valid synth config");
    (c.categories, c.posts)
}

pub fn examples(users: usize, posts_per_user: usize) -> Vec<Example> {
    let (cats, posts) = corpus(users, posts_per_user);
    posts
        .iter()
        .map(|p| Example::new(featurize(&p.text, DIM).unwrap(), cats.index_of(p.label.as_deref().unwrap()).unwrap()))
        .collect()
}

/// A synthetic store with a briefly trained model.
pub fn trained_store(users: usize, posts_per_user: usize) -> Snapshot {
    let c = synth::generate(&SynthConfig { users, posts_per_user, ..SynthConfig::default() }).expect("valid synth config");
    let mut snap = Snapshot::empty(c.categories.clone());
    for u in c.users {
        snap.users.insert(u.user_id.clone(), u);
    }
    for p in c.posts {
        snap.posts.insert(p.post_id.clone(), p);
    }
    for ev in c.interactions {
        snap.add_interaction(ev).expect("synthetic events are valid");
    }
    let train = TrainConfig { rounds: 5, ..TrainConfig::default() };
    let out = pipeline::train_on_snapshot(&snap, &train, ClientAssignment::ByUser).expect("training succeeds");
    snap.swap_model(out.params, 5, None).expect("shapes match");
    snap
}
