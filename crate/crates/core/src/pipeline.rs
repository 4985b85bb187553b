//! Store-level operations: derived post scores, persona materialization,
//! feed assembly, feedback recording and training over a snapshot.

use std::hash::Hasher;

use fnv::FnvHasher;

use crate::api::{FeedEntry, FeedResponse, FeedbackResponse};
use crate::config::Config;
use crate::federated::{self, Partition, SimulationOutcome, TrainConfig};
use crate::feedback::apply_feedback;
use crate::filtering::{self, Candidate, FilterSettings};
use crate::model::{self, Example};
use crate::persona::{self, PersonaProfile, PostAnalysis, TextResources};
use crate::storage::Snapshot;
use crate::types::{FeedbackEvent, Post, PostDerived, Timestamp, Verdict};
use crate::Error;

/// Text-derived scores of `post` under the snapshot's serving model.
pub fn analyze_post(snap: &Snapshot, post: &Post, res: &TextResources) -> Result<PostAnalysis, Error> {
    Ok(persona::analyze_text(&post.text, &snap.model.params, res)?)
}

pub fn derive_post(snap: &Snapshot, post: &Post, res: &TextResources) -> Result<PostDerived, Error> {
    let a = analyze_post(snap, post, res)?;
    Ok(a.to_derived(&snap.categories, snap.model.version))
}

fn category_of(snap: &Snapshot, post: &Post, res: &TextResources) -> Result<String, Error> {
    let a = analyze_post(snap, post, res)?;
    Ok(snap.categories.name(a.category).expect("model matches categories").to_string())
}

/// Persona rebuilt from history with the user's feedback replayed in order.
pub fn rebuild_persona(snap: &Snapshot, user_id: &str, cfg: &Config, res: &TextResources) -> Result<PersonaProfile, Error> {
    snap.user(user_id)?;
    let own: Vec<_> = snap.interactions.iter().filter(|e| e.user_id == user_id).cloned().collect();
    let own_clock = own.iter().filter(|e| e.kind.is_engagement()).map(|e| e.timestamp).max().unwrap_or(0);
    let mut profile = persona::build_persona(
        user_id,
        &own,
        &snap.posts,
        &cfg.persona,
        &snap.model.params,
        &snap.categories,
        res,
        own_clock,
    )?;
    for fb in snap.feedback.iter().filter(|f| f.user_id == user_id) {
        let cat = category_of(snap, snap.post(&fb.post_id)?, res)?;
        profile = apply_feedback(&profile, &cat, fb.verdict, &cfg.feedback, fb.timestamp)?;
    }
    Ok(profile)
}

/// Cached persona if present, else a fresh rebuild (not cached).
pub fn persona_for(snap: &Snapshot, user_id: &str, cfg: &Config, res: &TextResources) -> Result<PersonaProfile, Error> {
    snap.user(user_id)?;
    match snap.profiles.get(user_id) {
        Some(p) => Ok(p.clone()),
        None => rebuild_persona(snap, user_id, cfg, res),
    }
}

/// Ensures the user's persona is cached in `snap` and returns it. Does not bump the version.
pub fn materialize_persona(
    snap: &mut Snapshot,
    user_id: &str,
    cfg: &Config,
    res: &TextResources,
) -> Result<PersonaProfile, Error> {
    let p = persona_for(snap, user_id, cfg, res)?;
    snap.profiles.insert(user_id.to_string(), p.clone());
    Ok(p)
}

/// Friend posts with their text scores and trend, in post id order.
pub fn candidates_for(
    snap: &Snapshot,
    user_id: &str,
    settings: &FilterSettings,
    res: &TextResources,
) -> Result<Vec<Candidate>, Error> {
    let friends = &snap.user(user_id)?.friends;
    let now = snap.clock();
    let mut out = Vec::new();
    for post in snap.posts.values().filter(|p| friends.contains(&p.author_id)) {
        let a = analyze_post(snap, post, res)?;
        out.push(Candidate {
            post_id: post.post_id.clone(),
            author_id: post.author_id.clone(),
            created_at: post.created_at,
            counts: post.counts,
            category: snap.categories.name(a.category).unwrap().to_string(),
            sentiment: a.sentiment,
            rho: a.rho,
            fk_grade: a.fk_grade,
            trend: filtering::trend_score(&post.post_id, &snap.interactions, now, settings.trend_window_secs),
        });
    }
    Ok(out)
}

/// The ranked feed exactly as served by `GET /api/feed/{user}`.
pub fn feed_for(
    snap: &Snapshot,
    user_id: &str,
    cfg: &Config,
    settings: &FilterSettings,
    res: &TextResources,
    limit: usize,
) -> Result<FeedResponse, Error> {
    let user = snap.user(user_id)?;
    let profile = persona_for(snap, user_id, cfg, res)?;
    let ranks = filtering::friend_rank(user_id, &snap.interactions, &snap.posts, &user.friends, &cfg.ranking);
    let candidates = candidates_for(snap, user_id, settings, res)?;
    let feed = filtering::build_feed(user_id, &candidates, &profile, &ranks, settings, &cfg.ranking, snap.clock());
    let items = feed
        .items
        .into_iter()
        .take(limit)
        .map(|item| {
            let post = &snap.posts[&item.post_id];
            FeedEntry { text: post.text.clone(), created_at: post.created_at, item }
        })
        .collect();
    Ok(FeedResponse {
        user_id: user_id.to_string(),
        snapshot_version: snap.version,
        model_version: snap.model.version,
        items,
        warnings: feed.warnings,
    })
}

/// Applies a like/dislike to the user's persona and records the event.
pub fn record_feedback(
    snap: &mut Snapshot,
    user_id: &str,
    post_id: &str,
    verdict: Verdict,
    at: Timestamp,
    cfg: &Config,
    res: &TextResources,
) -> Result<FeedbackResponse, Error> {
    snap.user(user_id)?;
    let post = snap.post(post_id)?.clone();
    let category = category_of(snap, &post, res)?;
    let profile = persona_for(snap, user_id, cfg, res)?;
    let at = at.max(profile.last_updated);
    let updated = apply_feedback(&profile, &category, verdict, &cfg.feedback, at)?;
    snap.add_feedback(FeedbackEvent { user_id: user_id.into(), post_id: post_id.into(), verdict, timestamp: at })?;
    snap.profiles.insert(user_id.to_string(), updated.clone());
    Ok(FeedbackResponse {
        user_id: user_id.into(),
        post_id: post_id.into(),
        category,
        verdict,
        distribution: updated.distribution,
        snapshot_version: snap.version,
    })
}

/// Labeled posts as training examples, with each example's author.
pub fn training_corpus(snap: &Snapshot) -> Result<(Vec<Example>, Vec<String>), Error> {
    let dim = snap.model.params.feature_dim();
    let mut examples = Vec::new();
    let mut authors = Vec::new();
    for post in snap.posts.values() {
        let Some(label) = &post.label else { continue };
        let idx = snap
            .categories
            .index_of(label)
            .ok_or_else(|| Error::Validation(format!("post {} has unknown label {label:?}", post.post_id)))?;
        examples.push(Example::new(model::featurize(&post.text, dim)?, idx));
        authors.push(post.author_id.clone());
    }
    Ok((examples, authors))
}

/// Stable client index for a user.
pub fn client_for_user(user_id: &str, num_clients: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(user_id.as_bytes());
    (h.finish() % num_clients as u64) as usize
}

/// How the store's labeled posts are spread over clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientAssignment {
    /// Each author's posts stay on the author's client.
    ByUser,
    Iid,
    LabelSkew,
}

impl std::str::FromStr for ClientAssignment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(Self::ByUser),
            "iid" => Ok(Self::Iid),
            "skew" => Ok(Self::LabelSkew),
            other => Err(format!("unknown partition {other:?} (expected user, iid or skew)")),
        }
    }
}

/// Runs federated training over the store's labeled posts, starting from the serving model.
pub fn train_on_snapshot(
    snap: &Snapshot,
    train: &TrainConfig,
    assignment: ClientAssignment,
) -> Result<SimulationOutcome, Error> {
    let (examples, authors) = training_corpus(snap)?;
    if examples.is_empty() {
        return Err(Error::Validation("store has no labeled posts to train on".into()));
    }
    let partition = match assignment {
        ClientAssignment::ByUser => {
            Partition::Explicit(authors.iter().map(|a| client_for_user(a, train.num_clients)).collect())
        }
        ClientAssignment::Iid => Partition::Iid,
        ClientAssignment::LabelSkew => Partition::LabelSkew,
    };
    Ok(federated::run_simulation(
        &snap.model.params,
        snap.model.current_round + 1,
        &examples,
        &partition,
        train,
    )?)
}
