//! Seeded synthetic corpus: labeled posts, a random friend graph and
//! interaction logs biased by per-user category preferences.
//!
//! Each category owns a disjoint core vocabulary; every post also draws
//! shared filler and sentiment words, so the categories are separable by the
//! core tokens alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::CategorySet;
use crate::types::{EngagementCounts, InteractionEvent, InteractionKind, Post, Timestamp, UserRecord};

/// First post timestamp of every generated corpus.
pub const BASE_TIME: Timestamp = 1_700_000_000;
const HOUR: Timestamp = 3600;

const CORES: [(&str, &[&str]); 6] = [
    ("news", &[
        "report", "update", "breaking", "story", "headline", "press", "announced", "officials", "local", "today",
        "weather", "city", "police", "statement", "reporter", "daily", "morning", "source", "coverage", "bulletin",
    ]),
    ("media", &[
        "movie", "film", "music", "album", "show", "series", "episode", "actor", "singer", "stream", "song",
        "concert", "video", "channel", "podcast", "trailer", "festival", "studio", "radio", "camera",
    ]),
    ("politics", &[
        "vote", "election", "senate", "policy", "government", "minister", "president", "campaign", "law", "bill",
        "congress", "party", "debate", "tax", "reform", "democracy", "parliament", "mayor", "budget", "court",
    ]),
    ("sports", &[
        "game", "team", "score", "coach", "match", "season", "player", "league", "goal", "championship",
        "football", "soccer", "basketball", "tennis", "training", "stadium", "fans", "tournament", "race", "final",
    ]),
    ("community-services", &[
        "volunteer", "charity", "shelter", "donation", "neighborhood", "library", "school", "clinic", "food",
        "help", "program", "center", "youth", "family", "church", "park", "service", "drive", "fundraiser", "meal",
    ]),
    ("technology", &[
        "software", "computer", "phone", "app", "internet", "data", "code", "network", "device", "robot",
        "digital", "online", "website", "startup", "chip", "cloud", "security", "battery", "laptop", "engineer",
    ]),
];

const FILLER: &[&str] = &[
    "the", "a", "this", "that", "was", "is", "so", "really", "about", "new", "with", "for", "our", "at", "on",
    "and", "just", "week", "people", "all", "one", "more", "very", "here", "there", "after", "next", "first",
];

const POSITIVE: &[&str] = &["great", "good", "amazing", "love", "happy", "excellent", "fun", "wonderful", "proud", "nice"];
const NEGATIVE: &[&str] = &["bad", "terrible", "sad", "awful", "disappointing", "horrible", "worst", "upset"];

/// Nonword tokens mixed into spam posts so they fail the dictionary check.
const GIBBERISH: &[&str] = &["xqzv", "brrpt", "zzkx", "qwyl", "vvrk", "pflt", "gnxz", "kwtz", "jjqr", "hmzv"];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("{0}")]
    InvalidConfig(String),
    #[error("invalid planted preference {spec:?}: {message}")]
    InvalidPlant { spec: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub posts_per_user: usize,
    pub categories: usize,
    pub seed: u64,
    /// Edge probability of the friend graph.
    pub friend_prob: f64,
    /// Engagement events generated per user.
    pub events_per_user: usize,
    /// Probability that a body word is drawn from the category core.
    pub core_fraction: f64,
    /// Probability that a post is written with a negative tone.
    pub negative_fraction: f64,
    /// Probability that a post is spam (mostly nonwords).
    pub spam_fraction: f64,
    /// Fixed category preferences for some users, overriding random ones.
    pub planted: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 40,
            posts_per_user: 25,
            categories: 4,
            seed: 42,
            friend_prob: 0.3,
            events_per_user: 60,
            core_fraction: 0.5,
            negative_fraction: 0.25,
            spam_fraction: 0.04,
            planted: BTreeMap::new(),
        }
    }
}

impl SynthConfig {
    pub fn category_set(&self) -> Result<CategorySet, SynthError> {
        if self.categories == 0 || self.categories > CORES.len() {
            return Err(SynthError::InvalidConfig(format!(
                "categories must be between 1 and {}, got {}",
                CORES.len(),
                self.categories
            )));
        }
        Ok(CategorySet::new(CORES[..self.categories].iter().map(|(n, _)| *n)).expect("distinct names"))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.category_set()?;
        if self.users == 0 || self.posts_per_user == 0 {
            return Err(SynthError::InvalidConfig("users and posts-per-user must be positive".into()));
        }
        for (name, p) in [
            ("friend_prob", self.friend_prob),
            ("core_fraction", self.core_fraction),
            ("negative_fraction", self.negative_fraction),
            ("spam_fraction", self.spam_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidConfig(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        let cats = self.category_set()?;
        for (user, prefs) in &self.planted {
            let idx: usize = user.strip_prefix('u').and_then(|n| n.parse().ok()).unwrap_or(0);
            if idx == 0 || idx > self.users {
                return Err(SynthError::InvalidConfig(format!("planted user {user:?} is not generated")));
            }
            if let Some(c) = prefs.keys().find(|c| !cats.contains(c)) {
                return Err(SynthError::InvalidConfig(format!("planted category {c:?} is not generated")));
            }
        }
        Ok(())
    }
}

/// Parses `user:cat=weight,cat=weight` into a normalized preference.
pub fn parse_plant(spec: &str) -> Result<(String, BTreeMap<String, f64>), SynthError> {
    let err = |m: &str| SynthError::InvalidPlant { spec: spec.to_string(), message: m.to_string() };
    let (user, rest) = spec.split_once(':').ok_or_else(|| err("expected user:category=weight,..."))?;
    if user.is_empty() {
        return Err(err("empty user id"));
    }
    let mut prefs = BTreeMap::new();
    for part in rest.split(',') {
        let (cat, w) = part.split_once('=').ok_or_else(|| err("expected category=weight"))?;
        let w: f64 = w.trim().parse().map_err(|_| err("weight is not a number"))?;
        if !(w.is_finite() && w >= 0.0) {
            return Err(err("weights must be finite and nonnegative"));
        }
        prefs.insert(cat.trim().to_string(), w);
    }
    let total: f64 = prefs.values().sum();
    if total <= 0.0 {
        return Err(err("weights sum to zero"));
    }
    prefs.values_mut().for_each(|w| *w /= total);
    Ok((user.to_string(), prefs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub categories: CategorySet,
    pub users: Vec<UserRecord>,
    pub posts: Vec<Post>,
    pub interactions: Vec<InteractionEvent>,
    /// The preference each user's interactions were drawn from.
    pub preferences: BTreeMap<String, BTreeMap<String, f64>>,
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn sentence(rng: &mut ChaCha8Rng, core: &[&str], cfg: &SynthConfig, tone: &[&str], spam: bool) -> String {
    let len = rng.gen_range(6..=10);
    let mut words: Vec<&str> = Vec::with_capacity(len + 1);
    for _ in 0..len {
        let r: f64 = rng.gen();
        let w = if spam && r < 0.6 {
            pick(rng, GIBBERISH)
        } else if r < cfg.core_fraction {
            pick(rng, core)
        } else {
            pick(rng, FILLER)
        };
        words.push(w);
    }
    let at = rng.gen_range(0..=words.len());
    words.insert(at, pick(rng, tone));
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        s = first.to_uppercase() + &s[1..];
    }
    s.push('.');
    s
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Generates a corpus; identical configs yield identical corpora.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let categories = cfg.category_set()?;
    let k = categories.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let user_ids: Vec<String> = (1..=cfg.users).map(|i| format!("u{i}")).collect();

    let mut friends: Vec<BTreeSet<String>> = vec![BTreeSet::new(); cfg.users];
    for i in 0..cfg.users {
        for j in i + 1..cfg.users {
            if rng.gen_bool(cfg.friend_prob) {
                friends[i].insert(user_ids[j].clone());
                friends[j].insert(user_ids[i].clone());
            }
        }
    }

    let mut preferences = BTreeMap::new();
    let mut pref_vecs = Vec::with_capacity(cfg.users);
    for uid in &user_ids {
        let v: Vec<f64> = match cfg.planted.get(uid) {
            Some(p) => categories.names().iter().map(|c| p.get(c).copied().unwrap_or(0.0)).collect(),
            None => {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>().powi(3)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|w| if total > 0.0 { w / total } else { 1.0 / k as f64 }).collect()
            }
        };
        preferences.insert(uid.clone(), categories.names().iter().cloned().zip(v.iter().copied()).collect());
        pref_vecs.push(v);
    }

    // Posts spread over two days, authors round-robin so every user posts.
    let total_posts = cfg.users * cfg.posts_per_user;
    let span = 48 * HOUR;
    let mut posts = Vec::with_capacity(total_posts);
    for n in 0..total_posts {
        let author = n % cfg.users;
        let label = rng.gen_range(0..k);
        let core = CORES[label].1;
        let spam = rng.gen_bool(cfg.spam_fraction);
        let tone = if rng.gen_bool(cfg.negative_fraction) { NEGATIVE } else { POSITIVE };
        let n_sent = rng.gen_range(1..=2);
        let text = (0..n_sent).map(|_| sentence(&mut rng, core, cfg, tone, spam)).collect::<Vec<_>>().join(" ");
        posts.push(Post {
            post_id: format!("p{}", n + 1),
            author_id: user_ids[author].clone(),
            text,
            created_at: BASE_TIME + (n as i64 * span) / total_posts as i64,
            counts: EngagementCounts::default(),
            label: Some(categories.name(label).unwrap().to_string()),
            derived: None,
        });
    }

    let mut by_author_cat: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, p) in posts.iter().enumerate() {
        let label = categories.index_of(p.label.as_deref().unwrap()).unwrap();
        by_author_cat.entry((i % cfg.users, label)).or_default().push(i);
    }

    let mut interactions = Vec::new();
    for u in 0..cfg.users {
        let friend_idx: Vec<usize> = friends[u]
            .iter()
            .map(|f| user_ids.iter().position(|x| x == f).unwrap())
            .collect();
        // Friends' posts by category, falling back to everyone else's when there are none.
        let mut pool: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (c, bucket) in pool.iter_mut().enumerate() {
            for &f in &friend_idx {
                bucket.extend(by_author_cat.get(&(f, c)).into_iter().flatten());
            }
            if bucket.is_empty() {
                for a in (0..cfg.users).filter(|&a| a != u) {
                    bucket.extend(by_author_cat.get(&(a, c)).into_iter().flatten());
                }
            }
            bucket.sort_unstable();
        }
        let weights: Vec<f64> =
            (0..k).map(|c| if pool[c].is_empty() { 0.0 } else { pref_vecs[u][c] }).collect();
        if weights.iter().all(|w| *w == 0.0) {
            continue;
        }
        for _ in 0..cfg.events_per_user {
            let c = sample_index(&mut rng, &weights);
            let post = &posts[*pool[c].choose(&mut rng).unwrap()];
            let r: f64 = rng.gen();
            let kind = if r < 0.5 {
                InteractionKind::Like
            } else if r < 0.7 {
                InteractionKind::Comment
            } else if r < 0.8 {
                InteractionKind::Share
            } else {
                InteractionKind::View
            };
            let comment_text = (kind == InteractionKind::Comment)
                .then(|| sentence(&mut rng, CORES[c].1, cfg, POSITIVE, false));
            interactions.push(InteractionEvent {
                user_id: user_ids[u].clone(),
                post_id: post.post_id.clone(),
                kind,
                timestamp: post.created_at + rng.gen_range(60..=36 * HOUR),
                comment_text,
            });
        }
    }
    interactions.sort_by(|a, b| (a.timestamp, &a.user_id, &a.post_id).cmp(&(b.timestamp, &b.user_id, &b.post_id)));

    let users = user_ids
        .iter()
        .zip(friends)
        .map(|(id, friends)| UserRecord { user_id: id.clone(), friends })
        .collect();
    Ok(SynthCorpus { categories, users, posts, interactions, preferences })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub const USERS_FILE: &str = "users.jsonl";
pub const POSTS_FILE: &str = "posts.jsonl";
pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const PREFERENCES_FILE: &str = "preferences.json";

/// Writes the corpus as JSONL files (plus the planted preferences) into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(USERS_FILE), &corpus.users)?;
    write_jsonl(&dir.join(POSTS_FILE), &corpus.posts)?;
    write_jsonl(&dir.join(INTERACTIONS_FILE), &corpus.interactions)?;
    let mut prefs = serde_json::to_vec_pretty(&corpus.preferences)?;
    prefs.push(b'\n');
    fs::write(dir.join(PREFERENCES_FILE), prefs)
}
