//! Feed construction for one viewing user.
//!
//! Candidate posts from the user's friends are dropped as spam (category
//! readability 0) or by the sentiment/trend predicate, split into persona
//! categories and demoted "general" posts, and ranked by
//! `persona_mass * friend_affinity * importance * (0.5 + 0.5 * readability)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::persona::PersonaProfile;
use crate::types::{EngagementCounts, InteractionEvent, Post, Timestamp};

/// Multiplier applied to posts outside the user's persona categories.
pub const GENERAL_POST_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriendRank {
    pub user_id: String,
    pub friend_id: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankWeights {
    /// Friend affinity weights.
    pub friend_likes: f64,
    pub friend_comments: f64,
    pub friend_shares: f64,
    /// Post importance weights.
    pub post_comments: f64,
    pub post_likes: f64,
    pub post_shares: f64,
    pub post_recency: f64,
    /// Added to a post's age (seconds) before taking the reciprocal.
    pub recency_epsilon_secs: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        Self {
            friend_likes: 1.0,
            friend_comments: 2.0,
            friend_shares: 3.0,
            post_comments: 2.0,
            post_likes: 1.0,
            post_shares: 3.0,
            post_recency: 1.0,
            recency_epsilon_secs: 3600.0,
        }
    }
}

impl RankWeights {
    pub fn validate(&self) -> Result<(), String> {
        let ws = [
            self.friend_likes,
            self.friend_comments,
            self.friend_shares,
            self.post_comments,
            self.post_likes,
            self.post_shares,
            self.post_recency,
        ];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err("rank weights must be finite and nonnegative".into());
        }
        if !(self.recency_epsilon_secs > 0.0 && self.recency_epsilon_secs.is_finite()) {
            return Err("recency_epsilon_secs must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    /// Trend threshold; a post passes only if its trend score is strictly above it.
    pub tau: f64,
    pub exclude_negative: bool,
    pub category_whitelist: Option<BTreeSet<String>>,
    pub exclude_spam: bool,
    /// Grade level that maps to readability 0.
    pub max_grade: f64,
    pub trend_window_secs: i64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            tau: 0.0,
            exclude_negative: true,
            category_whitelist: None,
            exclude_spam: true,
            max_grade: 18.0,
            trend_window_secs: 24 * 3600,
        }
    }
}

impl FilterSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_grade > 0.0 && self.max_grade.is_finite()) {
            return Err("max_grade must be positive".into());
        }
        if self.trend_window_secs <= 0 {
            return Err("trend_window_secs must be positive".into());
        }
        if !self.tau.is_finite() {
            return Err("tau must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedItem {
    pub rank: usize,
    pub post_id: String,
    pub author_id: String,
    pub category: String,
    pub importance: f64,
    pub friend_delta: f64,
    pub readability: f64,
    pub sentiment: f64,
    pub trend: f64,
    pub filter_pass: bool,
    pub general: bool,
    pub final_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Feed {
    pub items: Vec<FeedItem>,
    pub warnings: Vec<String>,
}

/// A friend's post with its text-derived scores already computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub post_id: String,
    pub author_id: String,
    pub created_at: Timestamp,
    pub counts: EngagementCounts,
    pub category: String,
    pub sentiment: f64,
    pub rho: u8,
    pub fk_grade: f64,
    pub trend: f64,
}

/// Affinity of `user_id` toward each friend whose posts they liked, commented on or shared.
pub fn friend_rank(
    user_id: &str,
    interactions: &[InteractionEvent],
    posts: &BTreeMap<String, Post>,
    friends: &BTreeSet<String>,
    w: &RankWeights,
) -> Vec<FriendRank> {
    let mut per_friend: BTreeMap<&str, EngagementCounts> = BTreeMap::new();
    for ev in interactions.iter().filter(|e| e.user_id == user_id && e.kind.is_engagement()) {
        let Some(post) = posts.get(&ev.post_id) else { continue };
        if !friends.contains(&post.author_id) {
            continue;
        }
        per_friend.entry(post.author_id.as_str()).or_default().record(ev.kind);
    }
    per_friend
        .into_iter()
        .map(|(friend, c)| FriendRank {
            user_id: user_id.to_string(),
            friend_id: friend.to_string(),
            delta: w.friend_likes * c.likes as f64
                + w.friend_comments * c.comments as f64
                + w.friend_shares * c.shares as f64,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TextStats {
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
}

/// Vowel-group syllable count with a silent trailing "e" rule, at least 1.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word.to_lowercase().chars().collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0usize;
    let mut prev_vowel = false;
    for &c in &w {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = w.len();
    if n >= 1 && w[n - 1] == 'e' {
        let consonant_le = n >= 3 && w[n - 2] == 'l' && !is_vowel(w[n - 3]) && w[n - 3].is_alphabetic();
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    groups.max(1)
}

pub fn text_stats(text: &str) -> TextStats {
    let words: Vec<&str> = text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    let sentences = text
        .split(['.', '!', '?'])
        .filter(|seg| seg.chars().any(char::is_alphanumeric))
        .count();
    TextStats {
        words: words.len(),
        sentences: if words.is_empty() { 0 } else { sentences.max(1) },
        syllables: words.iter().map(|w| count_syllables(w)).sum(),
    }
}

/// Flesch-Kincaid grade level; 0 for text without words.
pub fn flesch_kincaid_grade(text: &str) -> f64 {
    let s = text_stats(text);
    if s.words == 0 {
        return 0.0;
    }
    0.39 * (s.words as f64 / s.sentences as f64) + 11.8 * (s.syllables as f64 / s.words as f64) - 15.59
}

/// Maps a grade to `[0, 1]`, higher meaning easier to read.
pub fn readability_from_grade(grade: f64, max_grade: f64) -> f64 {
    (1.0 - grade.max(0.0) / max_grade).clamp(0.0, 1.0)
}

pub fn readability_r(text: &str, max_grade: f64) -> f64 {
    readability_from_grade(flesch_kincaid_grade(text), max_grade)
}

/// Recent-window activity over prior-window activity (plus one).
pub fn trend_score(post_id: &str, interactions: &[InteractionEvent], now: Timestamp, window_secs: i64) -> f64 {
    let (mut recent, mut prior) = (0u64, 0u64);
    for ev in interactions.iter().filter(|e| e.post_id == post_id) {
        let t = ev.timestamp;
        if t <= now && t >= now - window_secs {
            recent += 1;
        } else if t < now - window_secs && t >= now - 2 * window_secs {
            prior += 1;
        }
    }
    recent as f64 / (prior as f64 + 1.0)
}

/// Positive sentiment (above neutral 0.5) and trend strictly above `tau`.
pub fn filter_pass(sentiment: f64, trend: f64, settings: &FilterSettings) -> bool {
    (!settings.exclude_negative || sentiment > 0.5) && trend > settings.tau
}

pub fn post_importance(counts: &EngagementCounts, age_secs: f64, w: &RankWeights) -> f64 {
    w.post_comments * counts.comments as f64
        + w.post_likes * counts.likes as f64
        + w.post_shares * counts.shares as f64
        + w.post_recency / (age_secs.max(0.0) + w.recency_epsilon_secs)
}

/// Ranks `candidates` for `user_id`. Items failing the filters are dropped.
pub fn build_feed(
    user_id: &str,
    candidates: &[Candidate],
    profile: &PersonaProfile,
    ranks: &[FriendRank],
    settings: &FilterSettings,
    w: &RankWeights,
    now: Timestamp,
) -> Feed {
    let deltas: BTreeMap<&str, f64> = ranks
        .iter()
        .filter(|r| r.user_id == user_id)
        .map(|r| (r.friend_id.as_str(), r.delta))
        .collect();
    let k = profile.distribution.len().max(1) as f64;
    let mut warned: BTreeSet<&str> = BTreeSet::new();
    let mut feed = Feed::default();

    for c in candidates {
        if settings.exclude_spam && c.rho == 0 {
            continue;
        }
        if !filter_pass(c.sentiment, c.trend, settings) {
            continue;
        }
        let mass = profile.distribution.get(&c.category).copied().unwrap_or(0.0);
        let whitelisted = settings
            .category_whitelist
            .as_ref()
            .is_some_and(|wl| wl.contains(&c.category));
        let general = !(mass >= 1.0 / k - 1e-12 || whitelisted);
        let delta = match deltas.get(c.author_id.as_str()) {
            Some(&d) => d,
            None => {
                if warned.insert(c.author_id.as_str()) {
                    feed.warnings.push(format!("no affinity for author {}; using 0", c.author_id));
                }
                0.0
            }
        };
        let importance = post_importance(&c.counts, (now - c.created_at) as f64, w);
        let readability = readability_from_grade(c.fk_grade, settings.max_grade);
        let mut score = mass * delta * importance * (0.5 + 0.5 * readability);
        if general {
            score *= GENERAL_POST_FACTOR;
        }
        feed.items.push(FeedItem {
            rank: 0,
            post_id: c.post_id.clone(),
            author_id: c.author_id.clone(),
            category: c.category.clone(),
            importance,
            friend_delta: delta,
            readability,
            sentiment: c.sentiment,
            trend: c.trend,
            filter_pass: true,
            general,
            final_score: score,
        });
    }
    feed.items.sort_by(|a, b| {
        b.final_score
            .total_cmp(&a.final_score)
            .then_with(|| a.post_id.cmp(&b.post_id))
    });
    for (i, item) in feed.items.iter_mut().enumerate() {
        item.rank = i + 1;
    }
    feed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::InteractionKind;

    fn ev(user: &str, post: &str, kind: InteractionKind, t: Timestamp) -> InteractionEvent {
        InteractionEvent { user_id: user.into(), post_id: post.into(), kind, timestamp: t, comment_text: None }
    }

    fn post(id: &str, author: &str) -> Post {
        Post {
            post_id: id.into(),
            author_id: author.into(),
            text: "x".into(),
            created_at: 0,
            counts: EngagementCounts::default(),
            label: None,
            derived: None,
        }
    }

    #[test]
    fn syllable_rules() {
        assert_eq!(count_syllables("the"), 1);
        assert_eq!(count_syllables("cat"), 1);
        assert_eq!(count_syllables("table"), 2);
        assert_eq!(count_syllables("make"), 1);
        assert_eq!(count_syllables("rhythm"), 1);
        assert_eq!(count_syllables("beautiful"), 3);
        assert_eq!(count_syllables("organization"), 5);
        assert_eq!(count_syllables("ale"), 1);
    }

    #[test]
    fn fk_grade_cat_sat() {
        let g = flesch_kincaid_grade("The cat sat.");
        assert!((g - (0.39 * 3.0 + 11.8 - 15.59)).abs() < 1e-12);
        assert!((g + 2.62).abs() < 0.01);
        assert_eq!(flesch_kincaid_grade(""), 0.0);
        assert_eq!(flesch_kincaid_grade(" ... !"), 0.0);
    }

    #[test]
    fn fk_grade_repetition_invariant() {
        let t = "The committee postponed the vote. Everyone went home early!";
        let doubled = format!("{t} {t}");
        assert!((flesch_kincaid_grade(t) - flesch_kincaid_grade(&doubled)).abs() < 1e-12);
    }

    #[test]
    fn unterminated_text_is_one_sentence() {
        assert_eq!(text_stats("no punctuation here").sentences, 1);
        assert_eq!(text_stats("One. Two! Three?").sentences, 3);
        assert_eq!(text_stats("Wait... what?!").sentences, 2);
    }

    #[test]
    fn readability_endpoints() {
        assert_eq!(readability_from_grade(0.0, 18.0), 1.0);
        assert_eq!(readability_from_grade(18.0, 18.0), 0.0);
        assert_eq!(readability_from_grade(9.0, 18.0), 0.5);
        assert_eq!(readability_from_grade(-3.0, 18.0), 1.0);
        assert_eq!(readability_from_grade(40.0, 18.0), 0.0);
    }

    #[test]
    fn friend_rank_formula() {
        let mut posts = BTreeMap::new();
        posts.insert("p1".to_string(), post("p1", "f"));
        posts.insert("p2".to_string(), post("p2", "f"));
        posts.insert("p3".to_string(), post("p3", "stranger"));
        let friends: BTreeSet<String> = ["f".to_string()].into();
        let events = vec![
            ev("u", "p1", InteractionKind::Like, 1),
            ev("u", "p2", InteractionKind::Like, 2),
            ev("u", "p1", InteractionKind::Comment, 3),
            ev("u", "p2", InteractionKind::Share, 4),
            ev("u", "p2", InteractionKind::View, 5),
            ev("u", "p3", InteractionKind::Like, 6),
            ev("other", "p1", InteractionKind::Like, 7),
        ];
        let ranks = friend_rank("u", &events, &posts, &friends, &RankWeights::default());
        assert_eq!(ranks.len(), 1);
        assert_eq!(ranks[0].friend_id, "f");
        assert_eq!(ranks[0].delta, 7.0);
        assert!(friend_rank("u", &[], &posts, &friends, &RankWeights::default()).is_empty());
        let mut rev = events.clone();
        rev.reverse();
        assert_eq!(friend_rank("u", &rev, &posts, &friends, &RankWeights::default()), ranks);
    }

    #[test]
    fn trend_windows() {
        let w = 100;
        let now = 1000;
        assert_eq!(trend_score("p", &[], now, w), 0.0);
        let mut events: Vec<_> = (0..6).map(|i| ev("u", "p", InteractionKind::Like, 950 + i)).collect();
        events.push(ev("u", "p", InteractionKind::Like, 850));
        events.push(ev("u", "p", InteractionKind::Comment, 801));
        events.push(ev("u", "p", InteractionKind::Like, 700)); // outside both windows
        events.push(ev("u", "q", InteractionKind::Like, 990)); // other post
        assert_eq!(trend_score("p", &events, now, w), 2.0);
        let equal: Vec<_> = [950, 960, 850, 860].iter().map(|&t| ev("u", "p", InteractionKind::Like, t)).collect();
        assert!((trend_score("p", &equal, now, w) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn filter_boundaries() {
        let s = FilterSettings::default();
        assert!(!filter_pass(0.5, 10.0, &s));
        assert!(!filter_pass(0.8, s.tau, &s));
        assert!(filter_pass(0.8, s.tau + 0.1, &s));
        let lenient = FilterSettings { exclude_negative: false, ..FilterSettings::default() };
        assert!(filter_pass(0.1, 0.5, &lenient));
    }

    #[test]
    fn importance_example() {
        let w = RankWeights::default();
        let p = post_importance(&EngagementCounts::new(5, 2, 3), 0.0, &w);
        assert!((p - (6.0 + 5.0 + 6.0 + 1.0 / 3600.0)).abs() < 1e-12);
        assert!((p - 17.00028).abs() < 1e-5);
        let old = post_importance(&EngagementCounts::default(), 1e300, &w);
        assert!(old < 1e-290);
        assert!(post_importance(&EngagementCounts::default(), 10.0, &w) > post_importance(&EngagementCounts::default(), 11.0, &w));
    }

    #[test]
    fn empty_feed() {
        let profile = PersonaProfile::uniform("u", &crate::model::CategorySet::default(), 0);
        let feed = build_feed("u", &[], &profile, &[], &FilterSettings::default(), &RankWeights::default(), 0);
        assert!(feed.items.is_empty());
    }
}
