//! Per-category user persona.
//!
//! For every category the user engaged with, the persona score is
//! `w_engagement * E + w_sentiment * S + w_readability * rho` where `E` is the
//! normalized weighted engagement count, `S` the mean sentiment of the posts
//! and `rho` their rounded mean category readability (0, 1 or 2). The stored
//! persona is the normalized distribution of those scores.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filtering;
use crate::model::{self, CategorySet, ModelError, ModelParams};
use crate::text;
use crate::types::{EngagementCounts, InteractionEvent, Post, PostDerived, Timestamp};

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");
const BUNDLED_COMMON_WORDS: &str = include_str!("../data/common_words.txt");

#[derive(Debug, Error, PartialEq)]
pub enum PersonaError {
    #[error("invalid persona weights: {0}")]
    InvalidWeights(String),
    #[error("persona scores must be nonnegative (category {0})")]
    NegativeScore(String),
    #[error("interactions reference unknown posts: {0:?}")]
    DanglingPosts(Vec<String>),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaWeights {
    pub w_likes: f64,
    pub w_shares: f64,
    pub w_comments: f64,
    /// Engagement total that maps to `E = 1`.
    pub max_engagement: f64,
    pub w_engagement: f64,
    pub w_sentiment: f64,
    pub w_readability: f64,
}

impl Default for PersonaWeights {
    fn default() -> Self {
        Self {
            w_likes: 1.0,
            w_shares: 3.0,
            w_comments: 2.0,
            max_engagement: 100.0,
            w_engagement: 0.5,
            w_sentiment: 0.3,
            w_readability: 0.2,
        }
    }
}

impl PersonaWeights {
    pub fn validate(&self) -> Result<(), PersonaError> {
        let bad = |m: &str| Err(PersonaError::InvalidWeights(m.to_string()));
        let all = [
            self.w_likes,
            self.w_shares,
            self.w_comments,
            self.w_engagement,
            self.w_sentiment,
            self.w_readability,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and nonnegative");
        }
        if !(self.max_engagement > 0.0 && self.max_engagement.is_finite()) {
            return bad("max_engagement must be positive");
        }
        if (self.w_engagement + self.w_sentiment + self.w_readability - 1.0).abs() > 1e-9 {
            return bad("w_engagement + w_sentiment + w_readability must equal 1");
        }
        Ok(())
    }
}

/// Token polarities in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentLexicon {
    polarity: HashMap<String, f64>,
}

impl SentimentLexicon {
    /// Parses `token<TAB>polarity` lines. Blank lines and `#` comments are skipped.
    pub fn parse(src: &str) -> Result<Self, PersonaError> {
        let mut polarity = HashMap::new();
        for (i, line) in src.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| PersonaError::Lexicon { line: i + 1, message };
            let (tok, val) = line.split_once('\t').ok_or_else(|| err("expected token<TAB>polarity".into()))?;
            let v: f64 = val.trim().parse().map_err(|_| err(format!("bad polarity {val:?}")))?;
            if !(-1.0..=1.0).contains(&v) {
                return Err(err(format!("polarity {v} outside [-1, 1]")));
            }
            polarity.insert(tok.trim().to_lowercase(), v);
        }
        Ok(Self { polarity })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self {
            polarity: pairs.into_iter().map(|(t, v)| (t.into(), v.clamp(-1.0, 1.0))).collect(),
        }
    }

    pub fn get(&self, token: &str) -> Option<f64> {
        self.polarity.get(token).copied()
    }

    /// Same tokens with every polarity negated.
    pub fn inverted(&self) -> Self {
        Self { polarity: self.polarity.iter().map(|(k, v)| (k.clone(), -v)).collect() }
    }
}

impl Default for SentimentLexicon {
    fn default() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon parses")
    }
}

/// Dictionary of common words used to detect unreadable text.
#[derive(Debug, Clone, PartialEq)]
pub struct WordList {
    words: HashSet<String>,
}

impl WordList {
    pub fn parse(src: &str) -> Self {
        Self {
            words: src
                .lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

impl Default for WordList {
    fn default() -> Self {
        Self::parse(BUNDLED_COMMON_WORDS)
    }
}

/// Thresholds for the 0/1/2 category readability label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadabilityRules {
    /// Grades strictly above this mark professional text.
    pub professional_grade: f64,
    /// Texts with a smaller dictionary-word ratio are unreadable.
    pub min_dictionary_ratio: f64,
    /// Unterminated texts longer than this many tokens are unreadable.
    pub max_unterminated_tokens: usize,
}

impl Default for ReadabilityRules {
    fn default() -> Self {
        Self { professional_grade: 12.0, min_dictionary_ratio: 0.5, max_unterminated_tokens: 40 }
    }
}

/// Lexicon, word list and readability thresholds bundled together.
#[derive(Debug, Clone, Default)]
pub struct TextResources {
    pub lexicon: SentimentLexicon,
    pub common_words: WordList,
    pub rules: ReadabilityRules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub user_id: String,
    pub beta: BTreeMap<String, f64>,
    pub distribution: BTreeMap<String, f64>,
    pub last_updated: Timestamp,
}

impl PersonaProfile {
    /// All-zero scores with the uniform fallback distribution.
    pub fn uniform(user_id: &str, categories: &CategorySet, now: Timestamp) -> Self {
        let beta: BTreeMap<String, f64> = categories.names().iter().map(|c| (c.clone(), 0.0)).collect();
        let distribution = persona_distribution(&beta).expect("zeros are nonnegative");
        Self { user_id: user_id.to_string(), beta, distribution, last_updated: now }
    }

    /// Category with the largest mass, ties to the first in `categories` order.
    pub fn top_category<'a>(&self, categories: &'a CategorySet) -> &'a str {
        let masses: Vec<f64> = categories
            .names()
            .iter()
            .map(|c| self.distribution.get(c).copied().unwrap_or(0.0))
            .collect();
        categories.name(model::argmax(&masses)).unwrap()
    }
}

/// Normalized weighted engagement, clamped to `[0, 1]`.
pub fn engagement_score(counts: &EngagementCounts, w: &PersonaWeights) -> f64 {
    let raw = w.w_likes * counts.likes as f64 + w.w_shares * counts.shares as f64 + w.w_comments * counts.comments as f64;
    (raw / w.max_engagement).clamp(0.0, 1.0)
}

/// Mean lexicon polarity mapped onto `[0, 1]`; 0.5 when no token is in the lexicon.
pub fn sentiment_score(text: &str, lexicon: &SentimentLexicon) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for tok in text::tokens(text) {
        if let Some(p) = lexicon.get(&tok) {
            sum += p;
            n += 1;
        }
    }
    if n == 0 {
        return 0.5;
    }
    ((sum / n as f64 + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Fraction of tokens found in the word list. Numbers count as words.
pub fn dictionary_ratio(text: &str, words: &WordList) -> f64 {
    let (mut known, mut n) = (0usize, 0usize);
    for tok in text::tokens(text) {
        n += 1;
        if words.contains(&tok) || tok.chars().all(|c| c.is_ascii_digit()) {
            known += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        known as f64 / n as f64
    }
}

/// 0 = unreadable or spam, 1 = plain language, 2 = professional.
pub fn category_readability(post_text: &str, res: &TextResources) -> u8 {
    let n_tokens = text::tokens(post_text).count();
    if n_tokens == 0 {
        return 0;
    }
    let terminated = post_text.contains(['.', '!', '?']);
    if !terminated && n_tokens > res.rules.max_unterminated_tokens {
        return 0;
    }
    let d = dictionary_ratio(post_text, &res.common_words);
    if d < res.rules.min_dictionary_ratio {
        return 0;
    }
    if filtering::flesch_kincaid_grade(post_text) > res.rules.professional_grade {
        2
    } else {
        1
    }
}

/// Weighted sum of engagement, sentiment and the raw 0/1/2 readability label.
pub fn persona_score(engagement: f64, sentiment: f64, rho: u8, w: &PersonaWeights) -> f64 {
    w.w_engagement * engagement + w.w_sentiment * sentiment + w.w_readability * rho as f64
}

/// Normalizes scores to sum to 1; all-zero scores give the uniform distribution.
pub fn persona_distribution(beta: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>, PersonaError> {
    if let Some((k, _)) = beta.iter().find(|(_, &b)| !(b >= 0.0 && b.is_finite())) {
        return Err(PersonaError::NegativeScore(k.clone()));
    }
    let total: f64 = beta.values().sum();
    if total == 0.0 {
        let u = 1.0 / beta.len() as f64;
        return Ok(beta.keys().map(|k| (k.clone(), u)).collect());
    }
    Ok(beta.iter().map(|(k, &b)| (k.clone(), b / total)).collect())
}

/// Text-level scores of one post under a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PostAnalysis {
    pub category_distribution: Vec<f64>,
    pub category: usize,
    pub sentiment: f64,
    pub fk_grade: f64,
    pub rho: u8,
}

impl PostAnalysis {
    pub fn to_derived(&self, categories: &CategorySet, model_version: u64) -> PostDerived {
        PostDerived {
            category: categories.name(self.category).unwrap_or_default().to_string(),
            category_distribution: categories
                .names()
                .iter()
                .cloned()
                .zip(self.category_distribution.iter().copied())
                .collect(),
            sentiment: self.sentiment,
            fk_grade: self.fk_grade,
            rho: self.rho,
            model_version,
        }
    }
}

pub fn analyze_text(text: &str, model: &ModelParams, res: &TextResources) -> Result<PostAnalysis, ModelError> {
    let features = model::featurize(text, model.feature_dim())?;
    let dist = model::predict_category(model, &features)?;
    Ok(PostAnalysis {
        category: model::argmax(&dist),
        category_distribution: dist,
        sentiment: sentiment_score(text, &res.lexicon),
        fk_grade: filtering::flesch_kincaid_grade(text),
        rho: category_readability(text, res),
    })
}

/// Rounds a mean readability label to the nearest of 0, 1, 2 (halves round up).
pub fn round_rho(mean: f64) -> u8 {
    (mean + 0.5).floor().clamp(0.0, 2.0) as u8
}

/// Builds a persona from the user's like/share/comment history.
///
/// Posts are grouped by predicted category. Per category: `E` from the summed
/// counts, `S` the mean sentiment over distinct posts, `rho` the rounded mean
/// readability label. Categories without engagement score 0.
#[allow(clippy::too_many_arguments)]
pub fn build_persona(
    user_id: &str,
    interactions: &[InteractionEvent],
    posts: &BTreeMap<String, Post>,
    w: &PersonaWeights,
    model: &ModelParams,
    categories: &CategorySet,
    res: &TextResources,
    now: Timestamp,
) -> Result<PersonaProfile, PersonaError> {
    w.validate()?;
    if model.num_categories() != categories.len() {
        return Err(ModelError::DimensionMismatch {
            expected: format!("{} categories", categories.len()),
            got: format!("{} model categories", model.num_categories()),
        }
        .into());
    }
    let own: Vec<&InteractionEvent> = interactions
        .iter()
        .filter(|e| e.user_id == user_id && e.kind.is_engagement())
        .collect();
    let dangling: BTreeSet<String> =
        own.iter().filter(|e| !posts.contains_key(&e.post_id)).map(|e| e.post_id.clone()).collect();
    if !dangling.is_empty() {
        return Err(PersonaError::DanglingPosts(dangling.into_iter().collect()));
    }

    struct Group {
        counts: EngagementCounts,
        posts: BTreeSet<String>,
    }
    let mut analyses: BTreeMap<&str, PostAnalysis> = BTreeMap::new();
    let mut groups: BTreeMap<usize, Group> = BTreeMap::new();
    for ev in own {
        if !analyses.contains_key(ev.post_id.as_str()) {
            let a = analyze_text(&posts[&ev.post_id].text, model, res)?;
            analyses.insert(ev.post_id.as_str(), a);
        }
        let cat = analyses[ev.post_id.as_str()].category;
        let g = groups.entry(cat).or_insert_with(|| Group { counts: EngagementCounts::default(), posts: BTreeSet::new() });
        g.counts.record(ev.kind);
        g.posts.insert(ev.post_id.clone());
    }

    let mut beta: BTreeMap<String, f64> = categories.names().iter().map(|c| (c.clone(), 0.0)).collect();
    for (cat, g) in &groups {
        let n = g.posts.len() as f64;
        let e = engagement_score(&g.counts, w);
        let s = g.posts.iter().map(|p| analyses[p.as_str()].sentiment).sum::<f64>() / n;
        let rho = round_rho(g.posts.iter().map(|p| analyses[p.as_str()].rho as f64).sum::<f64>() / n);
        beta.insert(categories.name(*cat).unwrap().to_string(), persona_score(e, s, rho, w));
    }
    let distribution = persona_distribution(&beta)?;
    Ok(PersonaProfile { user_id: user_id.to_string(), beta, distribution, last_updated: now })
}
