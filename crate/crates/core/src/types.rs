//! Records shared by the scoring modules and the store.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Epoch seconds, UTC.
pub type Timestamp = i64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementCounts {
    pub likes: u64,
    pub shares: u64,
    pub comments: u64,
}

impl EngagementCounts {
    pub fn new(likes: u64, shares: u64, comments: u64) -> Self {
        Self { likes, shares, comments }
    }

    /// Adds one event of `kind`; views and dislikes are not counted.
    pub fn record(&mut self, kind: InteractionKind) {
        match kind {
            InteractionKind::Like => self.likes += 1,
            InteractionKind::Share => self.shares += 1,
            InteractionKind::Comment => self.comments += 1,
            InteractionKind::View | InteractionKind::Dislike => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Like,
    Share,
    Comment,
    View,
    Dislike,
}

impl InteractionKind {
    /// Whether the event counts as engagement (like, share or comment).
    pub fn is_engagement(self) -> bool {
        matches!(self, InteractionKind::Like | InteractionKind::Share | InteractionKind::Comment)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    pub user_id: String,
    pub post_id: String,
    pub kind: InteractionKind,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default)]
    pub friends: BTreeSet<String>,
}

/// Scores derived from a post's text under one model version. A cache only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostDerived {
    pub category: String,
    pub category_distribution: BTreeMap<String, f64>,
    pub sentiment: f64,
    pub fk_grade: f64,
    pub rho: u8,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub author_id: String,
    pub text: String,
    pub created_at: Timestamp,
    #[serde(default)]
    pub counts: EngagementCounts,
    /// Ground-truth category, present on labeled training corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<PostDerived>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Like,
    Dislike,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub user_id: String,
    pub post_id: String,
    pub verdict: Verdict,
    pub timestamp: Timestamp,
}
