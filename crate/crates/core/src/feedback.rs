//! Like/dislike feedback applied to a stored persona.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{persona_distribution, PersonaError, PersonaProfile};
use crate::types::{Timestamp, Verdict};

#[derive(Debug, Error, PartialEq)]
pub enum FeedbackError {
    #[error("category {0:?} is not part of the persona")]
    UnknownCategory(String),
    #[error("invalid feedback policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Persona(#[from] PersonaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackPolicy {
    /// Multiplicative step, in (0, 1).
    pub eta: f64,
    /// Added on like and used as the lower bound on dislike.
    pub floor: f64,
}

impl Default for FeedbackPolicy {
    fn default() -> Self {
        Self { eta: 0.1, floor: 1e-6 }
    }
}

impl FeedbackPolicy {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(FeedbackError::InvalidPolicy("eta must be in (0, 1)".into()));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(FeedbackError::InvalidPolicy("floor must be positive".into()));
        }
        Ok(())
    }
}

/// Scales the category's score up (like) or down (dislike) and renormalizes.
///
/// Like: `b * (1 + eta) + floor`. Dislike: `max(b * (1 - eta), floor)`, except
/// that a score already at or below the floor is left unchanged.
pub fn apply_feedback(
    profile: &PersonaProfile,
    category: &str,
    verdict: Verdict,
    policy: &FeedbackPolicy,
    at: Timestamp,
) -> Result<PersonaProfile, FeedbackError> {
    policy.validate()?;
    let Some(&b) = profile.beta.get(category) else {
        return Err(FeedbackError::UnknownCategory(category.to_string()));
    };
    let next = match verdict {
        Verdict::Like => b * (1.0 + policy.eta) + policy.floor,
        Verdict::Dislike if b <= policy.floor => b,
        Verdict::Dislike => (b * (1.0 - policy.eta)).max(policy.floor),
    };
    let mut out = profile.clone();
    out.beta.insert(category.to_string(), next);
    out.distribution = persona_distribution(&out.beta)?;
    out.last_updated = out.last_updated.max(at);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CategorySet;
    use std::collections::BTreeMap;

    fn profile(betas: &[(&str, f64)]) -> PersonaProfile {
        let beta: BTreeMap<String, f64> = betas.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        PersonaProfile {
            user_id: "u".into(),
            distribution: persona_distribution(&beta).unwrap(),
            beta,
            last_updated: 0,
        }
    }

    #[test]
    fn like_raises_mass() {
        let p = profile(&[("sports", 1.0), ("politics", 1.0)]);
        let q = apply_feedback(&p, "sports", Verdict::Like, &FeedbackPolicy::default(), 5).unwrap();
        assert!(q.distribution["sports"] > p.distribution["sports"]);
        assert!(q.distribution["politics"] < p.distribution["politics"]);
        assert_eq!(q.beta["politics"], 1.0);
        assert_eq!(q.last_updated, 5);
    }

    #[test]
    fn dislike_on_only_category_floors() {
        let p = profile(&[("sports", 1.05e-6), ("politics", 0.0)]);
        let q = apply_feedback(&p, "sports", Verdict::Dislike, &FeedbackPolicy::default(), 1).unwrap();
        assert_eq!(q.beta["sports"], 1e-6);
        assert!((q.distribution.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(q.distribution["sports"], 1.0);
    }

    #[test]
    fn dislike_never_raises_a_score_below_the_floor() {
        let p = profile(&[("sports", 0.0), ("politics", 1.0)]);
        let q = apply_feedback(&p, "sports", Verdict::Dislike, &FeedbackPolicy::default(), 1).unwrap();
        assert_eq!(q.beta, p.beta);
        assert_eq!(q.distribution, p.distribution);
    }

    #[test]
    fn like_then_dislike_arithmetic() {
        let p = profile(&[("sports", 1.0), ("news", 2.0)]);
        let pol = FeedbackPolicy::default();
        let q = apply_feedback(&p, "sports", Verdict::Like, &pol, 1).unwrap();
        let r = apply_feedback(&q, "sports", Verdict::Dislike, &pol, 2).unwrap();
        assert!((r.beta["sports"] - (1.1 + 1e-6) * 0.9).abs() < 1e-15);
        assert!((r.beta["sports"] - 0.99).abs() < 1e-5);
    }

    #[test]
    fn unknown_category_and_bad_policy() {
        let p = PersonaProfile::uniform("u", &CategorySet::default(), 0);
        assert_eq!(
            apply_feedback(&p, "cooking", Verdict::Like, &FeedbackPolicy::default(), 0).unwrap_err(),
            FeedbackError::UnknownCategory("cooking".into())
        );
        let bad = FeedbackPolicy { eta: 1.0, ..FeedbackPolicy::default() };
        assert!(apply_feedback(&p, "news", Verdict::Like, &bad, 0).is_err());
    }
}
