//! Chatbot ranking and feedback.
//!
//! Each registered bot is scored for an incoming user message as
//!
//! ```text
//! score = prior * similarity
//! prior = (accepted + alpha) / (seen + alpha + beta)
//! similarity = d(msg, overall) / (d(msg, bot) + d(msg, overall))
//! ```
//!
//! where `bot` is the centroid of the user messages the bot has answered
//! successfully (seeded with developer-supplied examples) and `overall` is
//! the centroid of every user message seen. Scores are a ranking key only.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{similarity_ratio, Centroid, MessageVector, VectorTable};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectorError {
    #[error(
        "invalid beta moments: mean {mu}, sd {sigma} (need 0 < mu < 1 and sigma^2 < mu(1-mu))"
    )]
    InvalidMoments { mu: f64, sigma: f64 },
    #[error("invalid beta shape ({alpha}, {beta})")]
    InvalidShape { alpha: f64, beta: f64 },
    #[error("no bots registered")]
    EmptyRegistry,
    #[error("bot {0:?} is already registered")]
    Duplicate(String),
    #[error("unknown bot {0:?}")]
    UnknownBot(String),
    #[error("vector dimension mismatch")]
    Dimension,
}

/// Beta prior shape: pseudo-counts of accepted and not-accepted messages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaShape {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaShape {
    fn default() -> Self {
        Self {
            alpha: 24.9,
            beta: 58.1,
        }
    }
}

impl BetaShape {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, SelectorError> {
        if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
            Ok(Self { alpha, beta })
        } else {
            Err(SelectorError::InvalidShape { alpha, beta })
        }
    }

    /// Method-of-moments fit from mean `mu` and standard deviation `sigma`.
    pub fn from_moments(mu: f64, sigma: f64) -> Result<Self, SelectorError> {
        let var = sigma * sigma;
        if !(mu > 0.0 && mu < 1.0 && sigma > 0.0 && var < mu * (1.0 - mu)) {
            return Err(SelectorError::InvalidMoments { mu, sigma });
        }
        let common = mu * (1.0 - mu) / var - 1.0;
        Self::new(mu * common, (1.0 - mu) * common)
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// When a bot's `seen_count` advances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeenPolicy {
    /// Once per user message while the bot is registered, called or not.
    #[default]
    PerUserMessage,
    /// Once per user message the bot actually answered.
    PerInvocation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BotProfile {
    pub bot_id: String,
    pub accepted_count: u64,
    pub seen_count: u64,
    pub example_messages: Vec<String>,
    pub success_messages: Vec<String>,
    pub centroid: Centroid,
    pub online_since: Timestamp,
}

impl BotProfile {
    /// A fresh profile; the centroid starts at the mean of the example
    /// messages that have any in-vocabulary token.
    pub fn register(
        bot_id: impl Into<String>,
        example_messages: Vec<String>,
        table: &VectorTable,
        online_since: Timestamp,
    ) -> Self {
        let mut centroid = Centroid::new(table.dim());
        for text in &example_messages {
            centroid.add(&table.embed(text));
        }
        Self {
            bot_id: bot_id.into(),
            accepted_count: 0,
            seen_count: 0,
            example_messages,
            success_messages: Vec::new(),
            centroid,
            online_since,
        }
    }

    /// True until the bot has at least one reference message with a usable
    /// vector; distance to the bot is then taken as zero.
    pub fn zero_dist_mode(&self) -> bool {
        self.centroid.count == 0
    }

    pub fn prior(&self, shape: &BetaShape) -> f64 {
        (self.accepted_count as f64 + shape.alpha)
            / (self.seen_count as f64 + shape.alpha + shape.beta)
    }

    /// Feeds back one crowd decision on this bot's answer to `user_message`.
    pub fn record_outcome(&mut self, user_message: &str, accepted: bool, table: &VectorTable) {
        self.seen_count += 1;
        if accepted {
            self.accepted_count += 1;
            self.success_messages.push(user_message.to_string());
            self.centroid.add(&table.embed(user_message));
        }
    }

    pub fn centroid_vector(&self) -> MessageVector {
        self.centroid.as_vector()
    }
}

/// Eq.-style ranking score of one bot for one message vector.
pub fn score(
    message: &MessageVector,
    profile: &BotProfile,
    overall: &Centroid,
    shape: &BetaShape,
) -> Result<f64, SelectorError> {
    let prior = profile.prior(shape);
    if message.is_empty() {
        return Ok(prior * 0.5);
    }
    let sim = similarity_ratio(
        message,
        &profile.centroid_vector(),
        &overall.as_vector(),
        profile.zero_dist_mode(),
    )
    .map_err(|_| SelectorError::Dimension)?;
    Ok(prior * sim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedBot {
    pub bot_id: String,
    pub score: f64,
}

/// Bots by descending score, ties by ascending bot id.
pub fn rank_bots<'a>(
    message: &MessageVector,
    profiles: impl IntoIterator<Item = &'a BotProfile>,
    overall: &Centroid,
    shape: &BetaShape,
) -> Result<Vec<RankedBot>, SelectorError> {
    let mut ranked = profiles
        .into_iter()
        .map(|p| {
            Ok(RankedBot {
                bot_id: p.bot_id.clone(),
                score: score(message, p, overall, shape)?,
            })
        })
        .collect::<Result<Vec<_>, SelectorError>>()?;
    if ranked.is_empty() {
        return Err(SelectorError::EmptyRegistry);
    }
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.bot_id.cmp(&b.bot_id))
    });
    Ok(ranked)
}

/// The top-ranked bot followed by `n_random` distinct bots drawn uniformly
/// from the remaining ranks.
pub fn select_bots<R: Rng + ?Sized>(
    ranked: &[RankedBot],
    rng: &mut R,
    n_random: usize,
) -> Vec<String> {
    let Some((top, rest)) = ranked.split_first() else {
        return Vec::new();
    };
    let mut picked = vec![top.bot_id.clone()];
    let amount = n_random.min(rest.len());
    if amount > 0 {
        for idx in rand::seq::index::sample(rng, rest.len(), amount) {
            picked.push(rest[idx].bot_id.clone());
        }
    }
    picked
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub bot_id: String,
    pub prior: f64,
    pub accepted_count: u64,
    pub seen_count: u64,
    pub centroid_norm: f64,
    pub zero_dist_mode: bool,
}

/// All bot profiles plus the overall user-message centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct Selector {
    shape: BetaShape,
    policy: SeenPolicy,
    profiles: BTreeMap<String, BotProfile>,
    overall: Centroid,
}

impl Selector {
    pub fn new(shape: BetaShape, policy: SeenPolicy, dim: usize) -> Self {
        Self {
            shape,
            policy,
            profiles: BTreeMap::new(),
            overall: Centroid::new(dim),
        }
    }

    pub fn shape(&self) -> &BetaShape {
        &self.shape
    }

    pub fn policy(&self) -> SeenPolicy {
        self.policy
    }

    pub fn overall(&self) -> &Centroid {
        &self.overall
    }

    pub fn profile(&self, bot_id: &str) -> Option<&BotProfile> {
        self.profiles.get(bot_id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &BotProfile> {
        self.profiles.values()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn register_bot(
        &mut self,
        bot_id: &str,
        example_messages: Vec<String>,
        table: &VectorTable,
        now: Timestamp,
    ) -> Result<&BotProfile, SelectorError> {
        if self.profiles.contains_key(bot_id) {
            return Err(SelectorError::Duplicate(bot_id.to_string()));
        }
        let profile = BotProfile::register(bot_id, example_messages, table, now);
        Ok(self.profiles.entry(bot_id.to_string()).or_insert(profile))
    }

    /// Folds a user message into the overall centroid.
    pub fn observe_user_message(&mut self, text: &str, table: &VectorTable) {
        self.overall.add(&table.embed(text));
    }

    pub fn record_outcome(
        &mut self,
        bot_id: &str,
        user_message: &str,
        accepted: bool,
        table: &VectorTable,
    ) -> Result<(), SelectorError> {
        self.profiles
            .get_mut(bot_id)
            .ok_or_else(|| SelectorError::UnknownBot(bot_id.to_string()))?
            .record_outcome(user_message, accepted, table);
        Ok(())
    }

    pub fn prior(&self, bot_id: &str) -> Option<f64> {
        self.profiles.get(bot_id).map(|p| p.prior(&self.shape))
    }

    pub fn rank(&self, message: &MessageVector) -> Result<Vec<RankedBot>, SelectorError> {
        rank_bots(message, self.profiles.values(), &self.overall, &self.shape)
    }

    pub fn rank_text(
        &self,
        text: &str,
        table: &VectorTable,
    ) -> Result<Vec<RankedBot>, SelectorError> {
        self.rank(&table.embed(text))
    }

    pub fn summaries(&self) -> Vec<ProfileSummary> {
        self.profiles
            .values()
            .map(|p| ProfileSummary {
                bot_id: p.bot_id.clone(),
                prior: p.prior(&self.shape),
                accepted_count: p.accepted_count,
                seen_count: p.seen_count,
                centroid_norm: p.centroid_vector().norm(),
                zero_dist_mode: p.zero_dist_mode(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> VectorTable {
        VectorTable::from_entries(
            2,
            [
                ("rain", vec![1.0, 0.0]),
                ("forecast", vec![0.9, 0.1]),
                ("hello", vec![0.0, 1.0]),
                ("thanks", vec![0.1, 0.9]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn moments_recover_default_shape() {
        let s = BetaShape::from_moments(0.3, 0.05).unwrap();
        assert!((s.alpha - 24.9).abs() < 1e-9);
        assert!((s.beta - 58.1).abs() < 1e-9);
    }

    #[test]
    fn symmetric_moments_give_uniform() {
        // mu(1-mu)/sigma^2 = 3 at mu = 0.5.
        let sigma = (0.25f64 / 3.0).sqrt();
        let s = BetaShape::from_moments(0.5, sigma).unwrap();
        assert!((s.alpha - 1.0).abs() < 1e-12);
        assert!((s.beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_moments_rejected() {
        assert!(BetaShape::from_moments(0.5, 0.5).is_err());
        assert!(BetaShape::from_moments(0.0, 0.1).is_err());
        assert!(BetaShape::from_moments(0.3, 0.0).is_err());
    }

    #[test]
    fn prior_examples() {
        let shape = BetaShape::default();
        let t = table();
        let mut p = BotProfile::register("b", vec![], &t, Timestamp(0));
        assert_eq!(p.prior(&shape), 24.9 / 83.0);
        assert!((p.prior(&shape) - 0.3).abs() < 1e-15);
        p.accepted_count = 5;
        p.seen_count = 10;
        assert!((p.prior(&shape) - 29.9 / 93.0).abs() < 1e-15);
        assert!((p.prior(&shape) - 0.32151).abs() < 1e-5);
        p.accepted_count = 0;
        p.seen_count = 100;
        assert!((p.prior(&shape) - 0.13607).abs() < 1e-5);
    }

    #[test]
    fn record_outcome_moves_prior() {
        let shape = BetaShape::default();
        let t = table();
        let mut up = BotProfile::register("b", vec![], &t, Timestamp(0));
        assert!(up.zero_dist_mode());
        up.record_outcome("rain", true, &t);
        assert!((up.prior(&shape) - 25.9 / 84.0).abs() < 1e-15);
        assert!(!up.zero_dist_mode());
        assert_eq!(up.centroid.mean, vec![1.0, 0.0]);
        let mut down = BotProfile::register("b", vec![], &t, Timestamp(0));
        down.record_outcome("rain", false, &t);
        assert!((down.prior(&shape) - 24.9 / 84.0).abs() < 1e-15);
        assert!(down.zero_dist_mode());
    }

    #[test]
    fn register_with_examples_sets_centroid() {
        let t = table();
        let p = BotProfile::register(
            "w",
            vec!["rain".into(), "forecast".into(), "hello".into()],
            &t,
            Timestamp(0),
        );
        let expect = [(1.0 + 0.9 + 0.0) / 3.0, (0.0 + 0.1 + 1.0) / 3.0];
        for (a, b) in p.centroid.mean.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!p.zero_dist_mode());
    }

    #[test]
    fn score_cold_start_and_empty_message() {
        let t = table();
        let shape = BetaShape::default();
        let p = BotProfile::register("b", vec![], &t, Timestamp(0));
        let mut overall = Centroid::new(2);
        overall.add(&t.embed("hello"));
        let s = score(&t.embed("rain"), &p, &overall, &shape).unwrap();
        assert!((s - 0.3).abs() < 1e-15);
        let s_empty = score(&t.embed("zzz"), &p, &overall, &shape).unwrap();
        assert!((s_empty - 0.3 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn nearer_bot_scores_higher() {
        let t = table();
        let shape = BetaShape::default();
        let near = BotProfile::register("a", vec!["rain".into()], &t, Timestamp(0));
        let far = BotProfile::register("b", vec!["hello".into()], &t, Timestamp(0));
        let mut overall = Centroid::new(2);
        overall.add(&t.embed("rain hello"));
        let m = t.embed("forecast");
        assert!(
            score(&m, &near, &overall, &shape).unwrap()
                > score(&m, &far, &overall, &shape).unwrap()
        );
    }

    #[test]
    fn rank_ties_are_lexicographic_and_empty_errors() {
        let t = table();
        let shape = BetaShape::default();
        let overall = Centroid::new(2);
        let profiles: Vec<_> = ["zeta", "alpha", "mid"]
            .iter()
            .map(|id| BotProfile::register(*id, vec![], &t, Timestamp(0)))
            .collect();
        let ranked = rank_bots(&t.embed("rain"), &profiles, &overall, &shape).unwrap();
        let ids: Vec<_> = ranked.iter().map(|r| r.bot_id.as_str()).collect();
        assert_eq!(ids, ["alpha", "mid", "zeta"]);
        assert_eq!(
            rank_bots(&t.embed("rain"), &[], &overall, &shape),
            Err(SelectorError::EmptyRegistry)
        );
    }

    #[test]
    fn select_bots_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = vec![RankedBot {
            bot_id: "a".into(),
            score: 1.0,
        }];
        assert_eq!(select_bots(&one, &mut rng, 1), ["a"]);
        let four: Vec<_> = ["a", "b", "c", "d"]
            .iter()
            .map(|id| RankedBot {
                bot_id: id.to_string(),
                score: 1.0,
            })
            .collect();
        assert_eq!(select_bots(&four, &mut rng, 0), ["a"]);
        let pick = select_bots(&four, &mut rng, 2);
        assert_eq!(pick[0], "a");
        assert_eq!(pick.len(), 3);
        assert_ne!(pick[1], pick[2]);
    }

    #[test]
    fn selector_duplicate_registration() {
        let t = table();
        let mut s = Selector::new(BetaShape::default(), SeenPolicy::default(), 2);
        s.register_bot("a", vec![], &t, Timestamp(0)).unwrap();
        assert_eq!(
            s.register_bot("a", vec![], &t, Timestamp(0)).unwrap_err(),
            SelectorError::Duplicate("a".into())
        );
    }
}
