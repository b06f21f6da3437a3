//! Expected reward saved by automatic upvotes and the threshold sweep that
//! maximises it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{Conversation, Polarity, Role, VoterKind};
use crate::embedding::VectorTable;
use crate::engine::{Engine, EngineError};
use crate::event::Event;
use crate::voter::{featurize, partition, Partition, VoteClassifierModel, VoterError};
use crate::voting::{acceptance_holds, RewardSchema, VoteTally, VoteWeights};

/// Scores within this distance count as equal in the sweep.
pub const SAVE_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("no operating points to sweep")]
    NoPoints,
    #[error("no messages the classifier would upvote")]
    InsufficientData,
    #[error("invalid misfire parameters")]
    InvalidParams,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Voter(#[from] VoterError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisfireParams {
    pub p_misfire_given_bad: f64,
    pub e_upvoted_workers: f64,
}

impl Default for MisfireParams {
    fn default() -> Self {
        Self {
            p_misfire_given_bad: 0.692,
            e_upvoted_workers: 0.569,
        }
    }
}

impl MisfireParams {
    pub fn new(p: f64, e: f64) -> Result<Self, RewardError> {
        if !(0.0..=1.0).contains(&p) || !(e.is_finite() && e >= 0.0) {
            return Err(RewardError::InvalidParams);
        }
        Ok(Self {
            p_misfire_given_bad: p,
            e_upvoted_workers: e,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
}

impl OperatingPoint {
    pub fn new(threshold: f64, tpr: f64, fpr: f64) -> Self {
        Self {
            threshold,
            tpr,
            fpr,
            precision: f64::NAN,
            recall: tpr,
        }
    }
}

pub fn expected_good(schema: &RewardSchema) -> f64 {
    (schema.r_upvote + schema.r_agreement) as f64
}

pub fn expected_bad(schema: &RewardSchema, params: &MisfireParams) -> f64 {
    params.p_misfire_given_bad
        * (schema.r_agreement as f64 * params.e_upvoted_workers + schema.r_proposal as f64)
}

pub fn expected_save(tpr: f64, fpr: f64, schema: &RewardSchema, params: &MisfireParams) -> f64 {
    tpr * expected_good(schema) - fpr * expected_bad(schema, params)
}

/// Operating points for `confidence >= t` at every distinct confidence and
/// every 0.01 step in [0, 1], sorted by threshold. Each entry of `scored`
/// is `(confidence, is_positive)`.
pub fn operating_points(scored: &[(f64, bool)]) -> Vec<OperatingPoint> {
    let mut thresholds: BTreeSet<u64> = (0..=100).map(|i| (i as f64 / 100.0).to_bits()).collect();
    thresholds.extend(scored.iter().map(|(c, _)| c.to_bits()));
    let mut ts: Vec<f64> = thresholds.into_iter().map(f64::from_bits).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let pos = scored.iter().filter(|(_, y)| *y).count();
    let neg = scored.len() - pos;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    ts.into_iter()
        .map(|t| {
            let tp = scored.iter().filter(|(c, y)| *y && *c >= t).count();
            let fp = scored.iter().filter(|(c, y)| !*y && *c >= t).count();
            OperatingPoint {
                threshold: t,
                tpr: ratio(tp, pos),
                fpr: ratio(fp, neg),
                precision: if tp + fp == 0 {
                    1.0
                } else {
                    ratio(tp, tp + fp)
                },
                recall: ratio(tp, pos),
            }
        })
        .collect()
}

/// The operating point with the highest expected save; ties go to the
/// higher threshold.
pub fn sweep_thresholds(
    points: &[OperatingPoint],
    schema: &RewardSchema,
    params: &MisfireParams,
) -> Result<OperatingPoint, RewardError> {
    let mut best: Option<(f64, OperatingPoint)> = None;
    for p in points {
        let s = expected_save(p.tpr, p.fpr, schema, params);
        best = match best {
            None => Some((s, *p)),
            Some((bs, bp)) => {
                let better = s > bs + SAVE_TIE_EPS
                    || ((s - bs).abs() <= SAVE_TIE_EPS && p.threshold > bp.threshold);
                if better {
                    Some((s, *p))
                } else {
                    Some((bs, bp))
                }
            }
        };
    }
    best.map(|(_, p)| p).ok_or(RewardError::NoPoints)
}

/// Human upvoters on a message other than its proposer.
fn upvoters_besides_proposer(votes: &[crate::conversation::Vote], author: &str) -> usize {
    votes
        .iter()
        .filter(|v| {
            v.voter_kind == VoterKind::Human && v.polarity == Polarity::Up && v.voter_id != author
        })
        .count()
}

/// Misfire statistics over resolved worker messages left out of training
/// that `model` would upvote.
pub fn misfire_params_from<'a>(
    model: &VoteClassifierModel,
    conversations: impl IntoIterator<Item = &'a Conversation>,
    table: &VectorTable,
    weights: &VoteWeights,
) -> Result<MisfireParams, RewardError> {
    let mut n = 0usize;
    let mut fired = 0usize;
    let mut upvoters = 0usize;
    for conv in conversations {
        for m in &conv.messages {
            if m.role != Role::Worker || !m.state.is_terminal() {
                continue;
            }
            if matches!(partition(m, weights), Partition::Labeled(_)) {
                continue;
            }
            if model.predict_confidence(&featurize(m, conv, table))? < model.confidence_threshold {
                continue;
            }
            n += 1;
            let mut tally = VoteTally::from_votes(&m.votes);
            tally.machine_up += 1;
            if acceptance_holds(&tally, m.active_workers, weights, false, 0) {
                fired += 1;
            }
            upvoters += upvoters_besides_proposer(&m.votes, &m.author);
        }
    }
    if n == 0 {
        return Err(RewardError::InsufficientData);
    }
    Ok(MisfireParams {
        p_misfire_given_bad: fired as f64 / n as f64,
        e_upvoted_workers: upvoters as f64 / n as f64,
    })
}

pub fn estimate_misfire_params(
    model: &VoteClassifierModel,
    logs: &[Vec<Event>],
    table: &VectorTable,
    weights: &VoteWeights,
) -> Result<MisfireParams, RewardError> {
    let engines = logs
        .iter()
        .map(|log| Engine::replay(RewardSchema::default(), log))
        .collect::<Result<Vec<_>, _>>()?;
    misfire_params_from(
        model,
        engines.iter().flat_map(|e| e.conversations()),
        table,
        weights,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_arithmetic() {
        let s = RewardSchema::default();
        let p = MisfireParams::default();
        assert_eq!(expected_good(&s), 600.0);
        assert!((expected_bad(&s, &p) - 888.874).abs() < 1e-9);
        assert_eq!(expected_save(1.0, 0.0, &s, &p), 600.0);
        assert!((expected_save(0.0, 1.0, &s, &p) + 888.874).abs() < 1e-9);
        let fpr = 200.0 / 888.874;
        assert!((expected_save(0.745, fpr, &s, &p) - 247.0).abs() < 1e-9);
        let custom = RewardSchema {
            r_upvote: 1,
            r_agreement: 2,
            ..RewardSchema::default()
        };
        assert_eq!(expected_good(&custom), 3.0);
        let zero = RewardSchema {
            r_upvote: 0,
            r_agreement: 0,
            ..RewardSchema::default()
        };
        assert_eq!(expected_good(&zero), 0.0);
    }

    #[test]
    fn bad_reductions() {
        let s = RewardSchema::default();
        assert_eq!(
            expected_bad(&s, &MisfireParams::new(0.0, 0.569).unwrap()),
            0.0
        );
        assert!((expected_bad(&s, &MisfireParams::new(0.4, 0.0).unwrap()) - 400.0).abs() < 1e-12);
        assert!(MisfireParams::new(1.1, 0.0).is_err());
        assert!(MisfireParams::new(0.5, -1.0).is_err());
    }

    #[test]
    fn sweep_single_and_ties() {
        let s = RewardSchema::default();
        let p = MisfireParams::default();
        let one = OperatingPoint::new(0.3, 0.5, 0.5);
        assert_eq!(sweep_thresholds(&[one], &s, &p).unwrap().threshold, 0.3);
        let a = OperatingPoint::new(0.6, 0.5, 0.1);
        let b = OperatingPoint::new(0.8, 0.5, 0.1);
        assert_eq!(sweep_thresholds(&[a, b], &s, &p).unwrap().threshold, 0.8);
        assert_eq!(sweep_thresholds(&[b, a], &s, &p).unwrap().threshold, 0.8);
        assert!(matches!(
            sweep_thresholds(&[], &s, &p),
            Err(RewardError::NoPoints)
        ));
    }

    #[test]
    fn operating_points_cover_grid_and_scores() {
        let scored = [(0.905, true), (0.2, false), (0.7, true), (0.7, false)];
        let pts = operating_points(&scored);
        assert!(pts.windows(2).all(|w| w[0].threshold < w[1].threshold));
        assert!(pts.iter().any(|p| p.threshold == 0.905));
        assert_eq!(pts.len(), 102);
        let at = |t: f64| {
            *pts.iter()
                .find(|p| (p.threshold - t).abs() < 1e-12)
                .unwrap()
        };
        assert_eq!(at(0.0).tpr, 1.0);
        assert_eq!(at(0.0).fpr, 1.0);
        assert_eq!(at(0.7).tpr, 1.0);
        assert_eq!(at(0.7).fpr, 0.5);
        assert_eq!(at(0.7).precision, 2.0 / 3.0);
        assert_eq!(at(0.8).tpr, 0.5);
        assert_eq!(at(0.8).fpr, 0.0);
        assert_eq!(at(1.0).tpr, 0.0);
        assert_eq!(at(1.0).precision, 1.0);
    }
}
