use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::reward::MisfireParams;
use crate::voting::RewardSchema;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub n: usize,
    /// Mean points saved per message.
    pub mean: f64,
    pub std_error: f64,
}

/// Samples `n` messages, each with one good and one bad candidate in front
/// of the vote bot.
///
/// The good candidate draws a machine upvote with probability `tpr`; that
/// vote stands in for a human upvote and saves `r_upvote + r_agreement`.
/// The bad candidate draws one with probability `fpr`; with probability
/// `p_misfire_given_bad` it is then sent, paying agreement to a
/// Poisson(`e_upvoted_workers`) number of upvoters plus the proposal reward.
/// Anything else makes no difference.
pub fn monte_carlo_reward(
    tpr: f64,
    fpr: f64,
    schema: &RewardSchema,
    params: &MisfireParams,
    n: usize,
    seed: u64,
) -> MonteCarloEstimate {
    let n = n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upvoters = (params.e_upvoted_workers > 0.0)
        .then(|| Poisson::new(params.e_upvoted_workers).expect("positive rate"));
    let hit = (schema.r_upvote + schema.r_agreement) as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut x = 0.0;
        if rng.random_bool(tpr.clamp(0.0, 1.0)) {
            x += hit;
        }
        if rng.random_bool(fpr.clamp(0.0, 1.0))
            && rng.random_bool(params.p_misfire_given_bad.clamp(0.0, 1.0))
        {
            let k = upvoters.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            x -= schema.r_agreement as f64 * k + schema.r_proposal as f64;
        }
        sum += x;
        sum_sq += x * x;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    MonteCarloEstimate {
        n,
        mean,
        std_error: (var / nf).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rates_are_exactly_zero() {
        let est = monte_carlo_reward(
            0.0,
            0.0,
            &RewardSchema::default(),
            &MisfireParams::default(),
            1000,
            1,
        );
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn perfect_classifier_saves_a_hit_per_message() {
        let est = monte_carlo_reward(
            1.0,
            0.0,
            &RewardSchema::default(),
            &MisfireParams::default(),
            500,
            2,
        );
        assert_eq!(est.mean, 600.0);
    }

    #[test]
    fn same_seed_same_estimate() {
        let s = RewardSchema::default();
        let p = MisfireParams::default();
        assert_eq!(
            monte_carlo_reward(0.5, 0.5, &s, &p, 2000, 9),
            monte_carlo_reward(0.5, 0.5, &s, &p, 2000, 9)
        );
    }
}
