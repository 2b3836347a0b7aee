//! On/off-road edge transition prior with Beta-Bernoulli learning.
//!
//! Off-road stays off with probability `pi_g` and enters a road with `pi_on`;
//! on-road stays on a road with `pi_r` and leaves with `pi_off`. Road mass is
//! shared uniformly among the reachable edges of a path.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, PathCandidate, OFF_ROAD};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StayProbabilities", into = "StayProbabilities")]
pub struct TransitionParams {
    /// P(off → on).
    pub pi_on: f64,
    /// P(off → off).
    pub pi_g: f64,
    /// P(on → off).
    pub pi_off: f64,
    /// P(on → on).
    pub pi_r: f64,
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self::new(0.05, 0.95).expect("valid defaults")
    }
}

impl TransitionParams {
    /// Builds the parameters from the two "stay" probabilities.
    pub fn new(pi_g: f64, pi_r: f64) -> Result<Self> {
        for (name, p) in [("pi_g", pi_g), ("pi_r", pi_r)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(Self {
            pi_on: 1.0 - pi_g,
            pi_g,
            pi_off: 1.0 - pi_r,
            pi_r,
        })
    }

    pub fn is_valid(&self) -> bool {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        unit(self.pi_on)
            && unit(self.pi_g)
            && unit(self.pi_off)
            && unit(self.pi_r)
            && (self.pi_on + self.pi_g - 1.0).abs() < 1e-12
            && (self.pi_off + self.pi_r - 1.0).abs() < 1e-12
    }

    /// Probability of moving between on/off states, ignoring which edge.
    pub fn switch_probability(&self, from_road: bool, to_road: bool) -> f64 {
        match (from_road, to_road) {
            (false, false) => self.pi_g,
            (false, true) => self.pi_on,
            (true, false) => self.pi_off,
            (true, true) => self.pi_r,
        }
    }
}

/// Serialized form of [`TransitionParams`]: the complements are implied.
#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StayProbabilities {
    pi_g: f64,
    pi_r: f64,
}

impl TryFrom<StayProbabilities> for TransitionParams {
    type Error = Error;

    fn try_from(s: StayProbabilities) -> Result<Self> {
        Self::new(s.pi_g, s.pi_r)
    }
}

impl From<TransitionParams> for StayProbabilities {
    fn from(p: TransitionParams) -> Self {
        Self {
            pi_g: p.pi_g,
            pi_r: p.pi_r,
        }
    }
}

/// Beta pseudo-counts for the two Bernoulli transition distributions.
/// The first index names the source state, the second the destination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionPrior {
    pub alpha_off_off: f64,
    pub alpha_off_on: f64,
    pub alpha_on_on: f64,
    pub alpha_on_off: f64,
}

impl Default for TransitionPrior {
    fn default() -> Self {
        Self {
            alpha_off_off: 15.0,
            alpha_off_on: 20.0,
            alpha_on_on: 70.0,
            alpha_on_off: 100.0,
        }
    }
}

impl TransitionPrior {
    pub fn new(
        alpha_off_off: f64,
        alpha_off_on: f64,
        alpha_on_on: f64,
        alpha_on_off: f64,
    ) -> Result<Self> {
        let prior = Self {
            alpha_off_off,
            alpha_off_on,
            alpha_on_on,
            alpha_on_off,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts().iter().all(|a| a.is_finite() && *a > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "Beta pseudo-counts must be positive: {self:?}"
            )))
        }
    }

    pub fn counts(&self) -> [f64; 4] {
        [
            self.alpha_off_off,
            self.alpha_off_on,
            self.alpha_on_on,
            self.alpha_on_off,
        ]
    }

    pub fn total(&self) -> f64 {
        self.counts().iter().sum()
    }

    /// Conjugate update for one observed on/off transition.
    pub fn update(&self, from_road: bool, to_road: bool) -> Self {
        let mut next = *self;
        match (from_road, to_road) {
            (false, false) => next.alpha_off_off += 1.0,
            (false, true) => next.alpha_off_on += 1.0,
            (true, true) => next.alpha_on_on += 1.0,
            (true, false) => next.alpha_on_off += 1.0,
        }
        next
    }

    /// Posterior mean of `pi_g`.
    pub fn mean_pi_g(&self) -> f64 {
        self.alpha_off_off / (self.alpha_off_off + self.alpha_off_on)
    }

    /// Posterior mean of `pi_r`.
    pub fn mean_pi_r(&self) -> f64 {
        self.alpha_on_on / (self.alpha_on_on + self.alpha_on_off)
    }

    pub fn mean(&self) -> TransitionParams {
        TransitionParams::new(self.mean_pi_g(), self.mean_pi_r()).expect("means lie in (0, 1)")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TransitionParams {
        let pi_g = Beta::new(self.alpha_off_off, self.alpha_off_on)
            .expect("validated pseudo-counts")
            .sample(rng);
        let pi_r = Beta::new(self.alpha_on_on, self.alpha_on_off)
            .expect("validated pseudo-counts")
            .sample(rng);
        TransitionParams::new(pi_g, pi_r).expect("Beta draws lie in [0, 1]")
    }
}

pub fn update_counts(
    prior: &TransitionPrior,
    from_is_road: bool,
    to_is_road: bool,
) -> TransitionPrior {
    prior.update(from_is_road, to_is_road)
}

pub fn sample_params<R: Rng + ?Sized>(prior: &TransitionPrior, rng: &mut R) -> TransitionParams {
    prior.sample(rng)
}

/// Path positions reachable from `from`: every position at or after `from`'s
/// first position, or the whole path when starting off-road.
pub fn reachable_positions(from: EdgeId, path: &PathCandidate) -> std::ops::Range<usize> {
    if from == OFF_ROAD {
        0..path.len()
    } else {
        match path.position_of(from) {
            Some(k) => k..path.len(),
            None => 0..0,
        }
    }
}

/// Transition probability to the edge at `position` of `path`, or to the
/// off-road state when `position` is `None`.
pub fn transition_probability_at(
    from: EdgeId,
    position: Option<usize>,
    path: &PathCandidate,
    params: &TransitionParams,
) -> f64 {
    let from_road = from != OFF_ROAD;
    let reachable = reachable_positions(from, path);
    if reachable.is_empty() {
        return if position.is_none() { 1.0 } else { 0.0 };
    }
    match position {
        None => params.switch_probability(from_road, false),
        Some(k) if reachable.contains(&k) => {
            params.switch_probability(from_road, true) / reachable.len() as f64
        }
        Some(_) => 0.0,
    }
}

/// Normalized transition probability between edges (or the off-road state,
/// id 0) given a path. Unreachable targets get probability 0.
pub fn transition_probability(
    from: EdgeId,
    to: EdgeId,
    path: &PathCandidate,
    params: &TransitionParams,
) -> f64 {
    if to == OFF_ROAD {
        return transition_probability_at(from, None, path, params);
    }
    reachable_positions(from, path)
        .filter(|&k| path.segments()[k].edge == to)
        .map(|k| transition_probability_at(from, Some(k), path, params))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeRecord, GeoPoint, RoadGraph};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> RoadGraph {
        let pts: Vec<GeoPoint> = (0..5)
            .map(|i| GeoPoint::new(10.0 * i as f64, 0.0))
            .collect();
        RoadGraph::build(
            &(0..4)
                .map(|i| EdgeRecord::new(i as u64 + 1, vec![pts[i], pts[i + 1]]))
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn reference_examples() {
        let g = chain();
        let params = TransitionParams::default();
        let single = PathCandidate::new(&g, &[1]).unwrap();
        assert_relative_eq!(
            transition_probability(OFF_ROAD, OFF_ROAD, &single, &params),
            0.05,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            transition_probability(1, OFF_ROAD, &single, &params),
            0.05,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            transition_probability(1, 1, &single, &params),
            0.95,
            epsilon = 1e-15
        );

        let two = PathCandidate::new(&g, &[1, 2]).unwrap();
        assert_relative_eq!(
            transition_probability(1, 1, &two, &params),
            0.475,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            transition_probability(1, 2, &two, &params),
            0.475,
            epsilon = 1e-15
        );
        // Normalization oracle: sum over the allowed set.
        let total: f64 = [OFF_ROAD, 1, 2]
            .iter()
            .map(|&t| transition_probability(1, t, &two, &params))
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);

        // Backwards and off-path targets are unreachable.
        assert_eq!(transition_probability(2, 1, &two, &params), 0.0);
        assert_eq!(transition_probability(1, 4, &two, &params), 0.0);
        // Off-road entry splits pi_on.
        assert_relative_eq!(transition_probability(OFF_ROAD, 2, &two, &params), 0.475);
        // Only the off-road state is allowed on the null path.
        assert_eq!(
            transition_probability(3, OFF_ROAD, &PathCandidate::null(), &params),
            1.0
        );
    }

    #[test]
    fn update_examples() {
        let p = TransitionPrior::default();
        let q = update_counts(&p, false, false);
        assert_eq!(q.counts(), [16.0, 20.0, 70.0, 100.0]);
        assert_relative_eq!(q.mean_pi_g(), 16.0 / 36.0);
        assert_eq!(
            update_counts(&p, false, true).counts(),
            [15.0, 21.0, 70.0, 100.0]
        );
        assert_eq!(
            update_counts(&p, true, true).counts(),
            [15.0, 20.0, 71.0, 100.0]
        );
        assert_eq!(
            update_counts(&p, true, false).counts(),
            [15.0, 20.0, 70.0, 101.0]
        );
    }

    #[test]
    fn posterior_mean_covers_truth() {
        // Beta-Binomial coverage: 100 Bernoulli(0.5) stays from the default
        // prior; the posterior mean should land within ±0.15 of 0.5 in at
        // least 95% of seeds.
        let trials = 400;
        let mut hits = 0;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut prior = TransitionPrior::default();
            for _ in 0..100 {
                let stays_off = rng.random_bool(0.5);
                prior = prior.update(false, !stays_off);
            }
            if (prior.mean_pi_g() - 0.5).abs() <= 0.15 {
                hits += 1;
            }
        }
        assert!(
            hits as f64 / trials as f64 >= 0.95,
            "coverage {hits}/{trials}"
        );
    }

    #[test]
    fn uniform_prior_gives_uniform_samples() {
        // Kolmogorov–Smirnov against U(0, 1) at n = 10⁴, α = 0.01.
        let prior = TransitionPrior::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| prior.sample(&mut rng).pi_g).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
            .fold(0.0, f64::max);
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn degenerate_prior_samples_near_one() {
        let prior = TransitionPrior::new(1e6, 1.0, 1e6, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = prior.sample(&mut rng);
            assert!((1.0 - p.pi_g) < 1e-4 && (1.0 - p.pi_r) < 1e-4, "{p:?}");
        }
    }

    #[test]
    fn monte_carlo_mean_matches_beta_mean() {
        let prior = TransitionPrior::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| prior.sample(&mut rng).pi_g).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let (a, b) = (15.0f64, 20.0f64);
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        let se = (var / n as f64).sqrt();
        assert!((mean - a / (a + b)).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn rejects_invalid() {
        assert!(TransitionPrior::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(TransitionParams::new(1.5, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(pi_g in 0.0..=1.0f64, pi_r in 0.0..=1.0f64, start in 0usize..4, len in 0usize..4,
                                    from_off in any::<bool>()) {
            let g = chain();
            let params = TransitionParams::new(pi_g, pi_r).unwrap();
            let ids: Vec<EdgeId> = (start..(start + len).min(4)).map(|i| i as u64 + 1).collect();
            let path = if ids.is_empty() { PathCandidate::null() } else { PathCandidate::new(&g, &ids).unwrap() };
            let from = if from_off || ids.is_empty() { OFF_ROAD } else { ids[0] };
            let mut total = transition_probability(from, OFF_ROAD, &path, &params);
            for &e in &ids {
                total += transition_probability(from, e, &path, &params);
            }
            prop_assert!((total - 1.0).abs() < 1e-15);
        }

        #[test]
        fn update_adds_exactly_one(a in 0.1..100.0f64, b in 0.1..100.0f64, from in any::<bool>(), to in any::<bool>()) {
            let p = TransitionPrior::new(a, b, b, a).unwrap();
            let q = p.update(from, to);
            prop_assert!((q.total() - p.total() - 1.0).abs() < 1e-12);
            let changed = p.counts().iter().zip(q.counts()).filter(|(x, y)| *x != y).count();
            prop_assert_eq!(changed, 1);
        }

        #[test]
        fn samples_satisfy_invariants(a in 0.1..50.0f64, b in 0.1..50.0f64, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(TransitionPrior::new(a, b, b, a).unwrap().sample(&mut rng).is_valid());
        }
    }
}
