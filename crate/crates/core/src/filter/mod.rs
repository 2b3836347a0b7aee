//! Particle filters: Particle Learning over Kalman mixtures and a bootstrap
//! filter over point states.

mod bs;
mod pl;

pub use bs::BsFilter;
pub use pl::{PlFilter, PlParticle};

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, GeoPoint, RoadGraph};
use crate::inference::MotionBelief;
use crate::kernel::PointState;
use crate::motion::{GroundBelief, GroundState, NoiseConfig, RoadBelief, RoadState};
use crate::numeric::normalize_log_weights;
use crate::search::SearchConfig;
use crate::transition::{TransitionParams, TransitionPrior};

/// `1 / Σ w²` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Whether the ESS has dropped below `threshold · N`.
pub fn should_resample(weights: &[f64], threshold: f64) -> bool {
    effective_sample_size(weights) < threshold * weights.len() as f64
}

/// `n` independent categorical draws from normalized `weights`.
pub fn multinomial_resample<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|_| Error::DegenerateWeights { step: 0 })?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Random stream for one particle at one step, independent of how particles
/// are scheduled across threads.
pub fn particle_rng(seed: u64, step: usize, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 32) | particle as u64);
    rng
}

/// Random stream for the filter-level draws (resampling) at one step.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    particle_rng(seed, step, u32::MAX as usize)
}

/// Settings shared by both filters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub particles: usize,
    pub noise: NoiseConfig,
    pub search: SearchConfig,
    pub prior: TransitionPrior,
    /// Initial particles start on edges within this many observation
    /// standard deviations of the first observation.
    pub init_radius: f64,
    /// Variance of the initial speed.
    pub init_speed_var: f64,
    /// Bootstrap filter resamples when ESS < `resample_threshold · N`.
    pub resample_threshold: f64,
    pub preserve_speed: bool,
    /// Evaluate particles on the rayon thread pool. Results do not depend
    /// on this setting.
    pub parallel: bool,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 25,
            noise: NoiseConfig::default(),
            search: SearchConfig::default(),
            prior: TransitionPrior::default(),
            init_radius: 3.0,
            init_speed_var: 25.0,
            resample_threshold: 0.9,
            preserve_speed: false,
            parallel: false,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidParameter(
                "particle count must be at least 1".into(),
            ));
        }
        self.noise.validate()?;
        if !(self.noise.sigma2_y > 0.0) {
            return Err(Error::InvalidParameter(
                "filtering needs a positive sigma2_y".into(),
            ));
        }
        self.search.validate()?;
        self.prior.validate()?;
        for (name, v) in [
            ("init_radius", self.init_radius),
            ("init_speed_var", self.init_speed_var),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return Err(Error::InvalidParameter(format!(
                "resample_threshold must lie in [0, 1], got {}",
                self.resample_threshold
            )));
        }
        Ok(())
    }
}

/// Filter state after one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub step: usize,
    /// Ground-coordinate estimate per particle: posterior means for PL,
    /// point states for the bootstrap filter.
    pub estimates: Vec<Vector4<f64>>,
    /// Current edge per particle (0 when off-road).
    pub edges: Vec<EdgeId>,
    /// Normalized particle weights.
    pub weights: Vec<f64>,
    /// Log of the observation's predictive density given the previous step.
    pub log_marginal: f64,
    /// Per-particle transition parameter samples (empty for the bootstrap filter).
    pub params: Vec<TransitionParams>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutput {
    pub steps: Vec<StepOutput>,
}

/// A sequential filter consuming one observation per step.
pub trait ParticleFilter {
    fn name(&self) -> &'static str;

    /// Initializes from the first observation.
    fn start(&mut self, y: &GeoPoint) -> Result<StepOutput>;

    fn step(&mut self, y: &GeoPoint) -> Result<StepOutput>;

    fn run(&mut self, observations: &[GeoPoint]) -> Result<FilterOutput> {
        let mut steps = Vec::with_capacity(observations.len());
        for (i, y) in observations.iter().enumerate() {
            steps.push(if i == 0 {
                self.start(y)?
            } else {
                self.step(y)?
            });
        }
        Ok(FilterOutput { steps })
    }
}

/// Initial belief for one particle near the first observation: on a random
/// nearby edge at the projection of `y` and zero speed, or off-road at `y`
/// when no edge is close.
pub(crate) fn initial_belief<R: Rng + ?Sized>(
    graph: &RoadGraph,
    y: &GeoPoint,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<MotionBelief> {
    let var = cfg.noise.sigma2_y;
    let near = graph.edges_near(y, cfg.init_radius * var.sqrt());
    match near.choose(rng) {
        Some(&edge) => {
            let d = graph.get(edge)?.project(y);
            let road = RoadBelief::new(
                Vector2::new(d, 0.0),
                Matrix2::new(var, 0.0, 0.0, cfg.init_speed_var),
            );
            MotionBelief::on_edge(graph, edge, road)
        }
        None => Ok(MotionBelief::OffRoad {
            ground: GroundBelief::new(
                Vector4::new(y.x, 0.0, y.y, 0.0),
                Matrix4::from_diagonal(&Vector4::new(
                    var,
                    cfg.init_speed_var,
                    var,
                    cfg.init_speed_var,
                )),
            ),
        }),
    }
}

/// A point state drawn from [`initial_belief`], with the distance clamped to
/// the edge.
pub(crate) fn initial_state<R: Rng + ?Sized>(
    graph: &RoadGraph,
    y: &GeoPoint,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<PointState> {
    let belief = initial_belief(graph, y, cfg, rng)?;
    let mut draw = |mean: f64, var: f64| mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
    Ok(match belief {
        MotionBelief::OnRoad { edge, road, .. } => {
            let length = graph.get(edge)?.length;
            let d = draw(road.mean[0], road.cov[(0, 0)]).clamp(0.0, length);
            let v = draw(road.mean[1], road.cov[(1, 1)]);
            PointState::OnRoad {
                edge,
                state: RoadState::new(d, v),
            }
        }
        MotionBelief::OffRoad { ground } => {
            let (m, c) = (ground.mean, ground.cov);
            PointState::OffRoad(GroundState::new(
                draw(m[0], c[(0, 0)]),
                draw(m[1], c[(1, 1)]),
                draw(m[2], c[(2, 2)]),
                draw(m[3], c[(3, 3)]),
            ))
        }
    })
}

/// Normalizes log weights in place, failing when no particle explains the
/// observation.
pub(crate) fn normalize_or_fail(log_weights: &mut [f64], step: usize) -> Result<f64> {
    let total = normalize_log_weights(log_weights);
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::DegenerateWeights { step })
    }
}
