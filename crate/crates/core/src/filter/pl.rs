//! Particle Learning: each particle carries a Kalman mixture belief and the
//! Beta counts of its own on/off transition history.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{initial_belief, multinomial_resample, normalize_or_fail, particle_rng, step_rng};
use super::{FilterConfig, ParticleFilter, StepOutput};
use crate::error::{Error, Result};
use crate::graph::{GeoPoint, PathCandidate, RoadGraph};
use crate::inference::{kalman_update, predict_mixture, MotionBelief, PosteriorComponent};
use crate::numeric::log_sum_exp;
use crate::search::{PathSearcher, SearchStats};
use crate::transition::{TransitionParams, TransitionPrior};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlParticle {
    pub belief: MotionBelief,
    pub prior: TransitionPrior,
    /// Transition parameters used for this particle's next prediction.
    pub params: TransitionParams,
}

/// A particle's predictive mixture after seeing the observation.
struct Evaluated {
    from_road: bool,
    paths: Vec<PathCandidate>,
    /// Posterior components with the index of their path.
    components: Vec<(usize, PosteriorComponent)>,
    log_weight: f64,
}

pub struct PlFilter<'g> {
    graph: &'g RoadGraph,
    cfg: FilterConfig,
    searcher: PathSearcher,
    fixed_params: Option<TransitionParams>,
    shuffle_weights: bool,
    particles: Vec<PlParticle>,
    step: usize,
}

impl<'g> PlFilter<'g> {
    pub fn new(graph: &'g RoadGraph, cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            graph,
            searcher: PathSearcher::new(cfg.search)?,
            cfg,
            fixed_params: None,
            shuffle_weights: false,
            particles: Vec::new(),
            step: 0,
        })
    }

    /// Uses `params` for every prediction instead of the learned samples.
    /// Counts are still updated.
    pub fn with_fixed_params(mut self, params: TransitionParams) -> Self {
        self.fixed_params = Some(params);
        self
    }

    /// Permutes particle weights before resampling, detaching them from the
    /// particles they belong to. Only useful as a deliberately broken filter.
    #[doc(hidden)]
    pub fn with_shuffled_weights(mut self) -> Self {
        self.shuffle_weights = true;
        self
    }

    /// Replaces the particle set, e.g. to start from a known belief.
    pub fn set_particles(&mut self, particles: Vec<PlParticle>) -> Result<()> {
        if particles.is_empty() {
            return Err(Error::InvalidParameter("particle set is empty".into()));
        }
        self.particles = particles;
        Ok(())
    }

    pub fn particles(&self) -> &[PlParticle] {
        &self.particles
    }

    pub fn search_stats(&self) -> SearchStats {
        self.searcher.stats()
    }

    fn evaluate(&self, particle: &PlParticle, y: &GeoPoint) -> Result<Evaluated> {
        let source = particle.belief.oriented(self.graph);
        let params = self.fixed_params.unwrap_or(particle.params);
        let paths = self
            .searcher
            .candidate_paths(self.graph, &source, y, &self.cfg.noise)?;
        let components = predict_mixture(&source, &paths, &params, &self.cfg.noise)?
            .iter()
            .map(|c| Ok((c.path, kalman_update(&c.prediction, y, &self.cfg.noise)?)))
            .collect::<Result<Vec<_>>>()?;
        let log_weight = log_sum_exp(
            &components
                .iter()
                .map(|(_, c)| c.log_weight)
                .collect::<Vec<_>>(),
        );
        Ok(Evaluated {
            from_road: source.is_on_road(),
            paths,
            components,
            log_weight,
        })
    }

    /// Draws one mixture component for a resampled particle and updates its
    /// transition counts and parameters.
    fn propagate(&self, parent: &PlParticle, eval: &Evaluated, index: usize) -> Result<PlParticle> {
        let mut rng = particle_rng(self.cfg.seed, self.step, index);
        let probs: Vec<f64> = eval
            .components
            .iter()
            .map(|(_, c)| (c.log_weight - eval.log_weight).exp())
            .collect();
        let chosen =
            WeightedIndex::new(&probs).map_err(|_| Error::DegenerateWeights { step: self.step })?;
        let (path, component) = &eval.components[chosen.sample(&mut rng)];
        let prior = parent
            .prior
            .update(eval.from_road, component.target.is_road());
        let params = match self.fixed_params {
            Some(p) => p,
            None => prior.sample(&mut rng),
        };
        Ok(PlParticle {
            belief: component.to_motion_belief(&eval.paths[*path])?,
            prior,
            params,
        })
    }

    fn output(&self, log_marginal: f64) -> StepOutput {
        let n = self.particles.len();
        StepOutput {
            step: self.step,
            estimates: self
                .particles
                .iter()
                .map(|p| p.belief.ground().mean)
                .collect(),
            edges: self.particles.iter().map(|p| p.belief.edge()).collect(),
            weights: vec![1.0 / n as f64; n],
            log_marginal,
            params: self.particles.iter().map(|p| p.params).collect(),
        }
    }
}

impl ParticleFilter for PlFilter<'_> {
    fn name(&self) -> &'static str {
        "PL"
    }

    fn start(&mut self, y: &GeoPoint) -> Result<StepOutput> {
        self.step = 0;
        self.particles = (0..self.cfg.particles)
            .map(|j| {
                let mut rng = particle_rng(self.cfg.seed, 0, j);
                let belief = initial_belief(self.graph, y, &self.cfg, &mut rng)?;
                let prior = self.cfg.prior;
                let params = self.fixed_params.unwrap_or_else(|| prior.sample(&mut rng));
                Ok(PlParticle {
                    belief,
                    prior,
                    params,
                })
            })
            .collect::<Result<_>>()?;
        Ok(self.output(0.0))
    }

    fn step(&mut self, y: &GeoPoint) -> Result<StepOutput> {
        if self.particles.is_empty() {
            return Err(Error::InvalidParameter(
                "filter has no particles; call start first".into(),
            ));
        }
        self.step += 1;
        let evaluated: Vec<Evaluated> = if self.cfg.parallel {
            self.particles
                .par_iter()
                .map(|p| self.evaluate(p, y))
                .collect::<Result<_>>()?
        } else {
            self.particles
                .iter()
                .map(|p| self.evaluate(p, y))
                .collect::<Result<_>>()?
        };

        let n = self.particles.len();
        let mut log_weights: Vec<f64> = evaluated.iter().map(|e| e.log_weight).collect();
        let log_marginal = log_sum_exp(&log_weights) - (n as f64).ln();
        let mut rng = step_rng(self.cfg.seed, self.step);
        if self.shuffle_weights {
            log_weights.shuffle(&mut rng);
        }
        normalize_or_fail(&mut log_weights, self.step)?;
        let weights: Vec<f64> = log_weights.iter().map(|w| w.exp()).collect();
        let parents = multinomial_resample(&weights, n, &mut rng)
            .map_err(|_| Error::DegenerateWeights { step: self.step })?;

        let propagate =
            |(i, &k): (usize, &usize)| self.propagate(&self.particles[k], &evaluated[k], i);
        let next: Vec<PlParticle> = if self.cfg.parallel {
            parents
                .par_iter()
                .enumerate()
                .map(propagate)
                .collect::<Result<_>>()?
        } else {
            parents
                .iter()
                .enumerate()
                .map(propagate)
                .collect::<Result<_>>()?
        };
        self.particles = next;
        Ok(self.output(log_marginal))
    }
}
