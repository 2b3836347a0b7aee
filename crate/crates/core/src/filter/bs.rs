//! Bootstrap filter: point-state particles propagated by the simulation
//! kernel and weighted by the observation density.

use rayon::prelude::*;

use super::{
    initial_state, multinomial_resample, normalize_or_fail, particle_rng, should_resample, step_rng,
};
use super::{FilterConfig, ParticleFilter, StepOutput};
use crate::error::{Error, Result};
use crate::graph::{GeoPoint, RoadGraph};
use crate::kernel::{Kernel, PointState};
use crate::numeric::{log_normal_pdf, log_sum_exp};
use crate::transition::TransitionParams;

pub struct BsFilter<'g> {
    graph: &'g RoadGraph,
    cfg: FilterConfig,
    params: TransitionParams,
    particles: Vec<PointState>,
    log_weights: Vec<f64>,
    step: usize,
    resamples: usize,
}

impl<'g> BsFilter<'g> {
    /// A bootstrap filter proposing with known transition parameters.
    pub fn new(graph: &'g RoadGraph, cfg: FilterConfig, params: TransitionParams) -> Result<Self> {
        cfg.validate()?;
        if !params.is_valid() {
            return Err(Error::InvalidParameter(format!(
                "invalid transition parameters {params:?}"
            )));
        }
        Ok(Self {
            graph,
            cfg,
            params,
            particles: Vec::new(),
            log_weights: Vec::new(),
            step: 0,
            resamples: 0,
        })
    }

    pub fn particles(&self) -> &[PointState] {
        &self.particles
    }

    /// Number of steps at which the ESS gate triggered resampling.
    pub fn resample_count(&self) -> usize {
        self.resamples
    }

    fn kernel(&self) -> Kernel<'g> {
        Kernel {
            preserve_speed: self.cfg.preserve_speed,
            ..Kernel::new(self.graph, self.cfg.noise, self.params)
        }
    }

    fn advance(
        &self,
        kernel: &Kernel<'_>,
        j: usize,
        x: &PointState,
        y: &GeoPoint,
    ) -> Result<(PointState, f64)> {
        let mut rng = particle_rng(self.cfg.seed, self.step, j);
        let next = kernel.step(x, &mut rng)?;
        let p = next.position(self.graph)?;
        let var = self.cfg.noise.sigma2_y;
        Ok((
            next,
            log_normal_pdf(y.x, p.x, var) + log_normal_pdf(y.y, p.y, var),
        ))
    }

    fn output(&self, log_marginal: f64) -> Result<StepOutput> {
        Ok(StepOutput {
            step: self.step,
            estimates: self
                .particles
                .iter()
                .map(|x| Ok(x.to_ground(self.graph)?.to_vector()))
                .collect::<Result<_>>()?,
            edges: self.particles.iter().map(PointState::edge).collect(),
            weights: self.log_weights.iter().map(|w| w.exp()).collect(),
            log_marginal,
            params: Vec::new(),
        })
    }
}

impl ParticleFilter for BsFilter<'_> {
    fn name(&self) -> &'static str {
        "BS"
    }

    fn start(&mut self, y: &GeoPoint) -> Result<StepOutput> {
        self.step = 0;
        self.resamples = 0;
        let n = self.cfg.particles;
        self.particles = (0..n)
            .map(|j| {
                initial_state(
                    self.graph,
                    y,
                    &self.cfg,
                    &mut particle_rng(self.cfg.seed, 0, j),
                )
            })
            .collect::<Result<_>>()?;
        self.log_weights = vec![-(n as f64).ln(); n];
        self.output(0.0)
    }

    fn step(&mut self, y: &GeoPoint) -> Result<StepOutput> {
        if self.particles.is_empty() {
            return Err(Error::InvalidParameter(
                "filter has no particles; call start first".into(),
            ));
        }
        self.step += 1;
        let kernel = self.kernel();
        let moved: Vec<(PointState, f64)> = if self.cfg.parallel {
            self.particles
                .par_iter()
                .enumerate()
                .map(|(j, x)| self.advance(&kernel, j, x, y))
                .collect::<Result<_>>()?
        } else {
            self.particles
                .iter()
                .enumerate()
                .map(|(j, x)| self.advance(&kernel, j, x, y))
                .collect::<Result<_>>()?
        };

        let mut log_weights: Vec<f64> = self
            .log_weights
            .iter()
            .zip(&moved)
            .map(|(w, (_, l))| w + l)
            .collect();
        let log_marginal = log_sum_exp(&log_weights);
        normalize_or_fail(&mut log_weights, self.step)?;
        self.particles = moved.into_iter().map(|(x, _)| x).collect();
        self.log_weights = log_weights;

        let weights: Vec<f64> = self.log_weights.iter().map(|w| w.exp()).collect();
        if should_resample(&weights, self.cfg.resample_threshold) {
            let n = self.particles.len();
            let idx = multinomial_resample(&weights, n, &mut step_rng(self.cfg.seed, self.step))
                .map_err(|_| Error::DegenerateWeights { step: self.step })?;
            self.particles = idx.iter().map(|&k| self.particles[k]).collect();
            self.log_weights = vec![-(n as f64).ln(); n];
            self.resamples += 1;
        }
        self.output(log_marginal)
    }
}
