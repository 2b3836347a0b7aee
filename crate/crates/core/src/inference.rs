//! Edge-conditioned predictions and Kalman updates along candidate paths.
//!
//! For a particle's belief and a path starting at its current edge, each
//! edge of the path contributes one Gaussian component: the road prediction
//! is softly conditioned onto the edge (a normal with the edge's midpoint as
//! mean and the uniform-distribution spread as standard deviation), mapped
//! to ground coordinates and updated with the observation there. The
//! off-road state contributes one more component predicted by the planar
//! model.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, EdgeStats, GeoPoint, PathCandidate, RoadGraph, OFF_ROAD};
use crate::motion::{
    edge_transform, ground_predict, observation_matrix, observation_moments, road_predict,
    EdgeTransform, GroundBelief, NoiseConfig, RoadBelief, RoadState,
};
use crate::numeric::{log_normal_pdf, log_normal_pdf2, log_sum_exp, symmetrize};
use crate::transition::{reachable_positions, transition_probability_at, TransitionParams};

/// Result of `f_N(x; X y, Y) f_N(y; z, Z) = f_N(x; a, A) f_N(y; b, B)`.
#[derive(Clone, Debug)]
pub struct GaussianProduct {
    /// `a = X z`
    pub marginal_mean: DVector<f64>,
    /// `A = X Z Xᵀ + Y`
    pub marginal_cov: DMatrix<f64>,
    /// `W = Z Xᵀ A⁻¹`
    pub gain: DMatrix<f64>,
    /// `B = Z − W A Wᵀ`
    pub posterior_cov: DMatrix<f64>,
    prior_mean: DVector<f64>,
}

impl GaussianProduct {
    /// `b = z + W (x − X z)`
    pub fn posterior_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.prior_mean + &self.gain * (x - &self.marginal_mean)
    }
}

pub fn gaussian_product(
    x_map: &DMatrix<f64>,
    y_var: &DMatrix<f64>,
    z_mean: &DVector<f64>,
    z_var: &DMatrix<f64>,
) -> Result<GaussianProduct> {
    let marginal_mean = x_map * z_mean;
    let marginal_cov = x_map * z_var * x_map.transpose() + y_var;
    let inv = marginal_cov
        .clone()
        .try_inverse()
        .ok_or(Error::SingularCovariance("gaussian product"))?;
    let gain = z_var * x_map.transpose() * inv;
    let posterior_cov = z_var - &gain * &marginal_cov * gain.transpose();
    Ok(GaussianProduct {
        marginal_mean,
        marginal_cov,
        gain,
        posterior_cov,
        prior_mean: z_mean.clone(),
    })
}

/// Soft edge membership `f_N(d̄; d, Δd²)` of a road state.
pub fn edge_membership_density(x: &RoadState, stats: &EdgeStats) -> f64 {
    log_normal_pdf(stats.mean(), x.d, stats.spread().powi(2)).exp()
}

/// Log of the unnormalized prior predictive weight of an edge:
/// `f_N(d̄; O_r ã, O_r R̃ O_rᵀ + Δd²)`.
pub fn log_edge_predictive_weight(belief: &RoadBelief, stats: &EdgeStats) -> f64 {
    log_normal_pdf(
        stats.mean(),
        belief.mean[0],
        belief.cov[(0, 0)] + stats.spread().powi(2),
    )
}

pub fn edge_predictive_weight(belief: &RoadBelief, stats: &EdgeStats) -> f64 {
    log_edge_predictive_weight(belief, stats).exp()
}

/// Conditions a road prediction on the vehicle lying on the edge.
pub fn condition_on_edge(belief: &RoadBelief, stats: &EdgeStats) -> RoadBelief {
    let s = belief.cov[(0, 0)] + stats.spread().powi(2);
    let w = belief.cov.column(0) / s;
    let mean = belief.mean + w * (stats.mean() - belief.mean[0]);
    let cov = belief.cov - w * s * w.transpose();
    RoadBelief::new(mean, symmetrize(&cov))
}

/// A particle's motion belief: on an edge (road coordinates measured from
/// the edge start, plus the equivalent ground belief) or off-road.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MotionBelief {
    OnRoad {
        edge: EdgeId,
        road: RoadBelief,
        ground: GroundBelief,
    },
    OffRoad {
        ground: GroundBelief,
    },
}

impl MotionBelief {
    /// On-road belief with `road` measured from the start of `edge`.
    pub fn on_edge(graph: &RoadGraph, edge: EdgeId, road: RoadBelief) -> Result<Self> {
        let e = graph.get(edge)?;
        let t = EdgeTransform::new(e.start, e.end, 0.0)?;
        Ok(Self::OnRoad {
            edge,
            road,
            ground: t.to_ground(&road),
        })
    }

    pub fn edge(&self) -> EdgeId {
        match self {
            Self::OnRoad { edge, .. } => *edge,
            Self::OffRoad { .. } => OFF_ROAD,
        }
    }

    pub fn is_on_road(&self) -> bool {
        matches!(self, Self::OnRoad { .. })
    }

    pub fn ground(&self) -> &GroundBelief {
        match self {
            Self::OnRoad { ground, .. } | Self::OffRoad { ground } => ground,
        }
    }

    /// Re-expresses a belief with negative mean speed on the reverse twin of
    /// its edge, so that paths can always be searched forward. The ground
    /// belief is unchanged.
    pub fn oriented(self, graph: &RoadGraph) -> Self {
        match self {
            Self::OnRoad { edge, road, ground } if road.mean[1] < 0.0 => {
                match graph.edge(edge).and_then(|e| e.twin.map(|t| (t, e.length))) {
                    Some((twin, length)) => Self::OnRoad {
                        edge: twin,
                        road: road.reversed(length),
                        ground,
                    },
                    None => self,
                }
            }
            other => other,
        }
    }
}

/// What a mixture component predicts the next edge to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    OffRoad,
    /// The edge at `position` of the component's path.
    Edge {
        edge: EdgeId,
        position: usize,
    },
}

impl Target {
    pub fn edge(&self) -> EdgeId {
        match self {
            Target::OffRoad => OFF_ROAD,
            Target::Edge { edge, .. } => *edge,
        }
    }

    pub fn is_road(&self) -> bool {
        matches!(self, Target::Edge { .. })
    }
}

/// Prior prediction for one (path, edge) component.
#[derive(Clone, Debug)]
pub struct EdgePrediction {
    pub target: Target,
    /// Log prior weight; the components of one path sum to one.
    pub log_weight: f64,
    /// Edge-conditioned road belief in path coordinates (on-road only).
    pub road: Option<RoadBelief>,
    pub transform: Option<EdgeTransform>,
    /// Start distance of the target edge on its path.
    pub d_alpha: f64,
    pub ground: GroundBelief,
    pub e: Vector2<f64>,
    pub q: Matrix2<f64>,
}

impl EdgePrediction {
    fn off_road(log_weight: f64, ground: GroundBelief, cfg: &NoiseConfig) -> Self {
        let (e, q) = observation_moments(&ground, cfg);
        Self {
            target: Target::OffRoad,
            log_weight,
            road: None,
            transform: None,
            d_alpha: 0.0,
            ground,
            e,
            q,
        }
    }

    pub fn log_likelihood(&self, y: &GeoPoint) -> Result<f64> {
        log_normal_pdf2(&Vector2::new(y.x, y.y), &self.e, &self.q)
    }
}

/// Road components of `path` reachable from the source, each weighted by its
/// unnormalized log edge predictive density.
fn road_components(
    source: &MotionBelief,
    path: &PathCandidate,
    cfg: &NoiseConfig,
) -> Result<Vec<EdgePrediction>> {
    let predicted = match source {
        MotionBelief::OnRoad { edge, road, .. } => {
            if path.first_edge() != Some(*edge) {
                return Err(Error::DisconnectedPath {
                    from: *edge,
                    to: path.first_edge().unwrap_or(OFF_ROAD),
                });
            }
            road_predict(road, cfg)
        }
        MotionBelief::OffRoad { ground } => {
            edge_transform(path, 0)?.to_road(&ground_predict(ground, cfg))
        }
    };
    reachable_positions(source.edge(), path)
        .map(|k| {
            let stats = path.edge_stats(k)?;
            let conditioned = condition_on_edge(&predicted, &stats);
            let transform = edge_transform(path, k)?;
            let ground = transform.to_ground(&conditioned);
            let (e, q) = observation_moments(&ground, cfg);
            Ok(EdgePrediction {
                target: Target::Edge {
                    edge: path.segments()[k].edge,
                    position: k,
                },
                log_weight: log_edge_predictive_weight(&predicted, &stats),
                road: Some(conditioned),
                transform: Some(transform),
                d_alpha: stats.d_alpha,
                ground,
                e,
                q,
            })
        })
        .collect()
}

/// Rescales road component weights to sum to `mass`.
fn normalize_road(components: &mut [EdgePrediction], mass: f64) {
    let total = log_sum_exp(&components.iter().map(|c| c.log_weight).collect::<Vec<_>>());
    for c in components {
        c.log_weight += mass.ln() - total;
    }
}

/// Components for one candidate path, with prior weights normalized over the
/// path's edges and the off-road state.
///
/// Road components are weighted by the edge predictive density times the
/// transition probability, normalized among the path's edges and scaled by
/// the total road transition mass; the off-road component gets its
/// transition probability. The null path yields a single off-road component.
pub fn predict_for_path(
    source: &MotionBelief,
    path: &PathCandidate,
    params: &TransitionParams,
    cfg: &NoiseConfig,
) -> Result<Vec<EdgePrediction>> {
    let from = source.edge();
    let ground_prior = ground_predict(source.ground(), cfg);
    if path.is_null() {
        return Ok(vec![EdgePrediction::off_road(0.0, ground_prior, cfg)]);
    }

    let mut out = Vec::with_capacity(path.len() + 1);
    let mut road_mass = 0.0;
    for mut c in road_components(source, path, cfg)? {
        let Target::Edge { position, .. } = c.target else {
            continue;
        };
        let trans = transition_probability_at(from, Some(position), path, params);
        if trans > 0.0 {
            road_mass += trans;
            c.log_weight += trans.ln();
            out.push(c);
        }
    }
    normalize_road(&mut out, road_mass);

    let off = transition_probability_at(from, None, path, params);
    if off > 0.0 {
        out.push(EdgePrediction::off_road(off.ln(), ground_prior, cfg));
    }
    Ok(out)
}

/// One component of a particle's predictive mixture over all candidate paths.
#[derive(Clone, Debug)]
pub struct MixtureComponent {
    /// Index into the candidate path list.
    pub path: usize,
    pub prediction: EdgePrediction,
}

/// Combines per-path predictions into one mixture whose prior weights sum
/// to one. Road paths share the road mass equally; the off-road component,
/// identical on every path, appears once. The null path is used only when
/// there is no road path.
pub fn predict_mixture(
    source: &MotionBelief,
    paths: &[PathCandidate],
    params: &TransitionParams,
    cfg: &NoiseConfig,
) -> Result<Vec<MixtureComponent>> {
    let road_paths = paths.iter().filter(|p| !p.is_null()).count();
    if road_paths == 0 {
        let null = paths
            .iter()
            .position(|p| p.is_null())
            .ok_or(Error::EmptyCandidateSet)?;
        return Ok(predict_for_path(source, &paths[null], params, cfg)?
            .into_iter()
            .map(|prediction| MixtureComponent {
                path: null,
                prediction,
            })
            .collect());
    }
    let share = -(road_paths as f64).ln();
    let mut out = Vec::new();
    let mut off_seen = false;
    for (i, path) in paths.iter().enumerate().filter(|(_, p)| !p.is_null()) {
        for mut prediction in predict_for_path(source, path, params, cfg)? {
            if prediction.target.is_road() {
                prediction.log_weight += share;
            } else if off_seen {
                continue;
            } else {
                off_seen = true;
            }
            out.push(MixtureComponent {
                path: i,
                prediction,
            });
        }
    }
    Ok(out)
}

/// Posterior for one component after observing `y`.
#[derive(Clone, Debug)]
pub struct PosteriorComponent {
    pub target: Target,
    /// Unnormalized log posterior weight: prior weight plus log `f_N(y; e, Q)`.
    pub log_weight: f64,
    pub ground: GroundBelief,
    /// Road posterior in path coordinates (on-road only).
    pub road: Option<RoadBelief>,
    pub d_alpha: f64,
}

impl PosteriorComponent {
    /// Particle belief after this component is selected. Road coordinates
    /// are re-based at the start of the edge of `path` that contains the
    /// posterior mean distance, which may differ from the target edge when
    /// the observation pulls the estimate across an edge boundary; the
    /// ground belief is re-derived on that edge.
    pub fn to_motion_belief(&self, path: &PathCandidate) -> Result<MotionBelief> {
        let (Target::Edge { position, .. }, Some(road)) = (self.target, self.road) else {
            return Ok(MotionBelief::OffRoad {
                ground: self.ground,
            });
        };
        let index = path.index_at(road.mean[0]).unwrap_or(position);
        if index == position {
            let edge = self.target.edge();
            return Ok(MotionBelief::OnRoad {
                edge,
                road: road.shifted(self.d_alpha),
                ground: self.ground,
            });
        }
        let ground = edge_transform(path, index)?.to_ground(&road);
        let (d_alpha, _) = path.edge_distance_bounds(index)?;
        Ok(MotionBelief::OnRoad {
            edge: path.segments()[index].edge,
            road: road.shifted(d_alpha),
            ground,
        })
    }
}

/// Ground-coordinate Kalman update of one component, in covariance form with
/// the Joseph correction (the projected on-road prior covariance is rank 2).
pub fn kalman_update(
    pred: &EdgePrediction,
    y: &GeoPoint,
    cfg: &NoiseConfig,
) -> Result<PosteriorComponent> {
    let o = observation_matrix();
    let chol = pred
        .q
        .cholesky()
        .ok_or(Error::SingularCovariance("innovation covariance"))?;
    let r = &pred.ground.cov;
    // A = R Oᵀ Q⁻¹, via Q Aᵀ = O R.
    let gain = chol.solve(&(o * r)).transpose();
    let yv = Vector2::new(y.x, y.y);
    let mean = pred.ground.mean + gain * (yv - pred.e);
    let i_ko = Matrix4::identity() - gain * o;
    let cov = i_ko * r * i_ko.transpose() + gain * gain.transpose() * cfg.sigma2_y;
    let ground = GroundBelief::new(mean, symmetrize(&cov));
    let log_lik = log_normal_pdf2(&yv, &pred.e, &pred.q)?;
    let road = pred.transform.map(|t| t.to_road(&ground));
    Ok(PosteriorComponent {
        target: pred.target,
        log_weight: pred.log_weight + log_lik,
        ground,
        road,
        d_alpha: pred.d_alpha,
    })
}
