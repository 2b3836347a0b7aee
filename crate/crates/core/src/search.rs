//! Candidate path generation: destination edges near the observation,
//! reached by A* from the particle's current edge.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use lru::LruCache;
use nalgebra::Matrix2;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, GeoPoint, NodeId, PathCandidate, RoadGraph};
use crate::inference::MotionBelief;
use crate::motion::{ground_predict, observation_moments, NoiseConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Destination disc radius in predictive standard deviations.
    pub sigma_radius: f64,
    /// Cost cutoff as a multiple of the predicted travel distance.
    pub max_path_length: f64,
    pub max_candidates: usize,
    pub cache_size: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            sigma_radius: 3.0,
            max_path_length: 2.0,
            max_candidates: 32,
            cache_size: 10_000,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_radius >= 1.0 && self.sigma_radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_radius must be >= 1, got {}",
                self.sigma_radius
            )));
        }
        if !(self.max_path_length > 0.0 && self.max_path_length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "max_path_length must be positive, got {}",
                self.max_path_length
            )));
        }
        if self.max_candidates == 0 || self.cache_size == 0 {
            return Err(Error::InvalidParameter(
                "max_candidates and cache_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Largest eigenvalue of a symmetric 2×2 matrix.
pub fn max_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_gap = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    half_trace + half_gap.hypot(0.5 * (m[(0, 1)] + m[(1, 0)]))
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    estimate: f64,
    node: NodeId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on estimate, ties broken by node id for determinism.
        other
            .estimate
            .total_cmp(&self.estimate)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* over nodes with edge length as cost and straight-line distance to the
/// goal as heuristic. Returns the cost and the edges traversed, or `None`
/// when the goal is unreachable.
pub fn shortest_path(graph: &RoadGraph, from: NodeId, to: NodeId) -> Option<(f64, Vec<EdgeId>)> {
    let goal = graph.node(to);
    let h = |n: NodeId| graph.node(n).distance(&goal);
    let mut best: HashMap<NodeId, f64> = HashMap::from([(from, 0.0)]);
    let mut came_by: HashMap<NodeId, EdgeId> = HashMap::new();
    let mut closed: HashSet<NodeId> = HashSet::new();
    let mut open = BinaryHeap::from([Frontier {
        estimate: h(from),
        node: from,
    }]);

    while let Some(Frontier { node, .. }) = open.pop() {
        if node == to {
            let mut edges = Vec::new();
            let mut at = to;
            while let Some(&e) = came_by.get(&at) {
                edges.push(e);
                at = graph.edge(e)?.from_node;
                if at == from {
                    break;
                }
            }
            edges.reverse();
            return Some((best[&to], edges));
        }
        if !closed.insert(node) {
            continue;
        }
        let cost = best[&node];
        for &e in graph.outgoing(node) {
            let edge = graph.edge(e)?;
            let next = edge.to_node;
            let through = cost + edge.length;
            if through < best.get(&next).copied().unwrap_or(f64::INFINITY) {
                best.insert(next, through);
                came_by.insert(next, e);
                open.push(Frontier {
                    estimate: through + h(next),
                    node: next,
                });
            }
        }
    }
    None
}

type CachedRoute = Option<(f64, Vec<EdgeId>)>;

/// Path search with an LRU cache of shortest routes keyed by
/// (current edge, destination node). Safe to share between threads.
pub struct PathSearcher {
    cfg: SearchConfig,
    cache: Mutex<LruCache<(EdgeId, NodeId), CachedRoute>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SearchStats {
    pub hits: u64,
    pub misses: u64,
}

impl SearchStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

impl PathSearcher {
    pub fn new(cfg: SearchConfig) -> Result<Self> {
        cfg.validate()?;
        let capacity = NonZeroUsize::new(cfg.cache_size).expect("validated");
        Ok(Self {
            cfg,
            cache: Mutex::new(LruCache::new(capacity)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    pub fn stats(&self) -> SearchStats {
        SearchStats {
            hits: self.hits.load(AtomicOrdering::Relaxed),
            misses: self.misses.load(AtomicOrdering::Relaxed),
        }
    }

    /// Shortest route from the end of `edge` to `destination`, through the cache.
    pub fn route(
        &self,
        graph: &RoadGraph,
        edge: EdgeId,
        destination: NodeId,
    ) -> Result<CachedRoute> {
        let key = (edge, destination);
        if let Some(found) = self.cache.lock().get(&key) {
            self.hits.fetch_add(1, AtomicOrdering::Relaxed);
            return Ok(found.clone());
        }
        self.misses.fetch_add(1, AtomicOrdering::Relaxed);
        let route = shortest_path(graph, graph.get(edge)?.to_node, destination);
        self.cache.lock().put(key, route.clone());
        Ok(route)
    }

    /// Candidate paths for a particle given the next observation.
    ///
    /// On-road particles get paths that start with their current edge and
    /// end on an edge near `y`; off-road particles get one single-edge entry
    /// path per nearby edge. The null path is always last.
    pub fn candidate_paths(
        &self,
        graph: &RoadGraph,
        belief: &MotionBelief,
        y: &GeoPoint,
        noise: &NoiseConfig,
    ) -> Result<Vec<PathCandidate>> {
        let predicted = ground_predict(belief.ground(), noise);
        let (_, q) = observation_moments(&predicted, noise);
        let radius = self.cfg.sigma_radius * max_eigenvalue(&q).max(0.0).sqrt();
        let destinations = graph.edges_near(y, radius);

        let mut scored: Vec<(f64, Vec<EdgeId>)> = Vec::new();
        match belief {
            MotionBelief::OffRoad { .. } => {
                scored.extend(destinations.iter().map(|&e| (0.0, vec![e])))
            }
            MotionBelief::OnRoad { edge, .. } => {
                scored.push((0.0, vec![*edge]));
                let ground = belief.ground();
                let speed = ground.mean[1].hypot(ground.mean[3]);
                let spread = max_eigenvalue(&q).max(0.0).sqrt();
                let travel = speed * noise.dt + self.cfg.sigma_radius * spread;
                let cutoff = self.cfg.max_path_length * travel + graph.max_edge_length();
                for &dest in destinations.iter().filter(|&&d| d != *edge) {
                    let Some((cost, route)) =
                        self.route(graph, *edge, graph.get(dest)?.from_node)?
                    else {
                        continue;
                    };
                    if cost > cutoff {
                        continue;
                    }
                    let mut edges = Vec::with_capacity(route.len() + 2);
                    edges.push(*edge);
                    edges.extend(route);
                    edges.push(dest);
                    scored.push((cost, edges));
                }
            }
        }

        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut seen = HashSet::new();
        let mut paths = Vec::new();
        for (_, edges) in scored {
            if paths.len() == self.cfg.max_candidates {
                break;
            }
            if seen.insert(edges.clone()) {
                paths.push(PathCandidate::new(graph, &edges)?);
            }
        }
        paths.push(PathCandidate::null());
        Ok(paths)
    }
}
