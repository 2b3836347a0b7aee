//! Point-state transition kernel shared by the simulator and the bootstrap
//! filter's proposal.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{EdgeId, GeoPoint, RoadGraph, OFF_ROAD};
use crate::motion::{
    ground_transition, road_transition, EdgeTransform, GroundState, NoiseConfig, RoadState,
};
use crate::transition::TransitionParams;

/// An exact vehicle state: on an edge (distance from the edge start and
/// signed speed) or off-road in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PointState {
    OnRoad { edge: EdgeId, state: RoadState },
    OffRoad(GroundState),
}

impl PointState {
    pub fn edge(&self) -> EdgeId {
        match self {
            PointState::OnRoad { edge, .. } => *edge,
            PointState::OffRoad(_) => OFF_ROAD,
        }
    }

    pub fn is_on_road(&self) -> bool {
        matches!(self, PointState::OnRoad { .. })
    }

    pub fn to_ground(&self, graph: &RoadGraph) -> Result<GroundState> {
        match self {
            PointState::OnRoad { edge, state } => {
                Ok(edge_frame(graph, *edge)?.to_ground_state(state))
            }
            PointState::OffRoad(g) => Ok(*g),
        }
    }

    pub fn position(&self, graph: &RoadGraph) -> Result<GeoPoint> {
        Ok(self.to_ground(graph)?.position())
    }
}

fn edge_frame(graph: &RoadGraph, edge: EdgeId) -> Result<EdgeTransform> {
    let e = graph.get(edge)?;
    EdgeTransform::new(e.start, e.end, 0.0)
}

/// One step of the data-generating process.
#[derive(Clone, Copy, Debug)]
pub struct Kernel<'a> {
    pub graph: &'a RoadGraph,
    pub noise: NoiseConfig,
    pub params: TransitionParams,
    /// Keep the ground speed's magnitude when entering a road.
    pub preserve_speed: bool,
}

impl<'a> Kernel<'a> {
    pub fn new(graph: &'a RoadGraph, noise: NoiseConfig, params: TransitionParams) -> Self {
        Self {
            graph,
            noise,
            params,
            preserve_speed: false,
        }
    }

    /// Samples the next state.
    ///
    /// On-road states leave the road with probability `π_off` and then move
    /// in the plane; otherwise they advance along the edge, turn onto a
    /// random successor at each edge end and flip onto the reverse edge
    /// when the speed turns negative. Off-road states move in the plane and
    /// enter the nearest edge with probability `π_on`.
    pub fn step<R: Rng + ?Sized>(&self, x: &PointState, rng: &mut R) -> Result<PointState> {
        match *x {
            PointState::OnRoad { edge, state } => {
                if rng.random_bool(self.params.pi_off.clamp(0.0, 1.0)) {
                    let ground = edge_frame(self.graph, edge)?.to_ground_state(&state);
                    Ok(PointState::OffRoad(self.advance_ground(&ground, rng)))
                } else {
                    self.advance_road(edge, &state, rng)
                }
            }
            PointState::OffRoad(ground) => {
                let moved = self.advance_ground(&ground, rng);
                if rng.random_bool(self.params.pi_on.clamp(0.0, 1.0)) {
                    if let Some(entered) = self.enter_nearest(&moved, rng)? {
                        return Ok(entered);
                    }
                }
                Ok(PointState::OffRoad(moved))
            }
        }
    }

    fn advance_ground<R: Rng + ?Sized>(&self, x: &GroundState, rng: &mut R) -> GroundState {
        let (g, gamma) = ground_transition(self.noise.dt);
        let sd = self.noise.sigma2_g.sqrt();
        let w = nalgebra::Vector2::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * sd;
        GroundState::from_vector(&(g * x.to_vector() + gamma * w))
    }

    fn advance_road<R: Rng + ?Sized>(
        &self,
        edge: EdgeId,
        x: &RoadState,
        rng: &mut R,
    ) -> Result<PointState> {
        let (g, gamma) = road_transition(self.noise.dt);
        let w = rng.sample::<f64, _>(StandardNormal) * self.noise.sigma2_r.sqrt();
        let next = RoadState::from_vector(&(g * x.to_vector() + gamma * w));
        self.settle(edge, next, rng)
    }

    /// Brings a road state that may have run past its edge back within the
    /// bounds of some edge.
    fn settle<R: Rng + ?Sized>(
        &self,
        mut edge: EdgeId,
        mut x: RoadState,
        rng: &mut R,
    ) -> Result<PointState> {
        let mut current = self.graph.get(edge)?;
        if x.v < 0.0 {
            match current.twin {
                Some(twin) => {
                    x = RoadState::new(current.length - x.d, -x.v);
                    edge = twin;
                    current = self.graph.get(edge)?;
                }
                None => x.v = 0.0,
            }
        }
        while x.d > current.length {
            let onward: Vec<EdgeId> = current
                .successors
                .iter()
                .copied()
                .filter(|&s| Some(s) != current.twin)
                .collect();
            let choices = if onward.is_empty() {
                &current.successors
            } else {
                &onward
            };
            match choices.choose(rng) {
                Some(&next) => {
                    x.d -= current.length;
                    edge = next;
                    current = self.graph.get(edge)?;
                }
                None if self.params.pi_off > 0.0 => {
                    // Dead end: wait at the end until the vehicle leaves the road.
                    x = RoadState::new(current.length, 0.0);
                }
                None => return Err(Error::Stuck(edge)),
            }
        }
        x.d = x.d.max(0.0);
        Ok(PointState::OnRoad { edge, state: x })
    }

    /// Projects a ground state onto the nearest edge (ties broken uniformly).
    pub fn enter_nearest<R: Rng + ?Sized>(
        &self,
        x: &GroundState,
        rng: &mut R,
    ) -> Result<Option<PointState>> {
        let Some((_, nearest)) = self.graph.nearest_edges(&x.position()) else {
            return Ok(None);
        };
        let edge = *nearest.choose(rng).expect("nearest edge set is non-empty");
        let e = self.graph.get(edge)?;
        let mut state = edge_frame(self.graph, edge)?.enter(x, self.preserve_speed);
        state.d = e.project(&x.position());
        Ok(Some(self.settle(edge, state, rng)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn still() -> NoiseConfig {
        NoiseConfig {
            sigma2_r: 0.0,
            sigma2_g: 0.0,
            sigma2_y: 1.0,
            dt: 1.0,
        }
    }

    fn on_only() -> TransitionParams {
        TransitionParams::new(0.0, 1.0).unwrap()
    }

    fn chain(n: u64) -> RoadGraph {
        let recs: Vec<EdgeRecord> = (0..n)
            .map(|i| {
                let x = 10.0 * i as f64;
                EdgeRecord::new(
                    i + 1,
                    vec![GeoPoint::new(x, 0.0), GeoPoint::new(x + 10.0, 0.0)],
                )
            })
            .collect();
        RoadGraph::build(&recs).unwrap()
    }

    #[test]
    fn noise_free_advance() {
        let g = chain(3);
        let k = Kernel::new(&g, still(), on_only());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = PointState::OnRoad {
            edge: 1,
            state: RoadState::new(2.0, 3.0),
        };
        assert_eq!(
            k.step(&x, &mut rng).unwrap(),
            PointState::OnRoad {
                edge: 1,
                state: RoadState::new(5.0, 3.0)
            }
        );
        let x = PointState::OnRoad {
            edge: 1,
            state: RoadState::new(8.0, 15.0),
        };
        assert_eq!(
            k.step(&x, &mut rng).unwrap(),
            PointState::OnRoad {
                edge: 3,
                state: RoadState::new(3.0, 15.0)
            }
        );
    }

    #[test]
    fn dead_end_without_off_road_is_stuck() {
        let g = chain(1);
        let k = Kernel::new(&g, still(), on_only());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = PointState::OnRoad {
            edge: 1,
            state: RoadState::new(8.0, 5.0),
        };
        assert!(matches!(k.step(&x, &mut rng), Err(Error::Stuck(1))));
    }

    #[test]
    fn dead_end_waits_when_leaving_is_possible() {
        let g = chain(1);
        let k = Kernel::new(
            &g,
            still(),
            TransitionParams::new(0.5, 1.0 - 1e-12).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = PointState::OnRoad {
            edge: 1,
            state: RoadState::new(8.0, 5.0),
        };
        assert_eq!(
            k.step(&x, &mut rng).unwrap(),
            PointState::OnRoad {
                edge: 1,
                state: RoadState::new(10.0, 0.0)
            }
        );
    }

    #[test]
    fn negative_speed_flips_to_twin() {
        let g = RoadGraph::grid(2, 3, 10.0).unwrap();
        let k = Kernel::new(&g, still(), on_only());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = g.get(1).unwrap();
        let x = PointState::OnRoad {
            edge: 1,
            state: RoadState::new(6.0, -2.0),
        };
        let y = k.step(&x, &mut rng).unwrap();
        assert_eq!(
            y,
            PointState::OnRoad {
                edge: e.twin.unwrap(),
                state: RoadState::new(6.0, 2.0)
            }
        );
        assert_eq!(x.position(&g).unwrap().x - 2.0, y.position(&g).unwrap().x);
    }

    #[test]
    fn turns_avoid_u_turns_when_possible() {
        let g = RoadGraph::grid(3, 3, 10.0).unwrap();
        let k = Kernel::new(&g, still(), on_only());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = PointState::OnRoad {
                edge: 1,
                state: RoadState::new(9.0, 2.0),
            };
            let y = k.step(&x, &mut rng).unwrap();
            assert_ne!(y.edge(), g.get(1).unwrap().twin.unwrap());
            assert!(g.get(1).unwrap().successors.contains(&y.edge()));
        }
    }

    #[test]
    fn on_road_states_stay_within_edge_bounds() {
        let g = RoadGraph::grid(5, 5, 50.0).unwrap();
        let noise = NoiseConfig {
            sigma2_r: 0.5,
            sigma2_g: 0.5,
            sigma2_y: 1.0,
            dt: 5.0,
        };
        let k = Kernel::new(&g, noise, TransitionParams::new(0.3, 0.9).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = PointState::OnRoad {
            edge: 1,
            state: RoadState::new(0.0, 0.0),
        };
        for _ in 0..5000 {
            x = k.step(&x, &mut rng).unwrap();
            if let PointState::OnRoad { edge, state } = x {
                assert!(
                    state.d >= 0.0 && state.d <= g.get(edge).unwrap().length,
                    "{state:?}"
                );
            }
        }
    }

    #[test]
    fn entry_projects_onto_nearest_edge() {
        let g = chain(2);
        let k = Kernel::new(&g, still(), TransitionParams::new(0.0, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PointState::OffRoad(GroundState::new(3.0, 3.0, 2.0, 4.0));
        match k.step(&x, &mut rng).unwrap() {
            PointState::OnRoad { edge, state } => {
                assert_eq!(edge, 1);
                assert_eq!(state.d, 6.0);
                assert_eq!(state.v, 3.0);
            }
            other => panic!("{other:?}"),
        }
        let k = Kernel {
            preserve_speed: true,
            ..k
        };
        let PointState::OnRoad { state, .. } = k.step(&x, &mut rng).unwrap() else {
            panic!()
        };
        assert_eq!(state.v, 5.0);
    }
}
