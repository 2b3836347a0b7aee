//! Trajectory simulation with noisy position observations.

use std::io::{Read, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, GeoPoint, RoadGraph, OFF_ROAD};
use crate::kernel::{Kernel, PointState};
use crate::motion::{GroundState, NoiseConfig, RoadState};
use crate::transition::TransitionParams;

/// Where a trajectory begins. The vehicle always starts at rest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Start {
    /// Uniformly random edge and offset.
    #[default]
    Random,
    Edge {
        id: EdgeId,
        offset: f64,
    },
    Ground {
        x: f64,
        y: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub noise: NoiseConfig,
    pub params: TransitionParams,
    /// Number of observations, including the one at the start state.
    pub steps: usize,
    pub seed: u64,
    pub start: Start,
    pub preserve_speed: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            params: TransitionParams::default(),
            steps: 1000,
            seed: 0,
            start: Start::Random,
            preserve_speed: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if !self.params.is_valid() {
            return Err(Error::InvalidParameter(format!(
                "invalid transition parameters {:?}",
                self.params
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimRecord {
    pub step: usize,
    pub state: PointState,
    pub ground: GroundState,
    pub observation: GeoPoint,
}

impl SimRecord {
    pub fn edge(&self) -> EdgeId {
        self.state.edge()
    }
}

fn start_state<R: Rng + ?Sized>(
    graph: &RoadGraph,
    start: Start,
    rng: &mut R,
) -> Result<PointState> {
    match start {
        Start::Random => {
            let edge = graph
                .edges()
                .choose(rng)
                .ok_or_else(|| Error::Config("graph has no edges".into()))?;
            let offset = rng.random_range(0.0..=edge.length);
            Ok(PointState::OnRoad {
                edge: edge.id,
                state: RoadState::new(offset, 0.0),
            })
        }
        Start::Edge { id, offset } => {
            let edge = graph.get(id)?;
            if !(0.0..=edge.length).contains(&offset) {
                return Err(Error::DistanceOutOfRange {
                    distance: offset,
                    length: edge.length,
                });
            }
            Ok(PointState::OnRoad {
                edge: id,
                state: RoadState::new(offset, 0.0),
            })
        }
        Start::Ground { x, y } => Ok(PointState::OffRoad(GroundState::at_rest(GeoPoint::new(
            x, y,
        )))),
    }
}

/// Simulates `cfg.steps` observations by iterating the point-state kernel.
pub fn simulate<R: Rng + ?Sized>(
    graph: &RoadGraph,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<SimRecord>> {
    cfg.validate()?;
    let kernel = Kernel {
        preserve_speed: cfg.preserve_speed,
        ..Kernel::new(graph, cfg.noise, cfg.params)
    };
    let sd = cfg.noise.sigma2_y.sqrt();
    let mut state = start_state(graph, cfg.start, rng)?;
    let mut out = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if step > 0 {
            state = kernel.step(&state, rng)?;
        }
        let ground = state.to_ground(graph)?;
        let p = ground.position();
        let observation = GeoPoint::new(
            p.x + sd * rng.sample::<f64, _>(StandardNormal),
            p.y + sd * rng.sample::<f64, _>(StandardNormal),
        );
        out.push(SimRecord {
            step,
            state,
            ground,
            observation,
        });
    }
    Ok(out)
}

/// Simulation driven by a generator seeded from `cfg.seed`.
pub fn simulate_seeded(graph: &RoadGraph, cfg: &SimConfig) -> Result<Vec<SimRecord>> {
    simulate(graph, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

pub const SIM_HEADER: [&str; 10] = [
    "step", "edge_id", "d", "v", "l1", "v1", "l2", "v2", "y1", "y2",
];

pub fn write_records<W: Write>(records: &[SimRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SIM_HEADER)?;
    for r in records {
        let (d, v) = match r.state {
            PointState::OnRoad { state, .. } => (state.d.to_string(), state.v.to_string()),
            PointState::OffRoad(_) => (String::new(), String::new()),
        };
        let g = r.ground;
        w.write_record([
            r.step.to_string(),
            r.edge().to_string(),
            d,
            v,
            g.l1.to_string(),
            g.v1.to_string(),
            g.l2.to_string(),
            g.v2.to_string(),
            r.observation.x.to_string(),
            r.observation.y.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<SimRecord>> {
    let mut rd = csv::Reader::from_reader(reader);
    let header = rd.headers()?.clone();
    if header.iter().ne(SIM_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", SIM_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |k: usize| -> Result<f64> {
            row.get(k)
                .unwrap_or_default()
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("column {}: {e}", SIM_HEADER[k]),
                })
        };
        let step = row
            .get(0)
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::Parse {
                line,
                message: format!("step: {e}"),
            })?;
        let edge: EdgeId = row
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::Parse {
                line,
                message: format!("edge_id: {e}"),
            })?;
        let ground = GroundState::new(field(4)?, field(5)?, field(6)?, field(7)?);
        let state = if edge == OFF_ROAD {
            PointState::OffRoad(ground)
        } else {
            PointState::OnRoad {
                edge,
                state: RoadState::new(field(2)?, field(3)?),
            }
        };
        out.push(SimRecord {
            step,
            state,
            ground,
            observation: GeoPoint::new(field(8)?, field(9)?),
        });
    }
    Ok(out)
}
