use serde::{Deserialize, Serialize};

use super::{EdgeId, GeoPoint, RoadGraph};
use crate::error::{Error, Result};

/// Geometry of one edge as it appears on a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub edge: EdgeId,
    pub start: GeoPoint,
    pub end: GeoPoint,
    pub length: f64,
}

/// Start and end distance of an edge along a particular path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeStats {
    pub d_alpha: f64,
    pub d_omega: f64,
}

impl EdgeStats {
    pub fn new(d_alpha: f64, d_omega: f64) -> Self {
        Self { d_alpha, d_omega }
    }

    /// Edge midpoint in path distance.
    pub fn mean(&self) -> f64 {
        0.5 * (self.d_omega + self.d_alpha)
    }

    /// Standard deviation of a uniform distribution over the edge.
    pub fn spread(&self) -> f64 {
        (self.d_omega - self.d_alpha) / 12f64.sqrt()
    }
}

/// An ordered, connected sequence of edges parameterized by arc length, or
/// the off-road pseudo-path when empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCandidate {
    segments: Vec<Segment>,
    /// Distances at edge boundaries: `cumulative[0] = 0`, `cumulative[k]`
    /// is the distance at the end of the k-th edge.
    cumulative: Vec<f64>,
}

impl PathCandidate {
    /// The off-road pseudo-path.
    pub fn null() -> Self {
        Self {
            segments: Vec::new(),
            cumulative: vec![0.0],
        }
    }

    /// Builds a path from edge ids, checking that each edge is a successor of
    /// the one before it.
    pub fn new(graph: &RoadGraph, edges: &[EdgeId]) -> Result<Self> {
        let mut segments = Vec::with_capacity(edges.len());
        for (k, &id) in edges.iter().enumerate() {
            let e = graph.get(id)?;
            if k > 0 {
                let prev = graph.get(edges[k - 1])?;
                if !prev.successors.contains(&id) {
                    return Err(Error::DisconnectedPath {
                        from: prev.id,
                        to: id,
                    });
                }
            }
            segments.push(Segment {
                edge: id,
                start: e.start,
                end: e.end,
                length: e.length,
            });
        }
        Ok(Self::from_segments(segments))
    }

    pub(crate) fn from_segments(segments: Vec<Segment>) -> Self {
        let mut cumulative = Vec::with_capacity(segments.len() + 1);
        cumulative.push(0.0);
        let mut total = 0.0;
        for s in &segments {
            total += s.length;
            cumulative.push(total);
        }
        Self {
            segments,
            cumulative,
        }
    }

    pub fn is_null(&self) -> bool {
        self.segments.is_empty()
    }

    /// Number of edges on the path.
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.segments.iter().map(|s| s.edge)
    }

    pub fn edge_ids(&self) -> Vec<EdgeId> {
        self.edges().collect()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, index: usize) -> Result<&Segment> {
        self.segments.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.segments.len(),
        })
    }

    pub fn first_edge(&self) -> Option<EdgeId> {
        self.segments.first().map(|s| s.edge)
    }

    pub fn last_edge(&self) -> Option<EdgeId> {
        self.segments.last().map(|s| s.edge)
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().expect("cumulative always holds d_0")
    }

    /// First position of `edge` on the path.
    pub fn position_of(&self, edge: EdgeId) -> Option<usize> {
        self.segments.iter().position(|s| s.edge == edge)
    }

    /// `(d_alpha, d_omega)` of the edge at `index` along this path.
    pub fn edge_distance_bounds(&self, index: usize) -> Result<(f64, f64)> {
        self.segment(index)?;
        Ok((self.cumulative[index], self.cumulative[index + 1]))
    }

    pub fn edge_stats(&self, index: usize) -> Result<EdgeStats> {
        let (a, w) = self.edge_distance_bounds(index)?;
        Ok(EdgeStats::new(a, w))
    }

    /// Index of the edge containing arc length `d`, clamped to the first or
    /// last edge when `d` lies outside the path. `None` for the null path.
    pub fn index_at(&self, d: f64) -> Option<usize> {
        if self.is_null() {
            return None;
        }
        Some(
            self.cumulative[1..]
                .partition_point(|&c| c < d)
                .min(self.len() - 1),
        )
    }

    /// Location at arc length `d`, interpolating linearly on the edge that
    /// contains it. Boundary distances map exactly to boundary vertices.
    pub fn locate(&self, d: f64) -> Result<GeoPoint> {
        let total = self.total_length();
        if self.is_null() || !(0.0..=total).contains(&d) {
            return Err(Error::DistanceOutOfRange {
                distance: d,
                length: total,
            });
        }
        let k = self.index_at(d).expect("non-null path");
        let seg = &self.segments[k];
        let (lo, hi) = (self.cumulative[k], self.cumulative[k + 1]);
        if d == lo {
            return Ok(seg.start);
        }
        if d == hi {
            return Ok(seg.end);
        }
        let t = (d - lo) / (hi - lo);
        Ok(GeoPoint::new(
            seg.start.x + (seg.end.x - seg.start.x) * t,
            seg.start.y + (seg.end.y - seg.start.y) * t,
        ))
    }
}
