//! Directed road network: straight edges, node adjacency and a spatial index.
//!
//! Edges are ingested as polylines and split into straight sub-edges, so every
//! edge stored here is a single chord between two planar points. Coordinates
//! are assumed to be in a local planar projection (e.g. meters).

mod edgelist;
mod path;

pub use edgelist::{format_edge_list, parse_edge_list, read_edge_list, write_edge_list};
pub use path::{EdgeStats, PathCandidate, Segment};

use std::collections::HashMap;

use rstar::primitives::{GeomWithData, Line};
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge identifier. `0` is reserved for the off-road state.
pub type EdgeId = u64;

pub const OFF_ROAD: EdgeId = 0;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &GeoPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn as_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    // Bit pattern used to identify shared endpoints; folds -0.0 into 0.0.
    fn key(&self) -> (u64, u64) {
        ((self.x + 0.0).to_bits(), (self.y + 0.0).to_bits())
    }
}

/// One input record: an id and the polyline it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord {
    pub id: EdgeId,
    pub polyline: Vec<GeoPoint>,
}

impl EdgeRecord {
    pub fn new(id: EdgeId, polyline: Vec<GeoPoint>) -> Self {
        Self { id, polyline }
    }
}

/// A straight directed road segment.
#[derive(Clone, Debug)]
pub struct Edge {
    pub id: EdgeId,
    pub start: GeoPoint,
    pub end: GeoPoint,
    pub length: f64,
    pub successors: Vec<EdgeId>,
    /// The reverse-direction edge between the same two nodes, if any.
    pub twin: Option<EdgeId>,
    /// Id of the input record this chord was cut from.
    pub source: EdgeId,
    pub from_node: NodeId,
    pub to_node: NodeId,
}

impl Edge {
    /// Unit direction vector from start to end.
    pub fn direction(&self) -> (f64, f64) {
        (
            (self.end.x - self.start.x) / self.length,
            (self.end.y - self.start.y) / self.length,
        )
    }

    /// Offset along the edge of the orthogonal projection of `p`, clamped to `[0, length]`.
    pub fn project(&self, p: &GeoPoint) -> f64 {
        let (ux, uy) = self.direction();
        ((p.x - self.start.x) * ux + (p.y - self.start.y) * uy).clamp(0.0, self.length)
    }

    pub fn point_at(&self, offset: f64) -> GeoPoint {
        let (ux, uy) = self.direction();
        GeoPoint::new(self.start.x + ux * offset, self.start.y + uy * offset)
    }

    pub fn distance_to(&self, p: &GeoPoint) -> f64 {
        self.point_at(self.project(p)).distance(p)
    }
}

type SegmentEntry = GeomWithData<Line<[f64; 2]>, EdgeId>;
type NodeEntry = GeomWithData<[f64; 2], NodeId>;

/// Immutable directed road graph.
#[derive(Debug)]
pub struct RoadGraph {
    edges: Vec<Edge>,
    position: HashMap<EdgeId, usize>,
    nodes: Vec<GeoPoint>,
    outgoing: Vec<Vec<EdgeId>>,
    incoming: Vec<Vec<EdgeId>>,
    segments: RTree<SegmentEntry>,
    node_index: RTree<NodeEntry>,
    max_edge_length: f64,
}

impl RoadGraph {
    /// Builds a graph from polyline records, splitting each polyline into
    /// straight sub-edges. The first chord of a record keeps the record id;
    /// further chords get fresh ids above the largest input id, assigned in
    /// record order.
    pub fn build(records: &[EdgeRecord]) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut next_id = 1;
        for r in records {
            if r.id == OFF_ROAD {
                return Err(Error::ReservedEdgeId);
            }
            if !seen.insert(r.id) {
                return Err(Error::DuplicateEdge(r.id));
            }
            if r.polyline.len() < 2 {
                return Err(Error::ShortPolyline {
                    id: r.id,
                    vertices: r.polyline.len(),
                });
            }
            if r.polyline.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteCoordinate(r.id));
            }
            if r.polyline.windows(2).any(|w| w[0].distance(&w[1]) == 0.0) {
                return Err(Error::ZeroLengthEdge(r.id));
            }
            next_id = next_id.max(r.id + 1);
        }

        let mut chords = Vec::new();
        for r in records {
            for (k, w) in r.polyline.windows(2).enumerate() {
                let id = if k == 0 {
                    r.id
                } else {
                    next_id += 1;
                    next_id - 1
                };
                chords.push((id, r.id, w[0], w[1]));
            }
        }

        let mut node_of = HashMap::new();
        let mut nodes = Vec::new();
        let mut intern = |p: GeoPoint| -> NodeId {
            *node_of.entry(p.key()).or_insert_with(|| {
                nodes.push(p);
                nodes.len() - 1
            })
        };

        let mut edges: Vec<Edge> = chords
            .into_iter()
            .map(|(id, source, start, end)| Edge {
                id,
                start,
                end,
                length: start.distance(&end),
                successors: Vec::new(),
                twin: None,
                source,
                from_node: intern(start),
                to_node: intern(end),
            })
            .collect();
        edges.sort_by_key(|e| e.id);

        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        for e in &edges {
            outgoing[e.from_node].push(e.id);
            incoming[e.to_node].push(e.id);
        }
        let position: HashMap<EdgeId, usize> =
            edges.iter().enumerate().map(|(i, e)| (e.id, i)).collect();

        for i in 0..edges.len() {
            let succ = outgoing[edges[i].to_node].clone();
            let twin = succ
                .iter()
                .copied()
                .find(|s| edges[position[s]].to_node == edges[i].from_node);
            edges[i].successors = succ;
            edges[i].twin = twin;
        }

        let segments = RTree::bulk_load(
            edges
                .iter()
                .map(|e| GeomWithData::new(Line::new(e.start.as_array(), e.end.as_array()), e.id))
                .collect(),
        );
        let node_index = RTree::bulk_load(
            nodes
                .iter()
                .enumerate()
                .map(|(i, p)| GeomWithData::new(p.as_array(), i))
                .collect(),
        );
        let max_edge_length = edges.iter().map(|e| e.length).fold(0.0, f64::max);

        Ok(Self {
            edges,
            position,
            nodes,
            outgoing,
            incoming,
            segments,
            node_index,
            max_edge_length,
        })
    }

    /// Square grid of `rows × cols` nodes with edges in both directions
    /// between horizontal and vertical neighbours.
    pub fn grid(rows: usize, cols: usize, spacing: f64) -> Result<Self> {
        Self::build(&grid_records(rows, cols, spacing))
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.position.get(&id).map(|&i| &self.edges[i])
    }

    pub fn get(&self, id: EdgeId) -> Result<&Edge> {
        self.edge(id).ok_or(Error::UnknownEdge(id))
    }

    /// Edges in ascending id order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn nodes(&self) -> &[GeoPoint] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> GeoPoint {
        self.nodes[id]
    }

    pub fn outgoing(&self, node: NodeId) -> &[EdgeId] {
        &self.outgoing[node]
    }

    pub fn max_edge_length(&self) -> f64 {
        self.max_edge_length
    }

    /// Edges whose segment passes within `radius` of `p`, sorted by id.
    pub fn edges_near(&self, p: &GeoPoint, radius: f64) -> Vec<EdgeId> {
        let mut ids: Vec<EdgeId> = self
            .segments
            .locate_within_distance(p.as_array(), radius * radius)
            .map(|s| s.data)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Edges having an endpoint within `radius` of `p`, sorted by id.
    pub fn edges_with_endpoint_near(&self, p: &GeoPoint, radius: f64) -> Vec<EdgeId> {
        let mut ids: Vec<EdgeId> = self
            .node_index
            .locate_within_distance(p.as_array(), radius * radius)
            .flat_map(|n| {
                let node = n.data;
                self.outgoing[node]
                    .iter()
                    .chain(&self.incoming[node])
                    .copied()
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Edges at minimal distance from `p` (ties within 1e-9 included), with that distance.
    pub fn nearest_edges(&self, p: &GeoPoint) -> Option<(f64, Vec<EdgeId>)> {
        let nearest = self.segments.nearest_neighbor(p.as_array())?;
        let best = self.get(nearest.data).ok()?.distance_to(p);
        let mut ids = self.edges_near(p, best + 1e-9);
        ids.retain(|id| self.edges[self.position[id]].distance_to(p) <= best + 1e-9);
        Some((best, ids))
    }

    /// Input records equivalent to this graph (one straight chord per edge).
    pub fn to_records(&self) -> Vec<EdgeRecord> {
        self.edges
            .iter()
            .map(|e| EdgeRecord::new(e.id, vec![e.start, e.end]))
            .collect()
    }
}

/// Edge records for a bidirectional `rows × cols` node grid with the given spacing.
/// Ids are assigned row-major, horizontal edges before vertical ones.
pub fn grid_records(rows: usize, cols: usize, spacing: f64) -> Vec<EdgeRecord> {
    let at = |r: usize, c: usize| GeoPoint::new(c as f64 * spacing, r as f64 * spacing);
    let mut out = Vec::new();
    let mut id = 1;
    let mut push = |a: GeoPoint, b: GeoPoint| {
        out.push(EdgeRecord::new(id, vec![a, b]));
        out.push(EdgeRecord::new(id + 1, vec![b, a]));
        id += 2;
    };
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            push(at(r, c), at(r, c + 1));
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols {
            push(at(r, c), at(r + 1, c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: EdgeId, a: (f64, f64), b: (f64, f64)) -> EdgeRecord {
        EdgeRecord::new(id, vec![GeoPoint::new(a.0, a.1), GeoPoint::new(b.0, b.1)])
    }

    #[test]
    fn shared_endpoint_makes_successor() {
        let g = RoadGraph::build(&[
            seg(1, (0.0, 0.0), (1.0, 0.0)),
            seg(2, (1.0, 0.0), (1.0, 1.0)),
        ])
        .unwrap();
        assert_eq!(g.get(1).unwrap().successors, vec![2]);
        assert!(g.get(2).unwrap().successors.is_empty());
    }

    #[test]
    fn three_four_five() {
        let g = RoadGraph::build(&[seg(7, (0.0, 0.0), (3.0, 4.0))]).unwrap();
        assert_eq!(g.get(7).unwrap().length, 5.0);
    }

    #[test]
    fn grid_degree_matches_construction() {
        // Oracle: an interior node of a grid touches 4 neighbours, a border
        // node 3 and a corner 2; each neighbour contributes one outgoing edge.
        let n = 10;
        let g = RoadGraph::grid(n, n, 1.0).unwrap();
        assert_eq!(g.len(), 2 * (2 * n * (n - 1)));
        assert_eq!(g.len(), 360);
        for (i, p) in g.nodes().iter().enumerate() {
            let (r, c) = (p.y as usize, p.x as usize);
            let border = [r == 0, r == n - 1, c == 0, c == n - 1]
                .iter()
                .filter(|b| **b)
                .count();
            assert_eq!(g.outgoing(i).len(), 4 - border, "node {p:?}");
        }
        for e in g.edges() {
            assert!(e.twin.is_some());
            let t = g.get(e.twin.unwrap()).unwrap();
            assert_eq!((t.start, t.end), (e.end, e.start));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            RoadGraph::build(&[
                seg(1, (0.0, 0.0), (1.0, 0.0)),
                seg(1, (1.0, 0.0), (2.0, 0.0))
            ]),
            Err(Error::DuplicateEdge(1))
        ));
        assert!(matches!(
            RoadGraph::build(&[seg(3, (1.0, 1.0), (1.0, 1.0))]),
            Err(Error::ZeroLengthEdge(3))
        ));
        assert!(matches!(
            RoadGraph::build(&[seg(0, (0.0, 0.0), (1.0, 0.0))]),
            Err(Error::ReservedEdgeId)
        ));
        assert!(matches!(
            RoadGraph::build(&[EdgeRecord::new(4, vec![GeoPoint::new(0.0, 0.0)])]),
            Err(Error::ShortPolyline { id: 4, vertices: 1 })
        ));
    }

    #[test]
    fn polylines_split_into_chords() {
        let rec = EdgeRecord::new(
            5,
            vec![
                GeoPoint::new(0.0, 0.0),
                GeoPoint::new(10.0, 0.0),
                GeoPoint::new(10.0, 10.0),
            ],
        );
        let g = RoadGraph::build(&[rec, seg(2, (10.0, 10.0), (0.0, 10.0))]).unwrap();
        assert_eq!(g.len(), 3);
        let first = g.get(5).unwrap();
        assert_eq!(first.end, GeoPoint::new(10.0, 0.0));
        assert_eq!(first.successors, vec![6]);
        let second = g.get(6).unwrap();
        assert_eq!(second.source, 5);
        assert_eq!(second.successors, vec![2]);
    }

    #[test]
    fn spatial_queries_agree_with_brute_force() {
        let g = RoadGraph::grid(6, 6, 10.0).unwrap();
        let probes = [
            (3.0, 4.0),
            (25.0, 25.0),
            (50.0, 50.0),
            (-7.0, 12.0),
            (33.3, 0.1),
        ];
        for &(x, y) in &probes {
            let p = GeoPoint::new(x, y);
            for r in [0.5, 3.0, 8.0, 15.0] {
                let mut want: Vec<EdgeId> = g
                    .edges()
                    .iter()
                    .filter(|e| e.distance_to(&p) <= r)
                    .map(|e| e.id)
                    .collect();
                want.sort_unstable();
                assert_eq!(g.edges_near(&p, r), want, "p={p:?} r={r}");

                let mut want: Vec<EdgeId> = g
                    .edges()
                    .iter()
                    .filter(|e| e.start.distance(&p) <= r || e.end.distance(&p) <= r)
                    .map(|e| e.id)
                    .collect();
                want.sort_unstable();
                assert_eq!(g.edges_with_endpoint_near(&p, r), want);
            }
        }
    }

    #[test]
    fn nearest_edges_returns_twins() {
        let g = RoadGraph::grid(3, 3, 10.0).unwrap();
        let (d, ids) = g.nearest_edges(&GeoPoint::new(5.0, 2.0)).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(ids.len(), 2);
        let a = g.get(ids[0]).unwrap();
        assert_eq!(a.twin, Some(ids[1]));
    }
}
