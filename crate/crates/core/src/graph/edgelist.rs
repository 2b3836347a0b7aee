//! Plain-text edge lists: `id,x1,y1,x2,y2,...` per line, `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use super::{EdgeId, EdgeRecord, GeoPoint, RoadGraph};
use crate::error::{Error, Result};

pub fn parse_edge_list(text: &str) -> Result<Vec<EdgeRecord>> {
    let mut records = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: n + 1,
            message,
        };
        let mut fields = line.split(',').map(str::trim);
        let id: EdgeId = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|e| parse_err(format!("bad edge id: {e}")))?;
        let coords = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| parse_err(format!("bad coordinate {f:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if coords.len() % 2 != 0 {
            return Err(parse_err(format!(
                "odd number of coordinates ({})",
                coords.len()
            )));
        }
        let polyline = coords
            .chunks(2)
            .map(|c| GeoPoint::new(c[0], c[1]))
            .collect();
        records.push(EdgeRecord::new(id, polyline));
    }
    Ok(records)
}

pub fn format_edge_list(records: &[EdgeRecord]) -> String {
    let mut out = String::from("# id,x1,y1,x2,y2,...\n");
    for r in records {
        let _ = write!(out, "{}", r.id);
        for p in &r.polyline {
            let _ = write!(out, ",{},{}", p.x, p.y);
        }
        out.push('\n');
    }
    out
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<RoadGraph> {
    let text = std::fs::read_to_string(path)?;
    RoadGraph::build(&parse_edge_list(&text)?)
}

pub fn write_edge_list(graph: &RoadGraph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_edge_list(&graph.to_records()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_polylines() {
        let text = "# header\n1, 0,0, 3,4\n\n  # indented comment\n2,3,4,3,10,0,10\n";
        let recs = parse_edge_list(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].polyline.len(), 3);
        let g = RoadGraph::build(&recs).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.get(1).unwrap().length, 5.0);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_edge_list("1,0,0,1,1\n2,0,0,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_edge_list("# c\nx,0,0,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_edge_list("1,0,0,1,nope\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn serialization_round_trip_is_idempotent() {
        let text = "1,0,0,0.1,0.7,5.25,3\n9,5.25,3,-1e-3,2\n";
        let g1 = RoadGraph::build(&parse_edge_list(text).unwrap()).unwrap();
        let once = format_edge_list(&g1.to_records());
        let g2 = RoadGraph::build(&parse_edge_list(&once).unwrap()).unwrap();
        let twice = format_edge_list(&g2.to_records());
        assert_eq!(once, twice);
        for (a, b) in g1.edges().iter().zip(g2.edges()) {
            assert_eq!(
                (a.id, a.start, a.end, &a.successors),
                (b.id, b.start, b.end, &b.successors)
            );
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let g = RoadGraph::grid(3, 4, 50.0).unwrap();
        write_edge_list(&g, &path).unwrap();
        let h = read_edge_list(&path).unwrap();
        assert_eq!(g.to_records(), h.to_records());
    }
}
