//! Knit pattern cells: loading, endpoint partnering, tiling and stitching.
//!
//! A pattern cell is a tilable set of yarn polylines in the unit tile.
//! Copies of the cell are laid out on an N×M grid; curve endpoints are
//! partnered with the closest endpoint in one of the four neighbor copies,
//! which yields a degree-2 graph whose components are the full yarn curves.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::math::{vec3, Vec3};

/// Endpoints must lie within this distance of a tile boundary (tile units).
pub const EPS_EDGE: f64 = 1e-4;
/// Default partner matching tolerance (tile units).
pub const EPS_MATCH: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("no partner within {eps} for curve {curve} {end} at ({u}, {v})")]
    NoPartner {
        curve: usize,
        end: End,
        u: f64,
        v: f64,
        eps: f64,
    },
    #[error("ambiguous partner for curve {curve} {end}: candidates tie within {tie}")]
    Ambiguity { curve: usize, end: End, tie: f64 },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which end of a polyline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum End {
    Head,
    Tail,
}

impl End {
    pub fn opposite(self) -> End {
        match self {
            End::Head => End::Tail,
            End::Tail => End::Head,
        }
    }
}

impl fmt::Display for End {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            End::Head => write!(f, "head"),
            End::Tail => write!(f, "tail"),
        }
    }
}

/// Direction toward one of the four neighbor cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborDir {
    Left,
    Right,
    Bottom,
    Top,
}

impl NeighborDir {
    pub const ALL: [NeighborDir; 4] = [
        NeighborDir::Left,
        NeighborDir::Right,
        NeighborDir::Bottom,
        NeighborDir::Top,
    ];

    /// Cell offset (di, dj) of the neighbor.
    pub fn offset(self) -> (i64, i64) {
        match self {
            NeighborDir::Left => (-1, 0),
            NeighborDir::Right => (1, 0),
            NeighborDir::Bottom => (0, -1),
            NeighborDir::Top => (0, 1),
        }
    }

    pub fn opposite(self) -> NeighborDir {
        match self {
            NeighborDir::Left => NeighborDir::Right,
            NeighborDir::Right => NeighborDir::Left,
            NeighborDir::Bottom => NeighborDir::Top,
            NeighborDir::Top => NeighborDir::Bottom,
        }
    }
}

/// One yarn polyline of the pattern cell, in tile-local coordinates
/// (u, v in [0,1), height h in tile units).
#[derive(Debug, Clone)]
pub struct CellCurve {
    pub points: Vec<Vec3>,
    pub free_head: bool,
    pub free_tail: bool,
}

impl CellCurve {
    pub fn endpoint(&self, end: End) -> Vec3 {
        match end {
            End::Head => self.points[0],
            End::Tail => *self.points.last().unwrap(),
        }
    }

    pub fn is_free(&self, end: End) -> bool {
        match end {
            End::Head => self.free_head,
            End::Tail => self.free_tail,
        }
    }
}

/// A tilable knit pattern cell.
#[derive(Debug, Clone)]
pub struct PatternCell {
    pub curves: Vec<CellCurve>,
    /// Tile extent (du, dv) in UV units.
    pub tile: (f64, f64),
}

impl PatternCell {
    /// Check the cell invariants: ≥2 vertices per curve, distinct
    /// consecutive vertices, endpoints on a boundary or flagged free.
    pub fn validate(&self) -> Result<(), PatternError> {
        for (ci, curve) in self.curves.iter().enumerate() {
            if curve.points.len() < 2 {
                return Err(PatternError::Invariant(format!(
                    "curve {ci} has fewer than 2 vertices"
                )));
            }
            for w in curve.points.windows(2) {
                if w[0].distance(w[1]) == 0.0 {
                    return Err(PatternError::Invariant(format!(
                        "curve {ci} has a zero-length segment"
                    )));
                }
            }
            for end in [End::Head, End::Tail] {
                if curve.is_free(end) {
                    continue;
                }
                let p = curve.endpoint(end);
                let on_u = p.x.abs() <= EPS_EDGE || (p.x - 1.0).abs() <= EPS_EDGE;
                let on_v = p.y.abs() <= EPS_EDGE || (p.y - 1.0).abs() <= EPS_EDGE;
                if !on_u && !on_v {
                    return Err(PatternError::Invariant(format!(
                        "curve {ci} {end} endpoint ({}, {}) is off-boundary and not free",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Where an endpoint connects: partner curve/end in the `neighbor` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndpointLabel {
    pub curve: usize,
    pub end: End,
    pub neighbor: NeighborDir,
    pub partner_curve: usize,
    pub partner_end: End,
}

/// The instantiated cell graph over an N×M tiling.
///
/// Node ids are `(j * n + i) * curves + c` for cell (i, j) and curve c;
/// each node has one link slot per end, so degree ≤ 2 by construction.
#[derive(Debug, Clone)]
pub struct TiledGraph {
    pub n: usize,
    pub m: usize,
    pub num_curves: usize,
    /// links[node][end]: the (node, end) this endpoint joins to.
    pub links: Vec<[Option<(usize, End)>; 2]>,
    pub edge_count: usize,
}

impl TiledGraph {
    pub fn node_id(&self, i: usize, j: usize, curve: usize) -> usize {
        (j * self.n + i) * self.num_curves + curve
    }

    pub fn node_cell(&self, node: usize) -> (usize, usize, usize) {
        let curve = node % self.num_curves;
        let cell = node / self.num_curves;
        (cell % self.n, cell / self.n, curve)
    }

    pub fn num_nodes(&self) -> usize {
        self.links.len()
    }

    fn slot(end: End) -> usize {
        match end {
            End::Head => 0,
            End::Tail => 1,
        }
    }

    pub fn link(&self, node: usize, end: End) -> Option<(usize, End)> {
        self.links[node][Self::slot(end)]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.links[node].iter().filter(|l| l.is_some()).count()
    }
}

/// A stitched maximal yarn curve in 3D texture space.
#[derive(Debug, Clone, PartialEq)]
pub struct YarnCurve {
    pub vertices: Vec<Vec3>,
    pub closed: bool,
}

impl YarnCurve {
    pub fn total_length(&self) -> f64 {
        let mut len: f64 = self.vertices.windows(2).map(|w| w[0].distance(w[1])).sum();
        if self.closed {
            len += self.vertices.last().unwrap().distance(self.vertices[0]);
        }
        len
    }
}

/// Load a pattern cell from a KCF file.
pub fn load_pattern(path: &Path) -> Result<PatternCell, PatternError> {
    let file = std::fs::File::open(path)?;
    parse_kcf(std::io::BufReader::new(file))
}

/// Parse the KCF (Knit Cell Format) text format.
pub fn parse_kcf<R: BufRead>(reader: R) -> Result<PatternCell, PatternError> {
    let err = |line: usize, msg: &str| PatternError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines.push((idx + 1, trimmed.to_string()));
    }
    let mut it = lines.into_iter();

    let (ln, header) = it.next().ok_or_else(|| err(1, "empty file"))?;
    if header != "KCF 1" {
        return Err(err(ln, "expected `KCF 1` header"));
    }
    let (ln, tile_line) = it.next().ok_or_else(|| err(ln, "missing tile line"))?;
    let tile_parts: Vec<&str> = tile_line.split_whitespace().collect();
    if tile_parts.len() != 3 || tile_parts[0] != "tile" {
        return Err(err(ln, "expected `tile <du> <dv>`"));
    }
    let du: f64 = tile_parts[1].parse().map_err(|_| err(ln, "bad du"))?;
    let dv: f64 = tile_parts[2].parse().map_err(|_| err(ln, "bad dv"))?;
    if !(du > 0.0 && dv > 0.0) {
        return Err(err(ln, "tile extents must be positive"));
    }

    let mut curves: Vec<(usize, CellCurve)> = Vec::new();
    let mut it = it.peekable();
    while let Some((ln, line)) = it.next() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.first() != Some(&"curve") || parts.len() < 3 {
            return Err(err(ln, "expected `curve <id> <vertex_count> [free_head] [free_tail]`"));
        }
        let id: usize = parts[1].parse().map_err(|_| err(ln, "bad curve id"))?;
        let count: usize = parts[2].parse().map_err(|_| err(ln, "bad vertex count"))?;
        if count < 2 {
            return Err(err(ln, "curve must have at least 2 vertices"));
        }
        let mut free_head = false;
        let mut free_tail = false;
        for flag in &parts[3..] {
            match *flag {
                "free_head" => free_head = true,
                "free_tail" => free_tail = true,
                other => return Err(err(ln, &format!("unknown curve flag `{other}`"))),
            }
        }
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let (vln, vline) = it
                .next()
                .ok_or_else(|| err(ln, "unexpected end of file inside curve"))?;
            let vp: Vec<&str> = vline.split_whitespace().collect();
            if vp.len() != 4 || vp[0] != "v" {
                return Err(err(vln, "expected `v <u> <v> <h>`"));
            }
            let u: f64 = vp[1].parse().map_err(|_| err(vln, "bad u"))?;
            let v: f64 = vp[2].parse().map_err(|_| err(vln, "bad v"))?;
            let h: f64 = vp[3].parse().map_err(|_| err(vln, "bad h"))?;
            points.push(vec3(u, v, h));
        }
        curves.push((
            id,
            CellCurve {
                points,
                free_head,
                free_tail,
            },
        ));
    }
    if curves.is_empty() {
        return Err(err(0, "no curves"));
    }
    // Curve ids must be unique and dense 0..C-1.
    curves.sort_by_key(|(id, _)| *id);
    for (expect, (id, _)) in curves.iter().enumerate() {
        if *id != expect {
            return Err(PatternError::Invariant(format!(
                "curve ids must be dense 0..{}; found id {id}",
                curves.len() - 1
            )));
        }
    }
    let cell = PatternCell {
        curves: curves.into_iter().map(|(_, c)| c).collect(),
        tile: (du, dv),
    };
    cell.validate()?;
    Ok(cell)
}

/// Find the partner endpoint of every non-free endpoint by searching the
/// four translated copies of the cell.
pub fn compute_partners(
    cell: &PatternCell,
    eps_match: f64,
) -> Result<Vec<EndpointLabel>, PatternError> {
    cell.validate()?;
    let mut labels = Vec::new();
    for (ci, curve) in cell.curves.iter().enumerate() {
        for end in [End::Head, End::Tail] {
            if curve.is_free(end) {
                continue;
            }
            let p = curve.endpoint(end);
            // (distance, dir, partner curve, partner end)
            let mut candidates: Vec<(f64, NeighborDir, usize, End)> = Vec::new();
            for dir in NeighborDir::ALL {
                let (di, dj) = dir.offset();
                let shift = vec3(di as f64, dj as f64, 0.0);
                for (cj, other) in cell.curves.iter().enumerate() {
                    for oend in [End::Head, End::Tail] {
                        if other.is_free(oend) {
                            continue;
                        }
                        let q = other.endpoint(oend) + shift;
                        let d = p.distance(q);
                        if d <= eps_match {
                            candidates.push((d, dir, cj, oend));
                        }
                    }
                }
            }
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
            match candidates.as_slice() {
                [] => {
                    return Err(PatternError::NoPartner {
                        curve: ci,
                        end,
                        u: p.x,
                        v: p.y,
                        eps: eps_match,
                    })
                }
                [best, second, ..] if second.0 - best.0 <= eps_match / 10.0 => {
                    return Err(PatternError::Ambiguity {
                        curve: ci,
                        end,
                        tie: second.0 - best.0,
                    })
                }
                [best, ..] => labels.push(EndpointLabel {
                    curve: ci,
                    end,
                    neighbor: best.1,
                    partner_curve: best.2,
                    partner_end: best.3,
                }),
            }
        }
    }
    // Partnering must be an involution after neighbor-direction reversal.
    for label in &labels {
        let back = labels.iter().find(|l| {
            l.curve == label.partner_curve
                && l.end == label.partner_end
                && l.neighbor == label.neighbor.opposite()
        });
        match back {
            Some(b) if b.partner_curve == label.curve && b.partner_end == label.end => {}
            _ => {
                return Err(PatternError::Invariant(format!(
                    "partnering is not involutive for curve {} {}",
                    label.curve, label.end
                )))
            }
        }
    }
    Ok(labels)
}

/// Instantiate the cell graph over an N×M tiling.
///
/// Labels are reused identically for every cell; edges to cells outside the
/// tiling are dropped unless the corresponding wrap flag is set.
pub fn tile(
    cell: &PatternCell,
    labels: &[EndpointLabel],
    n: usize,
    m: usize,
    wrap_u: bool,
    wrap_v: bool,
) -> Result<TiledGraph, PatternError> {
    if n < 1 || m < 1 {
        return Err(PatternError::Invariant("tiling dims must be ≥ 1".into()));
    }
    let num_curves = cell.curves.len();
    let mut graph = TiledGraph {
        n,
        m,
        num_curves,
        links: vec![[None, None]; n * m * num_curves],
        edge_count: 0,
    };
    for j in 0..m {
        for i in 0..n {
            for label in labels {
                let (di, dj) = label.neighbor.offset();
                let ni = i as i64 + di;
                let nj = j as i64 + dj;
                let ni = if wrap_u {
                    Some(ni.rem_euclid(n as i64) as usize)
                } else if (0..n as i64).contains(&ni) {
                    Some(ni as usize)
                } else {
                    None
                };
                let nj = if wrap_v {
                    Some(nj.rem_euclid(m as i64) as usize)
                } else if (0..m as i64).contains(&nj) {
                    Some(nj as usize)
                } else {
                    None
                };
                let (Some(ni), Some(nj)) = (ni, nj) else {
                    continue;
                };
                let node = graph.node_id(i, j, label.curve);
                let other = graph.node_id(ni, nj, label.partner_curve);
                let slot = TiledGraph::slot(label.end);
                graph.links[node][slot] = Some((other, label.partner_end));
            }
        }
    }
    // Each partnership was written from both sides; count unordered edges
    // and verify symmetry.
    let mut edges = 0usize;
    for node in 0..graph.num_nodes() {
        for end in [End::Head, End::Tail] {
            if let Some((other, oend)) = graph.link(node, end) {
                if graph.link(other, oend) != Some((node, end)) {
                    return Err(PatternError::Topology(format!(
                        "asymmetric link at node {node} {end}"
                    )));
                }
                if (other, oend) >= (node, end) {
                    edges += 1;
                }
            }
        }
    }
    graph.edge_count = edges;
    Ok(graph)
}

/// Position of a tile-local point in 3D texture space for cell (i, j).
///
/// u and v scale by the tile extent; the height is in tile units and scales
/// with du.
pub fn texture_space_point(cell: &PatternCell, i: usize, j: usize, p: Vec3) -> Vec3 {
    let (du, dv) = cell.tile;
    vec3((i as f64 + p.x) * du, (j as f64 + p.y) * dv, p.z * du)
}

/// Traverse the degree-2 graph and emit one yarn curve per component.
///
/// Components are ordered by their smallest node id; open chains start from
/// the lexicographically smaller free endpoint. Coincident junction
/// vertices are merged to their midpoint, so the total vertex count is the
/// instantiated count minus the edge count.
pub fn stitch(graph: &TiledGraph, cell: &PatternCell) -> Result<Vec<YarnCurve>, PatternError> {
    for node in 0..graph.num_nodes() {
        if graph.degree(node) > 2 {
            return Err(PatternError::Topology(format!(
                "node {node} has degree > 2"
            )));
        }
    }
    let node_points = |node: usize| -> Vec<Vec3> {
        let (i, j, c) = graph.node_cell(node);
        cell.curves[c]
            .points
            .iter()
            .map(|&p| texture_space_point(cell, i, j, p))
            .collect()
    };

    let mut visited = vec![false; graph.num_nodes()];
    let mut yarns = Vec::new();
    for seed in 0..graph.num_nodes() {
        if visited[seed] {
            continue;
        }
        // Collect the component, then pick the deterministic start endpoint.
        let mut component = vec![seed];
        let mut stack = vec![seed];
        let mut in_comp = std::collections::HashSet::new();
        in_comp.insert(seed);
        while let Some(node) = stack.pop() {
            for end in [End::Head, End::Tail] {
                if let Some((other, _)) = graph.link(node, end) {
                    if in_comp.insert(other) {
                        component.push(other);
                        stack.push(other);
                    }
                }
            }
        }
        component.sort_unstable();
        let mut open_ends: Vec<(usize, End)> = Vec::new();
        for &node in &component {
            for end in [End::Head, End::Tail] {
                if graph.link(node, end).is_none() {
                    open_ends.push((node, end));
                }
            }
        }
        open_ends.sort_unstable();
        let (start_node, start_end) = match open_ends.first() {
            Some(&(node, end)) => (node, end),
            None => (component[0], End::Head),
        };

        let mut vertices: Vec<Vec3> = Vec::new();
        let mut node = start_node;
        let mut entry = start_end;
        let mut closed = false;
        loop {
            visited[node] = true;
            let mut pts = node_points(node);
            if entry == End::Tail {
                pts.reverse();
            }
            if let Some(last) = vertices.last_mut() {
                // Merge the coincident junction pair to its midpoint.
                *last = (*last + pts[0]) * 0.5;
                vertices.extend(pts.into_iter().skip(1));
            } else {
                vertices.extend(pts);
            }
            let exit = entry.opposite();
            match graph.link(node, exit) {
                None => break,
                Some((next, next_end)) => {
                    if next == start_node && next_end == start_end {
                        // Cycle closed: merge last vertex into the first.
                        let last = vertices.pop().unwrap();
                        vertices[0] = (vertices[0] + last) * 0.5;
                        closed = true;
                        break;
                    }
                    debug_assert!(!visited[next], "degree-2 walk revisited a node");
                    node = next;
                    entry = next_end;
                }
            }
        }
        for w in vertices.windows(2) {
            if w[0].distance(w[1]) == 0.0 {
                return Err(PatternError::Invariant(
                    "stitched yarn has a zero-length segment".into(),
                ));
            }
        }
        yarns.push(YarnCurve { vertices, closed });
    }
    Ok(yarns)
}

/// Write yarn curves to a YRN text file.
pub fn write_yarns<W: Write>(mut w: W, yarns: &[YarnCurve]) -> std::io::Result<()> {
    writeln!(w, "YRN 1")?;
    for yarn in yarns {
        writeln!(
            w,
            "curve {} {}",
            if yarn.closed { "closed" } else { "open" },
            yarn.vertices.len()
        )?;
        for v in &yarn.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
    }
    Ok(())
}

/// Read yarn curves from a YRN text file.
pub fn read_yarns<R: BufRead>(reader: R) -> Result<Vec<YarnCurve>, PatternError> {
    let err = |line: usize, msg: &str| PatternError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    if header?.trim() != "YRN 1" {
        return Err(err(1, "expected `YRN 1` header"));
    }
    let mut yarns = Vec::new();
    let mut lines = lines.peekable();
    while let Some((idx, line)) = lines.next() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let ln = idx + 1;
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "curve" {
            return Err(err(ln, "expected `curve <open|closed> <count>`"));
        }
        let closed = match parts[1] {
            "closed" => true,
            "open" => false,
            _ => return Err(err(ln, "expected open or closed")),
        };
        let count: usize = parts[2].parse().map_err(|_| err(ln, "bad count"))?;
        let mut vertices = Vec::with_capacity(count);
        for _ in 0..count {
            let (vidx, vline) = lines.next().ok_or_else(|| err(ln, "truncated curve"))?;
            let vline = vline?;
            let vp: Vec<&str> = vline.split_whitespace().collect();
            if vp.len() != 4 || vp[0] != "v" {
                return Err(err(vidx + 1, "expected `v <x> <y> <z>`"));
            }
            vertices.push(vec3(
                vp[1].parse().map_err(|_| err(vidx + 1, "bad x"))?,
                vp[2].parse().map_err(|_| err(vidx + 1, "bad y"))?,
                vp[3].parse().map_err(|_| err(vidx + 1, "bad z"))?,
            ));
        }
        yarns.push(YarnCurve { vertices, closed });
    }
    Ok(yarns)
}
