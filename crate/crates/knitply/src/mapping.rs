//! Flat textile → base geometry transformation.
//!
//! A 2D grid over UV space holds, per cell, both the curve segments whose
//! UV footprint overlaps the cell and the triangles whose UV footprint
//! overlaps it. Locating a ply vertex is then a cell lookup plus a
//! point-in-UV-triangle test, and the same grid later accelerates the
//! renderer's local stage.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::math::{vec2, vec3, Vec2, Vec3};
use crate::plygen::{PlyCurve, PlyVertex};

/// Barycentric containment slack so edge-exact UVs are admitted.
pub const EPS_BARY: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("mesh invariant violation: {0}")]
    Invariant(String),
    #[error("overlapping UV charts: triangles {0} and {1} overlap in UV space")]
    OverlappingChart(usize, usize),
    #[error("uv ({u}, {v}) of vertex {vertex} maps to no triangle")]
    UnmappedUV { vertex: usize, u: f64, v: f64 },
    #[error("interpolated normal degenerate (|n| < 1e-6)")]
    DegenerateNormal,
    #[error("degenerate mapped geometry: {0}")]
    Degenerate(String),
    #[error("bad magic: expected MGB1")]
    BadMagic,
    #[error("malformed MGB data: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct MeshVertex {
    pub position: Vec3,
    pub normal: Vec3,
    pub uv: Vec2,
}

/// A triangle mesh with per-vertex UV and normals.
#[derive(Debug, Clone)]
pub struct BaseMesh {
    pub vertices: Vec<MeshVertex>,
    pub triangles: Vec<[u32; 3]>,
}

impl BaseMesh {
    pub fn validate(&self) -> Result<(), MappingError> {
        if self.triangles.is_empty() {
            return Err(MappingError::EmptyMesh);
        }
        for (ti, tri) in self.triangles.iter().enumerate() {
            for &idx in tri {
                if idx as usize >= self.vertices.len() {
                    return Err(MappingError::Invariant(format!(
                        "triangle {ti} references vertex {idx} out of range"
                    )));
                }
            }
        }
        for (vi, v) in self.vertices.iter().enumerate() {
            if (v.normal.length() - 1.0).abs() > 1e-6 {
                return Err(MappingError::Invariant(format!(
                    "vertex {vi} normal is not unit length"
                )));
            }
            if !v.uv.x.is_finite() || !v.uv.y.is_finite() || !v.position.is_finite() {
                return Err(MappingError::Invariant(format!(
                    "vertex {vi} has non-finite data"
                )));
            }
        }
        Ok(())
    }

    pub fn triangle_uvs(&self, tri: usize) -> [Vec2; 3] {
        let t = self.triangles[tri];
        [
            self.vertices[t[0] as usize].uv,
            self.vertices[t[1] as usize].uv,
            self.vertices[t[2] as usize].uv,
        ]
    }

    /// UV bounding rectangle over all triangles.
    pub fn uv_bounds(&self) -> (Vec2, Vec2) {
        let mut lo = vec2(f64::INFINITY, f64::INFINITY);
        let mut hi = vec2(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.min(v.uv);
            hi = hi.max(v.uv);
        }
        (lo, hi)
    }
}

/// Load a triangulated BaseMesh from a Wavefront OBJ subset
/// (v/vt/vn with full `f a/b/c ...` references, fan triangulation).
pub fn load_obj(path: &Path) -> Result<BaseMesh, MappingError> {
    let file = std::fs::File::open(path)?;
    parse_obj(std::io::BufReader::new(file))
}

pub fn parse_obj<R: BufRead>(reader: R) -> Result<BaseMesh, MappingError> {
    let err = |line: usize, msg: &str| MappingError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut positions: Vec<Vec3> = Vec::new();
    let mut uvs: Vec<Vec2> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut vertex_map: std::collections::HashMap<(u32, u32, u32), u32> =
        std::collections::HashMap::new();
    let mut mesh = BaseMesh {
        vertices: Vec::new(),
        triangles: Vec::new(),
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let ln = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        match parts[0] {
            "v" if parts.len() >= 4 => {
                let p: Result<Vec<f64>, _> = parts[1..4].iter().map(|s| s.parse()).collect();
                let p = p.map_err(|_| err(ln, "bad vertex position"))?;
                positions.push(vec3(p[0], p[1], p[2]));
            }
            "vt" if parts.len() >= 3 => {
                let p: Result<Vec<f64>, _> = parts[1..3].iter().map(|s| s.parse()).collect();
                let p = p.map_err(|_| err(ln, "bad texture coordinate"))?;
                uvs.push(vec2(p[0], p[1]));
            }
            "vn" if parts.len() >= 4 => {
                let p: Result<Vec<f64>, _> = parts[1..4].iter().map(|s| s.parse()).collect();
                let p = p.map_err(|_| err(ln, "bad normal"))?;
                normals.push(vec3(p[0], p[1], p[2]));
            }
            "f" if parts.len() >= 4 => {
                let mut corner_ids = Vec::with_capacity(parts.len() - 1);
                for corner in &parts[1..] {
                    let refs: Vec<&str> = corner.split('/').collect();
                    if refs.len() != 3 || refs.iter().any(|r| r.is_empty()) {
                        return Err(err(ln, "face corners must be v/vt/vn"));
                    }
                    let vi: usize = refs[0].parse().map_err(|_| err(ln, "bad v index"))?;
                    let ti: usize = refs[1].parse().map_err(|_| err(ln, "bad vt index"))?;
                    let ni: usize = refs[2].parse().map_err(|_| err(ln, "bad vn index"))?;
                    if vi == 0 || vi > positions.len() {
                        return Err(err(ln, "v index out of range"));
                    }
                    if ti == 0 || ti > uvs.len() {
                        return Err(err(ln, "vt index out of range"));
                    }
                    if ni == 0 || ni > normals.len() {
                        return Err(err(ln, "vn index out of range"));
                    }
                    let key = (vi as u32 - 1, ti as u32 - 1, ni as u32 - 1);
                    let id = *vertex_map.entry(key).or_insert_with(|| {
                        let normal = normals[key.2 as usize];
                        mesh.vertices.push(MeshVertex {
                            position: positions[key.0 as usize],
                            normal: normal
                                .try_normalized(1e-12)
                                .unwrap_or(Vec3::Z),
                            uv: uvs[key.1 as usize],
                        });
                        (mesh.vertices.len() - 1) as u32
                    });
                    corner_ids.push(id);
                }
                for i in 1..corner_ids.len() - 1 {
                    mesh.triangles
                        .push([corner_ids[0], corner_ids[i], corner_ids[i + 1]]);
                }
            }
            // Ignore everything else (o, g, s, usemtl, ...).
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Index of one ply-curve segment: (ply index, start vertex index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentRef {
    pub ply: u32,
    pub vertex: u32,
}

/// Build the flat list of segment references over a set of ply curves.
pub fn segment_refs(plies: &[PlyCurve]) -> Vec<SegmentRef> {
    let mut refs = Vec::new();
    for (pi, ply) in plies.iter().enumerate() {
        for vi in 0..ply.vertices.len() - 1 {
            refs.push(SegmentRef {
                ply: pi as u32,
                vertex: vi as u32,
            });
        }
    }
    refs
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridCell {
    pub segments: Vec<u32>,
    pub triangles: Vec<u32>,
}

/// The precomputed UV grid: per cell, overlapping segments and triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingGrid {
    pub resolution: (usize, usize),
    pub uv_min: Vec2,
    pub uv_max: Vec2,
    pub cells: Vec<GridCell>,
}

/// Default grid resolution, proportional to mesh density.
pub fn default_resolution(triangle_count: usize) -> (usize, usize) {
    let g = ((2.0 * triangle_count as f64).sqrt().ceil() as usize).clamp(8, 4096);
    (g, g)
}

impl MappingGrid {
    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.resolution.0 + ix
    }

    /// Cell coordinates for a UV point inside the bounds (clamped at the
    /// upper edge so boundary points stay valid).
    pub fn locate_cell(&self, uv: Vec2) -> (usize, usize) {
        let (gu, gv) = self.resolution;
        let fx = (uv.x - self.uv_min.x) / (self.uv_max.x - self.uv_min.x);
        let fy = (uv.y - self.uv_min.y) / (self.uv_max.y - self.uv_min.y);
        let ix = ((fx * gu as f64) as isize).clamp(0, gu as isize - 1) as usize;
        let iy = ((fy * gv as f64) as isize).clamp(0, gv as isize - 1) as usize;
        (ix, iy)
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &GridCell {
        &self.cells[self.cell_index(ix, iy)]
    }

    /// Inclusive cell index range overlapped by a UV rectangle.
    pub(crate) fn cell_range(&self, lo: Vec2, hi: Vec2) -> Option<(usize, usize, usize, usize)> {
        let (gu, gv) = self.resolution;
        let sx = (self.uv_max.x - self.uv_min.x) / gu as f64;
        let sy = (self.uv_max.y - self.uv_min.y) / gv as f64;
        let x0 = ((lo.x - self.uv_min.x) / sx).floor() as isize;
        let x1 = ((hi.x - self.uv_min.x) / sx).floor() as isize;
        let y0 = ((lo.y - self.uv_min.y) / sy).floor() as isize;
        let y1 = ((hi.y - self.uv_min.y) / sy).floor() as isize;
        if x1 < 0 || y1 < 0 || x0 >= gu as isize || y0 >= gv as isize {
            return None;
        }
        Some((
            x0.clamp(0, gu as isize - 1) as usize,
            x1.clamp(0, gu as isize - 1) as usize,
            y0.clamp(0, gv as isize - 1) as usize,
            y1.clamp(0, gv as isize - 1) as usize,
        ))
    }
}

/// Build the mapping grid: conservative AABB binning of mesh triangles and
/// ply-curve segments in UV space. Rejects meshes whose UV charts overlap.
pub fn build_grid(
    mesh: &BaseMesh,
    plies: &[PlyCurve],
    resolution: (usize, usize),
) -> Result<MappingGrid, MappingError> {
    mesh.validate()?;
    if resolution.0 < 1 || resolution.1 < 1 {
        return Err(MappingError::Invariant("grid resolution must be ≥ 1".into()));
    }
    let (lo, hi) = mesh.uv_bounds();
    // Pad degenerate extents so cell sizes stay positive.
    let pad = |a: f64, b: f64| if b - a > 1e-12 { (a, b) } else { (a - 0.5, b + 0.5) };
    let (x0, x1) = pad(lo.x, hi.x);
    let (y0, y1) = pad(lo.y, hi.y);
    let mut grid = MappingGrid {
        resolution,
        uv_min: vec2(x0, y0),
        uv_max: vec2(x1, y1),
        cells: vec![GridCell::default(); resolution.0 * resolution.1],
    };
    for (ti, _) in mesh.triangles.iter().enumerate() {
        let uvs = mesh.triangle_uvs(ti);
        let lo = uvs[0].min(uvs[1]).min(uvs[2]);
        let hi = uvs[0].max(uvs[1]).max(uvs[2]);
        if let Some((cx0, cx1, cy0, cy1)) = grid.cell_range(lo, hi) {
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    let idx = grid.cell_index(cx, cy);
                    grid.cells[idx].triangles.push(ti as u32);
                }
            }
        }
    }
    let refs = segment_refs(plies);
    for (si, seg) in refs.iter().enumerate() {
        let a = plies[seg.ply as usize].vertices[seg.vertex as usize].position;
        let b = plies[seg.ply as usize].vertices[seg.vertex as usize + 1].position;
        let lo = vec2(a.x.min(b.x), a.y.min(b.y));
        let hi = vec2(a.x.max(b.x), a.y.max(b.y));
        if let Some((cx0, cx1, cy0, cy1)) = grid.cell_range(lo, hi) {
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    let idx = grid.cell_index(cx, cy);
                    grid.cells[idx].segments.push(si as u32);
                }
            }
        }
    }
    // Detect overlapping UV charts within shared cells.
    let mut checked = std::collections::HashSet::new();
    for cell in &grid.cells {
        for (i, &a) in cell.triangles.iter().enumerate() {
            for &b in &cell.triangles[i + 1..] {
                if !checked.insert((a, b)) {
                    continue;
                }
                if uv_triangles_overlap(&mesh.triangle_uvs(a as usize), &mesh.triangle_uvs(b as usize)) {
                    return Err(MappingError::OverlappingChart(a as usize, b as usize));
                }
            }
        }
    }
    Ok(grid)
}

/// Proper-interior overlap of two UV triangles. Shared edges and vertices
/// of adjacent chart triangles do not count.
fn uv_triangles_overlap(a: &[Vec2; 3], b: &[Vec2; 3]) -> bool {
    const EPS: f64 = 1e-9;
    let area = |t: &[Vec2; 3]| (t[1] - t[0]).cross(t[2] - t[0]).abs() * 0.5;
    if area(a) < EPS || area(b) < EPS {
        return false;
    }
    let inside = |p: Vec2, t: &[Vec2; 3]| {
        if let Some(bary) = barycentric(p, t) {
            bary.iter().all(|&c| c > 1e-7)
        } else {
            false
        }
    };
    let centroid = |t: &[Vec2; 3]| (t[0] + t[1] + t[2]) * (1.0 / 3.0);
    if inside(centroid(a), b) || inside(centroid(b), a) {
        return true;
    }
    for &p in a {
        if inside(p, b) {
            return true;
        }
    }
    for &p in b {
        if inside(p, a) {
            return true;
        }
    }
    // Proper edge crossings.
    for i in 0..3 {
        let (p0, p1) = (a[i], a[(i + 1) % 3]);
        for j in 0..3 {
            let (q0, q1) = (b[j], b[(j + 1) % 3]);
            let d1 = (p1 - p0).cross(q0 - p0);
            let d2 = (p1 - p0).cross(q1 - p0);
            let d3 = (q1 - q0).cross(p0 - q0);
            let d4 = (q1 - q0).cross(p1 - q0);
            let strict = |x: f64, y: f64| (x > EPS && y < -EPS) || (x < -EPS && y > EPS);
            if strict(d1, d2) && strict(d3, d4) {
                return true;
            }
        }
    }
    false
}

/// Barycentric coordinates of `p` in UV triangle `t`; `None` if degenerate.
pub fn barycentric(p: Vec2, t: &[Vec2; 3]) -> Option<[f64; 3]> {
    let denom = (t[1] - t[0]).cross(t[2] - t[0]);
    if denom.abs() < 1e-18 {
        return None;
    }
    let beta = (p - t[0]).cross(t[2] - t[0]) / denom;
    let gamma = (t[1] - t[0]).cross(p - t[0]) / denom;
    Some([1.0 - beta - gamma, beta, gamma])
}

fn containing_triangle<'a, I: Iterator<Item = u32>>(
    mesh: &BaseMesh,
    uv: Vec2,
    candidates: I,
) -> Option<(usize, [f64; 3])> {
    for ti in candidates {
        let uvs = mesh.triangle_uvs(ti as usize);
        if let Some(bary) = barycentric(uv, &uvs) {
            if bary.iter().all(|&c| c >= -EPS_BARY) {
                return Some((ti as usize, bary));
            }
        }
    }
    None
}

/// Locate the UV-containing triangle via the grid. On shared edges the
/// lowest triangle index wins.
pub fn locate_triangle(
    grid: &MappingGrid,
    mesh: &BaseMesh,
    uv: Vec2,
) -> Result<(usize, [f64; 3]), MappingError> {
    let (ix, iy) = grid.locate_cell(uv);
    let mut candidates: Vec<u32> = grid.cell(ix, iy).triangles.clone();
    candidates.sort_unstable();
    containing_triangle(mesh, uv, candidates.into_iter()).ok_or(MappingError::UnmappedUV {
        vertex: 0,
        u: uv.x,
        v: uv.y,
    })
}

/// Brute-force reference for `locate_triangle`: scan all triangles in
/// index order.
pub fn locate_triangle_brute(
    mesh: &BaseMesh,
    uv: Vec2,
) -> Result<(usize, [f64; 3]), MappingError> {
    containing_triangle(mesh, uv, 0..mesh.triangles.len() as u32).ok_or(
        MappingError::UnmappedUV {
            vertex: 0,
            u: uv.x,
            v: uv.y,
        },
    )
}

/// Barycentric surface point + interpolated-normal extrusion by `h`.
pub fn map_point(
    mesh: &BaseMesh,
    tri: usize,
    bary: [f64; 3],
    h: f64,
) -> Result<(Vec3, Vec3), MappingError> {
    let t = mesh.triangles[tri];
    let v0 = &mesh.vertices[t[0] as usize];
    let v1 = &mesh.vertices[t[1] as usize];
    let v2 = &mesh.vertices[t[2] as usize];
    let surface = v0.position * bary[0] + v1.position * bary[1] + v2.position * bary[2];
    let normal_raw = v0.normal * bary[0] + v1.normal * bary[1] + v2.normal * bary[2];
    let normal = normal_raw
        .try_normalized(1e-6)
        .ok_or(MappingError::DegenerateNormal)?;
    Ok((surface + normal * h, normal))
}

/// The local surface frame of a triangle: (∂S/∂u direction, n̂ × that, n̂),
/// per-vertex-normal n̂ supplied by the caller.
fn surface_frame(mesh: &BaseMesh, tri: usize, normal: Vec3) -> (Vec3, Vec3) {
    let t = mesh.triangles[tri];
    let p0 = mesh.vertices[t[0] as usize].position;
    let p1 = mesh.vertices[t[1] as usize].position;
    let p2 = mesh.vertices[t[2] as usize].position;
    let uv0 = mesh.vertices[t[0] as usize].uv;
    let uv1 = mesh.vertices[t[1] as usize].uv;
    let uv2 = mesh.vertices[t[2] as usize].uv;
    let e1 = p1 - p0;
    let e2 = p2 - p0;
    let d1 = uv1 - uv0;
    let d2 = uv2 - uv0;
    let det = d1.cross(d2);
    let dsdu = if det.abs() > 1e-18 {
        (e1 * d2.y - e2 * d1.y) / det
    } else {
        e1
    };
    // Orthonormalize with the interpolated normal fixed.
    let b = normal
        .cross(dsdu)
        .try_normalized(1e-12)
        .unwrap_or_else(|| normal.cross(normal.min_component_axis()).normalized());
    let t_axis = b.cross(normal);
    (t_axis, b)
}

/// A ply curve mapped to object space, with the source flat-space
/// (u, v, h-after-shell-offset) retained per vertex.
#[derive(Debug, Clone)]
pub struct MappedPly {
    pub vertices: Vec<PlyVertex>,
    /// Flat-space (u, v, effective normal offset h) per vertex.
    pub source_uvh: Vec<Vec3>,
    pub radius: f64,
    pub yarn_id: u32,
    pub ply_index: u32,
}

impl MappedPly {
    pub fn to_ply_curve(&self) -> PlyCurve {
        PlyCurve {
            vertices: self.vertices.clone(),
            radius: self.radius,
            yarn_id: self.yarn_id,
            ply_index: self.ply_index,
        }
    }
}

#[derive(Clone, Copy)]
enum Locator<'a> {
    Grid(&'a MappingGrid),
    Brute,
}

fn transform_ply(
    locator: Locator<'_>,
    mesh: &BaseMesh,
    ply: &PlyCurve,
    shell_base: f64,
) -> Result<MappedPly, MappingError> {
    let mut vertices = Vec::with_capacity(ply.vertices.len());
    let mut source_uvh = Vec::with_capacity(ply.vertices.len());
    for (vi, v) in ply.vertices.iter().enumerate() {
        let uv = vec2(v.position.x, v.position.y);
        let h = v.position.z + shell_base;
        let (tri, bary) = match locator {
            Locator::Grid(grid) => locate_triangle(grid, mesh, uv),
            Locator::Brute => locate_triangle_brute(mesh, uv),
        }
        .map_err(|e| match e {
            MappingError::UnmappedUV { u, v, .. } => MappingError::UnmappedUV { vertex: vi, u, v },
            other => other,
        })?;
        let (position, normal) = map_point(mesh, tri, bary, h)?;
        let (t_axis, b_axis) = surface_frame(mesh, tri, normal);
        let n = v.normal;
        let world_normal = t_axis * n.x + b_axis * n.y + normal * n.z;
        vertices.push(PlyVertex {
            position,
            normal: world_normal,
            arclen: 0.0,
        });
        source_uvh.push(vec3(uv.x, uv.y, h));
    }
    for i in 1..vertices.len() {
        let d = vertices[i - 1].position.distance(vertices[i].position);
        if d == 0.0 {
            return Err(MappingError::Degenerate(format!(
                "mapped segment {} has zero length",
                i - 1
            )));
        }
        vertices[i].arclen = vertices[i - 1].arclen + d;
    }
    Ok(MappedPly {
        vertices,
        source_uvh,
        radius: ply.radius,
        yarn_id: ply.yarn_id,
        ply_index: ply.ply_index,
    })
}

/// Transform flat ply curves onto the base geometry using the grid.
pub fn transform_plies(
    grid: &MappingGrid,
    mesh: &BaseMesh,
    plies: &[PlyCurve],
    shell_base: f64,
) -> Result<Vec<MappedPly>, MappingError> {
    plies
        .par_iter()
        .map(|ply| transform_ply(Locator::Grid(grid), mesh, ply, shell_base))
        .collect()
}

/// Brute-force variant: scan all triangles per vertex, no grid. Oracle for
/// the grid-accelerated path.
pub fn transform_plies_brute(
    mesh: &BaseMesh,
    plies: &[PlyCurve],
    shell_base: f64,
) -> Result<Vec<MappedPly>, MappingError> {
    plies
        .iter()
        .map(|ply| transform_ply(Locator::Brute, mesh, ply, shell_base))
        .collect()
}

/// Write the grid in the MGB binary format.
pub fn write_mgb<W: Write>(mut w: W, grid: &MappingGrid) -> Result<(), MappingError> {
    w.write_all(b"MGB1")?;
    w.write_all(&(grid.resolution.0 as u32).to_le_bytes())?;
    w.write_all(&(grid.resolution.1 as u32).to_le_bytes())?;
    for v in [grid.uv_min.x, grid.uv_min.y, grid.uv_max.x, grid.uv_max.y] {
        w.write_all(&v.to_le_bytes())?;
    }
    for cell in &grid.cells {
        w.write_all(&(cell.segments.len() as u32).to_le_bytes())?;
        for s in &cell.segments {
            w.write_all(&s.to_le_bytes())?;
        }
        w.write_all(&(cell.triangles.len() as u32).to_le_bytes())?;
        for t in &cell.triangles {
            w.write_all(&t.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a grid from the MGB binary format.
pub fn read_mgb<R: Read>(mut r: R) -> Result<MappingGrid, MappingError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"MGB1" {
        return Err(MappingError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let gu = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let gv = u32::from_le_bytes(b4) as usize;
    if gu == 0 || gv == 0 || gu > 65536 || gv > 65536 {
        return Err(MappingError::Malformed("bad resolution".into()));
    }
    let mut bounds = [0.0; 4];
    for b in &mut bounds {
        r.read_exact(&mut b8)?;
        *b = f64::from_le_bytes(b8);
    }
    let mut cells = Vec::with_capacity(gu * gv);
    for _ in 0..gu * gv {
        r.read_exact(&mut b4)?;
        let ns = u32::from_le_bytes(b4) as usize;
        let mut segments = Vec::with_capacity(ns);
        for _ in 0..ns {
            r.read_exact(&mut b4)?;
            segments.push(u32::from_le_bytes(b4));
        }
        r.read_exact(&mut b4)?;
        let nt = u32::from_le_bytes(b4) as usize;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            r.read_exact(&mut b4)?;
            triangles.push(u32::from_le_bytes(b4));
        }
        cells.push(GridCell {
            segments,
            triangles,
        });
    }
    Ok(MappingGrid {
        resolution: (gu, gv),
        uv_min: vec2(bounds[0], bounds[1]),
        uv_max: vec2(bounds[2], bounds[3]),
        cells,
    })
}
