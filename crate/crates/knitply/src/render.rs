//! Two-stage path tracer: a BVH over shell prisms finds which base
//! triangles a ray crosses (global stage), then ply segments gathered from
//! the UV grid cell at the entry point and its 8 neighbors are tested
//! exactly (local stage). Direct lighting uses next-event estimation with
//! balance-heuristic MIS; per-pixel counter-based RNG streams make output
//! independent of thread count.

use crate::intersect::{
    intersect_segment, joint_trim, resolve_hit, segment_cylinder, HitRecord, Ray, SegmentCylinder,
};
use crate::mapping::{BaseMesh, MappedPly, MappingError, MappingGrid};
use crate::math::{vec2, vec3, Vec2, Vec3};
use crate::plygen::PlyError;
use crate::rng::Rng;
use crate::shading::{apply_fiber_texture, bsdf_eval, bsdf_pdf, bsdf_sample, BsdfParams, FiberTexture, Rgb, ShadingPoint};
use rayon::prelude::*;
use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scene parse error: {0}")]
    Parse(String),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub vfov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        (right, up, forward)
    }

    /// Primary ray through pixel (px, py) at sub-pixel jitter in [0,1)².
    pub fn primary_ray(&self, px: usize, py: usize, jitter: (f64, f64)) -> Ray {
        let (right, up, forward) = self.basis();
        let tan_half = (self.vfov.to_radians() / 2.0).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = ((px as f64 + jitter.0) / self.width as f64 * 2.0 - 1.0) * tan_half * aspect;
        let sy = (1.0 - (py as f64 + jitter.1) / self.height as f64 * 2.0) * tan_half;
        Ray {
            origin: self.position,
            dir: (forward + right * sx + up * sy).normalized(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Light {
    AreaQuad {
        corner: Vec3,
        edge1: Vec3,
        edge2: Vec3,
        radiance: Rgb,
    },
    ConstantEnv {
        radiance: Rgb,
    },
    LatLongEnv(LatLongEnv),
}

/// Lat-long environment map with a luminance-weighted texel CDF for
/// importance sampling. Lookups are nearest-texel so radiance and pdf stay
/// exactly consistent under MIS.
#[derive(Debug, Clone)]
pub struct LatLongEnv {
    pub width: usize,
    pub height: usize,
    pub texels: Vec<Rgb>,
    /// Cumulative probability over texels in row-major order.
    cdf: Vec<f64>,
    /// Per-texel selection probability.
    prob: Vec<f64>,
}

fn luminance(c: Rgb) -> f64 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

impl LatLongEnv {
    pub fn new(width: usize, height: usize, texels: Vec<Rgb>) -> Result<LatLongEnv, RenderError> {
        if texels.len() != width * height || width == 0 || height == 0 {
            return Err(RenderError::Invalid("lat-long env dimensions mismatch".into()));
        }
        let mut weights = vec![0.0; texels.len()];
        for iy in 0..height {
            let theta = PI * (iy as f64 + 0.5) / height as f64;
            for ix in 0..width {
                weights[iy * width + ix] = luminance(texels[iy * width + ix]).max(0.0) * theta.sin();
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(RenderError::Invalid("lat-long env is black".into()));
        }
        let prob: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cdf = vec![0.0; prob.len()];
        let mut acc = 0.0;
        for (i, p) in prob.iter().enumerate() {
            acc += p;
            cdf[i] = acc;
        }
        cdf[prob.len() - 1] = 1.0;
        Ok(LatLongEnv {
            width,
            height,
            texels,
            cdf,
            prob,
        })
    }

    /// Texel indices for a direction (y-up lat-long).
    fn texel_of(&self, d: Vec3) -> (usize, usize) {
        let theta = d.y.clamp(-1.0, 1.0).acos();
        let phi = d.z.atan2(d.x).rem_euclid(TAU);
        let ix = ((phi / TAU * self.width as f64) as usize).min(self.width - 1);
        let iy = ((theta / PI * self.height as f64) as usize).min(self.height - 1);
        (ix, iy)
    }

    pub fn radiance(&self, d: Vec3) -> Rgb {
        let (ix, iy) = self.texel_of(d);
        self.texels[iy * self.width + ix]
    }

    /// Solid-angle pdf of sampling direction d.
    pub fn pdf(&self, d: Vec3) -> f64 {
        let (ix, iy) = self.texel_of(d);
        let theta = PI * (iy as f64 + 0.5) / self.height as f64;
        let texel_sa = TAU / self.width as f64 * PI / self.height as f64 * theta.sin();
        if texel_sa <= 0.0 {
            return 0.0;
        }
        self.prob[iy * self.width + ix] / texel_sa
    }

    /// Importance-sample a direction; returns (direction, pdf).
    pub fn sample(&self, u: (f64, f64)) -> (Vec3, f64) {
        let idx = self.cdf.partition_point(|&c| c < u.0).min(self.prob.len() - 1);
        let (ix, iy) = (idx % self.width, idx / self.width);
        // Jitter within the texel footprint using u.1 split into two.
        let ju = (u.1 * 7919.0).fract();
        let jv = (u.1 * 104729.0).fract();
        let phi = TAU * (ix as f64 + ju) / self.width as f64;
        let theta = PI * (iy as f64 + jv) / self.height as f64;
        let d = vec3(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin());
        (d, self.pdf(d))
    }
}

/// The extruded volume over one base triangle bounding the textile above
/// it: triangle vertices offset h_min and h_max along the vertex normals.
#[derive(Debug, Clone)]
pub struct ShellPrism {
    pub tri: u32,
    pub corners: [Vec3; 6],
    /// Supporting planes of the corner hull as (outward normal, offset).
    planes: Vec<(Vec3, f64)>,
    pub aabb: (Vec3, Vec3),
}

fn aabb_of(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in &points[1..] {
        lo = vec3(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = vec3(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

impl ShellPrism {
    fn build(tri: u32, base: [Vec3; 3], normals: [Vec3; 3], h_min: f64, h_max: f64) -> ShellPrism {
        let bot = [
            base[0] + normals[0] * h_min,
            base[1] + normals[1] * h_min,
            base[2] + normals[2] * h_min,
        ];
        let top = [
            base[0] + normals[0] * h_max,
            base[1] + normals[1] * h_max,
            base[2] + normals[2] * h_max,
        ];
        let corners = [bot[0], bot[1], bot[2], top[0], top[1], top[2]];
        let centroid = corners.iter().fold(Vec3::ZERO, |a, &b| a + b) / 6.0;
        let scale = corners
            .iter()
            .map(|c| c.distance(centroid))
            .fold(0.0f64, f64::max)
            .max(1e-12);
        // Candidate face planes: bottom, top, and two triangles per side
        // quad. A candidate is kept only if every corner lies on its inner
        // side, which makes each kept plane a true supporting plane of the
        // hull — clipping by them can never cull a real hit.
        let mut planes = Vec::new();
        let mut try_plane = |a: Vec3, b: Vec3, c: Vec3| {
            let n = (b - a).cross(c - a);
            let n = match n.try_normalized(1e-12) {
                Some(n) => n,
                None => return,
            };
            // Orient outward (centroid inside).
            let (n, d) = if n.dot(centroid - a) > 0.0 {
                (-n, -n.dot(a))
            } else {
                (n, n.dot(a))
            };
            let eps = 1e-9 * scale;
            if corners.iter().all(|&p| n.dot(p) - d <= eps) {
                planes.push((n, d));
            }
        };
        try_plane(bot[0], bot[2], bot[1]);
        try_plane(top[0], top[1], top[2]);
        for i in 0..3 {
            let j = (i + 1) % 3;
            try_plane(bot[i], bot[j], top[j]);
            try_plane(bot[i], top[j], top[i]);
        }
        ShellPrism {
            tri,
            corners,
            planes,
            aabb: aabb_of(&corners),
        }
    }

    /// Clip the ray against the supporting planes; returns the (t_enter,
    /// t_exit) interval if nonempty.
    fn clip_ray(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = ray_aabb(ray, self.aabb)?;
        for &(n, d) in &self.planes {
            let denom = n.dot(ray.dir);
            let dist = n.dot(ray.origin) - d;
            if denom.abs() < 1e-15 {
                if dist > 0.0 {
                    return None;
                }
                continue;
            }
            let t = -dist / denom;
            if denom > 0.0 {
                t1 = t1.min(t);
            } else {
                t0 = t0.max(t);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

fn ray_aabb(ray: &Ray, (lo, hi): (Vec3, Vec3)) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        let (o, d, l, h) = match axis {
            0 => (ray.origin.x, ray.dir.x, lo.x, hi.x),
            1 => (ray.origin.y, ray.dir.y, lo.y, hi.y),
            _ => (ray.origin.z, ray.dir.z, lo.z, hi.z),
        };
        if d.abs() < 1e-15 {
            if o < l || o > h {
                return None;
            }
            continue;
        }
        let (a, b) = ((l - o) / d, (h - o) / d);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// A flat BVH over prism AABBs, built by median split on the longest axis.
struct Bvh {
    nodes: Vec<BvhNode>,
}

struct BvhNode {
    aabb: (Vec3, Vec3),
    /// Leaf: (first, count) into `order`; inner: right-child index (left
    /// child is self+1).
    left_or_first: u32,
    count: u32,
    order: Vec<u32>,
}

impl Bvh {
    fn build(boxes: &[(Vec3, Vec3)]) -> Bvh {
        let mut order: Vec<u32> = (0..boxes.len() as u32).collect();
        let mut nodes = Vec::new();
        if boxes.is_empty() {
            return Bvh { nodes };
        }
        Self::build_node(boxes, &mut order, &mut nodes);
        Bvh { nodes }
    }

    fn build_node(boxes: &[(Vec3, Vec3)], items: &mut [u32], nodes: &mut Vec<BvhNode>) -> usize {
        let mut lo = boxes[items[0] as usize].0;
        let mut hi = boxes[items[0] as usize].1;
        for &i in items.iter() {
            let b = boxes[i as usize];
            lo = vec3(lo.x.min(b.0.x), lo.y.min(b.0.y), lo.z.min(b.0.z));
            hi = vec3(hi.x.max(b.1.x), hi.y.max(b.1.y), hi.z.max(b.1.z));
        }
        let idx = nodes.len();
        nodes.push(BvhNode {
            aabb: (lo, hi),
            left_or_first: 0,
            count: 0,
            order: Vec::new(),
        });
        if items.len() <= 4 {
            nodes[idx].count = items.len() as u32;
            nodes[idx].order = items.to_vec();
            return idx;
        }
        let ext = hi - lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let key = |i: u32| {
            let b = boxes[i as usize];
            match axis {
                0 => b.0.x + b.1.x,
                1 => b.0.y + b.1.y,
                _ => b.0.z + b.1.z,
            }
        };
        let mid = items.len() / 2;
        items.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
        let (left, right) = items.split_at_mut(mid);
        Self::build_node(boxes, left, nodes);
        let r = Self::build_node(boxes, right, nodes);
        nodes[idx].left_or_first = r as u32;
        idx
    }

    /// Collect indices of boxes the ray touches.
    fn hit_candidates(&self, ray: &Ray, out: &mut Vec<u32>) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if ray_aabb(ray, node.aabb).is_none() {
                continue;
            }
            if node.count > 0 {
                out.extend_from_slice(&node.order);
            } else {
                stack.push(ni + 1);
                stack.push(node.left_or_first as usize);
            }
        }
    }
}

/// Counters for the acceleration regression gate.
#[derive(Debug, Default)]
pub struct TraceStats {
    /// Segment intersection tests performed by the two-stage path.
    pub segment_tests: AtomicU64,
    /// Segment tests the brute-force oracle performed.
    pub brute_tests: AtomicU64,
}

impl TraceStats {
    pub fn reset(&self) {
        self.segment_tests.store(0, Ordering::Relaxed);
        self.brute_tests.store(0, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RenderConfig {
    pub spp: usize,
    pub max_depth: usize,
    pub rr_start_depth: usize,
    pub seed: u64,
    pub tile_size: usize,
}

impl Default for RenderConfig {
    fn default() -> RenderConfig {
        RenderConfig {
            spp: 16,
            max_depth: 16,
            rr_start_depth: 3,
            seed: 0,
            tile_size: 16,
        }
    }
}

pub struct Scene {
    pub mesh: BaseMesh,
    pub plies: Vec<MappedPly>,
    /// All segment cylinders, flat; ply p's segments start at seg_base[p].
    pub segments: Vec<SegmentCylinder>,
    pub seg_base: Vec<usize>,
    /// UV grid whose cells hold flat segment indices (radius-padded bins).
    pub grid: MappingGrid,
    prisms: Vec<ShellPrism>,
    bvh: Bvh,
    pub lights: Vec<Light>,
    pub camera: Camera,
    pub bsdf: BsdfParams,
    pub fiber: FiberTexture,
    pub h_min: f64,
    pub h_max: f64,
    pub stats: TraceStats,
}

/// Prisms one global candidate fetch returns, front-to-back.
pub struct PrismCandidate {
    pub prism: u32,
    pub t_enter: f64,
    pub t_exit: f64,
    pub uv: Vec2,
}

impl Scene {
    pub fn assemble(
        mesh: BaseMesh,
        plies: Vec<MappedPly>,
        lights: Vec<Light>,
        camera: Camera,
        bsdf: BsdfParams,
        fiber: FiberTexture,
        h_min: f64,
        h_max: f64,
        grid_resolution: Option<(usize, usize)>,
    ) -> Result<Scene, RenderError> {
        mesh.validate()?;
        bsdf.validate().map_err(RenderError::Invalid)?;
        fiber.validate().map_err(RenderError::Invalid)?;
        if lights.is_empty() {
            return Err(RenderError::Invalid("scene needs at least one light".into()));
        }
        if plies.is_empty() {
            return Err(RenderError::Invalid("scene has no plies".into()));
        }
        let max_radius = plies.iter().map(|p| p.radius).fold(0.0f64, f64::max);
        for (pi, ply) in plies.iter().enumerate() {
            for (vi, uvh) in ply.source_uvh.iter().enumerate() {
                if uvh.z - ply.radius < h_min || uvh.z + ply.radius > h_max {
                    return Err(RenderError::Invalid(format!(
                        "ply {pi} vertex {vi}: h {} ± r outside shell [{h_min}, {h_max}]",
                        uvh.z
                    )));
                }
            }
        }

        // Flat segment cylinders.
        let mut segments = Vec::new();
        let mut seg_base = Vec::with_capacity(plies.len());
        for (pi, ply) in plies.iter().enumerate() {
            seg_base.push(segments.len());
            let curve = ply.to_ply_curve();
            for s in 0..curve.vertices.len() - 1 {
                segments.push(segment_cylinder(&curve, pi as u32, s));
            }
        }

        // UV grid over the mesh bounds; segment bins padded by the radius
        // converted to UV units so grazing surfaces stay in their cells.
        let resolution =
            grid_resolution.unwrap_or_else(|| crate::mapping::default_resolution(mesh.triangles.len()));
        let (lo, hi) = mesh.uv_bounds();
        let pad_b = |a: f64, b: f64| if b - a > 1e-12 { (a, b) } else { (a - 0.5, b + 0.5) };
        let (x0, x1) = pad_b(lo.x, hi.x);
        let (y0, y1) = pad_b(lo.y, hi.y);
        let mut grid = MappingGrid {
            resolution,
            uv_min: vec2(x0, y0),
            uv_max: vec2(x1, y1),
            cells: vec![Default::default(); resolution.0 * resolution.1],
        };
        let uv_scale = world_per_uv(&mesh).max(1e-9);
        let pad_uv = 2.0 * max_radius / uv_scale;
        for (pi, ply) in plies.iter().enumerate() {
            for s in 0..ply.source_uvh.len() - 1 {
                let a = ply.source_uvh[s];
                let b = ply.source_uvh[s + 1];
                let lo = vec2(a.x.min(b.x) - pad_uv, a.y.min(b.y) - pad_uv);
                let hi = vec2(a.x.max(b.x) + pad_uv, a.y.max(b.y) + pad_uv);
                if let Some((cx0, cx1, cy0, cy1)) = grid.cell_range(lo, hi) {
                    let id = (seg_base[pi] + s) as u32;
                    for cy in cy0..=cy1 {
                        for cx in cx0..=cx1 {
                            let ci = grid.cell_index(cx, cy);
                            grid.cells[ci].segments.push(id);
                        }
                    }
                }
            }
        }

        // Shell prisms + BVH.
        let mut prisms = Vec::with_capacity(mesh.triangles.len());
        for (ti, tri) in mesh.triangles.iter().enumerate() {
            let p = [
                mesh.vertices[tri[0] as usize].position,
                mesh.vertices[tri[1] as usize].position,
                mesh.vertices[tri[2] as usize].position,
            ];
            let n = [
                mesh.vertices[tri[0] as usize].normal,
                mesh.vertices[tri[1] as usize].normal,
                mesh.vertices[tri[2] as usize].normal,
            ];
            prisms.push(ShellPrism::build(ti as u32, p, n, h_min, h_max));
        }
        let boxes: Vec<(Vec3, Vec3)> = prisms.iter().map(|p| p.aabb).collect();
        let bvh = Bvh::build(&boxes);

        Ok(Scene {
            mesh,
            plies,
            segments,
            seg_base,
            grid,
            prisms,
            bvh,
            lights,
            camera,
            bsdf,
            fiber,
            h_min,
            h_max,
            stats: TraceStats::default(),
        })
    }

    /// Global stage: candidate prisms the ray crosses, front-to-back, with
    /// the UV of the entry point (entry projected to the base triangle
    /// along the interpolated normal).
    pub fn global_intersect(&self, ray: &Ray) -> Vec<PrismCandidate> {
        let mut ids = Vec::new();
        self.bvh.hit_candidates(ray, &mut ids);
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let prism = &self.prisms[id as usize];
            if let Some((t0, t1)) = prism.clip_ray(ray) {
                let entry = ray.at(t0.max(0.0));
                let uv = self.project_uv(prism.tri as usize, entry);
                out.push(PrismCandidate {
                    prism: id,
                    t_enter: t0,
                    t_exit: t1,
                    uv,
                });
            }
        }
        out.sort_by(|a, b| a.t_enter.partial_cmp(&b.t_enter).unwrap());
        out
    }

    /// Project a shell point onto its base triangle along the interpolated
    /// normal and return the barycentric UV (fixed-point refinement).
    fn project_uv(&self, tri: usize, p: Vec3) -> Vec2 {
        let t = &self.mesh.triangles[tri];
        let v = [
            &self.mesh.vertices[t[0] as usize],
            &self.mesh.vertices[t[1] as usize],
            &self.mesh.vertices[t[2] as usize],
        ];
        let e1 = v[1].position - v[0].position;
        let e2 = v[2].position - v[0].position;
        let face_n = e1.cross(e2).normalized();
        let bary3d = |q: Vec3| {
            // 2D barycentrics in the triangle plane.
            let d = q - v[0].position;
            let d11 = e1.dot(e1);
            let d12 = e1.dot(e2);
            let d22 = e2.dot(e2);
            let det = (d11 * d22 - d12 * d12).max(1e-30);
            let b1 = (d22 * e1.dot(d) - d12 * e2.dot(d)) / det;
            let b2 = (d11 * e2.dot(d) - d12 * e1.dot(d)) / det;
            [1.0 - b1 - b2, b1, b2]
        };
        let mut bary = bary3d(p - face_n * face_n.dot(p - v[0].position));
        for _ in 0..2 {
            let n = (v[0].normal * bary[0] + v[1].normal * bary[1] + v[2].normal * bary[2])
                .try_normalized(1e-9)
                .unwrap_or(face_n);
            let denom = n.dot(face_n);
            if denom.abs() < 1e-9 {
                break;
            }
            let h = face_n.dot(p - v[0].position) / denom;
            bary = bary3d(p - n * h);
        }
        v[0].uv * bary[0] + v[1].uv * bary[1] + v[2].uv * bary[2]
    }

    fn test_segment(&self, ray: &Ray, id: usize, best: &mut Option<(RawBest, usize)>) {
        self.stats.segment_tests.fetch_add(1, Ordering::Relaxed);
        if let Some(hit) = intersect_segment(ray, &self.segments[id]) {
            if best.as_ref().map_or(true, |(b, _)| hit.t < b.t) {
                *best = Some((hit, id));
            }
        }
    }

    fn ply_neighbors(&self, id: usize) -> [Option<usize>; 2] {
        let seg = &self.segments[id];
        let base = self.seg_base[seg.ply_id as usize];
        let count = self.plies[seg.ply_id as usize].vertices.len() - 1;
        let local = id - base;
        [
            (local > 0).then(|| id - 1),
            (local + 1 < count).then(|| id + 1),
        ]
    }

    /// Local stage: march the ray's UV footprint through each candidate
    /// prism one grid cell at a time, testing the 3×3 cell neighborhood
    /// around every step; stop as soon as the best hit precedes the
    /// marching position (the padded bins guarantee any nearer segment
    /// was already gathered).
    pub fn local_intersect(&self, ray: &Ray, candidates: &[PrismCandidate]) -> Option<HitRecord> {
        let mut best: Option<(RawBest, usize)> = None;
        let mut visited: HashSet<u32> = HashSet::new();
        let (gu, gv) = self.grid.resolution;
        let cell_w = (self.grid.uv_max.x - self.grid.uv_min.x) / gu as f64;
        let cell_h = (self.grid.uv_max.y - self.grid.uv_min.y) / gv as f64;
        let step_uv = cell_w.min(cell_h).max(1e-12);
        for cand in candidates {
            if let Some((b, _)) = &best {
                if b.t < cand.t_enter {
                    break;
                }
            }
            let tri = self.prisms[cand.prism as usize].tri as usize;
            let t0 = cand.t_enter.max(0.0);
            let t1 = cand.t_exit.max(t0);
            let uv_exit = self.project_uv(tri, ray.at(t1));
            let n_steps = ((cand.uv.distance(uv_exit) / step_uv).ceil() as usize)
                .clamp(1, 4 * (gu + gv));
            'walk: for k in 0..=n_steps {
                let lam = k as f64 / n_steps as f64;
                let t = t0 + (t1 - t0) * lam;
                if let Some((b, _)) = &best {
                    if b.t < t {
                        break 'walk;
                    }
                }
                let uv = if k == 0 {
                    cand.uv
                } else if k == n_steps {
                    uv_exit
                } else {
                    self.project_uv(tri, ray.at(t))
                };
                let (ix, iy) = self.grid.locate_cell(uv);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let cx = ix as i64 + dx;
                        let cy = iy as i64 + dy;
                        if cx < 0 || cy < 0 || cx >= gu as i64 || cy >= gv as i64 {
                            continue;
                        }
                        let cell = self.grid.cell(cx as usize, cy as usize);
                        for &sid in &cell.segments {
                            if visited.insert(sid) {
                                self.test_segment(ray, sid as usize, &mut best);
                            }
                        }
                    }
                }
            }
        }
        self.finish_hit(ray, best)
    }

    /// Resolve the winning raw hit, re-testing ply neighbors at the joint
    /// so the trimmed union stays crack-free even when a neighbor segment
    /// was not in any gathered cell.
    fn finish_hit(&self, ray: &Ray, best: Option<(RawBest, usize)>) -> Option<HitRecord> {
        let (mut raw, mut id) = best?;
        for nb in self.ply_neighbors(id).into_iter().flatten() {
            self.stats.segment_tests.fetch_add(1, Ordering::Relaxed);
            if let Some(resolved) = joint_trim(
                ray,
                Some(raw),
                &self.segments[id],
                &self.segments[nb],
            ) {
                if resolved.t < raw.t {
                    raw = resolved;
                    id = nb;
                }
            }
        }
        Some(resolve_hit(&self.segments[id], &raw))
    }

    /// Nearest ply hit via the full two-stage pipeline.
    pub fn intersect(&self, ray: &Ray) -> Option<HitRecord> {
        let candidates = self.global_intersect(ray);
        self.local_intersect(ray, &candidates)
    }

    /// Brute-force oracle: test every segment.
    pub fn intersect_brute(&self, ray: &Ray) -> Option<HitRecord> {
        let mut best: Option<(RawBest, usize)> = None;
        for id in 0..self.segments.len() {
            self.stats.brute_tests.fetch_add(1, Ordering::Relaxed);
            if let Some(hit) = intersect_segment(ray, &self.segments[id]) {
                if best.as_ref().map_or(true, |(b, _)| hit.t < b.t) {
                    best = Some((hit, id));
                }
            }
        }
        let (raw, id) = best?;
        Some(resolve_hit(&self.segments[id], &raw))
    }

    fn shade_point(&self, hit: &HitRecord) -> ShadingPoint {
        apply_fiber_texture(hit, &self.fiber)
    }

    fn shadow_epsilon(&self) -> f64 {
        1e-4 * self.plies.iter().map(|p| p.radius).fold(f64::INFINITY, f64::min)
    }

    fn offset_origin(&self, hit: &HitRecord, dir: Vec3) -> Vec3 {
        let eps = self.shadow_epsilon();
        let side = if dir.dot(hit.geo_normal) >= 0.0 { 1.0 } else { -1.0 };
        hit.position + hit.geo_normal * (eps * side)
    }

    /// Is the segment geometry free along the ray up to t_max?
    fn unoccluded(&self, ray: &Ray, t_max: f64) -> bool {
        match self.intersect(ray) {
            Some(h) => h.t >= t_max,
            None => true,
        }
    }
}

type RawBest = crate::intersect::RawHit;

fn ray_quad(ray: &Ray, corner: Vec3, edge1: Vec3, edge2: Vec3) -> Option<(f64, Vec3)> {
    let n = edge1.cross(edge2);
    let nn = n.try_normalized(1e-18)?;
    let denom = ray.dir.dot(nn);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (corner - ray.origin).dot(nn) / denom;
    if t <= 1e-9 {
        return None;
    }
    let p = ray.at(t);
    let d = p - corner;
    // Solve d = a·e1 + b·e2 in the quad plane.
    let e11 = edge1.dot(edge1);
    let e12 = edge1.dot(edge2);
    let e22 = edge2.dot(edge2);
    let det = e11 * e22 - e12 * e12;
    if det.abs() < 1e-18 {
        return None;
    }
    let a = (e22 * edge1.dot(d) - e12 * edge2.dot(d)) / det;
    let b = (e11 * edge2.dot(d) - e12 * edge1.dot(d)) / det;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return None;
    }
    Some((t, nn))
}

/// Nearest emissive-quad hit: (t, radiance seen).
fn nearest_light_hit(scene: &Scene, ray: &Ray) -> Option<(f64, Rgb, usize)> {
    let mut best: Option<(f64, Rgb, usize)> = None;
    for (li, light) in scene.lights.iter().enumerate() {
        if let Light::AreaQuad {
            corner,
            edge1,
            edge2,
            radiance,
        } = light
        {
            if let Some((t, n)) = ray_quad(ray, *corner, *edge1, *edge2) {
                // One-sided: emits from the side the normal points to.
                if ray.dir.dot(n) < 0.0 && best.map_or(true, |(bt, _, _)| t < bt) {
                    best = Some((t, *radiance, li));
                }
            }
        }
    }
    best
}

/// Environment radiance for an escaped ray (sum over env lights).
fn env_radiance(scene: &Scene, dir: Vec3) -> Rgb {
    let mut out = [0.0; 3];
    for light in &scene.lights {
        let r = match light {
            Light::ConstantEnv { radiance } => *radiance,
            Light::LatLongEnv(env) => env.radiance(dir),
            Light::AreaQuad { .. } => continue,
        };
        for c in 0..3 {
            out[c] += r[c];
        }
    }
    out
}

fn cosine_sample(n: Vec3, u: (f64, f64)) -> (Vec3, f64) {
    let a = n.min_component_axis();
    let e1 = (a - n * n.dot(a)).normalized();
    let e2 = n.cross(e1);
    let z = u.0.sqrt();
    let r = (1.0 - u.0).max(0.0).sqrt();
    let phi = TAU * u.1;
    let d = n * z + (e1 * phi.cos() + e2 * phi.sin()) * r;
    (d, z / PI)
}

/// Solid-angle pdf of the NEE strategy for reaching direction `dir` from
/// `sp`, for light `li` (used on the BSDF-sample side of MIS).
fn light_pdf(scene: &Scene, sp: &ShadingPoint, li: usize, dir: Vec3, dist: f64) -> f64 {
    let pick = 1.0 / scene.lights.len() as f64;
    match &scene.lights[li] {
        Light::AreaQuad { edge1, edge2, .. } => {
            let area = edge1.cross(*edge2).length();
            let nn = edge1.cross(*edge2).normalized();
            let cos_l = (-dir).dot(nn).abs().max(1e-9);
            pick * dist * dist / (area * cos_l)
        }
        Light::ConstantEnv { .. } => pick * dir.dot(sp.normal).max(0.0) / PI,
        Light::LatLongEnv(env) => pick * env.pdf(dir),
    }
}

/// One light sample + one BSDF sample, balance-heuristic MIS.
pub fn estimate_direct(scene: &Scene, sp: &ShadingPoint, wi: Vec3, rng: &mut Rng) -> Rgb {
    let mut out = [0.0; 3];
    let n_lights = scene.lights.len();
    let li = rng.next_below(n_lights as u64) as usize;
    let pick = 1.0 / n_lights as f64;

    // Light-strategy sample.
    let sample = match &scene.lights[li] {
        Light::AreaQuad {
            corner,
            edge1,
            edge2,
            radiance,
        } => {
            let (u, v) = rng.next_2d();
            let x = *corner + *edge1 * u + *edge2 * v;
            let d = x - sp.hit.position;
            let dist = d.length();
            let dir = d / dist;
            let nn = edge1.cross(*edge2).normalized();
            let cos_l = (-dir).dot(nn);
            if cos_l > 1e-9 {
                let area = edge1.cross(*edge2).length();
                let pdf = pick * dist * dist / (area * cos_l);
                Some((dir, dist, pdf, *radiance))
            } else {
                None
            }
        }
        Light::ConstantEnv { radiance } => {
            let (dir, pdf) = cosine_sample(sp.normal, rng.next_2d());
            (pdf > 0.0).then_some((dir, f64::INFINITY, pick * pdf, *radiance))
        }
        Light::LatLongEnv(env) => {
            let (dir, pdf) = env.sample(rng.next_2d());
            (pdf > 0.0).then(|| (dir, f64::INFINITY, pick * pdf, env.radiance(dir)))
        }
    };
    if let Some((dir, dist, pdf_l, radiance)) = sample {
        let cos_s = dir.dot(sp.normal);
        if cos_s > 0.0 && pdf_l > 0.0 {
            let shadow = Ray {
                origin: scene.offset_origin(&sp.hit, dir),
                dir,
            };
            let t_max = if dist.is_finite() {
                dist - 2.0 * scene.shadow_epsilon()
            } else {
                f64::INFINITY
            };
            if scene.unoccluded(&shadow, t_max) {
                let f = bsdf_eval(sp, wi, dir, &scene.bsdf);
                let pdf_b = bsdf_pdf(sp, wi, dir, &scene.bsdf);
                let w = pdf_l / (pdf_l + pdf_b);
                for c in 0..3 {
                    out[c] += f[c] * cos_s * radiance[c] * w / pdf_l;
                }
            }
        }
    }

    // BSDF-strategy sample, counting only emission.
    if let Some((wo, pdf_b, f)) = bsdf_sample(sp, wi, &scene.bsdf, rng.next_2d()) {
        let cos_s = wo.dot(sp.normal).max(0.0);
        if cos_s > 0.0 && pdf_b > 0.0 {
            let ray = Ray {
                origin: scene.offset_origin(&sp.hit, wo),
                dir: wo,
            };
            let geo_t = scene.intersect(&ray).map(|h| h.t).unwrap_or(f64::INFINITY);
            if let Some((lt, radiance, lidx)) = nearest_light_hit(scene, &ray) {
                if lt < geo_t {
                    let pdf_l = light_pdf(scene, sp, lidx, wo, lt);
                    let w = pdf_b / (pdf_b + pdf_l);
                    for c in 0..3 {
                        out[c] += f[c] * cos_s * radiance[c] * w / pdf_b;
                    }
                }
            } else if geo_t.is_infinite() {
                // Escaped: environment lights.
                for (lidx, light) in scene.lights.iter().enumerate() {
                    let radiance = match light {
                        Light::ConstantEnv { radiance } => *radiance,
                        Light::LatLongEnv(env) => env.radiance(wo),
                        Light::AreaQuad { .. } => continue,
                    };
                    let pdf_l = light_pdf(scene, sp, lidx, wo, 1.0);
                    let w = pdf_b / (pdf_b + pdf_l);
                    for c in 0..3 {
                        out[c] += f[c] * cos_s * radiance[c] * w / pdf_b;
                    }
                }
            }
        }
    }
    out
}

/// Trace one camera path. With NEE, emission is collected at the first
/// vertex and via `estimate_direct` afterwards; without, emission is added
/// wherever the path lands (the consistency oracle for unbiasedness).
pub fn trace_path(scene: &Scene, mut ray: Ray, rng: &mut Rng, config: &RenderConfig, use_nee: bool) -> Rgb {
    let mut radiance = [0.0f64; 3];
    let mut throughput = [1.0f64; 3];
    for depth in 0..config.max_depth {
        let collect_emission = depth == 0 || !use_nee;
        let geo_hit = scene.intersect(&ray);
        let light_hit = nearest_light_hit(scene, &ray);
        let geo_t = geo_hit.as_ref().map(|h| h.t).unwrap_or(f64::INFINITY);
        if let Some((lt, le, _)) = light_hit {
            if lt < geo_t {
                if collect_emission {
                    for c in 0..3 {
                        radiance[c] += throughput[c] * le[c];
                    }
                }
                break;
            }
        }
        let hit = match geo_hit {
            Some(h) => h,
            None => {
                if collect_emission {
                    let le = env_radiance(scene, ray.dir);
                    for c in 0..3 {
                        radiance[c] += throughput[c] * le[c];
                    }
                }
                break;
            }
        };
        let sp = scene.shade_point(&hit);
        let wi = -ray.dir;
        if use_nee {
            let direct = estimate_direct(scene, &sp, wi, rng);
            for c in 0..3 {
                radiance[c] += throughput[c] * direct[c];
            }
        }
        if depth + 1 >= config.max_depth {
            break;
        }
        let (wo, pdf, f) = match bsdf_sample(&sp, wi, &scene.bsdf, rng.next_2d()) {
            Some(s) => s,
            None => break,
        };
        let cos = wo.dot(sp.normal).abs();
        for c in 0..3 {
            throughput[c] *= f[c] * cos / pdf;
        }
        if depth >= config.rr_start_depth {
            let q = throughput
                .iter()
                .fold(0.0f64, |a, &b| a.max(b))
                .clamp(0.05, 0.95);
            if rng.next_f64() >= q {
                break;
            }
            for c in &mut throughput {
                *c /= q;
            }
        }
        ray = Ray {
            origin: scene.offset_origin(&hit, wo),
            dir: wo,
        };
    }
    radiance
}

/// Linear RGB float image, row-major top-to-bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Render the scene; deterministic for a fixed seed regardless of the
/// rayon thread count (per-pixel counter RNG, rows written disjointly).
pub fn render(scene: &Scene, config: &RenderConfig) -> Image {
    render_inner(scene, config, true)
}

/// NEE-disabled variant for the unbiasedness oracle.
pub fn render_without_nee(scene: &Scene, config: &RenderConfig) -> Image {
    render_inner(scene, config, false)
}

fn render_inner(scene: &Scene, config: &RenderConfig, use_nee: bool) -> Image {
    let (w, h) = (scene.camera.width, scene.camera.height);
    let mut img = Image::new(w, h);
    img.data
        .par_chunks_mut(w * 3)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let pixel = (y * w + x) as u64;
                let mut acc = [0.0f64; 3];
                for s in 0..config.spp {
                    let mut rng = Rng::for_sample(config.seed, pixel, s as u64);
                    let jitter = rng.next_2d();
                    let ray = scene.camera.primary_ray(x, y, jitter);
                    let l = trace_path(scene, ray, &mut rng, config, use_nee);
                    for c in 0..3 {
                        acc[c] += l[c];
                    }
                }
                for c in 0..3 {
                    row[x * 3 + c] = acc[c] / config.spp as f64;
                }
            }
        });
    img
}

/// Write a color PFM (little-endian, rows bottom-to-top per convention).
pub fn write_pfm<W: Write>(mut w: W, img: &Image) -> Result<(), RenderError> {
    write!(w, "PF\n{} {}\n-1.0\n", img.width, img.height)?;
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for c in 0..3 {
                let v = img.data[(y * img.width + x) * 3 + c] as f32;
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_pfm<R: Read>(r: R) -> Result<Image, RenderError> {
    let mut reader = BufReader::new(r);
    let mut header = Vec::new();
    // Three whitespace-terminated tokens after the magic line.
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "PF" {
        return Err(RenderError::Parse("PFM: expected PF magic".into()));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let dims: Vec<&str> = line.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(RenderError::Parse("PFM: bad dimensions line".into()));
    }
    let width: usize = dims[0].parse().map_err(|_| RenderError::Parse("PFM: bad width".into()))?;
    let height: usize = dims[1].parse().map_err(|_| RenderError::Parse("PFM: bad height".into()))?;
    line.clear();
    reader.read_line(&mut line)?;
    let scale: f64 = line
        .trim()
        .parse()
        .map_err(|_| RenderError::Parse("PFM: bad scale".into()))?;
    if scale >= 0.0 {
        return Err(RenderError::Parse("PFM: only little-endian supported".into()));
    }
    reader.read_to_end(&mut header)?;
    let expected = width * height * 3 * 4;
    if header.len() != expected {
        return Err(RenderError::Parse(format!(
            "PFM: expected {expected} payload bytes, got {}",
            header.len()
        )));
    }
    let mut img = Image::new(width, height);
    let mut i = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..3 {
                let v = f32::from_le_bytes(header[i..i + 4].try_into().unwrap());
                img.data[(y * width + x) * 3 + c] = v as f64;
                i += 4;
            }
        }
    }
    Ok(img)
}

fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Export with a simple exposure multiplier and sRGB transfer.
pub fn write_png(path: &Path, img: &Image, exposure: f64) -> Result<(), RenderError> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            let px = [0, 1, 2].map(|c| {
                (srgb_encode((p[c] * exposure).clamp(0.0, 1.0)) * 255.0 + 0.5) as u8
            });
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| RenderError::Invalid(format!("png write: {e}")))?;
    Ok(())
}

mod scene_io {
    use super::*;
    use crate::mapping::load_obj;
    use crate::plygen::read_plb;
    use serde::Deserialize;
    use std::fs;
    use std::path::PathBuf;

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct SceneFile {
        mesh: String,
        plies_flat: String,
        plies_mapped: String,
        bsdf: String,
        shell: ShellSection,
        camera: CameraSection,
        #[serde(default)]
        fiber: Option<FiberSection>,
        lights: Vec<LightSection>,
        #[serde(default)]
        grid: Option<GridSection>,
        #[serde(default)]
        render: Option<RenderSection>,
    }

    #[derive(Deserialize)]
    struct ShellSection {
        h_min: f64,
        h_max: f64,
        /// The shell_base offset that was used when mapping the plies.
        base: f64,
    }

    #[derive(Deserialize)]
    struct CameraSection {
        position: [f64; 3],
        look_at: [f64; 3],
        up: [f64; 3],
        vfov: f64,
        width: usize,
        height: usize,
    }

    #[derive(Deserialize)]
    struct FiberSection {
        fiber_count: u32,
        amplitude: f64,
        fiber_twist: f64,
        shadow_depth: f64,
    }

    #[derive(Deserialize)]
    #[serde(tag = "kind")]
    enum LightSection {
        #[serde(rename = "area")]
        Area {
            corner: [f64; 3],
            edge1: [f64; 3],
            edge2: [f64; 3],
            radiance: [f64; 3],
        },
        #[serde(rename = "env_const")]
        EnvConst { radiance: [f64; 3] },
        #[serde(rename = "env_latlong")]
        EnvLatLong { file: String },
    }

    #[derive(Deserialize)]
    struct GridSection {
        resolution: usize,
    }

    #[derive(Deserialize)]
    struct RenderSection {
        spp: Option<usize>,
        max_depth: Option<usize>,
        rr_start_depth: Option<usize>,
        seed: Option<u64>,
        tile_size: Option<usize>,
    }

    fn v3(a: [f64; 3]) -> Vec3 {
        vec3(a[0], a[1], a[2])
    }

    /// Load a scene description file; relative paths resolve against the
    /// file's directory. Returns the scene plus the render settings it
    /// carries (missing [render] fields fall back to defaults).
    pub fn load_scene(path: &Path) -> Result<(Scene, RenderConfig), RenderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RenderError::Parse(format!("{}: {e}", path.display())))?;
        let file: SceneFile =
            toml::from_str(&text).map_err(|e| RenderError::Parse(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &str| -> PathBuf {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                dir.join(pb)
            }
        };

        let mesh = load_obj(&resolve(&file.mesh))?;
        let flat = read_plb(fs::File::open(resolve(&file.plies_flat))?)?;
        let mapped = read_plb(fs::File::open(resolve(&file.plies_mapped))?)?;
        if flat.len() != mapped.len() {
            return Err(RenderError::Invalid(format!(
                "flat ({}) and mapped ({}) ply counts differ",
                flat.len(),
                mapped.len()
            )));
        }
        let mut plies = Vec::with_capacity(mapped.len());
        for (pi, (f, m)) in flat.iter().zip(&mapped).enumerate() {
            if f.vertices.len() != m.vertices.len() {
                return Err(RenderError::Invalid(format!(
                    "ply {pi}: flat/mapped vertex counts differ"
                )));
            }
            // uv,h correspondence: flat vertex (x, y, z) ↔ (u, v, h−base).
            let source_uvh = f
                .vertices
                .iter()
                .map(|v| vec3(v.position.x, v.position.y, v.position.z + file.shell.base))
                .collect();
            plies.push(MappedPly {
                vertices: m.vertices.clone(),
                source_uvh,
                radius: m.radius,
                yarn_id: m.yarn_id,
                ply_index: m.ply_index,
            });
        }

        let bsdf_text = fs::read_to_string(resolve(&file.bsdf))
            .map_err(|e| RenderError::Parse(format!("{}: {e}", file.bsdf)))?;
        let bsdf = BsdfParams::from_text(&bsdf_text).map_err(RenderError::Parse)?;
        let fiber = match file.fiber {
            Some(f) => FiberTexture {
                fiber_count: f.fiber_count,
                amplitude: f.amplitude,
                fiber_twist: f.fiber_twist,
                shadow_depth: f.shadow_depth,
            },
            None => FiberTexture::flat(),
        };

        let mut lights = Vec::new();
        for l in file.lights {
            lights.push(match l {
                LightSection::Area {
                    corner,
                    edge1,
                    edge2,
                    radiance,
                } => Light::AreaQuad {
                    corner: v3(corner),
                    edge1: v3(edge1),
                    edge2: v3(edge2),
                    radiance,
                },
                LightSection::EnvConst { radiance } => Light::ConstantEnv { radiance },
                LightSection::EnvLatLong { file: f } => {
                    let img = read_pfm(fs::File::open(resolve(&f))?)?;
                    let texels = (0..img.width * img.height)
                        .map(|i| [img.data[i * 3], img.data[i * 3 + 1], img.data[i * 3 + 2]])
                        .collect();
                    Light::LatLongEnv(LatLongEnv::new(img.width, img.height, texels)?)
                }
            });
        }

        let camera = Camera {
            position: v3(file.camera.position),
            look_at: v3(file.camera.look_at),
            up: v3(file.camera.up),
            vfov: file.camera.vfov,
            width: file.camera.width,
            height: file.camera.height,
        };
        let grid_res = file.grid.map(|g| (g.resolution, g.resolution));
        let scene = Scene::assemble(
            mesh,
            plies,
            lights,
            camera,
            bsdf,
            fiber,
            file.shell.h_min,
            file.shell.h_max,
            grid_res,
        )?;
        let mut config = RenderConfig::default();
        if let Some(r) = file.render {
            if let Some(v) = r.spp {
                config.spp = v;
            }
            if let Some(v) = r.max_depth {
                config.max_depth = v;
            }
            if let Some(v) = r.rr_start_depth {
                config.rr_start_depth = v;
            }
            if let Some(v) = r.seed {
                config.seed = v;
            }
            if let Some(v) = r.tile_size {
                config.tile_size = v;
            }
        }
        Ok((scene, config))
    }
}

pub use scene_io::load_scene;

/// Mean world-space length per unit of UV length, estimated over triangles.
fn world_per_uv(mesh: &BaseMesh) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for tri in &mesh.triangles {
        let p = [
            mesh.vertices[tri[0] as usize].position,
            mesh.vertices[tri[1] as usize].position,
            mesh.vertices[tri[2] as usize].position,
        ];
        let uv = [
            mesh.vertices[tri[0] as usize].uv,
            mesh.vertices[tri[1] as usize].uv,
            mesh.vertices[tri[2] as usize].uv,
        ];
        let a3 = (p[1] - p[0]).cross(p[2] - p[0]).length() / 2.0;
        let a2 = ((uv[1] - uv[0]).cross(uv[2] - uv[0]) / 2.0).abs();
        if a2 > 1e-15 {
            sum += (a3 / a2).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::mapping::MeshVertex;
    use crate::plygen::PlyVertex;

    /// A flat unit quad in the xz-plane (normal +y), uv = (x, z).
    pub fn flat_quad_mesh(size: f64) -> BaseMesh {
        let v = |x: f64, z: f64| MeshVertex {
            position: vec3(x * size, 0.0, z * size),
            normal: Vec3::Y,
            uv: vec2(x, z),
        };
        BaseMesh {
            vertices: vec![v(0.0, 0.0), v(1.0, 0.0), v(1.0, 1.0), v(0.0, 1.0)],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    /// A straight mapped ply above the quad at height h, running along x
    /// at uv.y = v0.
    pub fn straight_mapped_ply(size: f64, v0: f64, h: f64, radius: f64, steps: usize) -> MappedPly {
        let mut vertices = Vec::new();
        let mut source_uvh = Vec::new();
        for i in 0..=steps {
            let u = i as f64 / steps as f64;
            vertices.push(PlyVertex {
                position: vec3(u * size, h, v0 * size),
                normal: Vec3::Y,
                arclen: u * size,
            });
            source_uvh.push(vec3(u, v0, h));
        }
        MappedPly {
            vertices,
            source_uvh,
            radius,
            yarn_id: 0,
            ply_index: 0,
        }
    }

    pub fn simple_camera(w: usize, h: usize) -> Camera {
        Camera {
            position: vec3(0.5, 2.0, 0.5),
            look_at: vec3(0.5, 0.0, 0.5),
            up: Vec3::Z,
            vfov: 45.0,
            width: w,
            height: h,
        }
    }

    pub fn one_ply_scene() -> Scene {
        let mesh = flat_quad_mesh(1.0);
        let ply = straight_mapped_ply(1.0, 0.5, 0.1, 0.02, 16);
        Scene::assemble(
            mesh,
            vec![ply],
            vec![Light::ConstantEnv { radiance: [1.0; 3] }],
            simple_camera(16, 16),
            BsdfParams::lambertian([0.7, 0.7, 0.7]),
            FiberTexture::flat(),
            0.0,
            0.3,
            Some((16, 16)),
        )
        .unwrap()
    }
}
