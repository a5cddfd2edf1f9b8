//! Ply centerline generation: arc-length resampling, rotation minimizing
//! frames (double reflection), and twisting K plies around each yarn.

use std::io::{Read, Write};

use thiserror::Error;

use crate::math::{vec3, Frame, Vec3};
use crate::pattern::YarnCurve;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("bad magic: expected PLB1")]
    BadMagic,
    #[error("malformed PLB data: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Ply generation parameters.
#[derive(Debug, Clone, Copy)]
pub struct PlyParams {
    /// Number of plies per yarn.
    pub num_plies: usize,
    /// Distance from the yarn center to each ply center.
    pub ply_offset: f64,
    /// Ply cylinder radius.
    pub ply_radius: f64,
    /// Twist rate in radians per unit yarn arc length (signed).
    pub twist_rate: f64,
    /// Arc-length resampling step.
    pub resample_step: f64,
}

impl PlyParams {
    pub fn validate(&self) -> Result<(), PlyError> {
        if self.num_plies < 1 {
            return Err(PlyError::InvalidParams("num_plies must be ≥ 1".into()));
        }
        if self.ply_offset < 0.0 {
            return Err(PlyError::InvalidParams("ply_offset must be ≥ 0".into()));
        }
        if self.ply_radius <= 0.0 {
            return Err(PlyError::InvalidParams("ply_radius must be > 0".into()));
        }
        if self.resample_step <= 0.0 {
            return Err(PlyError::InvalidParams("resample_step must be > 0".into()));
        }
        Ok(())
    }

    /// Default resample step: half the ply radius.
    pub fn with_default_step(mut self) -> Self {
        self.resample_step = self.ply_radius * 0.5;
        self
    }
}

/// One ply vertex: the 28-byte serialized record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyVertex {
    pub position: Vec3,
    pub normal: Vec3,
    pub arclen: f64,
}

/// A twisted ply centerline with per-vertex shading data.
#[derive(Debug, Clone)]
pub struct PlyCurve {
    pub vertices: Vec<PlyVertex>,
    pub radius: f64,
    pub yarn_id: u32,
    pub ply_index: u32,
}

/// Rotation minimizing frames along a polyline by the double reflection
/// method. Tangents are normalized central differences, one-sided at the
/// ends.
pub fn rmf_frames(points: &[Vec3], initial_normal: Vec3) -> Result<Vec<Frame>, PlyError> {
    if points.len() < 2 {
        return Err(PlyError::Degenerate("need at least 2 points".into()));
    }
    let tangents = polyline_tangents(points)?;
    let t0 = tangents[0];
    let n0 = (initial_normal - t0 * t0.dot(initial_normal))
        .try_normalized(1e-9)
        .ok_or_else(|| {
            PlyError::Degenerate("initial normal is parallel to the first tangent".into())
        })?;
    let mut frames = Vec::with_capacity(points.len());
    frames.push(Frame::new(t0, n0));
    for i in 0..points.len() - 1 {
        let prev = frames[i];
        let v1 = points[i + 1] - points[i];
        let c1 = v1.length_squared();
        if c1 == 0.0 {
            return Err(PlyError::Degenerate(format!("zero-length segment at {i}")));
        }
        // First reflection: across the plane bisecting the segment.
        let rl = prev.normal - v1 * (2.0 / c1 * v1.dot(prev.normal));
        let tl = prev.tangent - v1 * (2.0 / c1 * v1.dot(prev.tangent));
        // Second reflection: align the reflected tangent with the next one.
        let v2 = tangents[i + 1] - tl;
        let c2 = v2.length_squared();
        let normal = if c2 > 1e-24 {
            rl - v2 * (2.0 / c2 * v2.dot(rl))
        } else {
            rl
        };
        frames.push(Frame::orthonormalized(tangents[i + 1], normal));
    }
    Ok(frames)
}

fn polyline_tangents(points: &[Vec3]) -> Result<Vec<Vec3>, PlyError> {
    let n = points.len();
    let mut tangents = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            points[1] - points[0]
        } else if i == n - 1 {
            points[n - 1] - points[n - 2]
        } else {
            points[i + 1] - points[i - 1]
        };
        tangents.push(
            d.try_normalized(1e-15)
                .ok_or_else(|| PlyError::Degenerate(format!("zero-length segment at {i}")))?,
        );
    }
    Ok(tangents)
}

/// Default initial normal: the world axis least aligned with the first
/// tangent, projected orthogonal to it.
pub fn default_initial_normal(points: &[Vec3]) -> Vec3 {
    let t = (points[1] - points[0]).normalized();
    let axis = t.min_component_axis();
    (axis - t * t.dot(axis)).normalized()
}

/// Resample a polyline at uniform arc-length steps. For closed curves the
/// closing segment is included and the duplicate end sample dropped.
pub fn resample(points: &[Vec3], closed: bool, step: f64) -> Result<Vec<Vec3>, PlyError> {
    if points.len() < 2 {
        return Err(PlyError::Degenerate("need at least 2 points".into()));
    }
    let mut cumulative = vec![0.0];
    for w in points.windows(2) {
        let d = w[0].distance(w[1]);
        if d == 0.0 {
            return Err(PlyError::Degenerate("zero-length segment".into()));
        }
        cumulative.push(cumulative.last().unwrap() + d);
    }
    if closed {
        let d = points.last().unwrap().distance(points[0]);
        if d == 0.0 {
            return Err(PlyError::Degenerate("zero-length closing segment".into()));
        }
        cumulative.push(cumulative.last().unwrap() + d);
    }
    let total = *cumulative.last().unwrap();
    let count = ((total / step).round() as usize).max(if closed { 3 } else { 1 });
    let actual_step = total / count as f64;
    let sample_count = if closed { count } else { count + 1 };
    let point_at = |s: f64| -> Vec3 {
        let idx = match cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(cumulative.len() - 2),
            Err(i) => i.saturating_sub(1).min(cumulative.len() - 2),
        };
        let a = points[idx % points.len()];
        let b = points[(idx + 1) % points.len()];
        let seg = cumulative[idx + 1] - cumulative[idx];
        a.lerp(b, ((s - cumulative[idx]) / seg).clamp(0.0, 1.0))
    };
    Ok((0..sample_count)
        .map(|i| point_at((i as f64 * actual_step).min(total)))
        .collect())
}

/// Frames along a yarn, with the closed-curve seam mismatch distributed
/// linearly along arc length so the frame field is continuous.
pub fn yarn_frames(points: &[Vec3], closed: bool) -> Result<Vec<Frame>, PlyError> {
    let initial = default_initial_normal(points);
    if !closed {
        return rmf_frames(points, initial);
    }
    // Transport once more across the closing segment and measure the
    // angular mismatch against the start frame.
    let mut extended: Vec<Vec3> = points.to_vec();
    extended.push(points[0]);
    extended.push(points[1]);
    let ext_frames = rmf_frames(&extended, initial)?;
    let end = ext_frames[points.len()];
    let start = ext_frames[0];
    let mismatch = (end.normal.dot(start.normal))
        .clamp(-1.0, 1.0)
        .acos()
        .copysign(end.normal.cross(start.normal).dot(start.tangent));
    let mut cumulative = vec![0.0];
    for w in points.windows(2) {
        cumulative.push(cumulative.last().unwrap() + w[0].distance(w[1]));
    }
    let total = cumulative.last().unwrap() + points.last().unwrap().distance(points[0]);
    let frames = ext_frames[..points.len()]
        .iter()
        .zip(&cumulative)
        .map(|(f, &s)| {
            let angle = mismatch * s / total;
            Frame::new(
                f.tangent,
                f.normal.rotate_about(f.tangent, angle),
            )
        })
        .collect();
    Ok(frames)
}

/// Generate the K twisted plies of one yarn.
///
/// Ply k's vertex at yarn arc length s is
/// `c(s) + r_o·(cos θ·n(s) + sin θ·b(s))` with `θ = 2πk/K + ω·s`; the
/// vertex normal is the unit radial direction and the arc length is
/// recomputed over the ply's own vertices.
pub fn generate_plies(
    yarn: &YarnCurve,
    yarn_id: u32,
    params: &PlyParams,
) -> Result<Vec<PlyCurve>, PlyError> {
    params.validate()?;
    let samples = resample(&yarn.vertices, yarn.closed, params.resample_step)?;
    let frames = yarn_frames(&samples, yarn.closed)?;
    let mut arclen = vec![0.0];
    for w in samples.windows(2) {
        arclen.push(arclen.last().unwrap() + w[0].distance(w[1]));
    }
    // Closed yarns store the seam vertex explicitly; snap the twist so each
    // ply closes on itself across the seam.
    let twist_rate = if yarn.closed {
        let total = arclen.last().unwrap() + samples.last().unwrap().distance(samples[0]);
        (params.twist_rate * total / std::f64::consts::TAU).round() * std::f64::consts::TAU
            / total
    } else {
        params.twist_rate
    };
    let k_total = params.num_plies;
    let mut plies = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let phase0 = std::f64::consts::TAU * k as f64 / k_total as f64;
        let mut vertices = Vec::with_capacity(samples.len() + 1);
        for i in 0..samples.len() {
            let theta = phase0 + twist_rate * arclen[i];
            let radial = frames[i].normal * theta.cos() + frames[i].binormal * theta.sin();
            vertices.push(PlyVertex {
                position: samples[i] + radial * params.ply_offset,
                normal: radial,
                arclen: 0.0,
            });
        }
        if yarn.closed {
            // Duplicate the start vertex so the stored polyline is the full
            // closed loop.
            let first = vertices[0];
            vertices.push(first);
        }
        // Arc length over the ply's own vertices.
        for i in 1..vertices.len() {
            vertices[i].arclen =
                vertices[i - 1].arclen + vertices[i - 1].position.distance(vertices[i].position);
        }
        plies.push(PlyCurve {
            vertices,
            radius: params.ply_radius,
            yarn_id,
            ply_index: k as u32,
        });
    }
    Ok(plies)
}

/// Serialized size of one ply vertex record.
pub const VERTEX_RECORD_BYTES: usize = 28;

fn put_f32(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

/// Encode one vertex into its 28-byte little-endian record.
pub fn encode_vertex(v: &PlyVertex) -> [u8; VERTEX_RECORD_BYTES] {
    let mut buf = Vec::with_capacity(VERTEX_RECORD_BYTES);
    put_f32(&mut buf, v.position.x);
    put_f32(&mut buf, v.position.y);
    put_f32(&mut buf, v.position.z);
    put_f32(&mut buf, v.normal.x);
    put_f32(&mut buf, v.normal.y);
    put_f32(&mut buf, v.normal.z);
    put_f32(&mut buf, v.arclen);
    buf.try_into().unwrap()
}

pub fn decode_vertex(buf: &[u8; VERTEX_RECORD_BYTES]) -> PlyVertex {
    let f = |i: usize| f32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
    PlyVertex {
        position: vec3(f(0), f(1), f(2)),
        normal: vec3(f(3), f(4), f(5)),
        arclen: f(6),
    }
}

/// Write ply curves in the PLB binary format.
pub fn write_plb<W: Write>(mut w: W, plies: &[PlyCurve]) -> Result<(), PlyError> {
    w.write_all(b"PLB1")?;
    w.write_all(&(plies.len() as u32).to_le_bytes())?;
    for ply in plies {
        w.write_all(&ply.yarn_id.to_le_bytes())?;
        w.write_all(&ply.ply_index.to_le_bytes())?;
        w.write_all(&(ply.radius as f32).to_le_bytes())?;
        w.write_all(&(ply.vertices.len() as u32).to_le_bytes())?;
        for v in &ply.vertices {
            w.write_all(&encode_vertex(v))?;
        }
    }
    Ok(())
}

/// Read ply curves from the PLB binary format.
pub fn read_plb<R: Read>(mut r: R) -> Result<Vec<PlyCurve>, PlyError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"PLB1" {
        return Err(PlyError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let ply_count = u32::from_le_bytes(u32buf);
    let mut plies = Vec::with_capacity(ply_count as usize);
    for _ in 0..ply_count {
        r.read_exact(&mut u32buf)?;
        let yarn_id = u32::from_le_bytes(u32buf);
        r.read_exact(&mut u32buf)?;
        let ply_index = u32::from_le_bytes(u32buf);
        r.read_exact(&mut u32buf)?;
        let radius = f32::from_le_bytes(u32buf) as f64;
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        if count < 2 {
            return Err(PlyError::Malformed("ply with fewer than 2 vertices".into()));
        }
        let mut vertices = Vec::with_capacity(count);
        let mut rec = [0u8; VERTEX_RECORD_BYTES];
        for _ in 0..count {
            r.read_exact(&mut rec)?;
            vertices.push(decode_vertex(&rec));
        }
        plies.push(PlyCurve {
            vertices,
            radius,
            yarn_id,
            ply_index,
        });
    }
    Ok(plies)
}
