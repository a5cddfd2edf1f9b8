//! Ray-ply local intersection geometry.
//!
//! Each segment of a ply curve is a finite cylinder trimmed by the two
//! joint planes perpendicular to the average tangents of the adjacent
//! segments, so consecutive cylinders meet in a shared ellipse and the
//! union surface is crack-free. Shading frames are interpolated along the
//! surface line between the two elliptical caps.

use crate::math::{wrap_angle, Frame, Vec3};
use crate::plygen::PlyCurve;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// A joint cross-section plane bounding one end of a segment cylinder.
#[derive(Debug, Clone, Copy)]
pub struct EllipseCap {
    pub center: Vec3,
    /// Unit plane normal; points forward along the ply so that
    /// `plane_normal · segment_axis > 0` for the segment it bounds.
    pub plane_normal: Vec3,
    /// Whether this cap is an open ply end, closed with a disk.
    pub end_disk: bool,
}

/// One finite cylinder of a ply curve with its caps and endpoint shading
/// frames.
#[derive(Debug, Clone, Copy)]
pub struct SegmentCylinder {
    pub p0: Vec3,
    pub p1: Vec3,
    pub radius: f64,
    pub cap0: EllipseCap,
    pub cap1: EllipseCap,
    pub frame0: Frame,
    pub frame1: Frame,
    pub arclen0: f64,
    pub arclen1: f64,
    pub ply_id: u32,
    pub segment_id: u32,
}

impl SegmentCylinder {
    pub fn axis(&self) -> Vec3 {
        (self.p1 - self.p0).normalized()
    }
}

/// Raw lateral-surface hit before frame interpolation.
#[derive(Debug, Clone, Copy)]
pub struct RawHit {
    pub t: f64,
    pub position: Vec3,
    pub geo_normal: Vec3,
    /// Hit a closing end disk rather than the lateral surface.
    pub on_end_disk: bool,
}

/// The full resolved intersection record.
#[derive(Debug, Clone, Copy)]
pub struct HitRecord {
    pub t: f64,
    pub position: Vec3,
    pub geo_normal: Vec3,
    pub shading_frame: Frame,
    /// Angular phase around the interpolated ellipse, in [0, 2π).
    pub beta: f64,
    /// Ply arc length at the hit.
    pub s: f64,
    pub ply_id: u32,
    pub segment_id: u32,
}

/// The average tangent at each vertex of a ply polyline (one-sided at the
/// ends); these are both the cap plane normals and the frame tangents.
fn vertex_tangent(ply: &PlyCurve, vi: usize) -> Vec3 {
    let verts = &ply.vertices;
    let n = verts.len();
    let dir = |i: usize| (verts[i + 1].position - verts[i].position).normalized();
    if vi == 0 {
        dir(0)
    } else if vi == n - 1 {
        dir(n - 2)
    } else {
        (dir(vi - 1) + dir(vi)).normalized()
    }
}

/// Build the segment cylinder for segment `seg` of a ply curve.
pub fn segment_cylinder(ply: &PlyCurve, ply_id: u32, seg: usize) -> SegmentCylinder {
    let v0 = &ply.vertices[seg];
    let v1 = &ply.vertices[seg + 1];
    let t0 = vertex_tangent(ply, seg);
    let t1 = vertex_tangent(ply, seg + 1);
    SegmentCylinder {
        p0: v0.position,
        p1: v1.position,
        radius: ply.radius,
        cap0: EllipseCap {
            center: v0.position,
            plane_normal: t0,
            end_disk: seg == 0,
        },
        cap1: EllipseCap {
            center: v1.position,
            plane_normal: t1,
            end_disk: seg + 2 == ply.vertices.len(),
        },
        frame0: Frame::orthonormalized(t0, v0.normal),
        frame1: Frame::orthonormalized(t1, v1.normal),
        arclen0: v0.arclen,
        arclen1: v1.arclen,
        ply_id,
        segment_id: seg as u32,
    }
}

const T_MIN: f64 = 1e-9;

/// Both roots of the infinite-cylinder quadratic, ascending.
fn cylinder_roots(ray: &Ray, seg: &SegmentCylinder) -> Option<(f64, f64)> {
    let axis = seg.axis();
    let o = ray.origin - seg.p0;
    let d_perp = ray.dir - axis * ray.dir.dot(axis);
    let o_perp = o - axis * o.dot(axis);
    let a = d_perp.length_squared();
    if a < 1e-24 {
        return None; // parallel to the axis
    }
    let b = 2.0 * d_perp.dot(o_perp);
    let c = o_perp.length_squared() - seg.radius * seg.radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    Some(((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)))
}

fn within_caps(seg: &SegmentCylinder, p: Vec3) -> bool {
    (p - seg.cap0.center).dot(seg.cap0.plane_normal) >= 0.0
        && (p - seg.cap1.center).dot(seg.cap1.plane_normal) <= 0.0
}

fn lateral_normal(seg: &SegmentCylinder, p: Vec3) -> Vec3 {
    let axis = seg.axis();
    let v = p - seg.p0;
    (v - axis * v.dot(axis)).normalized()
}

/// Nearest positive lateral-surface hit lying between the two cap planes.
pub fn ray_cylinder(ray: &Ray, seg: &SegmentCylinder) -> Option<RawHit> {
    let (t0, t1) = cylinder_roots(ray, seg)?;
    for t in [t0, t1] {
        if t <= T_MIN {
            continue;
        }
        let p = ray.at(t);
        if within_caps(seg, p) {
            return Some(RawHit {
                t,
                position: p,
                geo_normal: lateral_normal(seg, p),
                on_end_disk: false,
            });
        }
    }
    None
}

/// Intersection with a closing end disk of an open ply end.
fn ray_end_disk(ray: &Ray, seg: &SegmentCylinder, cap: &EllipseCap, outward: Vec3) -> Option<RawHit> {
    let denom = ray.dir.dot(cap.plane_normal);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (cap.center - ray.origin).dot(cap.plane_normal) / denom;
    if t <= T_MIN {
        return None;
    }
    let p = ray.at(t);
    let axis = seg.axis();
    let v = p - cap.center;
    let radial = v - axis * v.dot(axis);
    if radial.length_squared() > seg.radius * seg.radius {
        return None;
    }
    Some(RawHit {
        t,
        position: p,
        geo_normal: outward,
        on_end_disk: true,
    })
}

/// Full segment intersection including end disks on open ply ends.
pub fn intersect_segment(ray: &Ray, seg: &SegmentCylinder) -> Option<RawHit> {
    let mut best = ray_cylinder(ray, seg);
    let axis = seg.axis();
    for (cap, outward) in [(&seg.cap0, -axis), (&seg.cap1, axis)] {
        if !cap.end_disk {
            continue;
        }
        if let Some(hit) = ray_end_disk(ray, seg, cap, outward) {
            if best.map_or(true, |b| hit.t < b.t) {
                best = Some(hit);
            }
        }
    }
    best
}

/// Resolve a raw hit that fell in the trimmed joint zone (beyond the
/// neighbor-facing cap plane): re-test the neighbor's cylinder and return
/// whichever valid hit is nearest.
pub fn joint_trim(
    ray: &Ray,
    raw: Option<RawHit>,
    seg: &SegmentCylinder,
    neighbor: &SegmentCylinder,
) -> Option<RawHit> {
    let own = raw.or_else(|| ray_cylinder(ray, seg));
    let other = ray_cylinder(ray, neighbor);
    match (own, other) {
        (Some(a), Some(b)) => Some(if a.t <= b.t { a } else { b }),
        (a, b) => a.or(b),
    }
}

/// Reference directions perpendicular to the axis used to measure the
/// angular position φ; φ = 0 is the frame0 normal projected off the axis.
fn angular_basis(seg: &SegmentCylinder) -> (Vec3, Vec3) {
    let axis = seg.axis();
    let e1 = (seg.frame0.normal - axis * axis.dot(seg.frame0.normal))
        .try_normalized(1e-9)
        .unwrap_or_else(|| {
            let a = axis.min_component_axis();
            (a - axis * axis.dot(a)).normalized()
        });
    (e1, axis.cross(e1))
}

/// Boundary point and normal of the surface line at angular position φ on
/// one of the elliptical caps. The point satisfies both the cylinder and
/// the cap plane equations; the normal is the cylinder radial there.
pub fn cap_boundary_normals(seg: &SegmentCylinder, cap: &EllipseCap, phi: f64) -> (Vec3, Vec3) {
    let axis = seg.axis();
    let (e1, e2) = angular_basis(seg);
    let radial = e1 * phi.cos() + e2 * phi.sin();
    let foot = seg.p0 + radial * seg.radius;
    // Line foot + τ·axis meets the cap plane at:
    let tau = (cap.center - foot).dot(cap.plane_normal) / axis.dot(cap.plane_normal);
    (foot + axis * tau, radial)
}

/// Axial fraction of a lateral hit along its surface line between the two
/// cap planes.
fn axial_fraction(seg: &SegmentCylinder, hit: &RawHit) -> f64 {
    let axis = seg.axis();
    let (e1, e2) = angular_basis(seg);
    let phi = hit.geo_normal.dot(e2).atan2(hit.geo_normal.dot(e1));
    let (q0, _) = cap_boundary_normals(seg, &seg.cap0, phi);
    let (q1, _) = cap_boundary_normals(seg, &seg.cap1, phi);
    let tau = (hit.position - seg.p0).dot(axis);
    let tau0 = (q0 - seg.p0).dot(axis);
    let tau1 = (q1 - seg.p0).dot(axis);
    if (tau1 - tau0).abs() < 1e-15 {
        return 0.0;
    }
    ((tau - tau0) / (tau1 - tau0)).clamp(0.0, 1.0)
}

/// Shading frame at a lateral hit: the normalized linear blend of the two
/// endpoint frames at the hit's axial fraction, re-orthonormalized with
/// tangent priority.
pub fn interpolate_frame(seg: &SegmentCylinder, hit: &RawHit) -> Frame {
    let lambda = axial_fraction(seg, hit);
    let t = seg.frame0.tangent.lerp(seg.frame1.tangent, lambda);
    let n = seg.frame0.normal.lerp(seg.frame1.normal, lambda);
    Frame::orthonormalized(t, n)
}

/// Angular phase β ∈ [0, 2π) of a hit around the interpolated ellipse:
/// the atan2 of the radial offset in the interpolated frame's
/// normal/binormal plane.
pub fn angular_phase(seg: &SegmentCylinder, hit: &RawHit, frame: &Frame) -> f64 {
    let axis = seg.axis();
    let v = hit.position - seg.p0;
    let axis_point = seg.p0 + axis * v.dot(axis);
    let d = hit.position - axis_point;
    wrap_angle(d.dot(frame.binormal).atan2(d.dot(frame.normal)))
}

/// Assemble the full hit record from a raw hit on a segment.
pub fn resolve_hit(seg: &SegmentCylinder, raw: &RawHit) -> HitRecord {
    if raw.on_end_disk {
        // End disks reuse the end vertex frame directly.
        let at_start = (raw.position - seg.cap0.center)
            .length_squared()
            < (raw.position - seg.cap1.center).length_squared();
        let (frame, s) = if at_start {
            (seg.frame0, seg.arclen0)
        } else {
            (seg.frame1, seg.arclen1)
        };
        let d = raw.position
            - if at_start {
                seg.cap0.center
            } else {
                seg.cap1.center
            };
        let beta = wrap_angle(d.dot(frame.binormal).atan2(d.dot(frame.normal)));
        return HitRecord {
            t: raw.t,
            position: raw.position,
            geo_normal: raw.geo_normal,
            shading_frame: frame,
            beta,
            s,
            ply_id: seg.ply_id,
            segment_id: seg.segment_id,
        };
    }
    let lambda = axial_fraction(seg, raw);
    let frame = interpolate_frame(seg, raw);
    let beta = angular_phase(seg, raw, &frame);
    HitRecord {
        t: raw.t,
        position: raw.position,
        geo_normal: raw.geo_normal,
        shading_frame: frame,
        beta,
        s: seg.arclen0 + (seg.arclen1 - seg.arclen0) * lambda,
        ply_id: seg.ply_id,
        segment_id: seg.segment_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use crate::plygen::PlyVertex;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    /// A straight z-axis cylinder segment of the given radius and length.
    fn straight_seg(radius: f64, len: f64) -> SegmentCylinder {
        let ply = PlyCurve {
            vertices: vec![
                PlyVertex {
                    position: vec3(0.0, 0.0, 0.0),
                    normal: Vec3::X,
                    arclen: 0.0,
                },
                PlyVertex {
                    position: vec3(0.0, 0.0, len),
                    normal: Vec3::X,
                    arclen: len,
                },
            ],
            radius,
            yarn_id: 0,
            ply_index: 0,
        };
        segment_cylinder(&ply, 0, 0)
    }

    /// Two-segment elbow ply with the given turn angle at the joint.
    fn elbow_ply(radius: f64, angle: f64) -> PlyCurve {
        let p0 = vec3(-1.0, 0.0, 0.0);
        let p1 = vec3(0.0, 0.0, 0.0);
        let dir = vec3(angle.cos(), angle.sin(), 0.0);
        let p2 = p1 + dir;
        PlyCurve {
            vertices: vec![
                PlyVertex {
                    position: p0,
                    normal: Vec3::Z,
                    arclen: 0.0,
                },
                PlyVertex {
                    position: p1,
                    normal: Vec3::Z,
                    arclen: 1.0,
                },
                PlyVertex {
                    position: p2,
                    normal: Vec3::Z,
                    arclen: 2.0,
                },
            ],
            radius,
            yarn_id: 0,
            ply_index: 0,
        }
    }

    #[test]
    fn perpendicular_ray_hits_axis_cylinder() {
        let seg = straight_seg(1.0, 4.0);
        let ray = Ray {
            origin: vec3(5.0, 0.0, 2.0),
            dir: vec3(-1.0, 0.0, 0.0),
        };
        let hit = ray_cylinder(&ray, &seg).unwrap();
        assert!((hit.t - 4.0).abs() < 1e-12);
        assert!(hit.position.distance(vec3(1.0, 0.0, 2.0)) < 1e-12);
        assert!(hit.geo_normal.distance(Vec3::X) < 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let seg = straight_seg(1.0, 4.0);
        let ray = Ray {
            origin: vec3(2.0, 0.0, -5.0),
            dir: Vec3::Z,
        };
        assert!(ray_cylinder(&ray, &seg).is_none());
    }

    #[test]
    fn hit_respects_cap_interval() {
        let seg = straight_seg(1.0, 4.0);
        let ray = Ray {
            origin: vec3(5.0, 0.0, 5.0),
            dir: vec3(-1.0, 0.0, 0.0),
        };
        assert!(ray_cylinder(&ray, &seg).is_none());
    }

    #[test]
    fn end_disk_closes_open_end() {
        let seg = straight_seg(1.0, 4.0);
        let ray = Ray {
            origin: vec3(0.2, 0.0, -5.0),
            dir: Vec3::Z,
        };
        let hit = intersect_segment(&ray, &seg).unwrap();
        assert!(hit.on_end_disk);
        assert!((hit.t - 5.0).abs() < 1e-12);
        assert!(hit.geo_normal.distance(-Vec3::Z) < 1e-12);
    }

    #[test]
    fn straight_joint_cap_is_circle() {
        // Colinear two-segment ply: caps perpendicular to the axis, the
        // boundary curve degenerates to a circle of radius r.
        let ply = PlyCurve {
            vertices: vec![
                PlyVertex {
                    position: vec3(0.0, 0.0, 0.0),
                    normal: Vec3::Z,
                    arclen: 0.0,
                },
                PlyVertex {
                    position: vec3(1.0, 0.0, 0.0),
                    normal: Vec3::Z,
                    arclen: 1.0,
                },
                PlyVertex {
                    position: vec3(2.0, 0.0, 0.0),
                    normal: Vec3::Z,
                    arclen: 2.0,
                },
            ],
            radius: 0.25,
            yarn_id: 0,
            ply_index: 0,
        };
        let seg = segment_cylinder(&ply, 0, 0);
        for k in 0..16 {
            let phi = TAU * k as f64 / 16.0;
            let (p, n) = cap_boundary_normals(&seg, &seg.cap1, phi);
            assert!((p.distance(vec3(1.0, 0.0, 0.0)) - 0.25).abs() < 1e-12);
            assert!(n.dot(seg.axis()).abs() < 1e-12);
        }
    }

    #[test]
    fn tilted_cap_traces_ellipse() {
        // 90° elbow: the shared cap plane tilts 45° off each axis, so the
        // boundary ellipse has semi-major √2·r.
        let ply = elbow_ply(0.2, FRAC_PI_2);
        let seg = segment_cylinder(&ply, 0, 0);
        let joint = vec3(0.0, 0.0, 0.0);
        let mut max_d: f64 = 0.0;
        let mut min_d = f64::INFINITY;
        for k in 0..256 {
            let phi = TAU * k as f64 / 256.0;
            let (p, _) = cap_boundary_normals(&seg, &seg.cap1, phi);
            // On the cylinder:
            let v = p - seg.p0;
            let axis = seg.axis();
            let radial = v - axis * v.dot(axis);
            assert!((radial.length() - 0.2).abs() < 1e-9);
            // On the cap plane:
            assert!((p - seg.cap1.center).dot(seg.cap1.plane_normal).abs() < 1e-9);
            let d = p.distance(joint);
            max_d = max_d.max(d);
            min_d = min_d.min(d);
        }
        assert!((max_d - 0.2 * 2.0f64.sqrt()).abs() < 1e-3);
        assert!((min_d - 0.2).abs() < 1e-3);
    }

    #[test]
    fn cap_boundary_satisfies_both_equations_at_30_degrees() {
        let ply = elbow_ply(0.15, PI / 6.0);
        let seg = segment_cylinder(&ply, 0, 0);
        let axis = seg.axis();
        for k in 0..64 {
            let phi = TAU * k as f64 / 64.0;
            let (p, n) = cap_boundary_normals(&seg, &seg.cap1, phi);
            let v = p - seg.p0;
            let radial = v - axis * v.dot(axis);
            assert!((radial.length() - seg.radius).abs() < 1e-9);
            assert!((p - seg.cap1.center).dot(seg.cap1.plane_normal).abs() < 1e-9);
            assert!((n.length() - 1.0).abs() < 1e-12);
            assert!(n.dot(axis).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_endpoint_frames_interpolate_to_themselves() {
        let seg = straight_seg(0.5, 2.0);
        for z in [0.1, 0.5, 1.0, 1.9] {
            let ray = Ray {
                origin: vec3(5.0, 0.0, z),
                dir: vec3(-1.0, 0.0, 0.0),
            };
            let hit = ray_cylinder(&ray, &seg).unwrap();
            let f = interpolate_frame(&seg, &hit);
            assert!(f.tangent.distance(seg.frame0.tangent) < 1e-9);
            assert!(f.normal.distance(seg.frame0.normal) < 1e-9);
        }
    }

    #[test]
    fn half_blend_halves_frame_twist() {
        let mut seg = straight_seg(0.5, 2.0);
        let rho = 0.8;
        seg.frame1 = Frame::new(
            seg.frame1.tangent,
            seg.frame1.normal.rotate_about(seg.frame1.tangent, rho),
        );
        let ray = Ray {
            origin: vec3(5.0, 0.0, 1.0),
            dir: vec3(-1.0, 0.0, 0.0),
        };
        let hit = ray_cylinder(&ray, &seg).unwrap();
        let f = interpolate_frame(&seg, &hit);
        let angle = f.normal.dot(seg.frame0.normal).clamp(-1.0, 1.0).acos();
        assert!((angle - rho / 2.0).abs() < 1e-6);
        assert!(f.orthonormality_error() < 1e-12);
    }

    #[test]
    fn frame_varies_continuously_along_elbow() {
        let ply = elbow_ply(0.1, 0.7);
        let seg = segment_cylinder(&ply, 0, 0);
        let mut prev: Option<Frame> = None;
        let mut max_step: f64 = 0.0;
        let steps = 200;
        for i in 0..steps {
            let x = -0.95 + 0.9 * i as f64 / (steps - 1) as f64;
            let ray = Ray {
                origin: vec3(x, 5.0, 0.0),
                dir: vec3(0.0, -1.0, 0.0),
            };
            if let Some(hit) = ray_cylinder(&ray, &seg) {
                let f = interpolate_frame(&seg, &hit);
                if let Some(p) = prev {
                    let d = f.normal.dot(p.normal).clamp(-1.0, 1.0).acos();
                    max_step = max_step.max(d);
                }
                prev = Some(f);
            }
        }
        // Total frame change across the segment is bounded; adjacent
        // samples must change by a small fraction of it.
        assert!(max_step < 0.1, "frame jumped by {max_step}");
    }

    #[test]
    fn beta_zero_along_normal_and_quarter_along_binormal() {
        let seg = straight_seg(1.0, 2.0);
        // frame normal is +x; a hit on +x has β = 0.
        let ray = Ray {
            origin: vec3(5.0, 0.0, 1.0),
            dir: vec3(-1.0, 0.0, 0.0),
        };
        let hit = ray_cylinder(&ray, &seg).unwrap();
        let rec = resolve_hit(&seg, &hit);
        assert!(rec.beta.abs() < 1e-9);
        // Hit along the binormal (= t×n = z×x = y): β = π/2.
        let ray = Ray {
            origin: vec3(0.0, 5.0, 1.0),
            dir: vec3(0.0, -1.0, 0.0),
        };
        let hit = ray_cylinder(&ray, &seg).unwrap();
        let rec = resolve_hit(&seg, &hit);
        assert!((rec.beta - FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn beta_is_monotone_bijection_around_ring() {
        let seg = straight_seg(1.0, 2.0);
        let mut betas = Vec::new();
        let n = 64;
        for k in 0..n {
            let ang = TAU * (k as f64 + 0.5) / n as f64;
            let dir = vec3(ang.cos(), ang.sin(), 0.0);
            let ray = Ray {
                origin: vec3(0.0, 0.0, 1.0) + dir * 5.0,
                dir: -dir,
            };
            let hit = ray_cylinder(&ray, &seg).unwrap();
            let rec = resolve_hit(&seg, &hit);
            betas.push((ang, rec.beta));
        }
        // β equals the winding angle here (frame normal = +x axis).
        for (ang, beta) in &betas {
            assert!((ang - beta).abs() < 1e-9, "ang {ang} beta {beta}");
        }
        // Strictly monotone over the sweep.
        for w in betas.windows(2) {
            assert!(w[1].1 > w[0].1);
        }
    }

    #[test]
    fn beta_constant_along_straight_surface_line() {
        let seg = straight_seg(0.3, 3.0);
        let mut betas = Vec::new();
        for i in 0..30 {
            let z = 0.05 + 2.9 * i as f64 / 29.0;
            let ray = Ray {
                origin: vec3(5.0, 0.1, z),
                dir: vec3(-1.0, 0.0, 0.0),
            };
            let hit = ray_cylinder(&ray, &seg).unwrap();
            betas.push(resolve_hit(&seg, &hit).beta);
        }
        for w in betas.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-3);
        }
    }

    #[test]
    fn hit_position_on_surface_invariant() {
        let ply = elbow_ply(0.12, 0.9);
        let segs: Vec<SegmentCylinder> =
            (0..2).map(|i| segment_cylinder(&ply, 0, i)).collect();
        let mut rng = crate::rng::Rng::new(7, 0);
        let mut hits = 0;
        for _ in 0..2000 {
            let origin = vec3(
                4.0 * (rng.next_f64() - 0.5),
                4.0 * (rng.next_f64() - 0.5),
                3.0,
            );
            let target = vec3(
                2.0 * (rng.next_f64() - 0.5) - 0.5,
                rng.next_f64() - 0.5,
                0.0,
            );
            let ray = Ray {
                origin,
                dir: (target - origin).normalized(),
            };
            for seg in &segs {
                if let Some(hit) = ray_cylinder(&ray, seg) {
                    let rec = resolve_hit(seg, &hit);
                    let axis = seg.axis();
                    let v = rec.position - seg.p0;
                    let radial = v - axis * v.dot(axis);
                    assert!((radial.length() - seg.radius).abs() < 1e-6);
                    assert!(rec.position.distance(ray.at(rec.t)) < 1e-6);
                    assert!(rec.shading_frame.orthonormality_error() < 1e-6);
                    assert!(rec.geo_normal.dot(axis).abs() < 1e-9);
                    hits += 1;
                }
            }
        }
        assert!(hits > 100, "fixture produced too few hits: {hits}");
    }

    #[test]
    fn colinear_joint_trim_returns_union_nearest() {
        // Straight two-segment ply: caps orthogonal, intervals abut, so the
        // trimmed union is one finite cylinder and joint_trim must return
        // its nearest surface hit.
        let ply = elbow_ply(0.2, 0.0);
        let a = segment_cylinder(&ply, 0, 0);
        let b = segment_cylinder(&ply, 0, 1);
        let mut rng = crate::rng::Rng::new(3, 0);
        let mut checked = 0;
        for _ in 0..500 {
            let origin = vec3(2.0 * rng.next_f64() - 1.5, -3.0, rng.next_f64() - 0.5);
            let dir = (vec3(rng.next_f64() * 2.0 - 1.0, 0.0, 0.0) - origin).normalized();
            let ray = Ray { origin, dir };
            let ta = ray_cylinder(&ray, &a).map(|h| h.t);
            let tb = ray_cylinder(&ray, &b).map(|h| h.t);
            let nearest = match (ta, tb) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (x, y) => x.or(y),
            };
            if let Some(best) = nearest {
                let resolved = joint_trim(&ray, None, &a, &b).unwrap();
                assert!((resolved.t - best).abs() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn elbow_outer_miter_resolves_to_one_cylinder() {
        let ply = elbow_ply(0.2, FRAC_PI_2);
        let a = segment_cylinder(&ply, 0, 0);
        let b = segment_cylinder(&ply, 0, 1);
        // Aim at the outer miter: from below (-y) at the joint.
        let ray = Ray {
            origin: vec3(0.05, -3.0, 0.0),
            dir: Vec3::Y,
        };
        let resolved = joint_trim(&ray, None, &a, &b).unwrap();
        // Valid in exactly one cylinder's cap interval.
        let in_a = within_caps(&a, resolved.position)
            && {
                let v = resolved.position - a.p0;
                let ax = a.axis();
                ((v - ax * v.dot(ax)).length() - 0.2).abs() < 1e-9
            };
        let in_b = within_caps(&b, resolved.position)
            && {
                let v = resolved.position - b.p0;
                let ax = b.axis();
                ((v - ax * v.dot(ax)).length() - 0.2).abs() < 1e-9
            };
        assert!(in_a ^ in_b, "in_a={in_a} in_b={in_b}");
    }
}
