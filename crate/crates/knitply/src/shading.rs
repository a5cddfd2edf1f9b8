//! Fiber-detail shading on the ply surface: a procedural 1D fiber texture
//! perturbing the shading frame, plus the aggregated three-lobe ply BSDF
//! (specular reflection, forward transmission, diffuse body) with exact
//! sampling/pdf consistency.

use crate::intersect::HitRecord;
use crate::math::{normal_cdf, probit, wrap_angle, wrap_pi, Frame, Vec3};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

pub type Rgb = [f64; 3];

#[derive(Debug, Clone, Copy)]
pub struct FiberTexture {
    /// Number of fibers around the ply circumference.
    pub fiber_count: u32,
    /// Peak normal tilt in radians, < π/2.
    pub amplitude: f64,
    /// Fiber twist in radians per unit ply arc length.
    pub fiber_twist: f64,
    /// Depth of the inter-fiber shadowing term, in [0, 1].
    pub shadow_depth: f64,
}

impl FiberTexture {
    pub fn flat() -> FiberTexture {
        FiberTexture {
            fiber_count: 1,
            amplitude: 0.0,
            fiber_twist: 0.0,
            shadow_depth: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.fiber_count < 1 {
            return Err("fiber_count must be >= 1".into());
        }
        if !(0.0..FRAC_PI_2).contains(&self.amplitude) {
            return Err("amplitude must be in [0, pi/2)".into());
        }
        if !(0.0..=1.0).contains(&self.shadow_depth) {
            return Err("shadow_depth must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// A hit augmented with the fiber-perturbed shading frame and shadow factor.
#[derive(Debug, Clone, Copy)]
pub struct ShadingPoint {
    pub hit: HitRecord,
    /// Perturbed shading normal, unit, at least 5° above the tangent plane.
    pub normal: Vec3,
    /// Perturbed shading tangent.
    pub tangent: Vec3,
    /// Fiber shadow factor in [1 - shadow_depth, 1].
    pub sigma: f64,
}

impl ShadingPoint {
    /// Orthonormal frame used for BSDF direction decomposition: the
    /// perturbed normal is kept, the tangent is projected off it.
    pub fn frame(&self) -> Frame {
        let n = self.normal;
        let t = (self.tangent - n * n.dot(self.tangent)).normalized();
        Frame {
            tangent: t,
            normal: n,
            binormal: t.cross(n),
        }
    }
}

/// Normal rotations are clamped 5° short of the tangent plane so perturbed
/// normals can never flip below it.
const MAX_TILT: f64 = 85.0 * PI / 180.0;

/// Perturb the hit's shading frame by the 1D fiber texture.
///
/// Phase u = F·β + κ·s; the normal rotates about the local tangent by
/// A·sin(u), the tangent rotates about the new normal by A·sin(u+π/2)/2,
/// and the shadow factor is σ = 1 − shadow_depth·(1 − cos u)/2.
pub fn apply_fiber_texture(hit: &HitRecord, tex: &FiberTexture) -> ShadingPoint {
    let u = wrap_angle(tex.fiber_count as f64 * hit.beta + tex.fiber_twist * hit.s);
    let frame = hit.shading_frame;
    let tilt = (tex.amplitude * u.sin()).clamp(-MAX_TILT, MAX_TILT);
    let normal = frame.normal.rotate_about(frame.tangent, tilt).normalized();
    let swing = tex.amplitude * (u + FRAC_PI_2).sin() * 0.5;
    let tangent = frame.tangent.rotate_about(normal, swing).normalized();
    let sigma = 1.0 - tex.shadow_depth * (1.0 - u.cos()) / 2.0;
    ShadingPoint {
        hit: *hit,
        normal,
        tangent,
        sigma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdfParams {
    pub albedo: Rgb,
    /// Specular reflection lobe weight kr.
    pub spec_weight: f64,
    /// Forward transmission lobe weight kt.
    pub trans_weight: f64,
    /// Longitudinal Gaussian width βl (radians).
    pub long_width: f64,
    /// Azimuthal Gaussian width βa (radians).
    pub azim_width: f64,
    /// Transmission lobe width βt (radians).
    pub trans_width: f64,
}

impl BsdfParams {
    pub fn lambertian(albedo: Rgb) -> BsdfParams {
        BsdfParams {
            albedo,
            spec_weight: 0.0,
            trans_weight: 0.0,
            long_width: 0.1,
            azim_width: 0.1,
            trans_width: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, a) in self.albedo.iter().enumerate() {
            if !(0.0..=1.0).contains(a) {
                return Err(format!("albedo component {i} out of [0,1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.spec_weight) || !(0.0..=1.0).contains(&self.trans_weight) {
            return Err("lobe weights must be in [0,1]".into());
        }
        if self.spec_weight + self.trans_weight > 1.0 + 1e-12 {
            return Err("spec_weight + trans_weight must be <= 1".into());
        }
        if self.long_width <= 0.0 || self.azim_width <= 0.0 || self.trans_width <= 0.0 {
            return Err("lobe widths must be > 0".into());
        }
        Ok(())
    }

    /// Flat key=value text form, one field per line.
    pub fn to_text(&self) -> String {
        format!(
            "albedo_r={}\nalbedo_g={}\nalbedo_b={}\nspec_weight={}\ntrans_weight={}\nlong_width={}\nazim_width={}\ntrans_width={}\n",
            self.albedo[0],
            self.albedo[1],
            self.albedo[2],
            self.spec_weight,
            self.trans_weight,
            self.long_width,
            self.azim_width,
            self.trans_width,
        )
    }

    pub fn from_text(text: &str) -> Result<BsdfParams, String> {
        let mut p = BsdfParams::lambertian([0.5, 0.5, 0.5]);
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", ln + 1))?;
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|_| format!("line {}: bad number {val:?}", ln + 1))?;
            match key.trim() {
                "albedo_r" => p.albedo[0] = v,
                "albedo_g" => p.albedo[1] = v,
                "albedo_b" => p.albedo[2] = v,
                "spec_weight" => p.spec_weight = v,
                "trans_weight" => p.trans_weight = v,
                "long_width" => p.long_width = v,
                "azim_width" => p.azim_width = v,
                "trans_width" => p.trans_width = v,
                k => return Err(format!("line {}: unknown key {k:?}", ln + 1)),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Longitudinal angle θ (from the tangent plane, sinθ = w·t) and azimuth
/// φ (in the normal/binormal plane) of a direction in a shading frame.
fn decompose(frame: &Frame, w: Vec3) -> (f64, f64) {
    let s = w.dot(frame.tangent).clamp(-1.0, 1.0);
    let theta = s.asin();
    let phi = w.dot(frame.binormal).atan2(w.dot(frame.normal));
    (theta, phi)
}

fn gauss(x: f64, sigma: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp()
}

/// Normalized vMF density on the sphere with μ implicit via cos_alpha.
fn vmf_pdf(cos_alpha: f64, kappa: f64) -> f64 {
    // κ e^{κ(cosα−1)} / (2π (1 − e^{−2κ})), stable for large κ.
    kappa * (kappa * (cos_alpha - 1.0)).exp() / (TAU * (1.0 - (-2.0 * kappa).exp()))
}

const COS_EPS: f64 = 1e-4;

/// The reflection lobe density (without the kr weight), reciprocal in
/// (wi, wo). Bounded energy: its hemispherical-directional albedo is at
/// most e^{−βl²/2}.
fn spec_lobe(frame: &Frame, wi: Vec3, wo: Vec3, p: &BsdfParams) -> f64 {
    let (ti, pi_) = decompose(&frame, wi);
    let (to, po) = decompose(&frame, wo);
    let gl = gauss(ti + to, p.long_width);
    let ga = gauss(wrap_pi(pi_ + po), p.azim_width);
    gl * ga
        / (TAU
            * p.long_width
            * p.azim_width
            * ti.cos().max(COS_EPS)
            * to.cos().max(COS_EPS))
}

/// Evaluate the aggregated BSDF. Defined for all direction pairs; the
/// reflection and body lobes are reciprocal, the transmission lobe is a
/// symmetric vMF around the straight-through direction.
pub fn bsdf_eval(sp: &ShadingPoint, wi: Vec3, wo: Vec3, p: &BsdfParams) -> Rgb {
    let frame = sp.frame();
    let kr = p.spec_weight;
    let kt = p.trans_weight;
    let kb = 1.0 - kr - kt;
    let mut achromatic = 0.0;
    if kr > 0.0 {
        achromatic += kr * spec_lobe(&frame, wi, wo, p);
    }
    if kt > 0.0 {
        let kappa = 1.0 / (p.trans_width * p.trans_width);
        achromatic += kt * vmf_pdf(wo.dot(-wi).clamp(-1.0, 1.0), kappa);
    }
    let body = kb / PI;
    [
        sp.sigma * (achromatic + body * p.albedo[0]),
        sp.sigma * (achromatic + body * p.albedo[1]),
        sp.sigma * (achromatic + body * p.albedo[2]),
    ]
}

/// Truncated normal on [lo, hi]: CDF normalization and inverse-CDF sample.
struct TruncNormal {
    mu: f64,
    sigma: f64,
    cdf_lo: f64,
    cdf_hi: f64,
}

impl TruncNormal {
    fn new(mu: f64, sigma: f64, lo: f64, hi: f64) -> TruncNormal {
        TruncNormal {
            mu,
            sigma,
            cdf_lo: normal_cdf((lo - mu) / sigma),
            cdf_hi: normal_cdf((hi - mu) / sigma),
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        let norm = (self.cdf_hi - self.cdf_lo).max(1e-300);
        (-0.5 * z * z).exp() / (self.sigma * (TAU).sqrt() * norm)
    }

    fn sample(&self, u: f64) -> f64 {
        let p = self.cdf_lo + u * (self.cdf_hi - self.cdf_lo);
        self.mu + self.sigma * probit(p)
    }
}

/// Wrapped normal density on (−π, π] via a 7-image sum.
fn wrapped_normal_pdf(delta: f64, sigma: f64) -> f64 {
    let mut sum = 0.0;
    for k in -3..=3 {
        let x = delta + TAU * k as f64;
        sum += (-0.5 * x * x / (sigma * sigma)).exp();
    }
    sum / (sigma * TAU.sqrt())
}

/// The sampling density of `bsdf_sample` in solid angle.
pub fn bsdf_pdf(sp: &ShadingPoint, wi: Vec3, wo: Vec3, p: &BsdfParams) -> f64 {
    let frame = sp.frame();
    let kr = p.spec_weight;
    let kt = p.trans_weight;
    let kb = 1.0 - kr - kt;
    let mut pdf = 0.0;
    if kr > 0.0 {
        let (ti, pi_) = decompose(&frame, wi);
        let (to, po) = decompose(&frame, wo);
        let tn = TruncNormal::new(-ti, p.long_width, -FRAC_PI_2, FRAC_PI_2);
        let p_theta = tn.pdf(to);
        let p_phi = wrapped_normal_pdf(wrap_pi(po + pi_), p.azim_width);
        pdf += kr * p_theta * p_phi / to.cos().max(COS_EPS);
    }
    if kt > 0.0 {
        let kappa = 1.0 / (p.trans_width * p.trans_width);
        pdf += kt * vmf_pdf(wo.dot(-wi).clamp(-1.0, 1.0), kappa);
    }
    if kb > 0.0 {
        pdf += kb * wo.dot(frame.normal).max(0.0) / PI;
    }
    pdf
}

/// Sample an outgoing direction: lobe selected proportionally to
/// (kr, kt, 1−kr−kt); returns (wo, pdf, f) with pdf equal to `bsdf_pdf`.
pub fn bsdf_sample(
    sp: &ShadingPoint,
    wi: Vec3,
    p: &BsdfParams,
    u: (f64, f64),
) -> Option<(Vec3, f64, Rgb)> {
    let frame = sp.frame();
    let kr = p.spec_weight;
    let kt = p.trans_weight;
    let (u0, u1) = u;
    let wo = if u0 < kr {
        // Specular: truncated Gaussian in θ, wrapped Gaussian in φ around
        // the tangent-mirrored cone.
        let ur = u0 / kr;
        let (ti, pi_) = decompose(&frame, wi);
        let tn = TruncNormal::new(-ti, p.long_width, -FRAC_PI_2, FRAC_PI_2);
        let theta = tn.sample(ur);
        let phi = wrap_pi(-pi_ + p.azim_width * probit(u1));
        frame.tangent * theta.sin()
            + (frame.normal * phi.cos() + frame.binormal * phi.sin()) * theta.cos()
    } else if u0 < kr + kt {
        // Transmission: vMF around the straight-through direction.
        let ur = (u0 - kr) / kt;
        let kappa = 1.0 / (p.trans_width * p.trans_width);
        let cos_a = (1.0 + (ur + (1.0 - ur) * (-2.0 * kappa).exp()).ln() / kappa).clamp(-1.0, 1.0);
        let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
        let mu = -wi;
        let a = mu.min_component_axis();
        let e1 = (a - mu * mu.dot(a)).normalized();
        let e2 = mu.cross(e1);
        let phi = TAU * u1;
        mu * cos_a + (e1 * phi.cos() + e2 * phi.sin()) * sin_a
    } else {
        // Body: cosine hemisphere around the shading normal.
        let kb = 1.0 - kr - kt;
        let ur = ((u0 - kr - kt) / kb).min(1.0 - 1e-12);
        let z = ur.sqrt();
        let r = (1.0 - ur).sqrt();
        let phi = TAU * u1;
        frame.normal * z + (frame.tangent * phi.cos() + frame.binormal * phi.sin()) * r
    };
    let wo = wo.normalized();
    let pdf = bsdf_pdf(sp, wi, wo, p);
    if pdf < 1e-12 {
        return None;
    }
    Some((wo, pdf, bsdf_eval(sp, wi, wo, p)))
}
