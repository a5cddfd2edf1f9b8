//! Inverse-rendering parameter fitting: minimize the L2 image loss between
//! renders and references over a free subset of the BSDF parameters, using
//! Nelder–Mead with logistic box bounds. The reflectance/transmission
//! budget kr + kt ≤ 1 is kept by fitting the transmission weight as a
//! fraction of the remaining budget.

use crate::render::{render, Image, RenderConfig, Scene};
use crate::shading::BsdfParams;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeParam {
    AlbedoR,
    AlbedoG,
    AlbedoB,
    SpecWeight,
    /// Fitted as the fraction kt / (1 − kr), so kr + kt ≤ 1 holds for any
    /// internal coordinates.
    TransFraction,
    LongWidth,
    AzimWidth,
    TransWidth,
}

impl FreeParam {
    pub fn name(&self) -> &'static str {
        match self {
            FreeParam::AlbedoR => "albedo_r",
            FreeParam::AlbedoG => "albedo_g",
            FreeParam::AlbedoB => "albedo_b",
            FreeParam::SpecWeight => "spec_weight",
            FreeParam::TransFraction => "trans_fraction",
            FreeParam::LongWidth => "long_width",
            FreeParam::AzimWidth => "azim_width",
            FreeParam::TransWidth => "trans_width",
        }
    }

    pub fn from_name(s: &str) -> Option<FreeParam> {
        Some(match s {
            "albedo_r" => FreeParam::AlbedoR,
            "albedo_g" => FreeParam::AlbedoG,
            "albedo_b" => FreeParam::AlbedoB,
            "spec_weight" => FreeParam::SpecWeight,
            "trans_fraction" => FreeParam::TransFraction,
            "long_width" => FreeParam::LongWidth,
            "azim_width" => FreeParam::AzimWidth,
            "trans_width" => FreeParam::TransWidth,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

pub struct FitProblem {
    /// Scene variants (e.g. front-lit and back-lit) rendered per evaluation.
    pub scenes: Vec<Scene>,
    /// One reference image per scene, at render resolution.
    pub references: Vec<Image>,
    /// Starting point; fixed fields keep these values.
    pub base: BsdfParams,
    pub free: Vec<(FreeParam, Bound)>,
    /// Maximum number of loss evaluations.
    pub budget: usize,
    /// Stop once the simplex spans less than this along every internal
    /// (logit-space) axis; 0 falls back to 1e-4.
    pub tolerance: f64,
    pub spp: usize,
    pub seed: u64,
    pub max_depth: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: BsdfParams,
    pub loss: f64,
    /// Best-so-far loss after each evaluation (non-increasing).
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit problem: {0}")]
    Invalid(String),
    /// Budget ran out before convergence; carries the best found so far.
    #[error("evaluation budget exhausted after {} evaluations", .0.evaluations)]
    BudgetExhausted(FitResult),
}

fn get_param(p: &BsdfParams, f: FreeParam) -> f64 {
    match f {
        FreeParam::AlbedoR => p.albedo[0],
        FreeParam::AlbedoG => p.albedo[1],
        FreeParam::AlbedoB => p.albedo[2],
        FreeParam::SpecWeight => p.spec_weight,
        FreeParam::TransFraction => {
            let rest = (1.0 - p.spec_weight).max(1e-9);
            (p.trans_weight / rest).clamp(0.0, 1.0)
        }
        FreeParam::LongWidth => p.long_width,
        FreeParam::AzimWidth => p.azim_width,
        FreeParam::TransWidth => p.trans_width,
    }
}

fn set_param(p: &mut BsdfParams, f: FreeParam, v: f64) {
    match f {
        FreeParam::AlbedoR => p.albedo[0] = v,
        FreeParam::AlbedoG => p.albedo[1] = v,
        FreeParam::AlbedoB => p.albedo[2] = v,
        FreeParam::SpecWeight => p.spec_weight = v,
        FreeParam::TransFraction => p.trans_weight = v * (1.0 - p.spec_weight),
        FreeParam::LongWidth => p.long_width = v,
        FreeParam::AzimWidth => p.azim_width = v,
        FreeParam::TransWidth => p.trans_width = v,
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Materialize bounded parameters from unconstrained coordinates. The
/// spec weight is applied before the transmission fraction so the budget
/// constraint holds whatever order the free list uses.
fn materialize(problem: &FitProblem, x: &[f64]) -> BsdfParams {
    let mut p = problem.base;
    let mut apply = |want_trans: bool| {
        for (i, (f, b)) in problem.free.iter().enumerate() {
            if (*f == FreeParam::TransFraction) == want_trans {
                set_param(&mut p, *f, b.lo + (b.hi - b.lo) * logistic(x[i]));
            }
        }
    };
    apply(false);
    apply(true);
    p
}

fn internal_start(problem: &FitProblem) -> Vec<f64> {
    problem
        .free
        .iter()
        .map(|(f, b)| {
            let v = get_param(&problem.base, *f).clamp(b.lo, b.hi);
            logit(((v - b.lo) / (b.hi - b.lo)).clamp(1e-6, 1.0 - 1e-6))
        })
        .collect()
}

/// Box-filter downscale to 10% linear resolution (minimum 1×1).
pub fn downscale_10(img: &Image) -> Image {
    let dw = (img.width / 10).max(1);
    let dh = (img.height / 10).max(1);
    let mut out = Image::new(dw, dh);
    let mut counts = vec![0usize; dw * dh];
    for y in 0..img.height {
        let dy = (y * dh / img.height).min(dh - 1);
        for x in 0..img.width {
            let dx = (x * dw / img.width).min(dw - 1);
            let di = (dy * dw + dx) * 3;
            let si = (y * img.width + x) * 3;
            for c in 0..3 {
                out.data[di + c] += img.data[si + c];
            }
            counts[dy * dw + dx] += 1;
        }
    }
    for i in 0..dw * dh {
        for c in 0..3 {
            out.data[i * 3 + c] /= counts[i].max(1) as f64;
        }
    }
    out
}

/// Mean squared RGB difference between two images of equal size.
pub fn mean_squared_diff(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.width, b.width);
    assert_eq!(a.height, b.height);
    let n = a.data.len();
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64
}

/// Deterministic L2 loss: render each scene with the candidate parameters
/// at a fixed seed, box-downscale both render and reference to 10% linear
/// resolution, and average the per-pixel squared difference over scenes.
pub fn loss(problem: &mut FitProblem, params: &BsdfParams) -> f64 {
    let config = RenderConfig {
        spp: problem.spp,
        max_depth: problem.max_depth,
        rr_start_depth: 3,
        seed: problem.seed,
        tile_size: 16,
    };
    let mut total = 0.0;
    let n = problem.scenes.len();
    for i in 0..n {
        problem.scenes[i].bsdf = *params;
        let img = render(&problem.scenes[i], &config);
        let a = downscale_10(&img);
        let b = downscale_10(&problem.references[i]);
        total += mean_squared_diff(&a, &b);
    }
    total / n as f64
}

/// Nelder–Mead over the free parameters. Deterministic; returns the best
/// parameters and the monotone best-loss trace, or BudgetExhausted with
/// the best-so-far when the budget runs out first.
pub fn fit(problem: &mut FitProblem) -> Result<FitResult, FitError> {
    let dim = problem.free.len();
    if problem.scenes.is_empty() || problem.scenes.len() != problem.references.len() {
        return Err(FitError::Invalid("need one reference per scene".into()));
    }
    for (f, b) in &problem.free {
        if !(b.lo < b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
            return Err(FitError::Invalid(format!("bad bounds for {}", f.name())));
        }
    }
    if dim == 0 {
        let p = problem.base;
        let l = loss(problem, &p);
        return Ok(FitResult {
            params: p,
            loss: l,
            trace: vec![l],
            evaluations: 1,
        });
    }
    if problem.budget < dim + 2 {
        return Err(FitError::Invalid("budget must be at least dim + 2".into()));
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut evaluations = 0usize;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let budget = problem.budget;

    // Closure-free evaluation so `problem` can be re-borrowed mutably.
    fn eval(
        problem: &mut FitProblem,
        x: &[f64],
        trace: &mut Vec<f64>,
        evaluations: &mut usize,
        best: &mut Option<(Vec<f64>, f64)>,
    ) -> f64 {
        let p = materialize(problem, x);
        let l = loss(problem, &p);
        *evaluations += 1;
        let cur_best = best.as_ref().map(|(_, b)| *b).unwrap_or(f64::INFINITY);
        if l < cur_best {
            *best = Some((x.to_vec(), l));
        }
        trace.push(l.min(cur_best));
        l
    }

    macro_rules! ev {
        ($x:expr) => {{
            if evaluations >= budget {
                let (bx, bl) = best.clone().unwrap();
                return Err(FitError::BudgetExhausted(FitResult {
                    params: materialize(problem, &bx),
                    loss: bl,
                    trace,
                    evaluations,
                }));
            }
            eval(problem, $x, &mut trace, &mut evaluations, &mut best)
        }};
    }

    // Initial simplex around the starting point.
    let x0 = internal_start(problem);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let l0 = ev!(&x0);
    simplex.push((x0.clone(), l0));
    for i in 0..dim {
        let mut xi = x0.clone();
        xi[i] += 0.75;
        let li = ev!(&xi);
        simplex.push((xi, li));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex.last().unwrap().1 - simplex[0].1;
        let size: f64 = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        let tol = if problem.tolerance > 0.0 {
            problem.tolerance
        } else {
            1e-4
        };
        if spread < 1e-14 || size < tol {
            break;
        }
        // Centroid of all but the worst.
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let worst = simplex[dim].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let lr = ev!(&reflect);
        if lr < simplex[0].1 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let le = ev!(&expand);
            simplex[dim] = if le < lr { (expand, le) } else { (reflect, lr) };
        } else if lr < simplex[dim - 1].1 {
            simplex[dim] = (reflect, lr);
        } else {
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + rho * (w - c))
                .collect();
            let lc = ev!(&contract);
            if lc < worst.1 {
                simplex[dim] = (contract, lc);
            } else {
                // Shrink toward the best vertex.
                let best_x = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = best_x
                        .iter()
                        .zip(&v.0)
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    let ls = ev!(&shrunk);
                    *v = (shrunk, ls);
                }
            }
        }
    }

    let (bx, bl) = best.unwrap();
    Ok(FitResult {
        params: materialize(problem, &bx),
        loss: bl,
        trace,
        evaluations,
    })
}

/// Loss trace as CSV text (`evaluation,best_loss`).
pub fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("evaluation,best_loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, l));
    }
    s
}
