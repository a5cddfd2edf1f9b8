//! Pipeline command-line entry point: tile/stitch a pattern cell, generate
//! twisted plies, build the UV grid, map onto a mesh, render, and fit BSDF
//! parameters. Exit codes: 0 success, 1 usage error, 2 data/invariant
//! error.

use clap::{Args, Parser, Subcommand};
use knitply::fit::{fit, trace_csv, Bound, FitError, FitProblem, FreeParam};
use knitply::mapping::{
    build_grid, default_resolution, load_obj, read_mgb, transform_plies, write_mgb,
};
use knitply::pattern::{
    compute_partners, load_pattern, read_yarns, stitch, tile, write_yarns, EPS_MATCH,
};
use knitply::plygen::{generate_plies, read_plb, write_plb, PlyParams};
use knitply::intersect::Ray;
use knitply::render::{load_scene, read_pfm, render, write_pfm, write_png};
use knitply::rng::Rng;
use knitply::math::vec3;
use serde::Deserialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "knitply", version, about = "Procedural knitted-fabric modeling and rendering")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tile and stitch a pattern cell into yarn curves.
    Tile(TileArgs),
    /// Generate twisted ply centerlines around yarn curves.
    Plies(PliesArgs),
    /// Build the UV mapping grid for a mesh and flat plies.
    Grid(GridArgs),
    /// Map flat plies onto a UV-mapped mesh.
    Map(MapArgs),
    /// Path-trace a scene description.
    Render(RenderArgs),
    /// Fit BSDF parameters against reference images.
    Fit(FitArgs),
    /// Re-run reduced-scale brute-force oracles on a scene.
    Validate(ValidateArgs),
    /// Print a summary of a pipeline artifact.
    Stats(StatsArgs),
}

#[derive(Args)]
struct TileArgs {
    /// Pattern cell file (.kcf).
    #[arg(long)]
    pattern: PathBuf,
    /// Cells along u.
    #[arg(long, default_value_t = 1)]
    nx: usize,
    /// Cells along v.
    #[arg(long, default_value_t = 1)]
    ny: usize,
    #[arg(long)]
    wrap_u: bool,
    #[arg(long)]
    wrap_v: bool,
    /// Output yarn curves file (.yrn).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PliesArgs {
    /// Input yarn curves (.yrn).
    #[arg(long)]
    yarns: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    num_plies: usize,
    #[arg(long, default_value_t = 0.04)]
    ply_offset: f64,
    #[arg(long, default_value_t = 0.02)]
    ply_radius: f64,
    /// Twist rate in radians per unit yarn arc length.
    #[arg(long, default_value_t = 6.0)]
    twist: f64,
    /// Resample step; defaults to half the ply radius.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Flat plies (.plb).
    #[arg(long)]
    plies: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Grid resolution per axis; defaults to mesh-density heuristic.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Flat plies (.plb).
    #[arg(long)]
    plies: PathBuf,
    /// Mapping grid (.mgb); built on the fly when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Output mapped plies (.plb).
    #[arg(long)]
    out: PathBuf,
    /// Base offset above the surface; defaults to 1.5× the max ply radius.
    #[arg(long)]
    shell_base: Option<f64>,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene description (.toml).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    spp: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exposure multiplier for the PNG export.
    #[arg(long, default_value_t = 1.0)]
    exposure: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Fit specification (.toml).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Random rays for the intersection oracle.
    #[arg(long, default_value_t = 2000)]
    rays: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    /// Artifact to summarize (.kcf, .yrn, .plb, .mgb, .obj).
    #[arg(long)]
    input: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are success; anything else is usage.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized");
        }
    }
    let result = match cli.command {
        Command::Tile(a) => cmd_tile(a),
        Command::Plies(a) => cmd_plies(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Map(a) => cmd_map(a),
        Command::Render(a) => cmd_render(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_tile(a: TileArgs) -> Result<(), String> {
    let cell = load_pattern(&a.pattern).map_err(|e| format!("{}: {e}", a.pattern.display()))?;
    let labels = compute_partners(&cell, EPS_MATCH).map_err(|e| e.to_string())?;
    let graph = tile(&cell, &labels, a.nx, a.ny, a.wrap_u, a.wrap_v).map_err(|e| e.to_string())?;
    let yarns = stitch(&graph, &cell).map_err(|e| e.to_string())?;
    let f = fs::File::create(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    write_yarns(f, &yarns).map_err(|e| e.to_string())?;
    let verts: usize = yarns.iter().map(|y| y.vertices.len()).sum();
    println!("wrote {} yarn curves, {verts} vertices -> {}", yarns.len(), a.out.display());
    Ok(())
}

fn cmd_plies(a: PliesArgs) -> Result<(), String> {
    let f = fs::File::open(&a.yarns).map_err(|e| format!("{}: {e}", a.yarns.display()))?;
    let yarns = read_yarns(std::io::BufReader::new(f)).map_err(|e| e.to_string())?;
    let mut params = PlyParams {
        num_plies: a.num_plies,
        ply_offset: a.ply_offset,
        ply_radius: a.ply_radius,
        twist_rate: a.twist,
        resample_step: a.step.unwrap_or(0.0),
    };
    if a.step.is_none() {
        params = params.with_default_step();
    }
    let mut plies = Vec::new();
    for (yi, yarn) in yarns.iter().enumerate() {
        plies.extend(generate_plies(yarn, yi as u32, &params).map_err(|e| e.to_string())?);
    }
    let out = fs::File::create(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    write_plb(out, &plies).map_err(|e| e.to_string())?;
    let verts: usize = plies.iter().map(|p| p.vertices.len()).sum();
    println!("wrote {} plies, {verts} vertices -> {}", plies.len(), a.out.display());
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<(), String> {
    let mesh = load_obj(&a.mesh).map_err(|e| format!("{}: {e}", a.mesh.display()))?;
    let f = fs::File::open(&a.plies).map_err(|e| format!("{}: {e}", a.plies.display()))?;
    let plies = read_plb(f).map_err(|e| e.to_string())?;
    let res = a
        .resolution
        .map(|r| (r, r))
        .unwrap_or_else(|| default_resolution(mesh.triangles.len()));
    let grid = build_grid(&mesh, &plies, res).map_err(|e| e.to_string())?;
    let out = fs::File::create(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    write_mgb(out, &grid).map_err(|e| e.to_string())?;
    println!("wrote {}x{} grid -> {}", res.0, res.1, a.out.display());
    Ok(())
}

fn cmd_map(a: MapArgs) -> Result<(), String> {
    let mesh = load_obj(&a.mesh).map_err(|e| format!("{}: {e}", a.mesh.display()))?;
    let f = fs::File::open(&a.plies).map_err(|e| format!("{}: {e}", a.plies.display()))?;
    let plies = read_plb(f).map_err(|e| e.to_string())?;
    let grid = match &a.grid {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
            read_mgb(f).map_err(|e| e.to_string())?
        }
        None => build_grid(&mesh, &plies, default_resolution(mesh.triangles.len()))
            .map_err(|e| e.to_string())?,
    };
    let max_r = plies.iter().map(|p| p.radius).fold(0.0f64, f64::max);
    let shell_base = a.shell_base.unwrap_or(1.5 * max_r);
    let mapped = transform_plies(&grid, &mesh, &plies, shell_base).map_err(|e| e.to_string())?;
    let out = fs::File::create(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let curves: Vec<_> = mapped.iter().map(|m| m.to_ply_curve()).collect();
    write_plb(out, &curves).map_err(|e| e.to_string())?;
    println!(
        "mapped {} plies (shell_base {shell_base}) -> {}",
        curves.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<(), String> {
    let (scene, mut config) = load_scene(&a.scene).map_err(|e| e.to_string())?;
    if let Some(s) = a.spp {
        config.spp = s;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    // Echo the effective settings so the run is reproducible from the
    // output directory alone.
    let echo = format!(
        "scene = {:?}\nspp = {}\nmax_depth = {}\nrr_start_depth = {}\nseed = {}\ntile_size = {}\nexposure = {}\n",
        a.scene, config.spp, config.max_depth, config.rr_start_depth, config.seed, config.tile_size, a.exposure
    );
    fs::write(a.out.join("config_echo.toml"), echo).map_err(|e| e.to_string())?;
    let img = render(&scene, &config);
    let pfm_path = a.out.join("render.pfm");
    let f = fs::File::create(&pfm_path).map_err(|e| e.to_string())?;
    write_pfm(std::io::BufWriter::new(f), &img).map_err(|e| e.to_string())?;
    write_png(&a.out.join("render.png"), &img, a.exposure).map_err(|e| e.to_string())?;
    println!("rendered {}x{} at {} spp -> {}", img.width, img.height, config.spp, pfm_path.display());
    Ok(())
}

#[derive(Deserialize)]
struct FitSpec {
    scenes: Vec<String>,
    references: Vec<String>,
    budget: usize,
    spp: usize,
    seed: u64,
    #[serde(default = "default_fit_depth")]
    max_depth: usize,
    /// Simplex convergence tolerance; library default when omitted.
    #[serde(default)]
    tolerance: f64,
    /// Optional starting parameter file; first scene's BSDF otherwise.
    start: Option<String>,
    free: Vec<FreeSpec>,
}

fn default_fit_depth() -> usize {
    8
}

#[derive(Deserialize)]
struct FreeSpec {
    param: String,
    lo: f64,
    hi: f64,
}

fn cmd_fit(a: FitArgs) -> Result<(), String> {
    let text = fs::read_to_string(&a.spec).map_err(|e| format!("{}: {e}", a.spec.display()))?;
    let spec: FitSpec = toml::from_str(&text).map_err(|e| format!("{}: {e}", a.spec.display()))?;
    let dir = a.spec.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            dir.join(pb)
        }
    };
    if spec.scenes.len() != spec.references.len() {
        return Err("fit spec: need one reference per scene".into());
    }
    let mut scenes = Vec::new();
    let mut references = Vec::new();
    for (s, r) in spec.scenes.iter().zip(&spec.references) {
        let (scene, _) = load_scene(&resolve(s)).map_err(|e| e.to_string())?;
        scenes.push(scene);
        let f = fs::File::open(resolve(r)).map_err(|e| format!("{r}: {e}"))?;
        references.push(read_pfm(f).map_err(|e| e.to_string())?);
    }
    let base = match &spec.start {
        Some(p) => {
            let t = fs::read_to_string(resolve(p)).map_err(|e| format!("{p}: {e}"))?;
            knitply::shading::BsdfParams::from_text(&t)?
        }
        None => scenes[0].bsdf,
    };
    let mut free = Vec::new();
    for f in &spec.free {
        let param = FreeParam::from_name(&f.param)
            .ok_or_else(|| format!("unknown free parameter {:?}", f.param))?;
        free.push((param, Bound { lo: f.lo, hi: f.hi }));
    }
    let mut problem = FitProblem {
        scenes,
        references,
        base,
        free,
        budget: spec.budget,
        tolerance: spec.tolerance,
        spp: spec.spp,
        seed: spec.seed,
        max_depth: spec.max_depth,
    };
    fs::create_dir_all(&a.out).map_err(|e| e.to_string())?;
    let (result, exhausted) = match fit(&mut problem) {
        Ok(r) => (r, false),
        Err(FitError::BudgetExhausted(r)) => (r, true),
        Err(e) => return Err(e.to_string()),
    };
    fs::write(a.out.join("fitted.txt"), result.params.to_text()).map_err(|e| e.to_string())?;
    fs::write(a.out.join("trace.csv"), trace_csv(&result.trace)).map_err(|e| e.to_string())?;
    println!(
        "fit finished{}: loss {} after {} evaluations -> {}",
        if exhausted { " (budget exhausted)" } else { "" },
        result.loss,
        result.evaluations,
        a.out.join("fitted.txt").display()
    );
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<(), String> {
    let (scene, _) = load_scene(&a.scene).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(a.seed, 0);
    // Aim rays from a loose bounding shell toward the textile.
    let mut lo = scene.segments[0].p0;
    let mut hi = lo;
    for s in &scene.segments {
        for p in [s.p0, s.p1] {
            lo = vec3(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = vec3(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
    }
    let span = hi - lo;
    let diag = span.length().max(1e-6);
    let mut mismatches = 0usize;
    let mut hits = 0usize;
    scene.stats.reset();
    for _ in 0..a.rays {
        let target = lo
            + vec3(
                span.x * rng.next_f64(),
                span.y * rng.next_f64(),
                span.z * rng.next_f64(),
            );
        let theta = (2.0 * rng.next_f64() - 1.0).acos();
        let phi = std::f64::consts::TAU * rng.next_f64();
        let dir = vec3(
            theta.sin() * phi.cos(),
            theta.cos(),
            theta.sin() * phi.sin(),
        );
        let ray = Ray {
            origin: target - dir * diag,
            dir,
        };
        let two = scene.intersect(&ray);
        let brute = scene.intersect_brute(&ray);
        match (two, brute) {
            (Some(x), Some(y)) => {
                hits += 1;
                if (x.t - y.t).abs() > 1e-6 {
                    mismatches += 1;
                }
            }
            (None, None) => {}
            _ => mismatches += 1,
        }
    }
    let two_tests = scene
        .stats
        .segment_tests
        .load(std::sync::atomic::Ordering::Relaxed);
    let brute_tests = scene
        .stats
        .brute_tests
        .load(std::sync::atomic::Ordering::Relaxed);
    let frac = two_tests as f64 / brute_tests.max(1) as f64;
    let agreement = 1.0 - mismatches as f64 / a.rays as f64;
    let agree_ok = agreement >= 0.999;
    println!(
        "intersection oracle: {}/{} rays agree ({} hits) -> {}",
        a.rays - mismatches,
        a.rays,
        hits,
        if agree_ok { "pass" } else { "FAIL" }
    );
    let accel_ok = frac <= 0.05 || brute_tests == 0;
    println!(
        "acceleration: two-stage tested {:.2}% of brute-force segments -> {}",
        frac * 100.0,
        if accel_ok { "pass" } else { "FAIL" }
    );
    if agree_ok && accel_ok {
        Ok(())
    } else {
        Err("validation failed".into())
    }
}

fn cmd_stats(a: StatsArgs) -> Result<(), String> {
    let ext = a
        .input
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "kcf" => {
            let cell = load_pattern(&a.input).map_err(|e| e.to_string())?;
            let verts: usize = cell.curves.iter().map(|c| c.points.len()).sum();
            println!(
                "pattern cell: {} curves, {verts} vertices, tile {}x{}",
                cell.curves.len(),
                cell.tile.0,
                cell.tile.1
            );
        }
        "yrn" => {
            let f = fs::File::open(&a.input).map_err(|e| e.to_string())?;
            let yarns = read_yarns(std::io::BufReader::new(f)).map_err(|e| e.to_string())?;
            let verts: usize = yarns.iter().map(|y| y.vertices.len()).sum();
            let closed = yarns.iter().filter(|y| y.closed).count();
            println!(
                "yarns: {} curves ({closed} closed), {verts} vertices",
                yarns.len()
            );
        }
        "plb" => {
            let f = fs::File::open(&a.input).map_err(|e| e.to_string())?;
            let plies = read_plb(f).map_err(|e| e.to_string())?;
            let verts: usize = plies.iter().map(|p| p.vertices.len()).sum();
            println!("plies: {} curves, {verts} vertices (28 bytes each)", plies.len());
        }
        "mgb" => {
            let f = fs::File::open(&a.input).map_err(|e| e.to_string())?;
            let grid = read_mgb(f).map_err(|e| e.to_string())?;
            let segs: usize = grid.cells.iter().map(|c| c.segments.len()).sum();
            let tris: usize = grid.cells.iter().map(|c| c.triangles.len()).sum();
            println!(
                "grid: {}x{}, {segs} segment refs, {tris} triangle refs",
                grid.resolution.0, grid.resolution.1
            );
        }
        "obj" => {
            let mesh = load_obj(&a.input).map_err(|e| e.to_string())?;
            println!(
                "mesh: {} vertices, {} triangles",
                mesh.vertices.len(),
                mesh.triangles.len()
            );
        }
        other => return Err(format!("unknown artifact extension {other:?}")),
    }
    Ok(())
}
