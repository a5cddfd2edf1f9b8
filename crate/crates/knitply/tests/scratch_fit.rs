use knitply::fit::{loss, Bound, FitProblem, FreeParam};
use knitply::mapping::{build_grid, default_resolution, parse_obj, transform_plies};
use knitply::math::vec3;
use knitply::pattern::{compute_partners, load_pattern, stitch, tile, EPS_MATCH};
use knitply::plygen::{generate_plies, PlyParams};
use knitply::render::{render, Camera, Light, RenderConfig, Scene};
use knitply::shading::{BsdfParams, FiberTexture};

/// One-stitch stockinette swatch with three twisted plies.
fn knit_swatch(lights: Vec<Light>, camera: Camera, bsdf: BsdfParams) -> Scene {
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/stockinette.kcf");
    let cell = load_pattern(&path).unwrap();
    let labels = compute_partners(&cell, EPS_MATCH).unwrap();
    let graph = tile(&cell, &labels, 1, 1, false, false).unwrap();
    let yarns = stitch(&graph, &cell).unwrap();
    let params = PlyParams {
        num_plies: 3,
        ply_offset: 0.035,
        ply_radius: 0.02,
        twist_rate: 8.0,
        resample_step: 0.08,
    };
    let mut flat = Vec::new();
    for (yi, y) in yarns.iter().enumerate() {
        flat.extend(generate_plies(y, yi as u32, &params).unwrap());
    }
    let obj = "v -0.15 0 -0.15\nv 1.15 0 -0.15\nv 1.15 0 1.15\nv -0.15 0 1.15\n\
               vt -0.15 -0.15\nvt 1.15 -0.15\nvt 1.15 1.15\nvt -0.15 1.15\n\
               vn 0 1 0\nf 1/1/1 2/2/1 3/3/1\nf 1/1/1 3/3/1 4/4/1\n";
    let mesh = parse_obj(std::io::Cursor::new(obj)).unwrap();
    let grid = build_grid(&mesh, &flat, default_resolution(mesh.triangles.len())).unwrap();
    let mapped = transform_plies(&grid, &mesh, &flat, 0.2).unwrap();
    Scene::assemble(
        mesh, mapped, lights, camera, bsdf,
        FiberTexture::flat(), 0.0, 0.37, Some((48, 48)),
    )
    .unwrap()
}

fn truth() -> BsdfParams {
    BsdfParams {
        albedo: [0.6, 0.35, 0.3],
        spec_weight: 0.25,
        trans_weight: 0.3,
        long_width: 0.15,
        azim_width: 0.3,
        trans_width: 0.35,
    }
}

fn front_camera() -> Camera {
    Camera {
        position: vec3(0.5, 1.4, -0.9),
        look_at: vec3(0.5, 0.2, 0.5),
        up: vec3(0.0, 1.0, 0.0),
        vfov: 35.0,
        width: 64,
        height: 64,
    }
}

fn front_light() -> Light {
    Light::AreaQuad {
        corner: vec3(0.2, 1.8, 0.2),
        edge1: vec3(0.6, 0.0, 0.0),
        edge2: vec3(0.0, 0.0, 0.6),
        radiance: [25.0, 25.0, 25.0],
    }
}

fn back_light() -> Light {
    Light::AreaQuad {
        corner: vec3(-0.5, -0.8, -0.5),
        edge1: vec3(0.0, 0.0, 2.0),
        edge2: vec3(2.0, 0.0, 0.0),
        radiance: [3.0, 3.0, 3.0],
    }
}

#[test]
fn sensitivity() {
    let config = RenderConfig { spp: 64, max_depth: 1, rr_start_depth: 3, seed: 5, tile_size: 16 };
    for (name, lights) in [("front", vec![front_light()]), ("back", vec![back_light()])] {
        let scene = knit_swatch(lights, front_camera(), truth());
        let t0 = std::time::Instant::now();
        let reference = render(&scene, &config);
        let mean: f64 = reference.data.iter().sum::<f64>() / reference.data.len() as f64;
        eprintln!("[{name}] render {:?} mean {mean:.4}", t0.elapsed());
        let mut problem = FitProblem {
            scenes: vec![scene],
            references: vec![reference],
            base: truth(),
            free: vec![],
            budget: 400,
            tolerance: 0.0,
            spp: 64,
            seed: 5,
            max_depth: 1,
        };
        for (tag, f) in [
            ("aR*1.05", Box::new(|p: &mut BsdfParams| p.albedo[0] *= 1.05)
                as Box<dyn Fn(&mut BsdfParams)>),
            ("spec*1.05", Box::new(|p: &mut BsdfParams| p.spec_weight *= 1.05)),
            ("trans*1.05", Box::new(|p: &mut BsdfParams| p.trans_weight *= 1.05)),
            ("lw*1.05", Box::new(|p: &mut BsdfParams| p.long_width *= 1.05)),
        ] {
            let mut q = truth();
            f(&mut q);
            eprintln!("[{name}] {tag} loss {:.4e}", loss(&mut problem, &q));
        }
    }
}

#[test]
fn fit_probe() {
    let config = RenderConfig { spp: 64, max_depth: 1, rr_start_depth: 3, seed: 5, tile_size: 16 };
    let scene_f = knit_swatch(vec![front_light()], front_camera(), truth());
    let scene_b = knit_swatch(vec![back_light()], front_camera(), truth());
    let ref_f = render(&scene_f, &config);
    let ref_b = render(&scene_b, &config);
    let mut problem = FitProblem {
        scenes: vec![scene_f, scene_b],
        references: vec![ref_f, ref_b],
        base: truth(),
        free: vec![
            (FreeParam::AlbedoR, Bound { lo: 0.05, hi: 0.95 }),
            (FreeParam::SpecWeight, Bound { lo: 0.01, hi: 0.6 }),
            (FreeParam::TransFraction, Bound { lo: 0.01, hi: 0.9 }),
            (FreeParam::LongWidth, Bound { lo: 0.03, hi: 0.6 }),
        ],
        budget: 400,
        tolerance: 0.0,
        spp: 64,
        seed: 5,
        max_depth: 1,
    };
    let mut base = truth();
    base.albedo[0] = 0.4;
    base.spec_weight = 0.1;
    base.trans_weight = 0.2 * (1.0 - 0.1);
    base.long_width = 0.3;
    problem.base = base;
    let t0 = std::time::Instant::now();
    let result = match knitply::fit::fit(&mut problem) {
        Ok(r) => r,
        Err(knitply::fit::FitError::BudgetExhausted(r)) => r,
        Err(e) => panic!("fit failed: {e}"),
    };
    let p = result.params;
    let frac = p.trans_weight / (1.0 - p.spec_weight);
    eprintln!(
        "[fit] albedo_r {:.4} (0.6) spec {:.4} (0.25) frac {:.4} (0.4) long_w {:.4} (0.15)",
        p.albedo[0], p.spec_weight, frac, p.long_width
    );
    eprintln!(
        "[fit] loss {:.3e} evals {} time {:?}",
        result.loss,
        result.evaluations,
        t0.elapsed()
    );
}
