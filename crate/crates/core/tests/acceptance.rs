//! Acceptance criteria 1–10, one PASS/FAIL line each.
//!
//! `NEAI_FULL_ACCEPTANCE=1` runs the full decomposition experiment of
//! criterion 8 (hours); otherwise a small smoke run stands in and the
//! criterion is reported as not met. `NEAI_ACCEPTANCE_STRICT=1` makes any
//! FAIL a non-zero exit.

use std::path::Path;
use std::time::Instant;

use neai::fields::{Material, Model, ModelConfig, RadianceSample};
use neai::math::Vec3;
use neai::oracle::{ile_suite, moments_suite, render_suite, Check};
use neai::preconv::build_levels;
use neai::renderer::{
    background_lobe, composite, render_image, volume_render, EnvView, ObjectMode, ObjectView, PlacedSphere, Placement,
    RenderSettings,
};
use neai::scenes::{
    analytic_render, dense_lobe_render, generate_synth, load_scene, preset, AnalyticMaterial, Dataset, SynthConfig,
};
use neai::training::{psnr, psnr_masked, LossWeights, Pipeline, TrainConfig, TrainData, Trainer};
use neai::util::rng_for;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = fn() -> neai::Result<Outcome>;

fn failed_checks(checks: &[Check]) -> usize {
    checks.iter().filter(|c| !c.passed).count()
}

fn worst_ratio(checks: &[Check]) -> f64 {
    checks.iter().map(|c| c.measured / c.tolerance).fold(0.0, f64::max)
}

fn c1_ile_vs_monte_carlo() -> neai::Result<Outcome> {
    let checks = ile_suite(7, 50, 1_000_000, 0.05);
    let (pe, mc): (Vec<_>, Vec<_>) = checks.iter().partition(|c| c.name.contains("zero_covariance"));
    let worst = mc.iter().map(|c| c.measured).fold(0.0, f64::max);
    Ok(Outcome {
        pass: failed_checks(&checks) == 0,
        detail: format!(
            "{} frustums, worst rel-L2 {:.4} (tol 0.05); zero-covariance vs PE max diff {:e}",
            mc.len(),
            worst,
            pe[0].measured
        ),
    })
}

fn c2_moments_vs_rejection() -> neai::Result<Outcome> {
    let checks = moments_suite(7, 100, 10_000_000, 3.0);
    Ok(Outcome {
        pass: failed_checks(&checks) == 0,
        detail: format!(
            "{} moment checks at 1e7 samples, worst |z| {:.3} (max 3), {} outside",
            checks.len(),
            3.0 * worst_ratio(&checks),
            failed_checks(&checks)
        ),
    })
}

/// Error of `n` uniform segments on `[0, 4]` with density `sigma` and colour `c(t)`.
fn quadrature_error(n: usize, sigma: f64, color: impl Fn(f64) -> f64, exact: f64) -> neai::Result<f64> {
    let len = 4.0;
    let bounds: Vec<f64> = (0..=n).map(|k| len * k as f64 / n as f64).collect();
    let samples: Vec<RadianceSample> = bounds
        .windows(2)
        .map(|b| RadianceSample {
            color: Vec3::splat(color(0.5 * (b[0] + b[1]))),
            sigma,
        })
        .collect();
    Ok((volume_render(&samples, &bounds)?.color.x - exact).abs())
}

fn c3_quadrature() -> neai::Result<Outcome> {
    let sigma = 1.5;
    let c = 0.7;
    let exact = c * -(-sigma * 4.0f64).exp_m1();
    let ns: Vec<usize> = (6..=12).map(|p| 1 << p).collect();
    let errs = ns
        .iter()
        .map(|&n| quadrature_error(n, sigma, |_| c, exact))
        .collect::<neai::Result<Vec<_>>>()?;
    let ratios: Vec<f64> = errs.windows(2).map(|e| e[0] / e[1]).collect();
    let accurate = errs[errs.len() - 1] <= 1e-3;
    let first_order = ratios.iter().all(|r| (1.8..=2.2).contains(r));

    // a colour that varies along the ray exposes the actual convergence order
    let w: f64 = 2.0;
    let exact_sin = sigma * (w - (-sigma * 4.0f64).exp() * (sigma * (w * 4.0).sin() + w * (w * 4.0).cos()))
        / (sigma * sigma + w * w);
    let errs_sin = ns
        .iter()
        .map(|&n| quadrature_error(n, sigma, |t| (w * t).sin(), exact_sin))
        .collect::<neai::Result<Vec<_>>>()?;
    let ratios_sin: Vec<f64> = errs_sin.windows(2).map(|e| e[0] / e[1]).collect();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    Ok(Outcome {
        pass: accurate && first_order,
        detail: format!(
            "constant case error at N=4096 {:.2e} (tol 1e-3, {}); doubling ratios [{}] vs [1.8, 2.2] ({}); \
             varying-colour ratios [{}]",
            errs[errs.len() - 1],
            if accurate { "ok" } else { "too large" },
            fmt(&ratios),
            if first_order {
                "ok"
            } else {
                "constant case is exact, no first-order decay"
            },
            fmt(&ratios_sin)
        ),
    })
}

fn render_check(name: &str) -> neai::Result<Check> {
    render_suite(7)
        .into_iter()
        .find(|c| c.name.starts_with(name))
        .ok_or_else(|| neai::Error::InvalidArgument(format!("no render check {name}")))
}

fn c4_partition_of_unity() -> neai::Result<Outcome> {
    let c = render_check("partition_of_unity")?;
    Ok(Outcome {
        pass: c.passed,
        detail: format!("10^4 profiles, max |Σw + T − 1| = {:.2e} (tol 1e-6)", c.measured),
    })
}

fn toy_synth(size: u32, n_train: usize, n_test: usize) -> SynthConfig {
    SynthConfig {
        width: size,
        height: size,
        n_train,
        n_test,
        n_dense: 256,
        ..SynthConfig::default()
    }
}

fn toy_model() -> ModelConfig {
    ModelConfig {
        ile_levels: 3,
        dir_levels: 2,
        ambient_width: 12,
        ambient_depth: 3,
        color_width: 8,
        material_levels: 3,
        material_width: 12,
        material_depth: 3,
        material_skip: Some(1),
        init_seed: 5,
    }
}

fn scene(dir: &Path, cfg: &SynthConfig) -> neai::Result<Dataset> {
    generate_synth(cfg, dir)?;
    load_scene(dir)
}

fn c5_gradients() -> neai::Result<Outcome> {
    let dir = tempfile::tempdir().map_err(|e| neai::Error::io("tempdir", e))?;
    let synth = toy_synth(16, 2, 0);
    let ds = scene(dir.path(), &synth)?;
    let levels = ds
        .frames
        .iter()
        .map(|f| build_levels(&f.image, &[0.0, 2.0], &f.mask))
        .collect::<neai::Result<Vec<_>>>()?;
    let data = TrainData::new(&ds, levels)?;
    let mut model = Model::new(toy_model())?;
    model.set_gamma(1.4);
    let settings = RenderSettings {
        n_coarse: 4,
        n_fine: 0,
        ..synth.render
    };
    let weights = LossWeights {
        lambda_s: 0.05,
        lambda_p: 0.5,
    };
    let batch = data.sample_batch(9, 0, 24, 0.5)?;
    let run = |params: &[f64], grad: bool| {
        Pipeline {
            coarse: &model.coarse,
            fine: &model.fine,
            material: &model.material,
            params,
            gamma_index: model.gamma_index(),
            settings: &settings,
            weights,
            jitter_seed: None,
        }
        .run(&data, &batch, 3, 4, 0, grad)
    };
    let base = model.params().to_vec();
    let g = run(&base, true)?.1.expect("gradient requested");
    let mut rng = rng_for(5, 0);
    let mut coords: Vec<usize> = (0..48).map(|_| rng.random_range(0..base.len())).collect();
    coords.push(model.gamma_index());
    coords.extend(model.material.param_range().step_by(11));
    let h = 1e-5;
    let (mut worst, mut bad) = (0.0f64, 0);
    for &i in &coords {
        let mut p = base.clone();
        p[i] = base[i] + h;
        let up = run(&p, false)?.0.total(&weights);
        p[i] = base[i] - h;
        let down = run(&p, false)?.0.total(&weights);
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(g[i].abs());
        let err = (fd - g[i]).abs();
        if err > 1e-3 * scale + 1e-9 {
            bad += 1;
        }
        if scale > 1e-6 {
            worst = worst.max(err / scale);
        }
    }
    Ok(Outcome {
        pass: bad == 0 && coords.len() >= 50,
        detail: format!(
            "{} coordinates, 4 segments, worst relative error {:.2e} (tol 1e-3), {bad} outside",
            coords.len(),
            worst
        ),
    })
}

fn c6_roughness_monotone() -> neai::Result<Outcome> {
    let cfg = SynthConfig {
        width: 64,
        height: 64,
        ..SynthConfig::default()
    };
    let cam = cfg.camera(0)?;
    let env = preset("checker")?;
    let mut obj = cfg.object.clone();
    let mut vars = Vec::new();
    for k in 0..=5 {
        obj.material = AnalyticMaterial::Uniform {
            material: Material {
                rho: 0.2 * k as f64,
                diffuse: Vec3::ZERO,
                alpha: 1.0,
            },
        };
        let img = analytic_render(&env, Some(&obj), &cam, 256, &cfg.render, 1.0)?;
        let mut vals = Vec::new();
        for j in 0..cam.height {
            for i in 0..cam.width {
                let (o, d) = cam.ray(i, j)?;
                if obj.hit(o, d).is_some() {
                    let c = img.get(i, j);
                    vals.push((c.x + c.y + c.z) / 3.0);
                }
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        vars.push(vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n);
    }
    let pass = vars.windows(2).all(|v| v[1] <= v[0]);
    Ok(Outcome {
        pass,
        detail: format!(
            "specular variance for rho 0.0..1.0: [{}]",
            vars.iter().map(|v| format!("{v:.5e}")).collect::<Vec<_>>().join(", ")
        ),
    })
}

fn c7_preconv_consistency() -> neai::Result<Outcome> {
    let cfg = SynthConfig {
        width: 64,
        height: 64,
        ..SynthConfig::default()
    };
    let cam = cfg.camera(0)?;
    let env = preset("smooth")?;
    let n_dense = 512;
    let sharp = analytic_render(&env, None, &cam, n_dense, &cfg.render, 1.0)?;
    let sigmas = [1.0, 2.0, 4.0, 8.0];
    let levels = build_levels(&sharp, &sigmas, &vec![false; cam.pixel_count()])?;
    let mut maes = Vec::new();
    for l in &levels {
        let mut sum = 0.0;
        for j in 0..cam.height {
            for i in 0..cam.width {
                let (o, d) = cam.ray(i, j)?;
                let lobe = background_lobe(o, d, cam.r0(), l.sigma, &cfg.render)?;
                let c = dense_lobe_render(&env, &lobe, n_dense)?.0.map(|v| v.min(1.0));
                let e = c - l.image.get(i, j);
                sum += (e.x.abs() + e.y.abs() + e.z.abs()) / 3.0;
            }
        }
        maes.push(sum / cam.pixel_count() as f64);
    }
    let worst = maes.iter().copied().fold(0.0, f64::max);
    Ok(Outcome {
        pass: worst <= 0.02,
        detail: format!(
            "MAE per sigma {:?}: [{}] (tol 0.02)",
            sigmas,
            maes.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    })
}

/// Settings of a decomposition experiment.
struct Protocol {
    name: &'static str,
    synth: SynthConfig,
    model: ModelConfig,
    batch_size: usize,
    samples: (usize, usize),
    iterations: u64,
}

impl Protocol {
    fn full() -> Self {
        Protocol {
            name: "full",
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            batch_size: 4096,
            samples: (128, 128),
            iterations: 50_000,
        }
    }

    fn smoke() -> Self {
        Protocol {
            name: "smoke",
            synth: SynthConfig {
                n_dense: 512,
                ..toy_synth(32, 12, 3)
            },
            model: ModelConfig {
                ile_levels: 6,
                dir_levels: 3,
                ambient_width: 32,
                ambient_depth: 3,
                color_width: 16,
                material_levels: 6,
                material_width: 32,
                material_depth: 3,
                material_skip: Some(1),
                init_seed: 0,
            },
            batch_size: 256,
            samples: (16, 16),
            iterations: 400,
        }
    }

    fn config(&self, scene: &Path, lambda_p: f64) -> TrainConfig {
        TrainConfig {
            scene: scene.to_path_buf(),
            iterations: self.iterations,
            batch_size: self.batch_size,
            // without l_pre every ray in the batch is an object ray
            image_fraction: if lambda_p > 0.0 { 0.5 } else { 1.0 },
            weights: LossWeights {
                lambda_s: 1e-4,
                lambda_p,
            },
            checkpoint_every: self.iterations,
            eval_every: 0,
            write_preconv_cache: false,
            model: self.model.clone(),
            render: RenderSettings {
                n_coarse: self.samples.0,
                n_fine: self.samples.1,
                ..self.synth.render
            },
            ..TrainConfig::default()
        }
    }
}

/// Mean held-out PSNR over object pixels and over whole frames.
fn train_and_score(cfg: TrainConfig, ds: &Dataset) -> neai::Result<(f64, f64)> {
    let mut t = Trainer::new(cfg, ds)?;
    while t.iteration < t.config.iterations {
        t.step()?;
    }
    let (mut obj, mut full, mut n) = (0.0, 0.0, 0.0);
    for (_, f) in ds.split(neai::scenes::Split::Test) {
        let img = t.render(f)?;
        obj += psnr_masked(&img, &f.image, &f.mask)?;
        full += psnr(&img, &f.image)?;
        n += 1.0;
    }
    Ok((obj / n, full / n))
}

fn c8_decomposition() -> neai::Result<Outcome> {
    let full = std::env::var("NEAI_FULL_ACCEPTANCE").is_ok_and(|v| v == "1");
    let p = if full { Protocol::full() } else { Protocol::smoke() };
    let dir = tempfile::tempdir().map_err(|e| neai::Error::io("tempdir", e))?;
    let ds = scene(dir.path(), &p.synth)?;
    let (with_obj, with_full) = train_and_score(p.config(dir.path(), 1e-1), &ds)?;
    let (without_obj, without_full) = train_and_score(p.config(dir.path(), 0.0), &ds)?;
    let delta = with_obj - without_obj;
    let met = with_obj >= 28.0 && delta >= 0.3;
    let detail = format!(
        "{} protocol ({} iterations, {}x{}, {} train views): object PSNR {:.2} dB with l_pre, {:.2} dB without \
         (delta {:.2} dB; need >= 28 and >= 0.3); full-frame PSNR {:.2} / {:.2}",
        p.name,
        p.iterations,
        p.synth.width,
        p.synth.height,
        p.synth.n_train,
        with_obj,
        without_obj,
        delta,
        with_full,
        without_full
    );
    if full {
        Ok(Outcome { pass: met, detail })
    } else {
        Ok(Outcome {
            pass: false,
            detail: format!("not met: full protocol not run (set NEAI_FULL_ACCEPTANCE=1); {detail}"),
        })
    }
}

fn c9_compositing() -> neai::Result<Outcome> {
    let mut rng = rng_for(9, 0);
    let (mut limits_exact, mut worst) = (true, 0.0f64);
    for _ in 0..10_000 {
        let e = Vec3::new(rng.random(), rng.random(), rng.random());
        let o = Vec3::new(rng.random(), rng.random(), rng.random());
        let w: f64 = rng.random();
        limits_exact &= composite(e, 0.0, o) == o && composite(e, 1.0, o) == e;
        worst = worst.max((composite(e, w, o) - (e * w + o * (1.0 - w))).norm());
    }

    // in a full render, an environment that is empty in front of the
    // object leaves the object pixels untouched
    let cfg = SynthConfig {
        width: 24,
        height: 24,
        ..SynthConfig::default()
    };
    let cam = cfg.camera(0)?;
    let env = preset("checker")?;
    let sphere = PlacedSphere {
        sphere: cfg.object.sphere,
        placement: Placement::default(),
    };
    let model = Model::new(toy_model())?;
    let object = ObjectView {
        geometry: &sphere,
        placement: Placement::default(),
        materials: &model.material,
        params: model.params(),
        material_scale: (1.0, 1.0, 1.0),
        gamma: 1.0,
    };
    let view = EnvView {
        coarse: &env,
        fine: &env,
        params: &[],
        gamma: 1.0,
    };
    let settings = RenderSettings {
        n_coarse: 16,
        n_fine: 16,
        ..cfg.render
    };
    let plain = render_image(&cam, Some(&object), &view, &settings, ObjectMode::Plain, None)?;
    let occluded = render_image(&cam, Some(&object), &view, &settings, ObjectMode::Occluded, None)?;
    let render_exact = plain == occluded;
    Ok(Outcome {
        pass: limits_exact && worst <= 1e-12 && render_exact,
        detail: format!(
            "w*=0 and w*=1 limits exact: {limits_exact}; blend max error {worst:.2e} (tol 1e-12); \
             w*=0 render equals plain render: {render_exact}"
        ),
    })
}

fn c10_determinism() -> neai::Result<Outcome> {
    let dir = tempfile::tempdir().map_err(|e| neai::Error::io("tempdir", e))?;
    let scene_dir = dir.path().join("scene");
    let synth = toy_synth(16, 3, 0);
    let ds = scene(&scene_dir, &synth)?;
    let cfg = TrainConfig {
        scene: scene_dir.clone(),
        iterations: 8,
        batch_size: 48,
        sigmas: vec![0.0, 1.0, 2.0],
        checkpoint_every: 100,
        eval_every: 0,
        model: toy_model(),
        render: RenderSettings {
            n_coarse: 8,
            n_fine: 8,
            ..synth.render
        },
        ..TrainConfig::default()
    };
    let mut straight = Trainer::new(cfg.clone(), &ds)?;
    straight.run(&dir.path().join("a"), None)?;
    let mut first = Trainer::new(cfg, &ds)?;
    first.run(&dir.path().join("b"), Some(4))?;
    let mut resumed = Trainer::resume(&dir.path().join("b/latest.neai"), &ds)?;
    resumed.run(&dir.path().join("b"), None)?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let params = bits(straight.model.params()) == bits(resumed.model.params());
    let moments = bits(&straight.adam.m) == bits(&resumed.adam.m) && bits(&straight.adam.v) == bits(&resumed.adam.v);
    let read = |p: &Path| std::fs::read(p).map_err(|e| neai::Error::io(p, e));
    let files = read(&dir.path().join("a/ckpt_0000008.neai"))? == read(&dir.path().join("b/ckpt_0000008.neai"))?;
    Ok(Outcome {
        pass: params && moments && files,
        detail: format!(
            "8 iterations straight vs 4 + resume 4: parameters identical {params}, optimizer moments identical {moments}, \
             final checkpoint bytes identical {files}"
        ),
    })
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("ILE closed form vs Monte-Carlo", c1_ile_vs_monte_carlo),
        ("frustum moments vs rejection sampling", c2_moments_vs_rejection),
        ("volume-rendering quadrature", c3_quadrature),
        ("partition of unity", c4_partition_of_unity),
        ("end-to-end gradients vs finite differences", c5_gradients),
        ("roughness monotonicity", c6_roughness_monotone),
        ("pre-convolution consistency", c7_preconv_consistency),
        ("desk-scale decomposition", c8_decomposition),
        ("compositing identities", c9_compositing),
        ("determinism across resume", c10_determinism),
    ];
    let mut passed = 0;
    for (k, (title, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        passed += pass as usize;
        println!(
            "criterion {:>2} {} {title}: {detail} [{:.1} s]",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria pass", criteria.len());
    if passed < criteria.len() && std::env::var("NEAI_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
