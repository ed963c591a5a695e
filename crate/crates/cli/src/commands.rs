use std::path::{Path, PathBuf};

use neai::fields::{AmbientField, Model};
use neai::image::Image;
use neai::math::Vec3;
use neai::oracle::{oracle_suite, Suite};
use neai::preconv::{load_or_build_levels, parse_sigmas};
use neai::renderer::{
    render_image, EnvView, Geometry, ObjectMode, ObjectView, PlacedSphere, Placement, RenderSettings,
};
use neai::scenes::io::{read_png, write_png};
use neai::scenes::{generate_synth, load_scene, preset, Dataset, Frame, Sphere, SynthConfig};
use neai::training::{format_psnr, load_checkpoint, psnr, ssim, CheckpointMeta, TrainConfig, Trainer};
use neai::{Error, Result};

use crate::views::{views, View, ViewSet};

pub fn train(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    iters: Option<u64>,
    stop_at: Option<u64>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut trainer = match resume {
        Some(ckpt) => {
            if seed.is_some() {
                return Err(Error::InvalidArgument("--seed cannot change on resume".into()));
            }
            let (_, _, meta) = load_checkpoint(ckpt)?;
            let ds = load_scene(&meta.train.scene)?;
            let mut t = Trainer::resume(ckpt, &ds)?;
            if let Some(n) = iters {
                t.config.iterations = n;
            }
            log::info!("resuming at iteration {}", t.iteration);
            t
        }
        None => {
            let path = config.ok_or_else(|| Error::InvalidArgument("--config is required".into()))?;
            let mut cfg = TrainConfig::load(path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = iters {
                cfg.iterations = n;
            }
            let ds = load_scene(&cfg.scene)?;
            Trainer::new(cfg, &ds)?
        }
    };
    trainer.run(out, stop_at)?;
    println!(
        "trained to iteration {}; checkpoints in {}",
        trainer.iteration,
        out.display()
    );
    Ok(())
}

/// Object surface for a view: the frame's own depth and normals, or the
/// scene's bounding sphere when the view is not a scene frame or the object
/// is moved.
enum ViewGeometry<'a> {
    Frame(&'a Frame),
    Sphere(PlacedSphere),
}

impl Geometry for ViewGeometry<'_> {
    fn surface(&self, pixel: (u32, u32), o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
        match self {
            ViewGeometry::Frame(f) => f.surface(pixel, o, d),
            ViewGeometry::Sphere(s) => s.surface(pixel, o, d),
        }
    }
}

fn geometry<'a>(ds: &'a Dataset, view: &View, placement: Placement) -> ViewGeometry<'a> {
    match view.frame {
        Some(k) if placement == Placement::default() => ViewGeometry::Frame(&ds.frames[k]),
        _ => ViewGeometry::Sphere(PlacedSphere {
            sphere: Sphere {
                center: ds.manifest.bounds.center,
                radius: ds.manifest.bounds.radius,
            },
            placement,
        }),
    }
}

struct Scene<'a> {
    ds: &'a Dataset,
    object: &'a Model,
    placement: Placement,
    material_scale: (f64, f64, f64),
    settings: RenderSettings,
    mode: ObjectMode,
}

fn render_views<A: AmbientField>(scene: &Scene, env: &EnvView<A>, set: ViewSet, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for view in views(scene.ds, set)? {
        let geo = geometry(scene.ds, &view, scene.placement);
        let object = ObjectView {
            geometry: &geo,
            placement: scene.placement,
            materials: &scene.object.material,
            params: scene.object.params(),
            material_scale: scene.material_scale,
            gamma: scene.object.gamma(),
        };
        let img = render_image(&view.camera, Some(&object), env, &scene.settings, scene.mode, None)?;
        let path = out.join(format!("{}.png", view.name));
        write_png(&path, &img)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn scene_of(meta: &CheckpointMeta, scene: Option<&Path>) -> Result<Dataset> {
    load_scene(scene.unwrap_or(&meta.train.scene))
}

/// Renders with the model's own environment (or the analytic one it was trained against).
pub fn render(checkpoint: &Path, scene: Option<&Path>, set: ViewSet, out: &Path) -> Result<()> {
    let (model, _, meta) = load_checkpoint(checkpoint)?;
    let ds = scene_of(&meta, scene)?;
    let sc = Scene {
        ds: &ds,
        object: &model,
        placement: Placement::default(),
        material_scale: (1.0, 1.0, 1.0),
        settings: meta.train.render,
        mode: ObjectMode::Plain,
    };
    let gamma = model.gamma();
    match &meta.train.ambient {
        Some(a) => render_views(
            &sc,
            &EnvView {
                coarse: a,
                fine: a,
                params: &[],
                gamma,
            },
            set,
            out,
        ),
        None => render_views(
            &sc,
            &EnvView {
                coarse: &model.coarse,
                fine: &model.fine,
                params: model.params(),
                gamma,
            },
            set,
            out,
        ),
    }
}

pub enum EnvSource {
    Checkpoint(PathBuf),
    Analytic(String),
}

pub struct CompositeArgs<'a> {
    pub object: &'a Path,
    pub env: EnvSource,
    pub transform: &'a str,
    pub material_scale: &'a str,
    pub scene: Option<&'a Path>,
    pub views: ViewSet,
    pub out: &'a Path,
}

fn parse_material_scale(s: &str) -> Result<(f64, f64, f64)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("bad material scale {s:?}: {e}")))?;
    match v[..] {
        [a, r, c] if v.iter().all(|x| x.is_finite() && *x >= 0.0) => Ok((a, r, c)),
        _ => Err(Error::InvalidArgument(format!(
            "material scale needs 3 non-negative numbers, got {s:?}"
        ))),
    }
}

/// Object from one checkpoint lit by, and blended into, another environment.
/// Cameras come from the object's scene; an analytic environment is shown
/// through the object's tone curve.
pub fn composite(args: CompositeArgs) -> Result<()> {
    let placement = Placement::parse(args.transform)?;
    let material_scale = parse_material_scale(args.material_scale)?;
    let (object, _, meta) = load_checkpoint(args.object)?;
    let ds = scene_of(&meta, args.scene)?;
    let mut sc = Scene {
        ds: &ds,
        object: &object,
        placement,
        material_scale,
        settings: meta.train.render,
        mode: ObjectMode::Occluded,
    };
    match args.env {
        EnvSource::Analytic(name) => {
            let a = preset(&name)?;
            let env = EnvView {
                coarse: &a,
                fine: &a,
                params: &[],
                gamma: object.gamma(),
            };
            render_views(&sc, &env, args.views, args.out)
        }
        EnvSource::Checkpoint(path) => {
            let (env_model, _, env_meta) = load_checkpoint(&path)?;
            sc.settings = RenderSettings {
                roughness_gain: meta.train.render.roughness_gain,
                ..env_meta.train.render
            };
            let gamma = env_model.gamma();
            match &env_meta.train.ambient {
                Some(a) => render_views(
                    &sc,
                    &EnvView {
                        coarse: a,
                        fine: a,
                        params: &[],
                        gamma,
                    },
                    args.views,
                    args.out,
                ),
                None => render_views(
                    &sc,
                    &EnvView {
                        coarse: &env_model.coarse,
                        fine: &env_model.fine,
                        params: env_model.params(),
                        gamma,
                    },
                    args.views,
                    args.out,
                ),
            }
        }
    }
}

pub fn preconv(scene: &Path, sigmas: &str) -> Result<()> {
    let sigmas = parse_sigmas(sigmas)?;
    let ds = load_scene(scene)?;
    let (levels, cached) = load_or_build_levels(&ds, &sigmas, true)?;
    let valid: usize = levels
        .iter()
        .flatten()
        .map(|l| l.valid.iter().filter(|v| **v).count())
        .sum();
    println!(
        "{} frames x {} levels, {valid} valid background pixels ({})",
        levels.len(),
        sigmas.len(),
        if cached { "cached" } else { "built" }
    );
    Ok(())
}

pub fn oracle(suite: &str, samples: usize, seed: u64) -> Result<()> {
    let suite: Suite = suite.parse()?;
    if samples == 0 {
        return Err(Error::InvalidArgument("--samples must be positive".into()));
    }
    let report = oracle_suite(suite, samples, seed);
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "{} of {} oracle checks failed",
            report.failures(),
            report.checks.len()
        )))
    }
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Tab-separated table, one row per image plus the mean.
pub fn metrics(pred: &Path, gt: &Path) -> Result<()> {
    let names = png_names(pred)?;
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG images in {}", pred.display())));
    }
    println!("image\tpsnr\tssim");
    let (mut sp, mut ss) = (0.0, 0.0);
    for name in &names {
        let p: Image = read_png(&pred.join(name))?;
        let g = read_png(&gt.join(name))?;
        let (v_psnr, v_ssim) = (psnr(&p, &g)?, ssim(&p, &g)?);
        println!("{name}\t{}\t{v_ssim:.6}", format_psnr(v_psnr));
        sp += v_psnr;
        ss += v_ssim;
    }
    let n = names.len() as f64;
    println!("mean\t{}\t{:.6}", format_psnr(sp / n), ss / n);
    Ok(())
}

pub struct SynthArgs<'a> {
    pub out: &'a Path,
    pub config: Option<&'a Path>,
    pub size: Option<u32>,
    pub train_views: Option<usize>,
    pub test_views: Option<usize>,
    pub env: Option<&'a str>,
    pub seed: Option<u64>,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = match args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = args.size {
        cfg.width = s;
        cfg.height = s;
    }
    if let Some(n) = args.train_views {
        cfg.n_train = n;
    }
    if let Some(n) = args.test_views {
        cfg.n_test = n;
    }
    if let Some(e) = args.env {
        cfg.environment = preset(e)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let m = generate_synth(&cfg, args.out)?;
    println!("wrote {} views to {}", m.frames.len(), args.out.display());
    Ok(())
}
