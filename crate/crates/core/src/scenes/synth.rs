//! Ground-truth rendering of analytic scenes and procedural datasets.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{apply_gamma, Material};
use crate::image::Image;
use crate::math::{frustum_moments, lift_gaussian, Vec3};
use crate::renderer::{
    background_lobe, look_at, specular_lobe, Camera, Lobe, Placement, RenderSettings, SurfaceSample,
};
use crate::scenes::analytic::{preset, AnalyticAmbient, AnalyticMaterial, Sphere};
use crate::scenes::io::{
    c2w_flat, save_scene, Bounds, Frame, FrameEntry, Intrinsics, SceneManifest, Split, CONVENTION,
};
use crate::util::{par_map, rng_for};

/// Transmittance below which dense marching stops.
const T_MIN: f64 = 1e-10;

/// `(Σ w c, Σ w)` of one lobe by uniform quadrature with `n_dense` segments
/// over the part of the lobe axis where the scene has density.
pub fn dense_lobe_render(scene: &AnalyticAmbient, lobe: &Lobe, n_dense: usize) -> Result<(Vec3, f64)> {
    if n_dense == 0 {
        return Err(Error::invalid("n_dense must be positive"));
    }
    let Some((a, b)) = scene.support(lobe.origin, lobe.dir, lobe.params.t_near, lobe.params.t_far) else {
        return Ok((Vec3::ZERO, 0.0));
    };
    let dt = (b - a) / n_dense as f64;
    let (mut color, mut trans) = (Vec3::ZERO, 1.0);
    for k in 0..n_dense {
        let (t0, t1) = (a + k as f64 * dt, a + (k + 1) as f64 * dt);
        let m = frustum_moments(t0, t1, lobe.params.rho_hat, lobe.params.r_hat)?;
        let g = lift_gaussian(lobe.origin, lobe.dir, &m);
        let s = scene.eval_one(&g).0;
        if s.sigma > 0.0 {
            let alpha = -(-s.sigma * dt).exp_m1();
            color += s.color * (trans * alpha);
            trans *= 1.0 - alpha;
            if trans < T_MIN {
                break;
            }
        }
    }
    Ok((color, 1.0 - trans))
}

/// Object of an analytic scene: a placed sphere with an analytic material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticObject {
    pub sphere: Sphere,
    #[serde(default)]
    pub placement: Placement,
    pub material: AnalyticMaterial,
    pub gamma: f64,
}

impl AnalyticObject {
    pub fn hit(&self, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
        let world = Sphere {
            center: self.placement.to_world(self.sphere.center),
            radius: self.sphere.radius * self.placement.scale,
        };
        world.intersect(o, d)
    }

    pub fn material_at(&self, x: Vec3) -> Material {
        self.material.at(self.placement.to_local(x))
    }
}

/// Ground-truth frame: object pixels are `γ(C_d + α cos C_lobe)`, the rest
/// `γ_env(C)` of a thin camera ray, all by dense quadrature.
pub fn analytic_render(
    scene: &AnalyticAmbient,
    object: Option<&AnalyticObject>,
    cam: &Camera,
    n_dense: usize,
    settings: &RenderSettings,
    env_gamma: f64,
) -> Result<Image> {
    let r0 = cam.r0();
    let rows = par_map(cam.height as usize, |j| -> Result<Vec<Vec3>> {
        (0..cam.width)
            .map(|i| {
                let (o, d) = cam.ray(i, j as u32)?;
                if let Some(obj) = object {
                    if let Some((t, n)) = obj.hit(o, d) {
                        let s = SurfaceSample::new(o, d, t, n);
                        let m = obj.material_at(s.x_s);
                        let cos = s.lobe_cos();
                        let mut c = m.diffuse;
                        if m.alpha > 0.0 && cos > 0.0 {
                            let lobe = specular_lobe(&s, m.rho, r0, settings)?;
                            c += dense_lobe_render(scene, &lobe, n_dense)?.0 * (m.alpha * cos);
                        }
                        return apply_gamma(c, obj.gamma);
                    }
                }
                let lobe = background_lobe(o, d, r0, 0.0, settings)?;
                apply_gamma(dense_lobe_render(scene, &lobe, n_dense)?.0, env_gamma)
            })
            .collect()
    });
    let mut data = Vec::with_capacity(cam.pixel_count());
    for r in rows {
        data.extend(r?);
    }
    Ok(Image {
        width: cam.width,
        height: cam.height,
        data,
    })
}

/// Procedural dataset: a two-material sphere inside an analytic environment,
/// seen from cameras on the upper hemisphere (+y up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub camera_distance: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub environment: AnalyticAmbient,
    pub object: AnalyticObject,
    pub env_gamma: f64,
    pub n_dense: usize,
    pub render: RenderSettings,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let width = 128;
        let fov_deg: f64 = 50.0;
        // base radius of the camera; ρ = 1 matches the widest (σ = 8) blur level
        let f = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        let r0 = 0.5 / f;
        SynthConfig {
            width,
            height: width,
            fov_deg,
            n_train: 100,
            n_test: 10,
            camera_distance: 3.5,
            min_elevation_deg: 10.0,
            max_elevation_deg: 70.0,
            environment: preset("checker").expect("preset exists"),
            object: AnalyticObject {
                sphere: Sphere {
                    center: Vec3::ZERO,
                    radius: 1.0,
                },
                placement: Placement::default(),
                material: AnalyticMaterial::Split {
                    axis: Vec3::new(0.0, 1.0, 0.0),
                    upper: Material {
                        rho: 0.05,
                        diffuse: Vec3::new(0.02, 0.03, 0.08),
                        alpha: 0.8,
                    },
                    lower: Material {
                        rho: 0.5,
                        diffuse: Vec3::new(0.25, 0.08, 0.04),
                        alpha: 0.4,
                    },
                },
                gamma: 1.0,
            },
            env_gamma: 1.0,
            n_dense: 4096,
            render: RenderSettings {
                t_far: 2.0 * 5.0 * 3f64.sqrt(),
                roughness_gain: 3.0 * 8.0 / r0,
                ..RenderSettings::default()
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.environment.validate()?;
        if self.width == 0 || self.height == 0 || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config("bad image size or field of view".into()));
        }
        if self.n_train == 0 || self.n_dense == 0 {
            return Err(Error::Config("need at least one training view and n_dense >= 1".into()));
        }
        if !(self.min_elevation_deg <= self.max_elevation_deg && self.max_elevation_deg < 90.0) {
            return Err(Error::Config(
                "elevation range must be ordered and below 90 degrees".into(),
            ));
        }
        if !(self.object.gamma > 0.0 && self.env_gamma > 0.0) {
            return Err(Error::Config("gammas must be positive".into()));
        }
        Ok(())
    }

    /// Camera of view `k` (training views first, then test views).
    pub fn camera(&self, k: usize) -> Result<Camera> {
        let mut rng = rng_for(self.seed, k as u64);
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let (lo, hi) = (
            self.min_elevation_deg.to_radians().sin(),
            self.max_elevation_deg.to_radians().sin(),
        );
        // uniform over the spherical zone
        let s = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let c = (1.0 - s * s).sqrt();
        let eye = Vec3::new(c * az.cos(), s, c * az.sin()) * self.camera_distance;
        let pose = look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0))?;
        let f = 0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        Camera::new(
            f,
            f,
            0.5 * self.width as f64,
            0.5 * self.height as f64,
            self.width,
            self.height,
            pose,
        )
    }

    pub fn frame(&self, k: usize) -> Result<Frame> {
        let camera = self.camera(k)?;
        let image = analytic_render(
            &self.environment,
            Some(&self.object),
            &camera,
            self.n_dense,
            &self.render,
            self.env_gamma,
        )?;
        let n = camera.pixel_count();
        let (mut mask, mut depth, mut normal) = (vec![false; n], vec![0.0; n], vec![Vec3::ZERO; n]);
        for j in 0..camera.height {
            for i in 0..camera.width {
                let (o, d) = camera.ray(i, j)?;
                if let Some((t, nrm)) = self.object.hit(o, d) {
                    let k = (j * camera.width + i) as usize;
                    mask[k] = true;
                    depth[k] = t;
                    normal[k] = nrm;
                }
            }
        }
        Ok(Frame {
            name: format!("frame {k}"),
            camera,
            image,
            mask,
            depth,
            normal,
            split: if k < self.n_train { Split::Train } else { Split::Test },
        })
    }
}

/// Renders every view and writes a loadable scene directory.
pub fn generate_synth(cfg: &SynthConfig, out: &Path) -> Result<SceneManifest> {
    cfg.validate()?;
    let total = cfg.n_train + cfg.n_test;
    let mut frames = Vec::with_capacity(total);
    let mut entries = Vec::with_capacity(total);
    for k in 0..total {
        let f = cfg.frame(k)?;
        log::info!("rendered view {}/{total}", k + 1);
        let p = |dir: &str, ext: &str| PathBuf::from(format!("{dir}/{k:03}.{ext}"));
        entries.push(FrameEntry {
            image: p("rgb", "png"),
            mask: p("mask", "png"),
            depth: p("depth", "f32r"),
            normal: p("normal", "f32r"),
            c2w: c2w_flat(&f.camera.c2w),
            split: f.split,
        });
        frames.push(f);
    }
    let cam = &frames[0].camera;
    let manifest = SceneManifest {
        convention: CONVENTION.into(),
        intrinsics: Intrinsics {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        },
        bounds: Bounds {
            center: cfg.object.placement.to_world(cfg.object.sphere.center),
            radius: cfg.object.sphere.radius * cfg.object.placement.scale,
        },
        frames: entries,
        source: Some(serde_json::to_value(cfg)?),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_scene(out, &manifest, &frames)?;
    Ok(manifest)
}
