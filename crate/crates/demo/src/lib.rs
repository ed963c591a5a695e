//! WebAssembly bindings for the static page in `www/`.
//!
//! Everything renders the analytic scenes, so no trained model is needed.
//! The plain functions are what the tests call; the `js_*` wrappers only
//! translate errors.

use neai::encoding::level_attenuation;
use neai::fields::Material;
use neai::image::Image;
use neai::math::Vec3;
use neai::preconv::build_levels;
use neai::renderer::{background_lobe, look_at, Camera};
use neai::scenes::{analytic_render, dense_lobe_render, preset, AnalyticMaterial, AnalyticObject, SynthConfig};
use neai::Result;
use wasm_bindgen::prelude::*;

const N_DENSE: usize = 128;
const MAX_SIZE: u32 = 256;

/// An RGBA raster ready for `ImageData`, with a scalar summary.
#[wasm_bindgen]
pub struct Frame {
    rgba: Vec<u8>,
    pub width: u32,
    pub height: u32,
    /// Mean absolute difference between the first two panels, where that applies.
    pub mae: f64,
}

#[wasm_bindgen]
impl Frame {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

impl Frame {
    fn from_images(images: &[&Image], mae: f64) -> Frame {
        let (w, h) = (images[0].width, images[0].height);
        let mut rgba = Vec::with_capacity(4 * (w * h) as usize * images.len());
        for j in 0..h {
            for img in images {
                for i in 0..w {
                    let c = img.get(i, j).to_array();
                    rgba.extend(c.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
                    rgba.push(255);
                }
            }
        }
        Frame {
            rgba,
            width: w * images.len() as u32,
            height: h,
            mae,
        }
    }
}

fn check_size(size: u32) -> Result<()> {
    if !(8..=MAX_SIZE).contains(&size) {
        return Err(neai::Error::InvalidArgument(format!(
            "size must lie in 8..={MAX_SIZE}, got {size}"
        )));
    }
    Ok(())
}

fn orbit_camera(size: u32, azimuth_deg: f64, elevation_deg: f64) -> Result<Camera> {
    let cfg = SynthConfig::default();
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = Vec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin()) * cfg.camera_distance;
    let pose = look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0))?;
    let f = 0.5 * size as f64 / (0.5 * cfg.fov_deg.to_radians()).tan();
    let c = 0.5 * size as f64;
    Camera::new(f, f, c, c, size, size, pose)
}

/// The synthetic sphere with one uniform material in an analytic environment.
pub fn sphere(env: &str, rho: f64, diffuse: f64, azimuth_deg: f64, size: u32) -> Result<Frame> {
    check_size(size)?;
    if !(0.0..=1.0).contains(&rho) || !(0.0..=1.0).contains(&diffuse) {
        return Err(neai::Error::InvalidArgument(
            "roughness and diffuse must lie in [0, 1]".into(),
        ));
    }
    let cfg = SynthConfig::default();
    let scene = preset(env)?;
    let object = AnalyticObject {
        material: AnalyticMaterial::Uniform {
            material: Material {
                rho,
                diffuse: Vec3::new(diffuse, diffuse, diffuse),
                alpha: 1.0,
            },
        },
        ..cfg.object
    };
    let cam = orbit_camera(size, azimuth_deg, 25.0)?;
    let img = analytic_render(&scene, Some(&object), &cam, N_DENSE, &cfg.render, cfg.env_gamma)?;
    Ok(Frame::from_images(&[&img], 0.0))
}

/// Weight of each lobe-encoding frequency level for a lobe of the given variance.
pub fn attenuation(variance: f64, levels: usize) -> Result<Vec<f64>> {
    if !(variance >= 0.0 && variance.is_finite()) || levels == 0 || levels > 16 {
        return Err(neai::Error::InvalidArgument(
            "need variance >= 0 and 1..=16 levels".into(),
        ));
    }
    Ok(level_attenuation(variance, levels))
}

/// Blurred sharp background next to the widened-lobe render it stands in for,
/// plus their difference amplified tenfold.
pub fn preconv(env: &str, sigma: f64, size: u32) -> Result<Frame> {
    check_size(size)?;
    if !(0.0..=16.0).contains(&sigma) {
        return Err(neai::Error::InvalidArgument("sigma must lie in [0, 16]".into()));
    }
    let cfg = SynthConfig::default();
    let scene = preset(env)?;
    let cam = orbit_camera(size, 30.0, 20.0)?;
    let sharp = analytic_render(&scene, None, &cam, N_DENSE, &cfg.render, 1.0)?;
    let sigmas: &[f64] = if sigma > 0.0 { &[0.0, sigma] } else { &[0.0] };
    let blurred = build_levels(&sharp, sigmas, &vec![false; cam.pixel_count()])?
        .pop()
        .expect("one level per sigma")
        .image;
    let r0 = cam.r0();
    let mut lobe = Image::new(size, size);
    for j in 0..size {
        for i in 0..size {
            let (o, d) = cam.ray(i, j)?;
            let l = background_lobe(o, d, r0, sigma, &cfg.render)?;
            lobe.set(i, j, dense_lobe_render(&scene, &l, N_DENSE)?.0.map(|v| v.min(1.0)));
        }
    }
    let mut diff = Image::new(size, size);
    let mut mae = 0.0;
    for k in 0..diff.data.len() {
        let e = (blurred.data[k] - lobe.data[k]).map(f64::abs);
        mae += (e.x + e.y + e.z) / 3.0;
        diff.data[k] = e * 10.0;
    }
    Ok(Frame::from_images(
        &[&blurred, &lobe, &diff],
        mae / diff.data.len() as f64,
    ))
}

fn js(e: neai::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = renderSphere)]
pub fn js_sphere(
    env: &str,
    rho: f64,
    diffuse: f64,
    azimuth_deg: f64,
    size: u32,
) -> std::result::Result<Frame, JsError> {
    sphere(env, rho, diffuse, azimuth_deg, size).map_err(js)
}

#[wasm_bindgen(js_name = levelAttenuation)]
pub fn js_attenuation(variance: f64, levels: usize) -> std::result::Result<Vec<f64>, JsError> {
    attenuation(variance, levels).map_err(js)
}

#[wasm_bindgen(js_name = preconvCompare)]
pub fn js_preconv(env: &str, sigma: f64, size: u32) -> std::result::Result<Frame, JsError> {
    preconv(env, sigma, size).map_err(js)
}
