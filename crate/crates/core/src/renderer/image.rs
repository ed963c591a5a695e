use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{apply_gamma, AmbientField, Material};
use crate::image::Image;
use crate::math::{mat3_apply, mat3_transpose, rotation_xyz_degrees, Vec3};
use crate::renderer::camera::Camera;
use crate::renderer::lobe::{background_lobe, composite, specular_lobe, trace, Lobe, RenderSettings, SurfaceSample};
use crate::renderer::volume::VolumeOutput;
use crate::scenes::analytic::{MaterialField, Sphere};
use crate::util::{par_map, rng_for};

/// Object-to-world similarity: `world = translation + scale · R · local`,
/// `R` from XYZ Euler angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub translation: Vec3,
    pub rotation_deg: Vec3,
    pub scale: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Placement {
            translation: Vec3::ZERO,
            rotation_deg: Vec3::ZERO,
            scale: 1.0,
        }
    }
}

impl Placement {
    /// Parses `"tx,ty,tz,rx,ry,rz,scale"`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad transform {s:?}: {e}")))?;
        if v.len() != 7 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("transform needs 7 finite numbers, got {s:?}")));
        }
        if !(v[6] > 0.0) {
            return Err(Error::invalid("transform scale must be positive"));
        }
        Ok(Placement {
            translation: Vec3::new(v[0], v[1], v[2]),
            rotation_deg: Vec3::new(v[3], v[4], v[5]),
            scale: v[6],
        })
    }

    fn rotation(&self) -> [[f64; 3]; 3] {
        rotation_xyz_degrees(self.rotation_deg.x, self.rotation_deg.y, self.rotation_deg.z)
    }

    pub fn to_world(&self, p: Vec3) -> Vec3 {
        self.translation + mat3_apply(&self.rotation(), p) * self.scale
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        mat3_apply(&mat3_transpose(&self.rotation()), p - self.translation) / self.scale
    }

    pub fn normal_to_world(&self, n: Vec3) -> Vec3 {
        mat3_apply(&self.rotation(), n)
    }
}

/// Per-pixel surface lookup: distance along the unit ray and world normal.
pub trait Geometry: Sync {
    fn surface(&self, pixel: (u32, u32), o: Vec3, d: Vec3) -> Option<(f64, Vec3)>;
}

/// Analytic sphere defined in object space and placed in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedSphere {
    pub sphere: Sphere,
    pub placement: Placement,
}

impl Geometry for PlacedSphere {
    fn surface(&self, _pixel: (u32, u32), o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
        let world = Sphere {
            center: self.placement.to_world(self.sphere.center),
            radius: self.sphere.radius * self.placement.scale,
        };
        world.intersect(o, d)
    }
}

pub struct NoGeometry;

impl Geometry for NoGeometry {
    fn surface(&self, _pixel: (u32, u32), _o: Vec3, _d: Vec3) -> Option<(f64, Vec3)> {
        None
    }
}

/// The environment: coarse and fine ambient fields with their parameters.
pub struct EnvView<'a, A> {
    pub coarse: &'a A,
    pub fine: &'a A,
    pub params: &'a [f64],
    pub gamma: f64,
}

/// A decomposed object: geometry, materials and its own learned gamma.
pub struct ObjectView<'a, M, G> {
    pub geometry: &'a G,
    pub placement: Placement,
    pub materials: &'a M,
    pub params: &'a [f64],
    /// Multipliers for `(α, ρ, C_d)`.
    pub material_scale: (f64, f64, f64),
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectMode {
    /// Object pixels are `γ(C_d + C_s)`.
    Plain,
    /// Object pixels are blended with the environment in front of them.
    Occluded,
}

const LOBE_CHUNK: usize = 16;

/// Traces lobes in chunks, returning the final-level output of each.
fn trace_all<A: AmbientField>(
    env: &EnvView<A>,
    lobes: &[Lobe],
    settings: &RenderSettings,
    seeds: Option<(u64, &[u64])>,
) -> Result<Vec<VolumeOutput>> {
    let mut out = Vec::with_capacity(lobes.len());
    for (c, chunk) in lobes.chunks(LOBE_CHUNK).enumerate() {
        let mut rngs: Option<Vec<_>> = seeds.map(|(seed, streams)| {
            streams[c * LOBE_CHUNK..c * LOBE_CHUNK + chunk.len()]
                .iter()
                .map(|&s| rng_for(seed, s))
                .collect()
        });
        let traced = trace(env.coarse, env.fine, env.params, chunk, settings, rngs.as_deref_mut())?;
        out.extend(traced.final_level().outputs.iter().cloned());
    }
    Ok(out)
}

/// Renders a full frame. Pixels without a surface show the environment;
/// with `seed` the samplers are jittered per pixel, otherwise deterministic.
pub fn render_image<A, M, G>(
    cam: &Camera,
    object: Option<&ObjectView<M, G>>,
    env: &EnvView<A>,
    settings: &RenderSettings,
    mode: ObjectMode,
    seed: Option<u64>,
) -> Result<Image>
where
    A: AmbientField,
    M: MaterialField,
    G: Geometry,
{
    settings.validate()?;
    let r0 = cam.r0();
    let rows = par_map(cam.height as usize, |j| -> Result<Vec<Vec3>> {
        let j = j as u32;
        let w = cam.width;
        let mut rays = Vec::with_capacity(w as usize);
        let mut hits = Vec::with_capacity(w as usize);
        for i in 0..w {
            let (o, d) = cam.ray(i, j)?;
            rays.push((o, d));
            hits.push(object.and_then(|ob| ob.geometry.surface((i, j), o, d)));
        }
        let pixel_id = |i: u32| (j as u64) * w as u64 + i as u64;

        // environment behind pixels that miss the object
        let miss: Vec<u32> = (0..w).filter(|&i| hits[i as usize].is_none()).collect();
        let env_lobes = miss
            .iter()
            .map(|&i| background_lobe(rays[i as usize].0, rays[i as usize].1, r0, 0.0, settings))
            .collect::<Result<Vec<_>>>()?;
        let streams: Vec<u64> = miss.iter().map(|&i| 3 * pixel_id(i)).collect();
        let env_out = trace_all(env, &env_lobes, settings, seed.map(|s| (s, streams.as_slice())))?;

        let mut row = vec![Vec3::ZERO; w as usize];
        for (k, &i) in miss.iter().enumerate() {
            row[i as usize] = apply_gamma(env_out[k].color, env.gamma)?;
        }
        let Some(ob) = object else {
            return Ok(row);
        };

        // object pixels
        let hit_idx: Vec<u32> = (0..w).filter(|&i| hits[i as usize].is_some()).collect();
        let samples: Vec<SurfaceSample> = hit_idx
            .iter()
            .map(|&i| {
                let (o, d) = rays[i as usize];
                let (depth, n) = hits[i as usize].expect("hit");
                SurfaceSample::new(o, d, depth, n)
            })
            .collect();
        let local: Vec<Vec3> = samples.iter().map(|s| ob.placement.to_local(s.x_s)).collect();
        let (sa, sr, sc) = ob.material_scale;
        let mats: Vec<Material> = ob
            .materials
            .materials(ob.params, &local)?
            .iter()
            .map(|m| m.scaled(sa, sr, sc))
            .collect();
        let mut spec_ids = Vec::new();
        let mut spec_lobes = Vec::new();
        for (k, (s, m)) in samples.iter().zip(&mats).enumerate() {
            if m.alpha > 0.0 && s.lobe_cos() > 0.0 {
                spec_ids.push(k);
                spec_lobes.push(specular_lobe(s, m.rho, r0, settings)?);
            }
        }
        let streams: Vec<u64> = spec_ids.iter().map(|&k| 3 * pixel_id(hit_idx[k]) + 1).collect();
        let spec_out = trace_all(env, &spec_lobes, settings, seed.map(|s| (s, streams.as_slice())))?;
        let mut spec = vec![Vec3::ZERO; samples.len()];
        for (n, &k) in spec_ids.iter().enumerate() {
            spec[k] = spec_out[n].color * (mats[k].alpha * samples[k].lobe_cos());
        }
        let mut obj_colors = Vec::with_capacity(samples.len());
        for (k, m) in mats.iter().enumerate() {
            obj_colors.push(apply_gamma(m.diffuse + spec[k], ob.gamma)?);
        }

        if mode == ObjectMode::Occluded {
            let mut front_ids = Vec::new();
            let mut front_lobes = Vec::new();
            for (k, s) in samples.iter().enumerate() {
                let t_far = 0.99 * s.depth;
                if t_far > settings.t_near {
                    front_ids.push(k);
                    let mut l = background_lobe(s.x_s - s.d * s.depth, s.d, r0, 0.0, settings)?;
                    l.params.t_far = t_far;
                    front_lobes.push(l);
                }
            }
            let streams: Vec<u64> = front_ids.iter().map(|&k| 3 * pixel_id(hit_idx[k]) + 2).collect();
            let front = trace_all(env, &front_lobes, settings, seed.map(|s| (s, streams.as_slice())))?;
            for (n, &k) in front_ids.iter().enumerate() {
                let w_star = front[n].opacity();
                if w_star > 0.0 {
                    let c_star = apply_gamma(front[n].color / w_star, env.gamma)?;
                    obj_colors[k] = composite(c_star, w_star, obj_colors[k]);
                }
            }
        }
        for (k, &i) in hit_idx.iter().enumerate() {
            row[i as usize] = obj_colors[k];
        }
        Ok(row)
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
