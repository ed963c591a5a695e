use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{apply_gamma, AmbientField, Material, RadianceSample};
use crate::math::{frustum_moments, lift_gaussian, radial_factor, LobeGaussian, LobeParams, Vec3};
use crate::renderer::sampling::{sample_coarse, sample_fine, SegmentSet};
use crate::renderer::volume::{volume_render, volume_render_backward, VolumeOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub t_near: f64,
    pub t_far: f64,
    /// `false` collapses every lobe to a thin ray (plain positional encoding).
    pub use_ile: bool,
    /// Object lobes use `ρ̂ = ρ · roughness_gain · r0`; 1 is the literal scale.
    pub roughness_gain: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            n_coarse: 128,
            n_fine: 128,
            t_near: 1e-3,
            t_far: 8.0,
            use_ile: true,
            roughness_gain: 1.0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_coarse == 0 {
            return Err(Error::Config("n_coarse must be positive".into()));
        }
        if !(self.t_near >= 0.0 && self.t_near < self.t_far && self.t_far.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 <= t_near < t_far (got {}, {})",
                self.t_near, self.t_far
            )));
        }
        if !(self.roughness_gain >= 0.0) {
            return Err(Error::Config("roughness_gain must be non-negative".into()));
        }
        Ok(())
    }
}

/// One cone: apex, unit axis and shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lobe {
    pub origin: Vec3,
    pub dir: Vec3,
    pub params: LobeParams,
}

/// A shaded surface point seen along the unit ray `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub x_s: Vec3,
    pub n: Vec3,
    pub d: Vec3,
    pub l_r: Vec3,
    pub depth: f64,
}

impl SurfaceSample {
    /// Degenerate normals are replaced by `-d`.
    pub fn new(origin: Vec3, d: Vec3, depth: f64, normal: Vec3) -> Self {
        let n = normal.normalized().unwrap_or(-d);
        let l_r = d - n * (2.0 * d.dot(n));
        SurfaceSample {
            x_s: origin + d * depth,
            n,
            d,
            l_r: l_r.normalized().unwrap_or(-d),
            depth,
        }
    }

    /// Foreshortening `max(l_r·n, 0)`; zero for back-facing configurations.
    pub fn lobe_cos(&self) -> f64 {
        if self.d.dot(self.n) >= 0.0 {
            0.0
        } else {
            self.l_r.dot(self.n).max(0.0)
        }
    }
}

/// Object lobe for a surface sample with roughness `rho`.
pub fn specular_lobe(s: &SurfaceSample, rho: f64, r0: f64, settings: &RenderSettings) -> Result<Lobe> {
    Ok(Lobe {
        origin: s.x_s,
        dir: s.l_r,
        params: LobeParams::new(rho * settings.roughness_gain * r0, r0, settings.t_near, settings.t_far)?,
    })
}

/// Camera lobe supervising blur level `sigma_blur` (pixels): `ρ̂ = 3σ`, `r̂ = r0`.
pub fn background_lobe(o: Vec3, d: Vec3, r0: f64, sigma_blur: f64, settings: &RenderSettings) -> Result<Lobe> {
    if !(sigma_blur >= 0.0) {
        return Err(Error::invalid(format!("blur sigma must be >= 0, got {sigma_blur}")));
    }
    Ok(Lobe {
        origin: o,
        dir: d,
        params: LobeParams::new(3.0 * sigma_blur, r0, settings.t_near, settings.t_far)?,
    })
}

/// Renders of many lobes at one sampling level, with what backward needs.
pub struct LevelRender<T> {
    pub outputs: Vec<VolumeOutput>,
    pub segments: Vec<SegmentSet>,
    lobes: Vec<Lobe>,
    samples: Vec<RadianceSample>,
    offsets: Vec<usize>,
    use_ile: bool,
    tape: T,
}

impl<T> LevelRender<T> {
    pub fn colors(&self) -> Vec<Vec3> {
        self.outputs.iter().map(|o| o.color).collect()
    }
}

fn lobe_gaussians(lobe: &Lobe, segs: &SegmentSet, use_ile: bool, out: &mut Vec<LobeGaussian>) -> Result<()> {
    for (t0, t1) in segs.segments() {
        let m = frustum_moments(t0, t1, lobe.params.rho_hat, lobe.params.r_hat)?;
        let g = lift_gaussian(lobe.origin, lobe.dir, &m);
        out.push(if use_ile { g } else { LobeGaussian::point(g.mean) });
    }
    Ok(())
}

/// Evaluates `field` on every segment of every lobe (one batched call) and
/// volume-renders each lobe.
pub fn render_level<A: AmbientField>(
    field: &A,
    params: &[f64],
    lobes: &[Lobe],
    segments: Vec<SegmentSet>,
    use_ile: bool,
) -> Result<LevelRender<A::Tape>> {
    if lobes.len() != segments.len() {
        return Err(Error::Shape("one segment set per lobe expected".into()));
    }
    let total: usize = segments.iter().map(SegmentSet::len).sum();
    let mut gaussians = Vec::with_capacity(total);
    let mut dirs = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(lobes.len() + 1);
    offsets.push(0);
    for (lobe, segs) in lobes.iter().zip(&segments) {
        lobe_gaussians(lobe, segs, use_ile, &mut gaussians)?;
        dirs.extend(std::iter::repeat_n(lobe.dir, segs.len()));
        offsets.push(gaussians.len());
    }
    let (samples, tape) = field.eval(params, &gaussians, &dirs)?;
    let outputs = segments
        .iter()
        .enumerate()
        .map(|(k, segs)| volume_render(&samples[offsets[k]..offsets[k + 1]], &segs.bounds))
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelRender {
        outputs,
        segments,
        lobes: lobes.to_vec(),
        samples,
        offsets,
        use_ile,
        tape,
    })
}

/// Backpropagates `d_colors` (one per lobe). Parameter gradients go into
/// `grads`; the gradient w.r.t. each lobe's `ρ̂` is returned.
pub fn backward_level<A: AmbientField>(
    field: &A,
    params: &[f64],
    r: &LevelRender<A::Tape>,
    d_colors: &[Vec3],
    grads: &mut [f64],
) -> Result<Vec<f64>> {
    if d_colors.len() != r.lobes.len() {
        return Err(Error::Shape("one colour gradient per lobe expected".into()));
    }
    let mut d_samples = Vec::with_capacity(r.samples.len());
    for (k, segs) in r.segments.iter().enumerate() {
        let s = &r.samples[r.offsets[k]..r.offsets[k + 1]];
        d_samples.extend(volume_render_backward(s, &segs.bounds, &r.outputs[k], d_colors[k]));
    }
    let d_cov = field.backward(params, &r.tape, &d_samples, grads)?;
    Ok(r.lobes
        .iter()
        .zip(&r.segments)
        .enumerate()
        .map(|(k, (lobe, segs))| {
            if !r.use_ile || lobe.params.rho_hat == 0.0 && lobe.params.r_hat == 0.0 {
                return 0.0;
            }
            let perp = Vec3::ONE - lobe.dir.hadamard(lobe.dir);
            let r_hat2 = lobe.params.r_hat * lobe.params.r_hat;
            segs.segments()
                .zip(&d_cov[r.offsets[k]..r.offsets[k + 1]])
                .map(|((t0, t1), dc)| dc.dot(perp) * 2.0 * lobe.params.rho_hat * r_hat2 * radial_factor(t0, t1))
                .sum()
        })
        .collect())
}

/// Coarse and fine renders of a batch of lobes.
pub struct Traced<T> {
    pub coarse: LevelRender<T>,
    pub fine: Option<LevelRender<T>>,
}

impl<T> Traced<T> {
    /// Colour of the last level rendered for each lobe.
    pub fn colors(&self) -> Vec<Vec3> {
        self.fine.as_ref().unwrap_or(&self.coarse).colors()
    }

    pub fn final_level(&self) -> &LevelRender<T> {
        self.fine.as_ref().unwrap_or(&self.coarse)
    }
}

/// Two-pass hierarchical trace. With `rngs` (one per lobe) coarse nodes are
/// jittered and fine nodes drawn randomly; otherwise both are deterministic.
pub fn trace<A: AmbientField>(
    coarse: &A,
    fine: &A,
    params: &[f64],
    lobes: &[Lobe],
    settings: &RenderSettings,
    mut rngs: Option<&mut [ChaCha8Rng]>,
) -> Result<Traced<A::Tape>> {
    if let Some(r) = rngs.as_deref() {
        if r.len() != lobes.len() {
            return Err(Error::Shape("one rng per lobe expected".into()));
        }
    }
    let coarse_segs = lobes
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let rng = rngs.as_deref_mut().map(|r| &mut r[k]);
            sample_coarse(l.params.t_near, l.params.t_far, settings.n_coarse, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let coarse_r = render_level(coarse, params, lobes, coarse_segs, settings.use_ile)?;
    if settings.n_fine == 0 {
        return Ok(Traced {
            coarse: coarse_r,
            fine: None,
        });
    }
    let fine_segs = coarse_r
        .segments
        .iter()
        .zip(&coarse_r.outputs)
        .enumerate()
        .map(|(k, (segs, out))| {
            let rng = rngs.as_deref_mut().map(|r| &mut r[k]);
            sample_fine(&out.weights, segs, settings.n_fine, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let fine_r = render_level(fine, params, lobes, fine_segs, settings.use_ile)?;
    Ok(Traced {
        coarse: coarse_r,
        fine: Some(fine_r),
    })
}

/// Specular colour `α · max(l_r·n, 0) · C_lobe` of one surface sample.
#[allow(clippy::too_many_arguments)]
pub fn render_specular<A: AmbientField>(
    s: &SurfaceSample,
    m: &Material,
    coarse: &A,
    fine: &A,
    params: &[f64],
    r0: f64,
    settings: &RenderSettings,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec3> {
    let cos = s.lobe_cos();
    if m.alpha == 0.0 || cos == 0.0 {
        return Ok(Vec3::ZERO);
    }
    let lobe = specular_lobe(s, m.rho, r0, settings)?;
    let traced = trace(coarse, fine, params, &[lobe], settings, rng.map(std::slice::from_mut))?;
    Ok(traced.colors()[0] * (m.alpha * cos))
}

/// `γ(C_d + C_s)` for one surface sample.
#[allow(clippy::too_many_arguments)]
pub fn render_object_pixel<A: AmbientField>(
    s: &SurfaceSample,
    m: &Material,
    coarse: &A,
    fine: &A,
    params: &[f64],
    gamma: f64,
    r0: f64,
    settings: &RenderSettings,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec3> {
    let spec = render_specular(s, m, coarse, fine, params, r0, settings, rng)?;
    apply_gamma(m.diffuse + spec, gamma)
}

/// Environment colour and opacity along a camera ray: `(Σ w c, Σ w)`.
#[allow(clippy::too_many_arguments)]
pub fn render_environment<A: AmbientField>(
    o: Vec3,
    d: Vec3,
    r0: f64,
    sigma_blur: f64,
    coarse: &A,
    fine: &A,
    params: &[f64],
    settings: &RenderSettings,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec3, f64)> {
    let lobe = background_lobe(o, d, r0, sigma_blur, settings)?;
    let traced = trace(coarse, fine, params, &[lobe], settings, rng.map(std::slice::from_mut))?;
    let out = &traced.final_level().outputs[0];
    Ok((out.color, out.opacity()))
}

/// Background pixel `γ(C)` of a camera lobe with radius `3σ r0`, unit tint
/// and no diffuse term.
#[allow(clippy::too_many_arguments)]
pub fn render_background_pixel<A: AmbientField>(
    o: Vec3,
    d: Vec3,
    r0: f64,
    sigma_blur: f64,
    coarse: &A,
    fine: &A,
    params: &[f64],
    gamma: f64,
    settings: &RenderSettings,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec3> {
    let (c, _) = render_environment(o, d, r0, sigma_blur, coarse, fine, params, settings, rng)?;
    apply_gamma(c, gamma)
}

/// Occlusion-aware blend `C*·w* + C_obj·(1 − w*)`.
pub fn composite(env_color: Vec3, env_opacity: f64, object: Vec3) -> Vec3 {
    env_color * env_opacity + object * (1.0 - env_opacity)
}

/// Environment colour `C*` (un-premultiplied, gamma applied) and opacity
/// `w*` in front of a surface at `depth`, rendered up to `0.99·depth`.
#[allow(clippy::too_many_arguments)]
pub fn environment_in_front<A: AmbientField>(
    o: Vec3,
    d: Vec3,
    depth: f64,
    r0: f64,
    coarse: &A,
    fine: &A,
    params: &[f64],
    gamma: f64,
    settings: &RenderSettings,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec3, f64)> {
    let t_far = 0.99 * depth;
    if t_far <= settings.t_near {
        return Ok((Vec3::ZERO, 0.0));
    }
    let clipped = RenderSettings { t_far, ..*settings };
    let (c, w) = render_environment(o, d, r0, 0.0, coarse, fine, params, &clipped, rng)?;
    if w <= 0.0 {
        return Ok((Vec3::ZERO, 0.0));
    }
    Ok((apply_gamma(c / w, gamma)?, w))
}
