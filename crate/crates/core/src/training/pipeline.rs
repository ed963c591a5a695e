use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    apply_gamma, apply_gamma_grad, gamma_from_raw, gamma_raw_derivative, AmbientField, Material, MaterialNet,
};
use crate::math::Vec3;
use crate::renderer::{background_lobe, backward_level, specular_lobe, trace, Lobe, RenderSettings};
use crate::training::data::{Provenance, TrainBatch, TrainData};
use crate::training::losses::{smoothness_term_grad, smoothness_weight, total_loss, LossParts, LossWeights};
use crate::util::{par_map, rng_for};

/// Everything a forward/backward pass reads.
pub struct Pipeline<'a, A> {
    pub coarse: &'a A,
    pub fine: &'a A,
    pub material: &'a MaterialNet,
    pub params: &'a [f64],
    pub gamma_index: usize,
    pub settings: &'a RenderSettings,
    pub weights: LossWeights,
    /// Seed of the per-ray sampler streams; `None` samples deterministically.
    pub jitter_seed: Option<u64>,
}

/// Loss of a batch per sampling level; `smooth` is counted once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub coarse: LossParts,
    pub fine: LossParts,
    pub smooth: f64,
}

impl BatchLoss {
    pub fn parts(&self) -> LossParts {
        self.coarse
            + self.fine
            + LossParts {
                smooth: self.smooth,
                ..LossParts::default()
            }
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        total_loss(&self.parts(), w)
    }

    fn add(&mut self, o: &BatchLoss) {
        self.coarse = self.coarse + o.coarse;
        self.fine = self.fine + o.fine;
        self.smooth += o.smooth;
    }
}

/// Loss normalisers: the number of image and background rays in the whole batch.
#[derive(Debug, Clone, Copy)]
struct Counts {
    image: f64,
    background: f64,
}

impl<A: AmbientField> Pipeline<'_, A> {
    /// Loss of `batch` and, with `want_grad`, its gradient w.r.t. all
    /// parameters. The batch is split into `chunks` fixed contiguous parts
    /// whose results are reduced pairwise in a fixed order, so the result
    /// does not depend on the thread count. Ray `k` samples with stream
    /// `stream_base + k`.
    pub fn run(
        &self,
        data: &TrainData,
        batch: &TrainBatch,
        chunks: usize,
        sub_batch: usize,
        stream_base: u64,
        want_grad: bool,
    ) -> Result<(BatchLoss, Option<Vec<f64>>)> {
        if chunks == 0 || sub_batch == 0 {
            return Err(Error::invalid("chunks and sub_batch must be positive"));
        }
        let counts = Counts {
            image: batch.count(Provenance::Image) as f64,
            background: batch.count(Provenance::Background) as f64,
        };
        let n = batch.rays.len();
        let per = n.div_ceil(chunks).max(1);
        let parts = par_map(chunks, |c| -> Result<(BatchLoss, Option<Vec<f64>>)> {
            let range = (c * per).min(n)..((c + 1) * per).min(n);
            let mut grads = want_grad.then(|| vec![0.0; self.params.len()]);
            let mut loss = BatchLoss::default();
            let mut start = range.start;
            while start < range.end {
                let end = (start + sub_batch).min(range.end);
                loss.add(&self.sub_batch(data, batch, start..end, counts, stream_base, grads.as_deref_mut())?);
                start = end;
            }
            Ok((loss, grads))
        });
        let mut level: Vec<(BatchLoss, Option<Vec<f64>>)> = parts.into_iter().collect::<Result<_>>()?;
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            let mut it = level.into_iter();
            while let Some((mut la, mut ga)) = it.next() {
                if let Some((lb, gb)) = it.next() {
                    la.add(&lb);
                    if let (Some(a), Some(b)) = (ga.as_mut(), gb) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    }
                }
                next.push((la, ga));
            }
            level = next;
        }
        Ok(level.pop().unwrap_or_default())
    }

    fn sub_batch(
        &self,
        data: &TrainData,
        batch: &TrainBatch,
        range: Range<usize>,
        counts: Counts,
        stream_base: u64,
        mut grads: Option<&mut [f64]>,
    ) -> Result<BatchLoss> {
        let rays = &batch.rays[range.clone()];
        let raw = self.params[self.gamma_index];
        let gamma = gamma_from_raw(raw);
        let w = &self.weights;

        // geometry, surface points and lobes
        let mut surfaces = Vec::new();
        let mut image_ids = Vec::new();
        let mut lobes: Vec<Lobe> = Vec::new();
        let mut lobe_rays = Vec::new();
        let mut bg_lobe = vec![usize::MAX; rays.len()];
        for (k, ray) in rays.iter().enumerate() {
            let (o, d, s) = data.geometry(ray)?;
            match s {
                Some(s) => {
                    image_ids.push(k);
                    surfaces.push(s);
                }
                None => {
                    let r0 = data.frames[ray.frame].camera.r0();
                    bg_lobe[k] = lobes.len();
                    lobes.push(background_lobe(o, d, r0, ray.sigma, self.settings)?);
                    lobe_rays.push(k);
                }
            }
        }
        let xs: Vec<_> = surfaces.iter().map(|s| s.x_s).collect();
        let (mats, spatial, tape) = self.material.eval_with_spatial_grad(self.params, &xs)?;
        let mut spec_lobe = vec![usize::MAX; surfaces.len()];
        for (n, (s, m)) in surfaces.iter().zip(&mats).enumerate() {
            if s.lobe_cos() > 0.0 && m.alpha > 0.0 && m.rho.is_finite() {
                let r0 = data.frames[rays[image_ids[n]].frame].camera.r0();
                spec_lobe[n] = lobes.len();
                lobes.push(specular_lobe(s, m.rho, r0, self.settings)?);
                lobe_rays.push(image_ids[n]);
            }
        }

        let mut rngs: Option<Vec<ChaCha8Rng>> = self.jitter_seed.map(|seed| {
            lobe_rays
                .iter()
                .map(|&k| rng_for(seed, stream_base + (range.start + k) as u64))
                .collect()
        });
        let traced = if lobes.is_empty() {
            None
        } else {
            Some(trace(
                self.coarse,
                self.fine,
                self.params,
                &lobes,
                self.settings,
                rngs.as_deref_mut(),
            )?)
        };

        // losses and output gradients per level
        let mut loss = BatchLoss::default();
        let mut d_mats = vec![Material::zero(); surfaces.len()];
        let mut d_gamma = 0.0;
        let mut d_rho_hat = vec![0.0; lobes.len()];
        let mut levels = vec![(traced.as_ref().map(|t| &t.coarse), self.coarse, true)];
        if self.settings.n_fine > 0 {
            levels.push((traced.as_ref().and_then(|t| t.fine.as_ref()), self.fine, false));
        }
        for (render, field, is_coarse) in levels {
            let colors = render.map(|r| r.colors()).unwrap_or_default();
            let mut parts = LossParts::default();
            let mut d_colors = vec![Vec3::ZERO; lobes.len()];
            for (n, s) in surfaces.iter().enumerate() {
                let ray = &rays[image_ids[n]];
                let m = &mats[n];
                let cos = s.lobe_cos();
                let lobe_c = if spec_lobe[n] == usize::MAX {
                    Vec3::ZERO
                } else {
                    colors[spec_lobe[n]]
                };
                let hdr = m.diffuse + lobe_c * (m.alpha * cos);
                let e = display(hdr, gamma)? - ray.target;
                parts.rec += e.norm_squared() / counts.image;
                if grads.is_some() {
                    let d_pred = e * (2.0 / counts.image);
                    let (dh, dg) = apply_gamma_grad(hdr, gamma);
                    let d_hdr = d_pred.hadamard(dh);
                    d_gamma += d_pred.dot(dg);
                    d_mats[n].diffuse += d_hdr;
                    if spec_lobe[n] != usize::MAX {
                        d_mats[n].alpha += d_hdr.dot(lobe_c) * cos;
                        d_colors[spec_lobe[n]] = d_hdr * (m.alpha * cos);
                    }
                }
            }
            for (k, ray) in rays.iter().enumerate() {
                if ray.provenance != Provenance::Background {
                    continue;
                }
                let hdr = colors[bg_lobe[k]];
                let e = display(hdr, gamma)? - ray.target;
                parts.pre += e.norm_squared() / counts.background;
                if grads.is_some() {
                    let d_pred = e * (2.0 * w.lambda_p / counts.background);
                    let (dh, dg) = apply_gamma_grad(hdr, gamma);
                    d_gamma += d_pred.dot(dg);
                    d_colors[bg_lobe[k]] = d_pred.hadamard(dh);
                }
            }
            if let (Some(g), Some(render)) = (grads.as_deref_mut(), render) {
                let d_rh = backward_level(field, self.params, render, &d_colors, g)?;
                d_rho_hat.iter_mut().zip(d_rh).for_each(|(a, b)| *a += b);
            }
            if is_coarse {
                loss.coarse = parts;
            } else {
                loss.fine = parts;
            }
        }

        // edge-aware smoothness, once per surface point
        let mut d_spatial = Vec::with_capacity(surfaces.len());
        for (n, g) in spatial.iter().enumerate() {
            let wgt = smoothness_weight(rays[image_ids[n]].image_grad);
            loss.smooth += (g.alpha.norm() + g.rho.norm()) * wgt / counts.image;
            d_spatial.push(smoothness_term_grad(g, wgt, w.lambda_s / counts.image));
        }

        if let Some(g) = grads {
            for (n, dm) in d_mats.iter_mut().enumerate() {
                if spec_lobe[n] != usize::MAX {
                    let r0 = data.frames[rays[image_ids[n]].frame].camera.r0();
                    dm.rho += d_rho_hat[spec_lobe[n]] * self.settings.roughness_gain * r0;
                }
            }
            if !surfaces.is_empty() {
                self.material
                    .backward(self.params, &tape, &d_mats, Some(&d_spatial), g)?;
            }
            g[self.gamma_index] += d_gamma * gamma_raw_derivative(raw);
        }
        Ok(loss)
    }
}

/// Gamma-mapped prediction; a non-finite input yields NaN so that the loss
/// reports it instead of failing inside the mapping.
fn display(hdr: Vec3, gamma: f64) -> Result<Vec3> {
    if hdr.is_finite() && gamma.is_finite() {
        apply_gamma(hdr, gamma)
    } else {
        Ok(Vec3::splat(f64::NAN))
    }
}
