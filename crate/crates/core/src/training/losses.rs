use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::MaterialSpatialGrad;
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_s: 1e-4,
            lambda_p: 1e-1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s >= 0.0 && self.lambda_p >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rec: f64,
    pub smooth: f64,
    pub pre: f64,
}

impl std::ops::Add for LossParts {
    type Output = LossParts;
    fn add(self, o: LossParts) -> LossParts {
        LossParts {
            rec: self.rec + o.rec,
            smooth: self.smooth + o.smooth,
            pre: self.pre + o.pre,
        }
    }
}

/// `l_rec + λ_s l_s + λ_p l_pre`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    parts.rec + w.lambda_s * parts.smooth + w.lambda_p * parts.pre
}

fn check_pairs(pred: &[Vec3], target: &[Vec3]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// `Σ ‖pred − target‖² / B`; zero for an empty batch.
pub fn loss_reconstruction(pred: &[Vec3], target: &[Vec3]) -> Result<f64> {
    check_pairs(pred, target)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (*p - *t).norm_squared()).sum();
    Ok(s / pred.len() as f64)
}

/// Gradient of [`loss_reconstruction`] w.r.t. each prediction.
pub fn loss_reconstruction_grad(pred: &[Vec3], target: &[Vec3]) -> Result<Vec<Vec3>> {
    check_pairs(pred, target)?;
    let scale = 2.0 / pred.len().max(1) as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| (*p - *t) * scale).collect())
}

/// The same form over pre-convolved background pixels.
pub fn loss_preconv(pred: &[Vec3], target: &[Vec3]) -> Result<f64> {
    loss_reconstruction(pred, target)
}

/// Edge-aware weight `exp(−‖∇_p I‖)`.
pub fn smoothness_weight(image_grad: f64) -> f64 {
    (-image_grad).exp()
}

/// `(1/|S_I|) Σ (‖∇α‖ + ‖∇ρ‖) · exp(−‖∇_p I‖)`.
pub fn loss_smoothness(grads: &[MaterialSpatialGrad], image_grads: &[f64]) -> Result<f64> {
    if grads.len() != image_grads.len() {
        return Err(Error::Shape("one image gradient per surface point expected".into()));
    }
    if grads.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = grads
        .iter()
        .zip(image_grads)
        .map(|(g, &ig)| (g.alpha.norm() + g.rho.norm()) * smoothness_weight(ig))
        .sum();
    Ok(s / grads.len() as f64)
}

/// Gradient of one term `scale · (‖∇α‖ + ‖∇ρ‖) · w` w.r.t. the spatial gradients.
/// Zero-length gradients get the zero subgradient.
pub fn smoothness_term_grad(g: &MaterialSpatialGrad, weight: f64, scale: f64) -> MaterialSpatialGrad {
    let unit = |v: Vec3| {
        let n = v.norm();
        if n > 0.0 {
            v * (scale * weight / n)
        } else {
            Vec3::ZERO
        }
    };
    MaterialSpatialGrad {
        rho: unit(g.rho),
        alpha: unit(g.alpha),
    }
}

/// `‖∇_p I‖` per pixel: central differences of luminance (one-sided at the
/// border), L2 over the two axes.
pub fn image_gradient_magnitude(lum: &[f64], width: u32, height: u32) -> Result<Vec<f64>> {
    let (w, h) = (width as usize, height as usize);
    if lum.len() != w * h {
        return Err(Error::Shape("luminance size does not match image".into()));
    }
    let at = |i: usize, j: usize| lum[j * w + i];
    // neighbour indices and their spacing along one axis of length n
    let span = |a: usize, n: usize| (a.saturating_sub(1), (a + 1).min(n - 1));
    let mut out = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let (l, r) = span(i, w);
            let (u, d) = span(j, h);
            let gx = if r > l {
                (at(r, j) - at(l, j)) / (r - l) as f64
            } else {
                0.0
            };
            let gy = if d > u {
                (at(i, d) - at(i, u)) / (d - u) as f64
            } else {
                0.0
            };
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(out)
}
