use crate::error::{Error, Result};
use crate::fields::RadianceSample;
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeOutput {
    pub color: Vec3,
    pub weights: Vec<f64>,
    /// Transmittance left after the last segment.
    pub remainder: f64,
}

impl VolumeOutput {
    pub fn opacity(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Alpha-compositing quadrature over the segments delimited by `bounds`.
pub fn volume_render(samples: &[RadianceSample], bounds: &[f64]) -> Result<VolumeOutput> {
    if bounds.len() != samples.len() + 1 {
        return Err(Error::Shape(format!(
            "{} samples for {} boundaries",
            samples.len(),
            bounds.len()
        )));
    }
    let mut weights = Vec::with_capacity(samples.len());
    let mut color = Vec3::ZERO;
    let mut optical = 0.0_f64;
    for (s, w) in samples.iter().zip(bounds.windows(2)) {
        if !(s.sigma >= 0.0) {
            return Err(Error::invalid(format!("density must be non-negative, got {}", s.sigma)));
        }
        let tau = s.sigma * (w[1] - w[0]);
        let trans = (-optical).exp();
        let weight = trans * -(-tau).exp_m1();
        color += s.color * weight;
        weights.push(weight);
        optical += tau;
    }
    Ok(VolumeOutput {
        color,
        weights,
        remainder: (-optical).exp(),
    })
}

/// Gradient of `d_color · color` w.r.t. every sample's colour and density.
pub fn volume_render_backward(
    samples: &[RadianceSample],
    bounds: &[f64],
    out: &VolumeOutput,
    d_color: Vec3,
) -> Vec<RadianceSample> {
    let n = samples.len();
    let mut grads = vec![RadianceSample::default(); n];
    // suffix = Σ_{k>i} w_k c_k · d_color
    let mut suffix = 0.0;
    let mut optical = Vec::with_capacity(n + 1);
    optical.push(0.0);
    for (s, w) in samples.iter().zip(bounds.windows(2)) {
        optical.push(optical.last().copied().unwrap_or(0.0) + s.sigma * (w[1] - w[0]));
    }
    for i in (0..n).rev() {
        let delta = bounds[i + 1] - bounds[i];
        let ci = samples[i].color.dot(d_color);
        let t_next = (-optical[i + 1]).exp();
        grads[i] = RadianceSample {
            color: d_color * out.weights[i],
            sigma: delta * (t_next * ci - suffix),
        };
        suffix += out.weights[i] * ci;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;
    use rand::Rng;

    fn uniform(n: usize, sigma: f64, c: Vec3) -> (Vec<RadianceSample>, Vec<f64>) {
        let bounds = (0..=n).map(|k| k as f64 / n as f64).collect();
        (vec![RadianceSample { color: c, sigma }; n], bounds)
    }

    #[test]
    fn empty_space() {
        let (s, b) = uniform(16, 0.0, Vec3::ONE);
        let out = volume_render(&s, &b).unwrap();
        assert_eq!(out.color, Vec3::ZERO);
        assert_eq!(out.remainder, 1.0);
    }

    #[test]
    fn opaque_first_segment() {
        let (mut s, b) = uniform(8, 0.0, Vec3::ONE);
        s[0] = RadianceSample {
            color: Vec3::new(0.2, 0.4, 0.6),
            sigma: 1e6,
        };
        let out = volume_render(&s, &b).unwrap();
        assert!((out.color - Vec3::new(0.2, 0.4, 0.6)).norm() < 1e-12);
        assert!(out.remainder < 1e-12);
    }

    #[test]
    fn constant_density_closed_form() {
        let (s, b) = uniform(4096, 1.0, Vec3::ONE);
        let out = volume_render(&s, &b).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!((out.color.x - exact).abs() < 1e-3);
    }

    #[test]
    fn negative_density_rejected() {
        let (mut s, b) = uniform(2, 1.0, Vec3::ONE);
        s[1].sigma = -1.0;
        assert!(matches!(volume_render(&s, &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backward_matches_differences() {
        let mut rng = rng_for(6, 0);
        let n = 6;
        let mut bounds = vec![0.3];
        for _ in 0..n {
            let last = *bounds.last().unwrap();
            bounds.push(last + rng.random_range(0.05..0.4));
        }
        let samples: Vec<RadianceSample> = (0..n)
            .map(|_| RadianceSample {
                color: Vec3::new(rng.random(), rng.random(), rng.random()),
                sigma: rng.random_range(0.0..4.0),
            })
            .collect();
        let dc = Vec3::new(0.7, -0.3, 1.2);
        let out = volume_render(&samples, &bounds).unwrap();
        let g = volume_render_backward(&samples, &bounds, &out, dc);
        let f = |s: &[RadianceSample]| volume_render(s, &bounds).unwrap().color.dot(dc);
        let h = 1e-6;
        for i in 0..n {
            let mut p = samples.clone();
            p[i].sigma += h;
            let mut m = samples.clone();
            m[i].sigma -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[i].sigma).abs() < 1e-8, "sigma {i}: {fd} vs {}", g[i].sigma);
            for c in 0..3 {
                let mut p = samples.clone();
                let mut arr = p[i].color.to_array();
                arr[c] += h;
                p[i].color = Vec3::from_array(arr);
                let fd = (f(&p) - f(&samples)) / h;
                assert!((fd - g[i].color[c]).abs() < 1e-6);
            }
        }
    }
}
