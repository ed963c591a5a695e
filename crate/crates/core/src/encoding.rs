//! Positional encoding and integrated lobe encoding (ILE).
//!
//! Feature layout follows the matrix form `[sin(P x); cos(P x)]` with
//! `P = [I, 2I, …, 2^{L-1} I]ᵀ`: a sine block of `3L` values followed by a
//! cosine block of `3L` values, where entry `3ℓ + a` holds frequency `2^ℓ`
//! on axis `a`. Checkpoints depend on this layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{frustum_moments, lift_gaussian, LobeGaussian, LobeParams, Vec3};

/// Largest supported number of frequency levels.
pub const MAX_LEVELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Frequency levels for lobe positions.
    pub num_levels: usize,
    /// Plain positional-encoding levels for the incoming direction.
    pub direction_levels: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            num_levels: MAX_LEVELS,
            direction_levels: 4,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        check_levels(self.num_levels)?;
        if self.direction_levels > MAX_LEVELS {
            return Err(Error::invalid(format!(
                "direction_levels must be <= {MAX_LEVELS}, got {}",
                self.direction_levels
            )));
        }
        Ok(())
    }

    pub fn position_width(&self) -> usize {
        feature_width(self.num_levels)
    }

    pub fn direction_width(&self) -> usize {
        feature_width(self.direction_levels)
    }
}

pub const fn feature_width(levels: usize) -> usize {
    6 * levels
}

fn check_levels(levels: usize) -> Result<()> {
    if levels == 0 || levels > MAX_LEVELS {
        return Err(Error::invalid(format!(
            "number of levels must be in 1..={MAX_LEVELS}, got {levels}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn levels(&self) -> usize {
        self.0.len() / 6
    }

    pub fn sin_block(&self) -> &[f64] {
        &self.0[..self.0.len() / 2]
    }

    pub fn cos_block(&self) -> &[f64] {
        &self.0[self.0.len() / 2..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
fn scaled(v: f64, level: usize) -> f64 {
    // exact power-of-two scaling
    v * (1u64 << level) as f64
}

/// Writes the encoding of a Gaussian into `out` (length `6L`). With zero
/// covariance this is bitwise identical to plain positional encoding.
pub fn ile_into(g: &LobeGaussian, levels: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), feature_width(levels));
    let half = 3 * levels;
    let mean = g.mean.to_array();
    let cov = g.cov_diag.to_array();
    for l in 0..levels {
        let four_l = scaled(scaled(1.0, l), l);
        for a in 0..3 {
            let (s, c) = scaled(mean[a], l).sin_cos();
            let atten = (-0.5 * four_l * cov[a]).exp();
            out[3 * l + a] = s * atten;
            out[half + 3 * l + a] = c * atten;
        }
    }
}

/// `[sin(2^ℓ x), cos(2^ℓ x)]` for `ℓ = 0..L-1`.
pub fn positional_encode(x: Vec3, levels: usize) -> Result<FeatureVector> {
    check_levels(levels)?;
    let mut out = vec![0.0; feature_width(levels)];
    ile_into(&LobeGaussian::point(x), levels, &mut out);
    Ok(FeatureVector(out))
}

/// Expected positional encoding under `N(mean, diag(cov_diag))`.
pub fn ile(g: &LobeGaussian, levels: usize) -> Result<FeatureVector> {
    check_levels(levels)?;
    if !(g.cov_diag.min_component() >= 0.0) {
        return Err(Error::invalid(format!(
            "covariance diagonal must be non-negative, got {:?}",
            g.cov_diag
        )));
    }
    let mut out = vec![0.0; feature_width(levels)];
    ile_into(g, levels, &mut out);
    Ok(FeatureVector(out))
}

/// Encodes one segment `[t0, t1]` of the lobe with apex `x_s` and axis `l_r`.
pub fn ile_from_lobe(
    x_s: Vec3,
    l_r: Vec3,
    p: &LobeParams,
    segment: (f64, f64),
    levels: usize,
) -> Result<FeatureVector> {
    p.validate()?;
    let m = frustum_moments(segment.0, segment.1, p.rho_hat, p.r_hat)?;
    ile(&lift_gaussian(x_s, l_r, &m), levels)
}

/// Gradient of a scalar w.r.t. the covariance diagonal given its gradient
/// w.r.t. the encoded features `feat` (as produced by [`ile_into`]).
pub fn ile_cov_grad(feat: &[f64], d_feat: &[f64], levels: usize) -> Vec3 {
    let half = 3 * levels;
    let mut g = [0.0; 3];
    for l in 0..levels {
        let four_l = scaled(scaled(1.0, l), l);
        for (a, ga) in g.iter_mut().enumerate() {
            let i = 3 * l + a;
            let j = half + i;
            *ga += -0.5 * four_l * (feat[i] * d_feat[i] + feat[j] * d_feat[j]);
        }
    }
    Vec3::from_array(g)
}

/// Derivative of `PE(x)` w.r.t. `x[axis]`, same layout as the encoding.
pub fn positional_encode_tangent(x: Vec3, levels: usize, axis: usize, out: &mut [f64]) {
    let half = 3 * levels;
    out.iter_mut().for_each(|v| *v = 0.0);
    for l in 0..levels {
        let w = scaled(1.0, l);
        let (s, c) = scaled(x[axis], l).sin_cos();
        out[3 * l + axis] = w * c;
        out[half + 3 * l + axis] = -w * s;
    }
}

/// Per-level attenuation `exp(-½ 4^ℓ v)` for variance `v`.
pub fn level_attenuation(variance: f64, levels: usize) -> Vec<f64> {
    (0..levels)
        .map(|l| (-0.5 * scaled(scaled(1.0, l), l) * variance).exp())
        .collect()
}

/// Lobe encoding of the reference case `x_s = 0`, `l_r = +z`, segment `[1, 2]`,
/// `ρ̂ = 0.3`, `r̂ = 0.01`, `L = 4`, estimated by the sampling oracle.
#[cfg(test)]
#[rustfmt::skip]
pub(crate) const GOLDEN_LOBE: [f64; 24] = [
    -0.000001, 0.000001, 0.962675, -0.000001, 0.000001, -0.073091,
    -0.000002, 0.000003, 0.144980, -0.000004, 0.000005, 0.174597,
    0.999995, 0.999995, -0.036238, 0.999986, 0.999986, -0.855997,
    0.999950, 0.999950, 0.501212, 0.999807, 0.999806, -0.135959,
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn origin_encoding() {
        let f = positional_encode(Vec3::ZERO, 2).unwrap();
        assert!(f.sin_block().iter().all(|&v| v == 0.0));
        assert!(f.cos_block().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quarter_period() {
        let f = positional_encode(Vec3::new(FRAC_PI_2, 0.0, 0.0), 1).unwrap();
        assert_abs_diff_eq!(f.sin_block()[0], 1.0, epsilon = 1e-15);
        assert_eq!(&f.sin_block()[1..], &[0.0, 0.0]);
        assert_abs_diff_eq!(f.cos_block()[0], 0.0, epsilon = 1e-15);
        assert_eq!(&f.cos_block()[1..], &[1.0, 1.0]);
    }

    #[test]
    fn level_bounds() {
        assert!(positional_encode(Vec3::ZERO, 0).is_err());
        assert!(positional_encode(Vec3::ZERO, 17).is_err());
        assert!(positional_encode(Vec3::ZERO, 16).is_ok());
    }

    #[test]
    fn negative_variance_rejected() {
        let g = LobeGaussian {
            mean: Vec3::ZERO,
            cov_diag: Vec3::new(0.1, -1e-9, 0.0),
        };
        assert!(matches!(ile(&g, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn huge_variance_kills_features() {
        let g = LobeGaussian {
            mean: Vec3::new(0.3, 0.2, 0.1),
            cov_diag: Vec3::splat(1e6),
        };
        let f = ile(&g, 4).unwrap();
        assert!(f.0.iter().all(|v| v.abs() < 1e-100));
    }

    #[test]
    fn thin_ray_only_attenuates_along_axis() {
        let p = LobeParams::new(0.0, 0.01, 0.0, 10.0).unwrap();
        let l_r = Vec3::new(0.0, 0.0, 1.0);
        let f = ile_from_lobe(Vec3::ZERO, l_r, &p, (1.0, 2.0), 4).unwrap();
        let m = frustum_moments(1.0, 2.0, 0.0, 0.01).unwrap();
        // x and y axes see no variance; sin(0)=0 and cos(0)=1 exactly
        for l in 0..4 {
            assert_eq!(f.cos_block()[3 * l], 1.0);
            assert_eq!(f.cos_block()[3 * l + 1], 1.0);
            let expect = (scaled(m.mu_t, l)).cos() * (-0.5 * 4f64.powi(l as i32) * m.var_t).exp();
            assert_abs_diff_eq!(f.cos_block()[3 * l + 2], expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn wider_lobes_never_increase_feature_magnitude() {
        let x_s = Vec3::new(0.2, -0.4, 0.1);
        let l_r = Vec3::new(1.0, 2.0, 2.0) / 3.0;
        let mut prev: Option<FeatureVector> = None;
        for k in 0..=10 {
            let rho_hat = k as f64 * 0.1;
            let p = LobeParams::new(rho_hat, 0.05, 0.0, 10.0).unwrap();
            let f = ile_from_lobe(x_s, l_r, &p, (1.5, 1.8), 8).unwrap();
            if let Some(prev) = &prev {
                for (a, b) in f.0.iter().zip(prev.0.iter()) {
                    assert!(a.abs() <= b.abs());
                }
            }
            prev = Some(f);
        }
    }

    #[test]
    fn golden_lobe_vector() {
        // Frozen from `oracle::mc_lobe_encoding` (4e6 samples, seed 11),
        // standard errors <= 3.7e-4. The segment is a full unit long, far
        // wider than a render sample, so the Gaussian fit is loose here:
        // measured relative error 0.089, almost all of it at level 3 along z.
        let p = LobeParams::new(0.3, 0.01, 0.0, 10.0).unwrap();
        let f = ile_from_lobe(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), &p, (1.0, 2.0), 4).unwrap();
        let golden: [f64; 24] = super::GOLDEN_LOBE;
        let diff: f64 =
            f.0.iter()
                .zip(golden.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        let norm: f64 = golden.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(diff / norm < 0.10, "relative error {}", diff / norm);
        // the transverse axes carry no mean offset and almost no variance
        for l in 0..4 {
            assert_abs_diff_eq!(f.cos_block()[3 * l], golden[12 + 3 * l], epsilon = 2e-3);
            assert_abs_diff_eq!(f.sin_block()[3 * l], golden[3 * l], epsilon = 2e-3);
        }
    }

    #[test]
    fn gaussian_expectation_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let levels = 8;
        let g = LobeGaussian {
            mean: Vec3::new(0.7, -1.3, 2.1),
            cov_diag: Vec3::new(0.002, 0.0005, 0.01),
        };
        let n = 1_000_000;
        let mut sum = vec![0.0; feature_width(levels)];
        let mut sum_sq = vec![0.0; feature_width(levels)];
        let mut buf = vec![0.0; feature_width(levels)];
        let sd = g.cov_diag.map(f64::sqrt);
        for _ in 0..n {
            let z: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let x = g.mean + Vec3::new(z[0] * sd.x, z[1] * sd.y, z[2] * sd.z);
            // direct sin/cos, independent of the encoder
            for l in 0..levels {
                let w = 2f64.powi(l as i32);
                for a in 0..3 {
                    buf[3 * l + a] = (w * x[a]).sin();
                    buf[3 * levels + 3 * l + a] = (w * x[a]).cos();
                }
            }
            for i in 0..buf.len() {
                sum[i] += buf[i];
                sum_sq[i] += buf[i] * buf[i];
            }
        }
        let f = ile(&g, levels).unwrap();
        let mut worst = 0.0f64;
        for i in 0..buf.len() {
            let mean = sum[i] / n as f64;
            let var = (sum_sq[i] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt().max(1e-12);
            worst = worst.max((f.0[i] - mean).abs() / se);
        }
        assert!(worst <= 3.0, "worst z-score {worst}");
    }

    #[test]
    fn cov_grad_matches_finite_differences() {
        let g = LobeGaussian {
            mean: Vec3::new(0.4, 0.1, -0.7),
            cov_diag: Vec3::new(0.01, 0.003, 0.02),
        };
        let levels = 5;
        let w: Vec<f64> = (0..feature_width(levels))
            .map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0)
            .collect();
        let objective = |g: &LobeGaussian| -> f64 {
            let f = ile(g, levels).unwrap();
            f.0.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let f = ile(&g, levels).unwrap();
        let grad = ile_cov_grad(&f.0, &w, levels);
        for a in 0..3 {
            let h = 1e-7;
            let mut gp = g;
            let mut gm = g;
            let mut cp = gp.cov_diag.to_array();
            let mut cm = gm.cov_diag.to_array();
            cp[a] += h;
            cm[a] -= h;
            gp.cov_diag = Vec3::from_array(cp);
            gm.cov_diag = Vec3::from_array(cm);
            let fd = (objective(&gp) - objective(&gm)) / (2.0 * h);
            assert!(
                (fd - grad[a]).abs() <= 1e-5 * fd.abs().max(1.0),
                "axis {a}: fd {fd} vs {}",
                grad[a]
            );
        }
    }

    proptest! {
        #[test]
        fn zero_covariance_is_bitwise_plain_encoding(x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0, levels in 1usize..=16) {
            let p = Vec3::new(x, y, z);
            let a = positional_encode(p, levels).unwrap();
            let b = ile(&LobeGaussian::point(p), levels).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn attenuation_strictly_decreases_with_level(v in 1e-8f64..1.0, levels in 2usize..=8) {
            let att = level_attenuation(v, levels);
            for w in att.windows(2) {
                // once both underflow to zero there is nothing left to order
                prop_assert!(w[1] < w[0] || w[0] == 0.0);
            }
        }

        #[test]
        fn features_bounded(x in -5.0f64..5.0, c in 0.0f64..1.0, levels in 1usize..=10) {
            let g = LobeGaussian { mean: Vec3::new(x, -x, 0.5 * x), cov_diag: Vec3::new(c, 0.5 * c, 2.0 * c) };
            let f = ile(&g, levels).unwrap();
            for l in 0..levels {
                let bound = (-0.5 * 4f64.powi(l as i32) * g.cov_diag.min_component()).exp();
                for a in 0..3 {
                    prop_assert!(f.sin_block()[3 * l + a].abs() <= bound + 1e-15);
                    prop_assert!(f.cos_block()[3 * l + a].abs() <= bound + 1e-15);
                }
            }
        }
    }
}
