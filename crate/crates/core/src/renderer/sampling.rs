use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered segment boundaries `t_0 < t_1 < … < t_N` plus the sampled node
/// that produced each stratum (coarse) or each inverse-CDF draw (fine).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSet {
    pub bounds: Vec<f64>,
    pub nodes: Vec<f64>,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.bounds.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, i: usize) -> (f64, f64) {
        (self.bounds[i], self.bounds[i + 1])
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.bounds.windows(2).map(|w| (w[0], w[1]))
    }

    /// Explicit segment set from strictly increasing boundaries.
    pub fn from_bounds(bounds: Vec<f64>) -> Result<Self> {
        if bounds.len() < 2 || bounds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("segment boundaries must be strictly increasing"));
        }
        let nodes = bounds.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(SegmentSet { bounds, nodes })
    }
}

/// Stratified samples: one node per equal stratum of `[t_near, t_far]`,
/// jittered when `rng` is given and at the stratum midpoint otherwise.
/// Boundaries are `t_near`, the midpoints between consecutive nodes, `t_far`.
pub fn sample_coarse<R: Rng>(t_near: f64, t_far: f64, n: usize, rng: Option<&mut R>) -> Result<SegmentSet> {
    if !(t_near < t_far) || !t_near.is_finite() || !t_far.is_finite() {
        return Err(Error::invalid(format!("need t_near < t_far (got {t_near}, {t_far})")));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let step = (t_far - t_near) / n as f64;
    let nodes: Vec<f64> = match rng {
        Some(rng) => (0..n)
            .map(|k| t_near + (k as f64 + rng.random::<f64>()) * step)
            .collect(),
        None => (0..n).map(|k| t_near + (k as f64 + 0.5) * step).collect(),
    };
    let mut bounds = Vec::with_capacity(n + 1);
    bounds.push(t_near);
    bounds.extend(nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    bounds.push(t_far);
    Ok(SegmentSet { bounds, nodes })
}

/// Inverse-CDF draws from the piecewise-constant density given by
/// `weights` over the coarse segments, merged with the coarse boundaries.
///
/// Without `rng` the draws sit at the CDF quantiles `(k + ½)/n`.
pub fn sample_fine<R: Rng>(weights: &[f64], coarse: &SegmentSet, n: usize, rng: Option<&mut R>) -> Result<SegmentSet> {
    if weights.len() != coarse.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} coarse segments",
            weights.len(),
            coarse.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("fine sampling weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    // all-zero weights fall back to uniform over the interval
    let pdf: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        let span = coarse.bounds[coarse.len()] - coarse.bounds[0];
        coarse.segments().map(|(a, b)| (b - a) / span).collect()
    };
    let mut cdf = Vec::with_capacity(pdf.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for p in &pdf {
        acc += p;
        cdf.push(acc);
    }
    let last = cdf.len() - 1;
    cdf[last] = 1.0;

    let mut us: Vec<f64> = match rng {
        Some(rng) => (0..n).map(|_| rng.random::<f64>()).collect(),
        None => (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect(),
    };
    us.sort_by(f64::total_cmp);
    let mut nodes = Vec::with_capacity(n);
    let mut seg = 0;
    for u in us {
        while seg + 1 < pdf.len() && (cdf[seg + 1] <= u || pdf[seg] == 0.0) {
            seg += 1;
        }
        let (a, b) = coarse.segment(seg);
        let frac = if pdf[seg] > 0.0 {
            ((u - cdf[seg]) / pdf[seg]).clamp(0.0, 1.0)
        } else {
            0.5
        };
        nodes.push(a + frac * (b - a));
    }
    let mut bounds: Vec<f64> = coarse.bounds.iter().copied().chain(nodes.iter().copied()).collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    Ok(SegmentSet { bounds, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;
    use rand_chacha::ChaCha8Rng;

    const NO_RNG: Option<&mut ChaCha8Rng> = None;

    #[test]
    fn deterministic_coarse_is_uniform_grid() {
        let s = sample_coarse(1.0, 3.0, 8, NO_RNG).unwrap();
        for (k, b) in s.bounds.iter().enumerate() {
            assert!((b - (1.0 + 0.25 * k as f64)).abs() < 1e-12);
        }
        let one = sample_coarse(0.5, 2.0, 1, NO_RNG).unwrap();
        assert_eq!(one.bounds, vec![0.5, 2.0]);
    }

    #[test]
    fn jittered_nodes_stay_in_strata() {
        let mut rng = rng_for(1, 0);
        let s = sample_coarse(0.0, 1.0, 16, Some(&mut rng)).unwrap();
        for (k, t) in s.nodes.iter().enumerate() {
            assert!(*t >= k as f64 / 16.0 && *t < (k + 1) as f64 / 16.0);
        }
        assert!(s.bounds.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn one_hot_weight_confines_fine_nodes() {
        let coarse = sample_coarse(0.0, 4.0, 4, NO_RNG).unwrap();
        let mut rng = rng_for(2, 0);
        let f = sample_fine(&[0.0, 0.0, 1.0, 0.0], &coarse, 64, Some(&mut rng)).unwrap();
        assert!(f.nodes.iter().all(|&t| (2.0..=3.0).contains(&t)));
        assert_eq!(f.len(), f.bounds.len() - 1);
        assert!(f.bounds.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let coarse = sample_coarse(0.0, 1.0, 4, NO_RNG).unwrap();
        let f = sample_fine(&[0.0; 4], &coarse, 4, NO_RNG).unwrap();
        for (k, t) in f.nodes.iter().enumerate() {
            assert!((t - (k as f64 + 0.5) / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(sample_coarse(1.0, 1.0, 4, NO_RNG).is_err());
        assert!(sample_coarse(0.0, 1.0, 0, NO_RNG).is_err());
        let coarse = sample_coarse(0.0, 1.0, 2, NO_RNG).unwrap();
        assert!(sample_fine(&[1.0], &coarse, 2, NO_RNG).is_err());
        assert!(sample_fine(&[1.0, -1.0], &coarse, 2, NO_RNG).is_err());
    }
}
