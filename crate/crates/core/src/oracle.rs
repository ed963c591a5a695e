//! Monte-Carlo oracles for the closed-form lobe math, sampler and renderer.
//!
//! Every check records what was measured, the tolerance it was held to and,
//! for sampled quantities, the standard error of the estimate.

use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{feature_width, ile_from_lobe, positional_encode};
use crate::error::Result;
use crate::fields::{Material, RadianceSample};
use crate::math::{frustum_moments, LobeParams, Vec3};
use crate::renderer::{
    composite, render_specular, sample_coarse, sample_fine, volume_render, RenderSettings, SegmentSet, SurfaceSample,
};
use crate::scenes::preset;
use crate::util::{orthonormal_basis, par_map, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// |value − mean| in units of the standard error.
    pub fn z(&self, value: f64) -> f64 {
        let d = (value - self.mean).abs();
        if self.se > 0.0 {
            d / self.se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    n: f64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        let x2 = x * x;
        self.n += 1.0;
        self.s1 += x;
        self.s2 += x2;
        self.s3 += x2 * x;
        self.s4 += x2 * x2;
    }

    fn mean(&self) -> Estimate {
        let m = self.s1 / self.n;
        let var = (self.s2 / self.n - m * m).max(0.0);
        Estimate {
            mean: m,
            se: (var / self.n).sqrt(),
        }
    }

    /// Sample variance with the large-sample standard error `sqrt((μ4 − σ⁴)/n)`.
    fn variance(&self) -> Estimate {
        let n = self.n;
        let m = self.s1 / n;
        let e2 = self.s2 / n;
        let var = (e2 - m * m).max(0.0);
        let mu4 = self.s4 / n - 4.0 * m * self.s3 / n + 6.0 * m * m * e2 - 3.0 * m.powi(4);
        Estimate {
            mean: var,
            se: ((mu4 - var * var).max(0.0) / n).sqrt(),
        }
    }
}

/// Rejection-sampled moments of the frustum `[t0, t1]` with cone slope `k`
/// (radius per unit distance), drawn from its bounding cylinder.
///
/// Returns estimates of `(μ_t, σ_t², σ_r²)`.
pub fn mc_frustum_moments<R: Rng>(t0: f64, t1: f64, k: f64, n: usize, rng: &mut R) -> [Estimate; 3] {
    assert!(
        k > 0.0 && t0 >= 0.0 && t1 > t0,
        "rejection sampling needs a non-degenerate frustum"
    );
    let shift = 0.5 * (t0 + t1);
    let r_max = t1 * k;
    let mut along = Moments::default();
    let mut radial = Moments::default();
    let mut accepted = 0;
    while accepted < n {
        let t = rng.random_range(t0..t1);
        let x = rng.random_range(-r_max..r_max);
        let y = rng.random_range(-r_max..r_max);
        let r2 = x * x + y * y;
        let lim = t * k;
        if r2 >= lim * lim {
            continue;
        }
        accepted += 1;
        along.push(t - shift);
        radial.push(0.5 * r2);
    }
    let mut mu = along.mean();
    mu.mean += shift;
    [mu, along.variance(), radial.mean()]
}

/// Uniform point in the frustum, apex at the origin, axis `+z` (local frame).
pub fn sample_frustum_local<R: Rng>(t0: f64, t1: f64, k: f64, rng: &mut R) -> (f64, f64, f64) {
    let (c0, c1) = (t0.powi(3), t1.powi(3));
    let t = (c0 + rng.random::<f64>() * (c1 - c0)).cbrt();
    let r = t * k * rng.random::<f64>().sqrt();
    let phi = TAU * rng.random::<f64>();
    (t, r * phi.cos(), r * phi.sin())
}

/// Frustum average of the attenuated encoding `exp(cos θ − 1)·PE(x)`.
///
/// Points are drawn uniformly from the frustum, so the sample mean is the
/// ratio of the attenuated integral to the frustum volume.
pub fn mc_lobe_encoding<R: Rng>(
    x_s: Vec3,
    l_r: Vec3,
    p: &LobeParams,
    (t0, t1): (f64, f64),
    levels: usize,
    n: usize,
    rng: &mut R,
) -> Vec<Estimate> {
    let (u, v) = orthonormal_basis(l_r);
    let k = p.radius();
    let width = feature_width(levels);
    let mut stats = vec![Moments::default(); width];
    for _ in 0..n {
        let (t, a, b) = sample_frustum_local(t0, t1, k, rng);
        let x = x_s + l_r * t + u * a + v * b;
        let cos = t / (t * t + a * a + b * b).sqrt();
        let atten = (cos - 1.0).exp();
        for l in 0..levels {
            let w = (1u64 << l) as f64;
            for c in 0..3 {
                let (s, co) = (w * x[c]).sin_cos();
                stats[3 * l + c].push(atten * s);
                stats[3 * levels + 3 * l + c].push(atten * co);
            }
        }
    }
    stats.iter().map(Moments::mean).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub standard_error: Option<f64>,
    /// `tolerance` is a lower bound (p-values) rather than an upper one.
    #[serde(default)]
    pub lower_bound: bool,
    pub passed: bool,
}

impl Check {
    fn le(suite: &str, name: impl Into<String>, measured: f64, tolerance: f64, se: Option<f64>) -> Self {
        Check {
            suite: suite.into(),
            name: name.into(),
            measured,
            tolerance,
            standard_error: se,
            lower_bound: false,
            passed: measured <= tolerance,
        }
    }

    fn ge(suite: &str, name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Check {
            suite: suite.into(),
            name: name.into(),
            measured,
            tolerance: bound,
            standard_error: None,
            lower_bound: true,
            passed: measured >= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "oracle report seed={} samples={}", self.seed, self.samples)?;
        for c in &self.checks {
            write!(
                f,
                "{} {}/{} measured={:.6e} {}={:.6e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite,
                c.name,
                c.measured,
                if c.lower_bound { "min" } else { "tol" },
                c.tolerance
            )?;
            if let Some(se) = c.standard_error {
                write!(f, " se={se:.3e}")?;
            }
            writeln!(f)?;
        }
        write!(f, "{} checks, {} failed", self.checks.len(), self.failures())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    All,
    Moments,
    Ile,
    Sampler,
    Render,
}

impl std::str::FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "moments" => Suite::Moments,
            "ile" => Suite::Ile,
            "sampler" => Suite::Sampler,
            "render" => Suite::Render,
            other => return Err(crate::Error::invalid(format!("unknown oracle suite {other}"))),
        })
    }
}

/// One randomly drawn frustum for the moment checks.
#[derive(Debug, Clone, Copy)]
pub struct FrustumCase {
    pub t0: f64,
    pub t1: f64,
    pub k: f64,
}

pub fn random_frustum_case<R: Rng>(rng: &mut R) -> FrustumCase {
    let t0 = rng.random_range(0.1..3.0);
    FrustumCase {
        t0,
        t1: t0 + rng.random_range(0.01..1.0),
        k: rng.random_range(0.001..0.2),
    }
}

/// Analytic moments against rejection sampling, each within `z_max` standard errors.
pub fn moments_suite(seed: u64, cases: usize, samples: usize, z_max: f64) -> Vec<Check> {
    let rows = par_map(cases, |i| {
        let mut rng = rng_for(seed, 0x4d4f_4d00 + i as u64);
        let c = random_frustum_case(&mut rng);
        let est = mc_frustum_moments(c.t0, c.t1, c.k, samples, &mut rng);
        let m = frustum_moments(c.t0, c.t1, c.k, 1.0).expect("valid case");
        let names = ["mu_t", "var_t", "var_r"];
        [m.mu_t, m.var_t, m.var_r]
            .iter()
            .zip(est.iter())
            .zip(names)
            .map(|((&v, e), name)| {
                Check::le(
                    "moments",
                    format!("case{i:03}/{name} (t0={:.4},t1={:.4},k={:.4})", c.t0, c.t1, c.k),
                    e.z(v),
                    z_max,
                    Some(e.se),
                )
            })
            .collect::<Vec<_>>()
    });
    rows.into_iter().flatten().collect()
}

/// One randomly drawn lobe segment for the encoding checks.
#[derive(Debug, Clone, Copy)]
pub struct LobeCase {
    pub x_s: Vec3,
    pub l_r: Vec3,
    pub params: LobeParams,
    pub segment: (f64, f64),
    pub levels: usize,
}

pub fn random_lobe_case<R: Rng>(rng: &mut R, max_levels: usize) -> LobeCase {
    let x_s = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let l_r = loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n2 = v.norm_squared();
        if n2 > 1e-4 && n2 <= 1.0 {
            break v / n2.sqrt();
        }
    };
    let t0 = rng.random_range(0.2..2.0);
    let t1 = t0 + rng.random_range(0.005..0.1);
    let params = LobeParams::new(rng.random_range(0.0..1.0), 0.1, 0.0, 10.0).expect("valid");
    LobeCase {
        x_s,
        l_r,
        params,
        segment: (t0, t1),
        levels: rng.random_range(1..=max_levels),
    }
}

/// Relative L2 error between the closed-form encoding and its sampled average.
pub fn lobe_relative_error(case: &LobeCase, samples: usize, seed: u64, stream: u64) -> Result<(f64, f64)> {
    let mut rng = rng_for(seed, stream);
    let closed = ile_from_lobe(case.x_s, case.l_r, &case.params, case.segment, case.levels)?;
    let mc = mc_lobe_encoding(
        case.x_s,
        case.l_r,
        &case.params,
        case.segment,
        case.levels,
        samples,
        &mut rng,
    );
    let diff: f64 = closed
        .0
        .iter()
        .zip(&mc)
        .map(|(a, e)| (a - e.mean).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = mc.iter().map(|e| e.mean * e.mean).sum::<f64>().sqrt();
    let se: f64 = mc.iter().map(|e| e.se * e.se).sum::<f64>().sqrt();
    Ok((diff / norm, se / norm))
}

pub fn ile_suite(seed: u64, cases: usize, samples: usize, tol: f64) -> Vec<Check> {
    let mut checks = par_map(cases, |i| {
        let mut rng = rng_for(seed, 0x494c_4500 + i as u64);
        let case = random_lobe_case(&mut rng, 6);
        let (err, se) = lobe_relative_error(&case, samples, seed, 0x494c_4580 + i as u64).expect("valid case");
        Check::le(
            "ile",
            format!("case{i:02}/rel_l2 (L={}, k={:.4})", case.levels, case.params.radius()),
            err,
            tol,
            Some(se),
        )
    });
    // zero covariance must reproduce the plain encoding bit for bit
    let mut rng = rng_for(seed, 0x494c_45ff);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let g = crate::math::LobeGaussian::point(x);
        let a = crate::encoding::ile(&g, 6).expect("valid");
        let b = positional_encode(x, 6).expect("valid");
        for (p, q) in a.0.iter().zip(&b.0) {
            worst = worst.max((p - q).abs());
        }
    }
    checks.push(Check::le("ile", "zero_covariance_equals_pe", worst, 0.0, None));
    checks
}

pub fn oracle_suite(suite: Suite, samples: usize, seed: u64) -> OracleReport {
    let mut checks = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Moments {
        checks.extend(moments_suite(seed, 100, samples, 3.0));
    }
    if all || suite == Suite::Ile {
        checks.extend(ile_suite(seed, 50, samples, 0.05));
    }
    if all || suite == Suite::Sampler {
        checks.extend(sampler_suite(seed, samples));
    }
    if all || suite == Suite::Render {
        checks.extend(render_suite(seed));
    }
    OracleReport { seed, samples, checks }
}

/// Asymptotic p-value of the one-sample Kolmogorov–Smirnov statistic `d` over `n` draws.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// KS statistic of `xs` against the uniform distribution on `[0, 1)`.
pub fn ks_uniform(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

/// Statistical checks of the coarse and fine samplers over `draws` draws.
pub fn sampler_suite(seed: u64, draws: usize) -> Vec<Check> {
    const SUITE: &str = "sampler";
    let draws = draws.max(1);
    let mut checks = Vec::new();

    // coarse: each stratum's node is uniform inside it
    let strata = 4;
    let mut rng = rng_for(seed, 0x5341_0000);
    let mut offsets: Vec<Vec<f64>> = (0..strata).map(|_| Vec::with_capacity(draws)).collect();
    for _ in 0..draws {
        let s = sample_coarse(2.0, 6.0, strata, Some(&mut rng)).expect("valid interval");
        for (k, t) in s.nodes.iter().enumerate() {
            offsets[k].push(t - 2.0 - k as f64);
        }
    }
    for (k, o) in offsets.iter_mut().enumerate() {
        let outside = o.iter().filter(|x| !(0.0..1.0).contains(*x)).count();
        checks.push(Check::le(
            SUITE,
            format!("coarse/stratum{k}/outside"),
            outside as f64,
            0.0,
            None,
        ));
        let d = ks_uniform(o);
        checks.push(Check::ge(
            SUITE,
            format!("coarse/stratum{k}/ks_p"),
            ks_p_value(d, o.len()),
            0.01,
        ));
    }

    // fine: node fractions follow piecewise weights
    let coarse = SegmentSet::from_bounds(vec![0.0, 1.0, 2.0, 3.0]).expect("increasing");
    let probs = [0.1, 0.3, 0.6];
    let per_draw = 100;
    let rounds = draws.div_ceil(per_draw);
    let mut rng = rng_for(seed, 0x5341_0001);
    let mut counts = [0usize; 3];
    let mut uniform = Vec::with_capacity(rounds * per_draw);
    let mut strays = 0;
    for _ in 0..rounds {
        let f = sample_fine(&probs, &coarse, per_draw, Some(&mut rng)).expect("valid weights");
        for t in f.nodes {
            counts[(t.floor() as usize).min(2)] += 1;
        }
        let u = sample_fine(&[1.0, 1.0, 1.0], &coarse, per_draw, Some(&mut rng)).expect("valid weights");
        uniform.extend(u.nodes.iter().map(|t| t / 3.0));
        let one_hot = sample_fine(&[0.0, 1.0, 0.0], &coarse, per_draw, Some(&mut rng)).expect("valid weights");
        strays += one_hot.nodes.iter().filter(|t| !(1.0..=2.0).contains(*t)).count();
    }
    let n = (rounds * per_draw) as f64;
    for (k, p) in probs.iter().enumerate() {
        let se = (n * p * (1.0 - p)).sqrt();
        let z = (counts[k] as f64 - n * p).abs() / se;
        checks.push(Check::le(
            SUITE,
            format!("fine/weights_0.1_0.3_0.6/segment{k}_z"),
            z,
            3.0,
            Some(se / n),
        ));
    }
    let d = ks_uniform(&mut uniform);
    checks.push(Check::ge(
        SUITE,
        "fine/uniform_weights/ks_p",
        ks_p_value(d, uniform.len()),
        0.01,
    ));
    checks.push(Check::le(SUITE, "fine/one_hot/outside", strays as f64, 0.0, None));
    checks
}

/// Deterministic renderer identities against closed forms.
pub fn render_suite(seed: u64) -> Vec<Check> {
    const SUITE: &str = "render";
    let mut checks = Vec::new();

    // constant σ = 1, c = 1 on [0, 1]: colour → 1 − e⁻¹
    let n = 4096;
    let seg = SegmentSet::from_bounds((0..=n).map(|k| k as f64 / n as f64).collect()).expect("increasing");
    let samples = vec![
        RadianceSample {
            color: Vec3::ONE,
            sigma: 1.0,
        };
        n
    ];
    let out = volume_render(&samples, &seg.bounds).expect("valid samples");
    let exact = 1.0 - (-1.0f64).exp();
    checks.push(Check::le(
        SUITE,
        "quadrature/constant_sigma_n4096",
        (out.color.x - exact).abs(),
        1e-3,
        None,
    ));

    // weights plus remainder sum to one
    let mut rng = rng_for(seed, 0x5245_0000);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let m = rng.random_range(1..=64);
        let mut bounds = vec![0.0];
        for _ in 0..m {
            let last = *bounds.last().expect("non-empty");
            bounds.push(last + rng.random_range(1e-3..0.5));
        }
        let samples: Vec<RadianceSample> = (0..m)
            .map(|_| RadianceSample {
                color: Vec3::ONE,
                sigma: match rng.random_range(0..4) {
                    0 => 0.0,
                    1 => rng.random_range(0.0..1.0),
                    2 => rng.random_range(0.0..100.0),
                    _ => 10f64.powf(rng.random_range(-3.0..6.0)),
                },
            })
            .collect();
        let out = volume_render(&samples, &bounds).expect("valid samples");
        worst = worst.max((out.weights.iter().sum::<f64>() + out.remainder - 1.0).abs());
    }
    checks.push(Check::le(SUITE, "partition_of_unity/10000_profiles", worst, 1e-6, None));

    // constant emitter: specular = α cos E
    let scene = preset("constant").expect("preset exists");
    let settings = RenderSettings {
        t_far: 2.0 * scene.bounding_radius(),
        ..RenderSettings::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalized()
        .unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        let (u, _) = orthonormal_basis(n);
        let d = (u * rng.random_range(-0.9..0.9) - n).normalized().expect("non-zero");
        let x = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let s = SurfaceSample::new(x - d * 2.0, d, 2.0, n);
        let m = Material {
            rho: rng.random_range(0.0..1.0),
            diffuse: Vec3::ZERO,
            alpha: rng.random_range(0.1..1.0),
        };
        let c = render_specular(&s, &m, &scene, &scene, &[], 0.01, &settings, None).expect("valid lobe");
        let expect = 0.8 * m.alpha * s.lobe_cos();
        if expect > 0.0 {
            worst = worst.max((c.x - expect).abs() / expect);
        }
    }
    checks.push(Check::le(SUITE, "specular/constant_emitter_rel", worst, 0.01, None));

    // compositing is linear in the opacity
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let e = Vec3::new(rng.random(), rng.random(), rng.random());
        let o = Vec3::new(rng.random(), rng.random(), rng.random());
        let w: f64 = rng.random();
        for (c, expect) in [
            (composite(e, 0.0, o), o),
            (composite(e, 1.0, o), e),
            (composite(e, w, o), e * w + o * (1.0 - w)),
        ] {
            worst = worst.max((c - expect).norm());
        }
    }
    checks.push(Check::le(SUITE, "composite/identities", worst, 1e-12, None));
    checks
}
