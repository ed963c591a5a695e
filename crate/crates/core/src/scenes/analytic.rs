//! Closed-form emitters, materials and geometry used as ground truth.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{AmbientField, Material, RadianceSample};
use crate::math::{LobeGaussian, Vec3};

/// Closed-form ambient fields. Density is evaluated at the segment mean;
/// colour is the exact Gaussian expectation of a band-limited texture, so
/// wide lobes see a blurred texture just as the learned field would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticAmbient {
    Empty,
    /// Walls of an axis-aligned box shell, `half_extent ≤ |x|∞ ≤ half_extent + thickness`.
    ConstantBox {
        half_extent: f64,
        thickness: f64,
        density: f64,
        radiance: Vec3,
    },
    /// Box shell with a 3-D checker (`frequency` in radians per unit,
    /// `harmonics` odd terms, Fejér-weighted so values stay within the two colours).
    CheckerBox {
        half_extent: f64,
        thickness: f64,
        density: f64,
        color_a: Vec3,
        color_b: Vec3,
        frequency: f64,
        harmonics: usize,
    },
    /// Spherical shell `radius ≤ |x − center| ≤ radius + thickness` with a
    /// sinusoidal texture `base + amplitude · Π sin(ω x_a)`.
    SphereShell {
        center: Vec3,
        radius: f64,
        thickness: f64,
        density: f64,
        base: Vec3,
        amplitude: Vec3,
        frequency: f64,
    },
    /// Uniform ball of participating medium.
    Fog {
        center: Vec3,
        radius: f64,
        density: f64,
        color: Vec3,
    },
    /// Superposition; colours are density-weighted.
    Union {
        parts: Vec<AnalyticAmbient>,
    },
}

/// Named presets used by the command line and tests.
pub fn preset(name: &str) -> Result<AnalyticAmbient> {
    Ok(match name {
        "empty" => AnalyticAmbient::Empty,
        "constant" => AnalyticAmbient::ConstantBox {
            half_extent: 4.0,
            thickness: 1.0,
            density: 50.0,
            radiance: Vec3::splat(0.8),
        },
        "checker" => AnalyticAmbient::CheckerBox {
            half_extent: 4.0,
            thickness: 1.0,
            density: 50.0,
            color_a: Vec3::new(0.05, 0.05, 0.08),
            color_b: Vec3::new(0.95, 0.85, 0.6),
            frequency: PI,
            harmonics: 8,
        },
        "smooth" => AnalyticAmbient::CheckerBox {
            half_extent: 4.0,
            thickness: 1.0,
            density: 50.0,
            color_a: Vec3::new(0.2, 0.25, 0.35),
            color_b: Vec3::new(0.9, 0.7, 0.5),
            frequency: 0.5 * PI,
            harmonics: 1,
        },
        "shell" => AnalyticAmbient::SphereShell {
            center: Vec3::ZERO,
            radius: 5.0,
            thickness: 1.0,
            density: 50.0,
            base: Vec3::splat(0.5),
            amplitude: Vec3::new(0.4, 0.3, 0.2),
            frequency: 2.0,
        },
        other => return Err(Error::invalid(format!("unknown analytic environment {other}"))),
    })
}

fn in_box_shell(x: Vec3, h: f64, t: f64) -> bool {
    let m = x.x.abs().max(x.y.abs()).max(x.z.abs());
    m >= h && m <= h + t
}

/// Expectation of the Fejér-weighted odd-harmonic square wave `sq(ω x)`
/// under `N(mu, var)`, and its derivative w.r.t. `var`.
fn square_wave_expectation(mu: f64, var: f64, omega: f64, harmonics: usize) -> (f64, f64) {
    if harmonics == 1 {
        let e = (-0.5 * omega * omega * var).exp();
        let v = (omega * mu).sin() * e;
        return (v, -0.5 * omega * omega * v);
    }
    let n = 2.0 * harmonics as f64;
    let (mut v, mut dv) = (0.0, 0.0);
    for k in 0..harmonics {
        let m = (2 * k + 1) as f64;
        let coef = 4.0 / (PI * m) * (1.0 - m / n);
        let w = m * omega;
        let term = coef * (w * mu).sin() * (-0.5 * w * w * var).exp();
        v += term;
        dv += -0.5 * w * w * term;
    }
    (v, dv)
}

/// `E[Π_a f(x_a)]` and its gradient w.r.t. the covariance diagonal.
fn texture(g: &LobeGaussian, omega: f64, harmonics: usize) -> (f64, Vec3) {
    let mut vals = [0.0; 3];
    let mut ders = [0.0; 3];
    for a in 0..3 {
        let (v, d) = square_wave_expectation(g.mean[a], g.cov_diag[a], omega, harmonics);
        vals[a] = v;
        ders[a] = d;
    }
    let prod = vals[0] * vals[1] * vals[2];
    let grad = Vec3::new(
        ders[0] * vals[1] * vals[2],
        vals[0] * ders[1] * vals[2],
        vals[0] * vals[1] * ders[2],
    );
    (prod, grad)
}

/// Sample plus `∂colour_c/∂cov_a` as three vectors (one per channel).
type Eval = (RadianceSample, [Vec3; 3]);

impl AnalyticAmbient {
    pub(crate) fn eval_one(&self, g: &LobeGaussian) -> Eval {
        let none = (RadianceSample::default(), [Vec3::ZERO; 3]);
        match self {
            AnalyticAmbient::Empty => none,
            AnalyticAmbient::ConstantBox {
                half_extent,
                thickness,
                density,
                radiance,
            } => {
                if in_box_shell(g.mean, *half_extent, *thickness) {
                    (
                        RadianceSample {
                            color: *radiance,
                            sigma: *density,
                        },
                        [Vec3::ZERO; 3],
                    )
                } else {
                    none
                }
            }
            AnalyticAmbient::CheckerBox {
                half_extent,
                thickness,
                density,
                color_a,
                color_b,
                frequency,
                harmonics,
            } => {
                if !in_box_shell(g.mean, *half_extent, *thickness) {
                    return none;
                }
                let (s, ds) = texture(g, *frequency, *harmonics);
                let span = *color_b - *color_a;
                let color = *color_a + span * (0.5 + 0.5 * s);
                (
                    RadianceSample { color, sigma: *density },
                    [ds * (0.5 * span.x), ds * (0.5 * span.y), ds * (0.5 * span.z)],
                )
            }
            AnalyticAmbient::SphereShell {
                center,
                radius,
                thickness,
                density,
                base,
                amplitude,
                frequency,
            } => {
                let r = (g.mean - *center).norm();
                if r < *radius || r > radius + thickness {
                    return none;
                }
                let (s, ds) = texture(g, *frequency, 1);
                (
                    RadianceSample {
                        color: *base + *amplitude * s,
                        sigma: *density,
                    },
                    [ds * amplitude.x, ds * amplitude.y, ds * amplitude.z],
                )
            }
            AnalyticAmbient::Fog {
                center,
                radius,
                density,
                color,
            } => {
                if (g.mean - *center).norm() <= *radius {
                    (
                        RadianceSample {
                            color: *color,
                            sigma: *density,
                        },
                        [Vec3::ZERO; 3],
                    )
                } else {
                    none
                }
            }
            AnalyticAmbient::Union { parts } => {
                let evals: Vec<Eval> = parts.iter().map(|p| p.eval_one(g)).collect();
                let sigma: f64 = evals.iter().map(|e| e.0.sigma).sum();
                if sigma <= 0.0 {
                    return none;
                }
                let mut color = Vec3::ZERO;
                let mut grad = [Vec3::ZERO; 3];
                for (s, d) in &evals {
                    let w = s.sigma / sigma;
                    color += s.color * w;
                    for c in 0..3 {
                        grad[c] += d[c] * w;
                    }
                }
                (RadianceSample { color, sigma }, grad)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            AnalyticAmbient::Empty => true,
            AnalyticAmbient::ConstantBox {
                half_extent,
                thickness,
                density,
                radiance,
            } => *half_extent > 0.0 && *thickness > 0.0 && *density >= 0.0 && radiance.min_component() >= 0.0,
            AnalyticAmbient::CheckerBox {
                half_extent,
                thickness,
                density,
                color_a,
                color_b,
                harmonics,
                ..
            } => {
                *half_extent > 0.0
                    && *thickness > 0.0
                    && *density >= 0.0
                    && color_a.min_component() >= 0.0
                    && color_b.min_component() >= 0.0
                    && *harmonics >= 1
            }
            AnalyticAmbient::SphereShell {
                radius,
                thickness,
                density,
                base,
                amplitude,
                ..
            } => {
                *radius > 0.0
                    && *thickness > 0.0
                    && *density >= 0.0
                    && (*base - amplitude.map(f64::abs)).min_component() >= 0.0
            }
            AnalyticAmbient::Fog {
                radius, density, color, ..
            } => *radius > 0.0 && *density >= 0.0 && color.min_component() >= 0.0,
            AnalyticAmbient::Union { parts } => return parts.iter().try_for_each(AnalyticAmbient::validate),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid analytic environment {self:?}")))
        }
    }

    /// Density and colour at a point (zero covariance).
    pub fn at(&self, x: Vec3) -> RadianceSample {
        self.eval_one(&LobeGaussian::point(x)).0
    }

    /// Parameter interval of the unit ray `o + t d` outside of which the
    /// density is zero, clipped to `[t_near, t_far]`.
    pub fn support(&self, o: Vec3, d: Vec3, t_near: f64, t_far: f64) -> Option<(f64, f64)> {
        let (a, b) = match self {
            AnalyticAmbient::Empty => return None,
            AnalyticAmbient::ConstantBox {
                half_extent, thickness, ..
            }
            | AnalyticAmbient::CheckerBox {
                half_extent, thickness, ..
            } => ray_box(o, d, half_extent + thickness)?,
            AnalyticAmbient::SphereShell {
                center,
                radius,
                thickness,
                ..
            } => ray_ball(o, d, *center, radius + thickness)?,
            AnalyticAmbient::Fog { center, radius, .. } => ray_ball(o, d, *center, *radius)?,
            AnalyticAmbient::Union { parts } => parts
                .iter()
                .filter_map(|p| p.support(o, d, t_near, t_far))
                .reduce(|x, y| (x.0.min(y.0), x.1.max(y.1)))?,
        };
        let (a, b) = (a.max(t_near), b.min(t_far));
        (a < b).then_some((a, b))
    }

    /// Radius of a sphere about the origin containing all emitters.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            AnalyticAmbient::Empty => 0.0,
            AnalyticAmbient::ConstantBox {
                half_extent, thickness, ..
            }
            | AnalyticAmbient::CheckerBox {
                half_extent, thickness, ..
            } => (half_extent + thickness) * 3f64.sqrt(),
            AnalyticAmbient::SphereShell {
                center,
                radius,
                thickness,
                ..
            } => center.norm() + radius + thickness,
            AnalyticAmbient::Fog { center, radius, .. } => center.norm() + radius,
            AnalyticAmbient::Union { parts } => parts.iter().map(Self::bounding_radius).fold(0.0, f64::max),
        }
    }
}

fn ray_box(o: Vec3, d: Vec3, h: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a].abs() > h {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((-h - o[a]) / d[a], (h - o[a]) / d[a]);
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    (lo <= hi).then_some((lo, hi))
}

fn ray_ball(o: Vec3, d: Vec3, c: Vec3, r: f64) -> Option<(f64, f64)> {
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    Some((-b - sq, -b + sq))
}

impl AmbientField for AnalyticAmbient {
    type Tape = Vec<[Vec3; 3]>;

    fn eval(&self, _params: &[f64], g: &[LobeGaussian], dirs: &[Vec3]) -> Result<(Vec<RadianceSample>, Self::Tape)> {
        if g.len() != dirs.len() {
            return Err(Error::Shape("one direction per segment expected".into()));
        }
        Ok(g.iter().map(|gi| self.eval_one(gi)).unzip())
    }

    fn backward(
        &self,
        _params: &[f64],
        tape: &Self::Tape,
        d: &[RadianceSample],
        _grads: &mut [f64],
    ) -> Result<Vec<Vec3>> {
        if d.len() != tape.len() {
            return Err(Error::Shape("one radiance gradient per segment expected".into()));
        }
        Ok(tape
            .iter()
            .zip(d)
            .map(|(j, di)| j[0] * di.color.x + j[1] * di.color.y + j[2] * di.color.z)
            .collect())
    }
}

/// A material field evaluated at object-local positions.
pub trait MaterialField: Sync {
    fn materials(&self, params: &[f64], xs: &[Vec3]) -> Result<Vec<Material>>;
}

impl MaterialField for crate::fields::MaterialNet {
    fn materials(&self, params: &[f64], xs: &[Vec3]) -> Result<Vec<Material>> {
        Ok(self.eval(params, xs)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticMaterial {
    Uniform {
        material: Material,
    },
    /// `upper` where `x·axis ≥ 0`, `lower` elsewhere.
    Split {
        axis: Vec3,
        upper: Material,
        lower: Material,
    },
}

impl AnalyticMaterial {
    pub fn at(&self, x: Vec3) -> Material {
        match self {
            AnalyticMaterial::Uniform { material } => *material,
            AnalyticMaterial::Split { axis, upper, lower } => {
                if x.dot(*axis) >= 0.0 {
                    *upper
                } else {
                    *lower
                }
            }
        }
    }
}

impl MaterialField for AnalyticMaterial {
    fn materials(&self, _params: &[f64], xs: &[Vec3]) -> Result<Vec<Material>> {
        Ok(xs.iter().map(|&x| self.at(x)).collect())
    }
}

/// Sphere used as object geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    /// Nearest positive hit of the unit ray: distance and outward normal.
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
        let oc = o - self.center;
        let b = oc.dot(d);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let t = if -b - sq > 1e-9 { -b - sq } else { -b + sq };
        if t <= 1e-9 {
            return None;
        }
        let p = o + d * t;
        Some((t, (p - self.center) / self.radius))
    }
}
