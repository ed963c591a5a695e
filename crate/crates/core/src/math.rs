//! Closed-form lobe geometry.
//!
//! Everything here is double precision: the frustum moment expressions
//! cancel badly when the segment half-width is small relative to its
//! midpoint distance.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|‖v‖ - 1|` for direction-typed inputs.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const ONE: Vec3 = Vec3::new(1.0, 1.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Vec3 { x: v, y: v, z: v }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Returns `None` for (near) zero vectors.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 1e-300 && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn hadamard(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Vec3 {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn min_component(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::from_array(a)
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

fn require_unit(name: &str, v: Vec3) -> Result<()> {
    if v.is_unit() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be unit length (|v| = {})",
            v.norm()
        )))
    }
}

/// Mirror direction `2(-d·n)n + d` of the view direction `d` about `n`.
pub fn reflect(d: Vec3, n: Vec3) -> Result<Vec3> {
    require_unit("view direction", d)?;
    require_unit("normal", n)?;
    let dn = d.dot(n);
    if dn >= 0.0 {
        return Err(Error::BackFacing(dn));
    }
    Ok(n * (-2.0 * dn) + d)
}

/// Rotationally symmetric lobe weight `α·exp(ρ(l·l_r − 1))`.
pub fn vmf_weight(l: Vec3, l_r: Vec3, rho: f64, alpha: f64) -> Result<f64> {
    require_unit("incoming direction", l)?;
    require_unit("reflection direction", l_r)?;
    if !(rho >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "lobe weight needs rho >= 0 and alpha >= 0 (got {rho}, {alpha})"
        )));
    }
    Ok(alpha * (rho * (l.dot(l_r) - 1.0)).exp())
}

/// Moments of points uniformly distributed in a conical frustum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrustumMoments {
    /// Mean distance along the axis.
    pub mu_t: f64,
    /// Variance along the axis.
    pub var_t: f64,
    /// Variance along each axis perpendicular to the cone axis.
    pub var_r: f64,
}

/// Radius-independent factor of the perpendicular variance:
/// `var_r = (ρ̂ r̂)² · radial_factor(t0, t1)`.
pub fn radial_factor(t0: f64, t1: f64) -> f64 {
    let t_mu = 0.5 * (t0 + t1);
    let t_sigma = 0.5 * (t1 - t0);
    let denom = 3.0 * t_mu * t_mu + t_sigma * t_sigma;
    let tail = if denom > 0.0 {
        4.0 * t_sigma.powi(4) / (15.0 * denom)
    } else {
        0.0
    };
    (t_mu * t_mu / 4.0 + 5.0 * t_sigma * t_sigma / 12.0 - tail).max(0.0)
}

/// Gaussian moments of the frustum `[t0, t1]` whose radius grows as
/// `rho_hat * r_hat` per unit distance. The half-width is `(t1 - t0) / 2`.
pub fn frustum_moments(t0: f64, t1: f64, rho_hat: f64, r_hat: f64) -> Result<FrustumMoments> {
    if !(t0.is_finite() && t1.is_finite()) || t0 < 0.0 || t1 < t0 {
        return Err(Error::invalid(format!(
            "frustum needs 0 <= t0 <= t1 (got t0={t0}, t1={t1})"
        )));
    }
    if !(rho_hat >= 0.0) || !(r_hat >= 0.0) {
        return Err(Error::invalid(format!(
            "frustum radius coefficients must be non-negative (rho_hat={rho_hat}, r_hat={r_hat})"
        )));
    }
    let t_mu = 0.5 * (t0 + t1);
    let t_sigma = 0.5 * (t1 - t0);
    let mu2 = t_mu * t_mu;
    let hw2 = t_sigma * t_sigma;
    let denom = 3.0 * mu2 + hw2;
    if denom == 0.0 {
        return Ok(FrustumMoments {
            mu_t: 0.0,
            var_t: 0.0,
            var_r: 0.0,
        });
    }
    let mu_t = t_mu + 2.0 * t_mu * hw2 / denom;
    let var_t = hw2 / 3.0 - 4.0 * hw2 * hw2 * (12.0 * mu2 - hw2) / (15.0 * denom * denom);
    let radius = rho_hat * r_hat;
    let var_r = radius * radius * radial_factor(t0, t1);
    Ok(FrustumMoments {
        mu_t,
        var_t: var_t.max(0.0),
        var_r,
    })
}

/// World-space Gaussian with diagonal covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LobeGaussian {
    pub mean: Vec3,
    pub cov_diag: Vec3,
}

impl LobeGaussian {
    pub fn point(mean: Vec3) -> Self {
        LobeGaussian {
            mean,
            cov_diag: Vec3::ZERO,
        }
    }
}

/// Lift frustum moments along axis `l_r` from apex `x_s` into world space.
///
/// Only the diagonal of `σ_t² l lᵀ + σ_r² (I − l lᵀ/‖l‖²)` is kept.
pub fn lift_gaussian(x_s: Vec3, l_r: Vec3, m: &FrustumMoments) -> LobeGaussian {
    let sq = l_r.hadamard(l_r);
    let n2 = l_r.norm_squared();
    let perp = Vec3::ONE - sq / n2;
    let cov_diag = (sq * m.var_t + perp * m.var_r).map(|c| c.max(0.0));
    LobeGaussian {
        mean: x_s + l_r * m.mu_t,
        cov_diag,
    }
}

/// Shape parameters of one lobe: `{ρ̂, r̂, t_near, t_far}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LobeParams {
    pub rho_hat: f64,
    pub r_hat: f64,
    pub t_near: f64,
    pub t_far: f64,
}

impl LobeParams {
    pub fn new(rho_hat: f64, r_hat: f64, t_near: f64, t_far: f64) -> Result<Self> {
        let p = LobeParams {
            rho_hat,
            r_hat,
            t_near,
            t_far,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_hat >= 0.0) {
            return Err(Error::invalid(format!("rho_hat must be >= 0, got {}", self.rho_hat)));
        }
        if !(self.r_hat > 0.0) {
            return Err(Error::invalid(format!("r_hat must be > 0, got {}", self.r_hat)));
        }
        if !(self.t_near >= 0.0 && self.t_near < self.t_far && self.t_far.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 <= t_near < t_far (got {}, {})",
                self.t_near, self.t_far
            )));
        }
        Ok(())
    }

    /// Cone radius per unit distance.
    pub fn radius(&self) -> f64 {
        self.rho_hat * self.r_hat
    }
}

/// Rotation matrix from intrinsic XYZ Euler angles in degrees.
pub fn rotation_xyz_degrees(rx: f64, ry: f64, rz: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = rx.to_radians().sin_cos();
    let (sy, cy) = ry.to_radians().sin_cos();
    let (sz, cz) = rz.to_radians().sin_cos();
    let rot_x = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let rot_y = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rot_z = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    // intrinsic X then Y then Z == extrinsic R = Rx * Ry * Rz
    mat3_mul(&mat3_mul(&rot_x, &rot_y), &rot_z)
}

pub fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat3_apply(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    Vec3::new(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
        m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
    )
}

pub fn mat3_transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}
