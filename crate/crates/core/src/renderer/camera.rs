use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Pinhole camera looking down its local `-z` axis, `x` right, `y` up.
///
/// Pixel `(i, j)` is column `i`, row `j` (rows grow downwards); its centre
/// sits at `(i + 0.5, j + 0.5)` in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera-to-world rigid transform, row-major.
    pub c2w: [[f64; 4]; 4],
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, c2w: [[f64; 4]; 4]) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            c2w,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Symmetric camera with horizontal field of view `fov_x_deg`.
    pub fn from_fov(width: u32, height: u32, fov_x_deg: f64, c2w: [[f64; 4]; 4]) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height, c2w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid(
                "focal lengths must be positive and principal point finite",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        let r = self.rotation();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][a] * r[k][b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if !((dot - want).abs() <= 1e-6) {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        if self.c2w[3] != [0.0, 0.0, 0.0, 1.0] || !self.center().is_finite() {
            return Err(Error::invalid("camera transform must be rigid with last row 0 0 0 1"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.c2w;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.c2w[0][3], self.c2w[1][3], self.c2w[2][3])
    }

    /// Base pixel radius at unit distance, `0.5·(1/fx + 1/fy)/2`.
    pub fn r0(&self) -> f64 {
        0.5 * (1.0 / self.fx + 1.0 / self.fy) / 2.0
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Origin and unit direction through the centre of pixel `(i, j)`.
    pub fn ray(&self, i: u32, j: u32) -> Result<(Vec3, Vec3)> {
        if i >= self.width || j >= self.height {
            return Err(Error::invalid(format!(
                "pixel ({i}, {j}) outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.ray_at(i as f64 + 0.5, j as f64 + 0.5))
    }

    /// Ray through continuous pixel coordinates `(u, v)`.
    pub fn ray_at(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let local = Vec3::new((u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0);
        let r = self.rotation();
        let world = Vec3::new(
            r[0][0] * local.x + r[0][1] * local.y + r[0][2] * local.z,
            r[1][0] * local.x + r[1][1] * local.y + r[1][2] * local.z,
            r[2][0] * local.x + r[2][1] * local.y + r[2][2] * local.z,
        );
        (self.center(), world.normalized().expect("camera ray is non-zero"))
    }

    /// Continuous pixel coordinates of a world point in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let r = self.rotation();
        let q = p - self.center();
        let local = Vec3::new(
            r[0][0] * q.x + r[1][0] * q.y + r[2][0] * q.z,
            r[0][1] * q.x + r[1][1] * q.y + r[2][1] * q.z,
            r[0][2] * q.x + r[1][2] * q.y + r[2][2] * q.z,
        );
        if local.z >= 0.0 {
            return None;
        }
        let z = -local.z;
        Some((self.fx * local.x / z + self.cx, -self.fy * local.y / z + self.cy))
    }
}

/// Camera-to-world transform placing the camera at `eye` looking at `target`.
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<[[f64; 4]; 4]> {
    let back = (eye - target)
        .normalized()
        .ok_or_else(|| Error::invalid("eye and target coincide"))?;
    let right = up
        .cross(back)
        .normalized()
        .ok_or_else(|| Error::invalid("up vector parallel to view direction"))?;
    let up = back.cross(right);
    Ok([
        [right.x, up.x, back.x, eye.x],
        [right.y, up.y, back.y, eye.y],
        [right.z, up.z, back.z, eye.z],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

pub const IDENTITY4: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Ray through pixel `(i, j)` plus the cone radius `r̂ = r0` used for camera lobes.
pub fn generate_lobe_ray(cam: &Camera, (i, j): (u32, u32)) -> Result<(Vec3, Vec3, f64)> {
    let (o, d) = cam.ray(i, j)?;
    Ok((o, d, cam.r0()))
}
