use neai::math::Vec3;
use neai::renderer::{look_at, Camera};
use neai::scenes::Dataset;
use neai::{Error, Result};

/// Which cameras to render.
#[derive(Debug, Clone, Copy)]
pub enum ViewSet {
    Frame(usize),
    Orbit(usize),
}

const ORBIT_ELEVATION_DEG: f64 = 30.0;

/// A camera with the file stem of its output.
pub struct View {
    pub name: String,
    pub camera: Camera,
    /// Index of the scene frame the camera belongs to.
    pub frame: Option<usize>,
}

pub fn views(ds: &Dataset, set: ViewSet) -> Result<Vec<View>> {
    match set {
        ViewSet::Frame(k) => {
            let f = ds.frames.get(k).ok_or_else(|| {
                Error::InvalidArgument(format!("frame {k} out of range, scene has {}", ds.frames.len()))
            })?;
            Ok(vec![View {
                name: format!("frame_{k:03}"),
                camera: f.camera.clone(),
                frame: Some(k),
            }])
        }
        ViewSet::Orbit(n) => {
            if n == 0 {
                return Err(Error::InvalidArgument("orbit needs at least one view".into()));
            }
            let center = ds.manifest.bounds.center;
            let distance = (ds.frames[0].camera.center() - center).norm();
            let el = ORBIT_ELEVATION_DEG.to_radians();
            let i = &ds.manifest.intrinsics;
            (0..n)
                .map(|k| {
                    let az = std::f64::consts::TAU * k as f64 / n as f64;
                    let eye = center + Vec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin()) * distance;
                    let pose = look_at(eye, center, Vec3::new(0.0, 1.0, 0.0))?;
                    Ok(View {
                        name: format!("orbit_{k:03}"),
                        camera: Camera::new(i.fx, i.fy, i.cx, i.cy, i.width, i.height, pose)?,
                        frame: None,
                    })
                })
                .collect()
        }
    }
}
