use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::renderer::{Camera, Geometry};

pub const F32R_MAGIC: [u8; 4] = *b"F32R";

/// Camera convention tag: looks along −z, x right, y up.
pub const CONVENTION: &str = "opengl";

/// Dense little-endian float raster, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(Error::Shape(format!(
                "raster {width}x{height}x{channels} needs {} values, got {}",
                width as usize * height as usize * channels as usize,
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_image(img: &Image) -> Self {
        let data = img.data.iter().flat_map(|v| v.to_array()).map(|c| c as f32).collect();
        Raster {
            width: img.width,
            height: img.height,
            channels: 3,
            data,
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        if self.channels != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {}", self.channels)));
        }
        Ok(Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(&F32R_MAGIC);
        for v in [self.width, self.height, self.channels] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || bytes[..4] != F32R_MAGIC {
            return Err(Error::Image("not an F32R raster".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes"));
        let (width, height, channels) = (word(0), word(1), word(2));
        let n = width as usize * height as usize * channels as usize;
        if bytes.len() != 16 + 4 * n {
            return Err(Error::Image(format!(
                "F32R payload is {} bytes, header implies {}",
                bytes.len() - 16,
                4 * n
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Raster::new(width, height, channels, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Raster::from_bytes(&bytes)
    }
}

/// Reads an 8-bit PNG as RGB in `[0, 1]` (grey is replicated, alpha dropped).
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let bytes = &buf[..info.buffer_size()];
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Image(format!("{}: unexpanded palette image", path.display())));
        }
    };
    let data = bytes
        .chunks_exact(stride)
        .map(|p| {
            let c = |k: usize| p[k] as f64 / 255.0;
            if stride < 3 {
                Vec3::splat(c(0))
            } else {
                Vec3::new(c(0), c(1), c(2))
            }
        })
        .collect();
    Ok(Image {
        width: info.width,
        height: info.height,
        data,
    })
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width, img.height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&img.to_rgb8())
        .and_then(|_| writer.finish())
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Object mask from a PNG: a pixel is object when its mean value exceeds one half.
pub fn read_mask(path: &Path) -> Result<(u32, u32, Vec<bool>)> {
    let img = read_png(path)?;
    let mask = img.data.iter().map(|c| (c.x + c.y + c.z) / 3.0 > 0.5).collect();
    Ok((img.width, img.height, mask))
}

pub fn write_mask(path: &Path, width: u32, height: u32, mask: &[bool]) -> Result<()> {
    let img = Image {
        width,
        height,
        data: mask.iter().map(|&m| Vec3::splat(if m { 1.0 } else { 0.0 })).collect(),
    };
    write_png(path, &img)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub depth: PathBuf,
    pub normal: PathBuf,
    /// Camera-to-world, row-major.
    pub c2w: [f64; 16],
    #[serde(default)]
    pub split: Split,
}

/// `scene.json`: intrinsics shared by all frames, per-frame files and poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub convention: String,
    pub intrinsics: Intrinsics,
    pub bounds: Bounds,
    pub frames: Vec<FrameEntry>,
    /// Free-form description of how the scene was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<serde_json::Value>,
}

impl SceneManifest {
    pub fn camera(&self, k: usize) -> Result<Camera> {
        let f = &self.frames[k];
        let i = &self.intrinsics;
        let mut c2w = [[0.0; 4]; 4];
        for (r, row) in c2w.iter_mut().enumerate() {
            row.copy_from_slice(&f.c2w[4 * r..4 * r + 4]);
        }
        Camera::new(i.fx, i.fy, i.cx, i.cy, i.width, i.height, c2w)
    }
}

pub fn c2w_flat(m: &[[f64; 4]; 4]) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        out[4 * r..4 * r + 4].copy_from_slice(&m[r]);
    }
    out
}

/// One posed view with its geometry. `depth` is the distance along the unit
/// ray; pixels with no valid depth (or outside the mask) have no surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub camera: Camera,
    pub image: Image,
    pub mask: Vec<bool>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub split: Split,
}

impl Frame {
    pub fn pixel_index(&self, i: u32, j: u32) -> usize {
        j as usize * self.camera.width as usize + i as usize
    }

    pub fn has_surface(&self, k: usize) -> bool {
        self.mask[k] && self.depth[k].is_finite() && self.depth[k] > 0.0
    }

    /// World-space surface point and normal at pixel `(i, j)`.
    pub fn surface_at(&self, i: u32, j: u32) -> Option<(f64, Vec3)> {
        let k = self.pixel_index(i, j);
        self.has_surface(k).then(|| (self.depth[k], self.normal[k]))
    }

    pub fn background_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }
}

impl Geometry for Frame {
    fn surface(&self, (i, j): (u32, u32), _o: Vec3, _d: Vec3) -> Option<(f64, Vec3)> {
        self.surface_at(i, j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: SceneManifest,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &Frame)> {
        self.frames.iter().enumerate().filter(move |(_, f)| f.split == split)
    }
}

fn frame_name(k: usize, f: &FrameEntry) -> String {
    format!("frame {k} ({})", f.image.display())
}

fn load_frame(root: &Path, manifest: &SceneManifest, k: usize) -> Result<Frame> {
    let entry = &manifest.frames[k];
    let name = frame_name(k, entry);
    let fail = |reason: String| Error::SceneLoad {
        frame: name.clone(),
        reason,
    };
    let camera = manifest.camera(k).map_err(|e| fail(format!("bad camera: {e}")))?;
    let (w, h) = (camera.width, camera.height);
    let size_check = |what: &str, ww: u32, hh: u32| {
        if (ww, hh) != (w, h) {
            Err(fail(format!("{what} is {ww}x{hh}, expected {w}x{h}")))
        } else {
            Ok(())
        }
    };
    let image = read_png(&root.join(&entry.image)).map_err(|e| fail(e.to_string()))?;
    size_check("image", image.width, image.height)?;
    let (mw, mh, mask) = read_mask(&root.join(&entry.mask)).map_err(|e| fail(e.to_string()))?;
    size_check("mask", mw, mh)?;
    let depth = Raster::load(&root.join(&entry.depth)).map_err(|e| fail(e.to_string()))?;
    size_check("depth", depth.width, depth.height)?;
    if depth.channels != 1 {
        return Err(fail(format!("depth has {} channels, expected 1", depth.channels)));
    }
    let normal = Raster::load(&root.join(&entry.normal)).map_err(|e| fail(e.to_string()))?;
    size_check("normal", normal.width, normal.height)?;
    if normal.channels != 3 {
        return Err(fail(format!("normal has {} channels, expected 3", normal.channels)));
    }
    Ok(Frame {
        name,
        camera,
        image,
        mask,
        depth: depth.data.iter().map(|&v| v as f64).collect(),
        normal: normal
            .data
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
            .collect(),
        split: entry.split,
    })
}

/// Loads `scene.json` (or a directory containing it) with every raster.
pub fn load_scene(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() {
        path.join("scene.json")
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| Error::SceneLoad {
        frame: "manifest".into(),
        reason: e.to_string(),
    })?;
    if manifest.convention != CONVENTION {
        return Err(Error::SceneLoad {
            frame: "manifest".into(),
            reason: format!(
                "unsupported camera convention {:?}, expected {CONVENTION:?}",
                manifest.convention
            ),
        });
    }
    if manifest.frames.is_empty() {
        return Err(Error::SceneLoad {
            frame: "manifest".into(),
            reason: "no frames".into(),
        });
    }
    let frames = crate::util::par_map(manifest.frames.len(), |k| load_frame(&root, &manifest, k))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { root, manifest, frames })
}

/// Writes `scene.json` and every frame's rasters below `dir`, using the
/// paths recorded in the manifest.
pub fn save_scene(dir: &Path, manifest: &SceneManifest, frames: &[Frame]) -> Result<()> {
    if manifest.frames.len() != frames.len() {
        return Err(Error::Shape("one frame per manifest entry expected".into()));
    }
    for (entry, f) in manifest.frames.iter().zip(frames) {
        for p in [&entry.image, &entry.mask, &entry.depth, &entry.normal] {
            if let Some(parent) = dir.join(p).parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let (w, h) = (f.camera.width, f.camera.height);
        write_png(&dir.join(&entry.image), &f.image)?;
        write_mask(&dir.join(&entry.mask), w, h, &f.mask)?;
        Raster::new(w, h, 1, f.depth.iter().map(|&v| v as f32).collect())?.save(&dir.join(&entry.depth))?;
        Raster::new(
            w,
            h,
            3,
            f.normal.iter().flat_map(|n| n.to_array()).map(|v| v as f32).collect(),
        )?
        .save(&dir.join(&entry.normal))?;
    }
    let path = dir.join("scene.json");
    let mut file = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    serde_json::to_writer_pretty(&mut file, manifest)?;
    file.write_all(b"\n")
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(&path, e))
}

/// Fraction of pixels (with a full 4-neighbourhood of valid depth) whose
/// stored normal is within `max_angle_deg` of the normal implied by depth.
pub fn depth_normal_consistency(frame: &Frame, max_angle_deg: f64) -> Result<f64> {
    let cam = &frame.camera;
    let point = |i: u32, j: u32| -> Result<Option<Vec3>> {
        let k = frame.pixel_index(i, j);
        if !frame.has_surface(k) {
            return Ok(None);
        }
        let (o, d) = cam.ray(i, j)?;
        Ok(Some(o + d * frame.depth[k]))
    };
    let cos_max = max_angle_deg.to_radians().cos();
    let (mut good, mut total) = (0usize, 0usize);
    for j in 1..cam.height.saturating_sub(1) {
        for i in 1..cam.width.saturating_sub(1) {
            let (Some(c), Some(l), Some(r), Some(u), Some(dn)) = (
                point(i, j)?,
                point(i - 1, j)?,
                point(i + 1, j)?,
                point(i, j - 1)?,
                point(i, j + 1)?,
            ) else {
                continue;
            };
            let Some(mut n) = (r - l).cross(dn - u).normalized() else {
                continue;
            };
            if n.dot(cam.center() - c) < 0.0 {
                n = -n;
            }
            let stored = frame.normal[frame.pixel_index(i, j)];
            total += 1;
            if stored.normalized().is_some_and(|s| s.dot(n) >= cos_max) {
                good += 1;
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { good as f64 / total as f64 })
}
