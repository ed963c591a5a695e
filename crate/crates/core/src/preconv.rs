use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{LobeParams, Vec3};
use crate::scenes::io::{Dataset, Raster};
use crate::util::par_map;

pub const DEFAULT_SIGMAS: [f64; 5] = [0.0, 1.0, 2.0, 4.0, 8.0];

/// Truncation radius `ceil(3σ)` in pixels.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Sampled 1-D Gaussian over `[-ceil(3σ), ceil(3σ)]`, normalised to sum 1.
/// The 2-D kernel is the outer product of two of these.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "blur sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let r = kernel_radius(sigma) as i64;
    let mut k: Vec<f64> = (-r..=r).map(|x| (-0.5 * (x as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Full 2-D kernel, row-major `(2R+1)²`.
pub fn gaussian_kernel_2d(sigma: f64) -> Result<Vec<f64>> {
    let k = gaussian_kernel(sigma)?;
    Ok(k.iter().flat_map(|a| k.iter().map(move |b| a * b)).collect())
}

/// Mass of the sampled 2-D Gaussian inside the truncation window, relative
/// to the untruncated sampled Gaussian.
pub fn retained_mass_2d(sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let g = |x: i64| (-0.5 * (x as f64 / sigma).powi(2)).exp();
    let r = kernel_radius(sigma) as i64;
    let wide = (12.0 * sigma).ceil() as i64;
    let inner: f64 = (-r..=r).map(g).sum();
    let all: f64 = (-wide..=wide).map(g).sum();
    (inner / all).powi(2)
}

/// Reflect (mirror without repeating the edge) an index into `0..n`.
fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

fn convolve_rows(src: &[[f64; 4]], w: usize, h: usize, k: &[f64]) -> Vec<[f64; 4]> {
    let r = (k.len() / 2) as i64;
    let rows = par_map(h, |j| {
        let row = &src[j * w..(j + 1) * w];
        (0..w)
            .map(|i| {
                let mut acc = [0.0; 4];
                for (t, kv) in k.iter().enumerate() {
                    let s = row[reflect_index(i as i64 + t as i64 - r, w)];
                    for c in 0..4 {
                        acc[c] += kv * s[c];
                    }
                }
                acc
            })
            .collect::<Vec<_>>()
    });
    rows.concat()
}

fn transpose(src: &[[f64; 4]], w: usize, h: usize) -> Vec<[f64; 4]> {
    let mut out = vec![[0.0; 4]; w * h];
    for j in 0..h {
        for i in 0..w {
            out[i * h + j] = src[j * w + i];
        }
    }
    out
}

/// One pre-convolved copy of an image. `valid[k]` marks background pixels
/// (the only ones used as targets).
#[derive(Debug, Clone, PartialEq)]
pub struct BlurLevel {
    pub sigma: f64,
    pub image: Image,
    pub valid: Vec<bool>,
}

/// Masked, normalised Gaussian blur of `image` for every sigma. Object
/// pixels (`mask[k] == true`) are never read; borders use reflect padding.
pub fn build_levels(image: &Image, sigmas: &[f64], mask: &[bool]) -> Result<Vec<BlurLevel>> {
    let (w, h) = (image.width as usize, image.height as usize);
    if mask.len() != w * h {
        return Err(Error::Shape(format!(
            "mask has {} pixels, image has {}",
            mask.len(),
            w * h
        )));
    }
    if sigmas.is_empty() {
        return Err(Error::invalid("at least one blur level is required"));
    }
    if sigmas.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::invalid(format!(
            "blur sigmas must be strictly increasing, got {sigmas:?}"
        )));
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::invalid("image has no background pixels"));
    }
    // premultiplied colour and coverage
    let src: Vec<[f64; 4]> = image
        .data
        .iter()
        .zip(mask)
        .map(|(c, &m)| if m { [0.0; 4] } else { [c.x, c.y, c.z, 1.0] })
        .collect();
    sigmas
        .iter()
        .map(|&sigma| {
            let k = gaussian_kernel(sigma)?;
            let blurred = if k.len() == 1 {
                src.clone()
            } else {
                let a = convolve_rows(&src, w, h, &k);
                let b = convolve_rows(&transpose(&a, w, h), h, w, &k);
                transpose(&b, h, w)
            };
            let data = blurred
                .iter()
                .map(|p| {
                    if p[3] > 0.0 {
                        Vec3::new(p[0], p[1], p[2]) / p[3]
                    } else {
                        Vec3::ZERO
                    }
                })
                .collect();
            Ok(BlurLevel {
                sigma,
                image: Image {
                    width: image.width,
                    height: image.height,
                    data,
                },
                valid: mask.iter().map(|m| !m).collect(),
            })
        })
        .collect()
}

/// Anisotropic total variation `Σ |∂x I| + |∂y I|` over all channels.
pub fn total_variation(img: &Image) -> f64 {
    let mut tv = 0.0;
    for j in 0..img.height {
        for i in 0..img.width {
            let c = img.get(i, j);
            if i + 1 < img.width {
                let d = img.get(i + 1, j) - c;
                tv += d.x.abs() + d.y.abs() + d.z.abs();
            }
            if j + 1 < img.height {
                let d = img.get(i, j + 1) - c;
                tv += d.x.abs() + d.y.abs() + d.z.abs();
            }
        }
    }
    tv
}

/// A supervised background pixel at one blur level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundSample {
    pub frame: usize,
    pub pixel: (u32, u32),
    pub level: usize,
    pub sigma: f64,
    pub target: Vec3,
    pub lobe: LobeParams,
}

/// Every valid background pixel once per level, with lobe `{3σ, r0, t_near, t_far}`.
pub fn make_background_set(
    frame: usize,
    levels: &[BlurLevel],
    r0: f64,
    t_near: f64,
    t_far: f64,
) -> Result<Vec<BackgroundSample>> {
    let mut out = Vec::new();
    for (li, level) in levels.iter().enumerate() {
        let lobe = LobeParams::new(3.0 * level.sigma, r0, t_near, t_far)?;
        let w = level.image.width;
        for (k, &ok) in level.valid.iter().enumerate() {
            if ok {
                out.push(BackgroundSample {
                    frame,
                    pixel: (k as u32 % w, k as u32 / w),
                    level: li,
                    sigma: level.sigma,
                    target: level.image.data[k],
                    lobe,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedLevel {
    pub frame: usize,
    pub sigma: f64,
    pub path: PathBuf,
}

/// `preconv/levels.json`: which rasters hold which level, keyed by a hash of
/// the inputs so stale caches are rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelManifest {
    pub key: String,
    pub sigmas: Vec<f64>,
    pub levels: Vec<CachedLevel>,
}

/// Content hash over every frame's pixels, mask and the sigma schedule.
pub fn cache_key(dataset: &Dataset, sigmas: &[f64]) -> String {
    let mut h = Sha256::new();
    for s in sigmas {
        h.update(s.to_le_bytes());
    }
    for f in &dataset.frames {
        h.update(f.image.width.to_le_bytes());
        h.update(f.image.height.to_le_bytes());
        for c in &f.image.data {
            for v in c.to_array() {
                h.update(v.to_le_bytes());
            }
        }
        h.update(f.mask.iter().map(|&m| m as u8).collect::<Vec<_>>());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub const CACHE_DIR: &str = "preconv";

/// Levels for every frame, read from the cache beside the dataset when the
/// key matches and rebuilt (and written) otherwise. Returns the levels and
/// whether they came from the cache.
pub fn load_or_build_levels(
    dataset: &Dataset,
    sigmas: &[f64],
    write_cache: bool,
) -> Result<(Vec<Vec<BlurLevel>>, bool)> {
    let key = cache_key(dataset, sigmas);
    let dir = dataset.root.join(CACHE_DIR);
    let manifest_path = dir.join("levels.json");
    if let Ok(text) = std::fs::read_to_string(&manifest_path) {
        if let Ok(m) = serde_json::from_str::<LevelManifest>(&text) {
            if m.key == key {
                if let Ok(levels) = read_cached(dataset, &dir, &m) {
                    return Ok((levels, true));
                }
                log::warn!("pre-convolution cache in {} is unreadable; rebuilding", dir.display());
            }
        }
    }
    let mut levels = dataset
        .frames
        .iter()
        .map(|f| build_levels(&f.image, sigmas, &f.mask))
        .collect::<Result<Vec<_>>>()?;
    // the cache holds f32; round fresh levels the same way so that a run
    // does not depend on whether the cache existed
    for l in levels.iter_mut().flatten() {
        for c in &mut l.image.data {
            *c = c.map(|v| v as f32 as f64);
        }
    }
    if write_cache {
        write_cache_files(&dir, &key, sigmas, &levels)?;
    }
    Ok((levels, false))
}

fn read_cached(dataset: &Dataset, dir: &Path, m: &LevelManifest) -> Result<Vec<Vec<BlurLevel>>> {
    let mut out: Vec<Vec<BlurLevel>> = vec![Vec::new(); dataset.frames.len()];
    for c in &m.levels {
        let f = dataset
            .frames
            .get(c.frame)
            .ok_or_else(|| Error::invalid("cache names a missing frame"))?;
        let image = Raster::load(&dir.join(&c.path))?.to_image()?;
        image.same_size(&f.image)?;
        out[c.frame].push(BlurLevel {
            sigma: c.sigma,
            image,
            valid: f.mask.iter().map(|m| !m).collect(),
        });
    }
    if out.iter().any(|l| l.len() != m.sigmas.len()) {
        return Err(Error::invalid("incomplete cache"));
    }
    Ok(out)
}

fn write_cache_files(dir: &Path, key: &str, sigmas: &[f64], levels: &[Vec<BlurLevel>]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (fi, frame_levels) in levels.iter().enumerate() {
        for (li, level) in frame_levels.iter().enumerate() {
            let path = PathBuf::from(format!("f{fi:04}_l{li}.f32r"));
            Raster::from_image(&level.image).save(&dir.join(&path))?;
            entries.push(CachedLevel {
                frame: fi,
                sigma: level.sigma,
                path,
            });
        }
    }
    let manifest = LevelManifest {
        key: key.to_string(),
        sigmas: sigmas.to_vec(),
        levels: entries,
    };
    let path = dir.join("levels.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Parses `"0,1,2,4,8"`.
pub fn parse_sigmas(s: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::invalid(format!("bad sigma list {s:?}: {e}")))?;
    if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || v.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::invalid(format!(
            "sigmas must be non-negative and strictly increasing, got {s:?}"
        )));
    }
    Ok(v)
}
