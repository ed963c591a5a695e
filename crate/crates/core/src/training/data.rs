use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::preconv::BlurLevel;
use crate::renderer::SurfaceSample;
use crate::scenes::{Dataset, Frame, Split};
use crate::training::losses::image_gradient_magnitude;
use crate::util::rng_for;

/// Which loss a batch ray feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Object pixel of an input image (`l_rec`, `l_s`).
    Image,
    /// Pre-convolved background pixel (`l_pre`).
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRay {
    pub provenance: Provenance,
    /// Index into the training frames.
    pub frame: usize,
    pub pixel: (u32, u32),
    /// Blur level for background rays, 0 for image rays.
    pub level: usize,
    pub sigma: f64,
    pub target: Vec3,
    /// `‖∇_p I‖` at the pixel (image rays).
    pub image_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBatch {
    pub rays: Vec<BatchRay>,
}

impl TrainBatch {
    pub fn count(&self, p: Provenance) -> usize {
        self.rays.iter().filter(|r| r.provenance == p).count()
    }
}

/// Uniform choice over a union of per-bucket index lists.
struct Buckets {
    items: Vec<Vec<u32>>,
    /// Running totals: `ends[b]` counts items in buckets `0..=b`.
    ends: Vec<usize>,
}

impl Buckets {
    fn new(items: Vec<Vec<u32>>) -> Self {
        let mut total = 0;
        let ends = items
            .iter()
            .map(|v| {
                total += v.len();
                total
            })
            .collect();
        Buckets { items, ends }
    }

    fn total(&self) -> usize {
        self.ends.last().copied().unwrap_or(0)
    }

    fn pick(&self, u: usize) -> (usize, u32) {
        let b = self.ends.partition_point(|&e| e <= u);
        let start = if b == 0 { 0 } else { self.ends[b - 1] };
        (b, self.items[b][u - start])
    }
}

/// Training frames with their blur pyramids and precomputed sampling indices.
pub struct TrainData {
    pub frames: Vec<Frame>,
    pub levels: Vec<Vec<BlurLevel>>,
    pub image_grads: Vec<Vec<f64>>,
    surface: Buckets,
    /// One bucket per `(frame, level)`, level-major within a frame.
    background: Buckets,
    n_levels: usize,
}

impl TrainData {
    /// `levels` holds one pyramid per dataset frame (all splits).
    pub fn new(dataset: &Dataset, levels: Vec<Vec<BlurLevel>>) -> Result<Self> {
        if levels.len() != dataset.frames.len() {
            return Err(Error::Shape("one blur pyramid per frame expected".into()));
        }
        let mut frames = Vec::new();
        let mut pyramids = Vec::new();
        for (f, l) in dataset.frames.iter().zip(levels) {
            if f.split == Split::Train {
                frames.push(f.clone());
                pyramids.push(l);
            }
        }
        if frames.is_empty() {
            return Err(Error::invalid("dataset has no training frames"));
        }
        let n_levels = pyramids[0].len();
        if pyramids.iter().any(|p| p.len() != n_levels) || n_levels == 0 {
            return Err(Error::Shape("every frame needs the same number of blur levels".into()));
        }
        let image_grads = frames
            .iter()
            .map(|f| image_gradient_magnitude(&f.image.luminance(), f.image.width, f.image.height))
            .collect::<Result<Vec<_>>>()?;
        let surface = Buckets::new(
            frames
                .iter()
                .map(|f| {
                    (0..f.mask.len())
                        .filter(|&k| f.has_surface(k))
                        .map(|k| k as u32)
                        .collect()
                })
                .collect(),
        );
        let background = Buckets::new(
            pyramids
                .iter()
                .flat_map(|p| {
                    p.iter().map(|l| {
                        l.valid
                            .iter()
                            .enumerate()
                            .filter(|(_, &ok)| ok)
                            .map(|(k, _)| k as u32)
                            .collect::<Vec<_>>()
                    })
                })
                .collect(),
        );
        Ok(TrainData {
            frames,
            levels: pyramids,
            image_grads,
            surface,
            background,
            n_levels,
        })
    }

    pub fn surface_count(&self) -> usize {
        self.surface.total()
    }

    pub fn background_count(&self) -> usize {
        self.background.total()
    }

    fn pixel_of(&self, frame: usize, k: u32) -> (u32, u32) {
        let w = self.frames[frame].image.width;
        (k % w, k / w)
    }

    /// Batch of iteration `iteration`: each ray is an object pixel with
    /// probability `image_fraction`, otherwise a background pixel of a
    /// uniformly chosen `(frame, level, pixel)`. Falls back to the other
    /// kind when one pool is empty.
    pub fn sample_batch(&self, seed: u64, iteration: u64, size: usize, image_fraction: f64) -> Result<TrainBatch> {
        let (ns, nb) = (self.surface.total(), self.background.total());
        if ns == 0 && nb == 0 {
            return Err(Error::invalid("no object or background pixels to train on"));
        }
        let mut rng = rng_for(seed, iteration);
        let mut rays = Vec::with_capacity(size);
        for _ in 0..size {
            let want_image = rng.random::<f64>() < image_fraction;
            let u: f64 = rng.random();
            if (want_image && ns > 0) || nb == 0 {
                let (frame, k) = self.surface.pick(((u * ns as f64) as usize).min(ns - 1));
                rays.push(BatchRay {
                    provenance: Provenance::Image,
                    frame,
                    pixel: self.pixel_of(frame, k),
                    level: 0,
                    sigma: 0.0,
                    target: self.frames[frame].image.data[k as usize],
                    image_grad: self.image_grads[frame][k as usize],
                });
            } else {
                let (b, k) = self.background.pick(((u * nb as f64) as usize).min(nb - 1));
                let (frame, level) = (b / self.n_levels, b % self.n_levels);
                let l = &self.levels[frame][level];
                rays.push(BatchRay {
                    provenance: Provenance::Background,
                    frame,
                    pixel: self.pixel_of(frame, k),
                    level,
                    sigma: l.sigma,
                    target: l.image.data[k as usize],
                    image_grad: 0.0,
                });
            }
        }
        Ok(TrainBatch { rays })
    }

    /// Camera ray of a batch ray and, for image rays, its surface sample.
    pub fn geometry(&self, ray: &BatchRay) -> Result<(Vec3, Vec3, Option<SurfaceSample>)> {
        let f = &self.frames[ray.frame];
        let (o, d) = f.camera.ray(ray.pixel.0, ray.pixel.1)?;
        let surface = match ray.provenance {
            Provenance::Image => {
                let (depth, n) = f
                    .surface_at(ray.pixel.0, ray.pixel.1)
                    .ok_or_else(|| Error::invalid(format!("no surface at {:?} in {}", ray.pixel, f.name)))?;
                Some(SurfaceSample::new(o, d, depth, n))
            }
            Provenance::Background => None,
        };
        Ok((o, d, surface))
    }
}
