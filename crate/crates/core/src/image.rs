use crate::error::{Error, Result};
use crate::math::Vec3;

/// Row-major RGB image with real-valued channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<Vec3>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Image {
            width,
            height,
            data: vec![Vec3::ZERO; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Vec3) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for j in 0..height {
            for i in 0..width {
                data.push(f(i, j));
            }
        }
        Image { width, height, data }
    }

    pub fn index(&self, i: u32, j: u32) -> usize {
        j as usize * self.width as usize + i as usize
    }

    pub fn get(&self, i: u32, j: u32) -> Vec3 {
        self.data[self.index(i, j)]
    }

    pub fn set(&mut self, i: u32, j: u32, v: Vec3) {
        let k = self.index(i, j);
        self.data[k] = v;
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// 8-bit quantisation with rounding; values are clamped to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|v| v.to_array())
            .map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width as usize * height as usize * 3 {
            return Err(Error::Shape("rgb8 buffer size does not match image size".into()));
        }
        Ok(Image {
            width,
            height,
            data: bytes
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0))
                .collect(),
        })
    }

    /// Mean absolute per-channel difference over the pixels where `keep` holds.
    pub fn mean_abs_diff(&self, other: &Image, keep: impl Fn(usize) -> bool) -> Result<f64> {
        self.same_size(other)?;
        let (mut sum, mut n) = (0.0, 0usize);
        for (k, (a, b)) in self.data.iter().zip(&other.data).enumerate() {
            if keep(k) {
                let d = *a - *b;
                sum += d.x.abs() + d.y.abs() + d.z.abs();
                n += 3;
            }
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|c| 0.2126 * c.x + 0.7152 * c.y + 0.0722 * c.z)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_round_trip() {
        let img = Image::from_fn(3, 2, |i, j| Vec3::new(i as f64 / 2.0, j as f64, 0.5));
        let back = Image::from_rgb8(3, 2, &img.to_rgb8()).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
        assert!(back.mean_abs_diff(&img, |_| true).unwrap() < 1.0 / 255.0);
    }
}
