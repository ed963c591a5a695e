use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR in dB for images in `[0, 1]`; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    let n = 3 * a.data.len();
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (*x - *y).norm_squared())
        .sum::<f64>()
        / n.max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// PSNR over the pixels with `keep[k]` set.
pub fn psnr_masked(a: &Image, b: &Image, keep: &[bool]) -> Result<f64> {
    a.same_size(b)?;
    if keep.len() != a.data.len() {
        return Err(Error::Shape(format!(
            "mask has {} pixels, image has {}",
            keep.len(),
            a.data.len()
        )));
    }
    let n = 3 * keep.iter().filter(|k| **k).count();
    if n == 0 {
        return Err(Error::InvalidArgument("empty PSNR mask".into()));
    }
    let se: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|((x, y), _)| (*x - *y).norm_squared())
        .sum();
    let mse = se / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Text form used in tables and logs (`inf` for identical images).
pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn ssim_window() -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-0.5 * (x as f64 / SSIM_SIGMA).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-region separable filtering of a `w × h` plane with a `2r+1` kernel.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for j in 0..h {
        for i in 0..ow {
            rows[j * ow + i] = k.iter().enumerate().map(|(t, kv)| kv * x[j * w + i + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for j in 0..oh {
        for i in 0..ow {
            out[j * ow + i] = k.iter().enumerate().map(|(t, kv)| kv * rows[(j + t) * ow + i]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), dynamic range 1,
/// averaged over channels and over window positions fully inside the image.
/// Images smaller than the window use one uniform window over all pixels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let index = |mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64| {
        ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    };
    let full = 2 * SSIM_RADIUS + 1;
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|v| v[c]).collect();
        let y: Vec<f64> = b.data.iter().map(|v| v[c]).collect();
        if w < full || h < full {
            let n = x.len() as f64;
            let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
            let cov = |p: &[f64], q: &[f64], mp: f64, mq: f64| {
                p.iter().zip(q).map(|(u, v)| (u - mp) * (v - mq)).sum::<f64>() / n
            };
            total += index(mx, my, cov(&x, &x, mx, mx), cov(&y, &y, my, my), cov(&x, &y, mx, my));
            continue;
        }
        let k = ssim_window();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let (mx, ow, oh) = filter_valid(&x, w, h, &k);
        let (my, _, _) = filter_valid(&y, w, h, &k);
        let (exx, _, _) = filter_valid(&prod(&x, &x), w, h, &k);
        let (eyy, _, _) = filter_valid(&prod(&y, &y), w, h, &k);
        let (exy, _, _) = filter_valid(&prod(&x, &y), w, h, &k);
        let mut sum = 0.0;
        for p in 0..ow * oh {
            sum += index(
                mx[p],
                my[p],
                exx[p] - mx[p] * mx[p],
                eyy[p] - my[p] * my[p],
                exy[p] - mx[p] * my[p],
            );
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}
