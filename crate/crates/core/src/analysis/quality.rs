//! MSE, PSNR and SSIM between two latent videos.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Side of the uniform SSIM window; clipped to the frame size.
pub const SSIM_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub mse: f64,
    /// `+∞` when the inputs are identical.
    pub psnr: f64,
    pub ssim: f64,
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b, "mse")?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    }
}

pub fn psnr(a: &Tensor, b: &Tensor, range: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, range))
}

/// Summed-area table of one channel plane, `(h+1)×(w+1)`.
fn integral(plane: impl Fn(usize, usize) -> f64, h: usize, w: usize) -> Vec<f64> {
    let mut s = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += plane(y, x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

fn window_sum(s: &[f64], w: usize, y: usize, x: usize, k: usize) -> f64 {
    let stride = w + 1;
    s[(y + k) * stride + x + k] - s[y * stride + x + k] - s[(y + k) * stride + x] + s[y * stride + x]
}

/// Mean SSIM over all valid windows of every frame and channel.
pub fn ssim(a: &Tensor, b: &Tensor, range: f64) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    if !(range > 0.0) {
        return Err(Error::invalid("ssim data range must be > 0"));
    }
    let s = a.shape();
    let (h, w, c) = (s.height, s.width, s.channels);
    let k = SSIM_WINDOW.min(h).min(w);
    let n = (k * k) as f64;
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let (mut total, mut count) = (0.0, 0usize);
    for f in 0..s.frames {
        let (fa, fb) = (a.frame(f), b.frame(f));
        for ch in 0..c {
            let at = |y: usize, x: usize| fa[(y * w + x) * c + ch];
            let bt = |y: usize, x: usize| fb[(y * w + x) * c + ch];
            let sa = integral(at, h, w);
            let sb = integral(bt, h, w);
            let saa = integral(|y, x| at(y, x) * at(y, x), h, w);
            let sbb = integral(|y, x| bt(y, x) * bt(y, x), h, w);
            let sab = integral(|y, x| at(y, x) * bt(y, x), h, w);
            for y in 0..=h - k {
                for x in 0..=w - k {
                    let ma = window_sum(&sa, w, y, x, k) / n;
                    let mb = window_sum(&sb, w, y, x, k) / n;
                    let va = window_sum(&saa, w, y, x, k) / n - ma * ma;
                    let vb = window_sum(&sbb, w, y, x, k) / n - mb * mb;
                    let cov = window_sum(&sab, w, y, x, k) / n - ma * mb;
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Dynamic range of `reference`, or 1 when it is constant.
pub fn data_range(reference: &Tensor) -> f64 {
    let lo = reference.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

pub fn quality_metrics(reference: &Tensor, test: &Tensor, range: Option<f64>) -> Result<QualityMetrics> {
    let range = range.unwrap_or_else(|| data_range(reference));
    let m = mse(reference, test)?;
    Ok(QualityMetrics {
        mse: m,
        psnr: psnr_from_mse(m, range),
        ssim: ssim(reference, test, range)?,
    })
}

/// Metrics over a multi-chunk video, treated as one long sequence of frames.
pub fn video_quality(reference: &[Tensor], test: &[Tensor], range: Option<f64>) -> Result<QualityMetrics> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::invalid("videos must have the same, non-zero number of chunks"));
    }
    let shape = reference[0].shape();
    let cat = |v: &[Tensor]| -> Result<Tensor> {
        let data = v.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::new(
            crate::tensor::Shape::new(shape.frames * v.len(), shape.height, shape.width, shape.channels)?,
            data,
        )
    };
    for (a, b) in reference.iter().zip(test) {
        a.ensure_same_shape(&reference[0], "video quality")?;
        b.ensure_same_shape(&reference[0], "video quality")?;
    }
    quality_metrics(&cat(reference)?, &cat(test)?, range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;

    /// Direct per-window SSIM with no shared machinery.
    fn ssim_naive(a: &Tensor, b: &Tensor, range: f64) -> f64 {
        let s = a.shape();
        let k = 7.min(s.height).min(s.width);
        let c1 = (0.01 * range) * (0.01 * range);
        let c2 = (0.03 * range) * (0.03 * range);
        let mut vals = vec![];
        for f in 0..s.frames {
            for ch in 0..s.channels {
                for y0 in 0..=s.height - k {
                    for x0 in 0..=s.width - k {
                        let mut pa = vec![];
                        let mut pb = vec![];
                        for y in y0..y0 + k {
                            for x in x0..x0 + k {
                                let i = ((f * s.height + y) * s.width + x) * s.channels + ch;
                                pa.push(a.data()[i]);
                                pb.push(b.data()[i]);
                            }
                        }
                        let n = pa.len() as f64;
                        let ma = pa.iter().sum::<f64>() / n;
                        let mb = pb.iter().sum::<f64>() / n;
                        let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                        let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                        let cov = pa.iter().zip(&pb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
                        vals.push(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
                    }
                }
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    fn tensor(shape: Shape, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::new(shape, (0..shape.len()).map(f).collect()).unwrap()
    }

    #[test]
    fn identical_inputs() {
        let a = tensor(Shape::new(2, 9, 8, 2).unwrap(), |i| (i as f64 * 0.13).sin());
        let q = quality_metrics(&a, &a, Some(1.0)).unwrap();
        assert_eq!(q.mse, 0.0);
        assert_eq!(q.psnr, f64::INFINITY);
        assert_eq!(q.ssim, 1.0);
    }

    #[test]
    fn uniform_offset() {
        let shape = Shape::new(1, 8, 8, 1).unwrap();
        let a = tensor(shape, |i| (i % 5) as f64 * 0.1);
        let b = a.map(|v| v + 0.1);
        let q = quality_metrics(&a, &b, Some(1.0)).unwrap();
        assert!((q.mse - 0.01).abs() < 1e-15);
        assert!((q.psnr - 20.0).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_reference() {
        let shape = Shape::new(2, 10, 9, 3).unwrap();
        let a = tensor(shape, |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
        let b = tensor(shape, |i| ((i * 104729) % 97) as f64 / 48.0 - 1.0);
        let fast = ssim(&a, &b, 2.0).unwrap();
        assert!((fast - ssim_naive(&a, &b, 2.0)).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_psnr_monotone(seed in 0u64..500, scale in 0.01f64..1.0) {
            let shape = Shape::new(1, 8, 8, 1).unwrap();
            let a = tensor(shape, |i| ((i as u64 * 31 + seed) % 17) as f64 / 17.0);
            let b = tensor(shape, |i| ((i as u64 * 13 + seed * 7) % 19) as f64 / 19.0);
            prop_assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
            prop_assert!((ssim(&a, &b, 1.0).unwrap() - ssim_naive(&a, &b, 1.0)).abs() < 1e-10);
            prop_assert!(psnr_from_mse(scale, 1.0) > psnr_from_mse(scale * 1.5, 1.0));
        }
    }
}
