use thiserror::Error;

use super::ColorImage;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsimError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable filtering of a single-channel plane.
fn filter_valid(plane: &[f64], width: usize, height: usize, w: &[f64; WINDOW]) -> Vec<f64> {
    let ow = width - WINDOW + 1;
    let oh = height - WINDOW + 1;
    let mut horiz = vec![0.0; ow * height];
    for r in 0..height {
        let row = &plane[r * width..(r + 1) * width];
        for c in 0..ow {
            horiz[r * ow + c] = (0..WINDOW).map(|k| row[c + k] * w[k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..WINDOW).map(|k| horiz[(r + k) * ow + c] * w[k]).sum();
        }
    }
    out
}

fn ssim_term(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let c1 = (K1 * 1.0).powi(2);
    let c2 = (K2 * 1.0).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

fn channel_ssim(x: &[f64], y: &[f64], width: usize, height: usize) -> f64 {
    if width < WINDOW || height < WINDOW {
        // a single window covering the whole (small) image
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        return ssim_term(mx, my, vx, vy, cxy);
    }
    let w = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, width, height, &w);
    let mu_y = filter_valid(y, width, height, &w);
    let e_xx = filter_valid(&xx, width, height, &w);
    let e_yy = filter_valid(&yy, width, height, &w);
    let e_xy = filter_valid(&xy, width, height, &w);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            ssim_term(
                mx,
                my,
                e_xx[i] - mx * mx,
                e_yy[i] - my * my,
                e_xy[i] - mx * my,
            )
        })
        .sum();
    total / mu_x.len() as f64
}

/// Mean SSIM over channels and valid window positions (11×11 Gaussian
/// window, σ = 1.5, k1 = 0.01, k2 = 0.03, dynamic range 1).
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64, SsimError> {
    if a.width != b.width || a.height != b.height {
        return Err(SsimError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let mut sum = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        sum += channel_ssim(&x, &y, a.width, a.height);
    }
    Ok((sum / 3.0).clamp(-1.0, 1.0))
}
