//! Dense optical flow between consecutive frames (Horn–Schunck) rendered as
//! the standard HSV color-wheel visualization: hue encodes direction, value
//! encodes per-frame-normalized magnitude, saturation is fixed at 255.

use image::{Rgb, RgbImage};

use super::filters::to_gray;

pub const FLOW_LAMBDA: f32 = 0.1;
pub const FLOW_MAX_ITERS: usize = 100;
pub const FLOW_TOL: f32 = 1e-4;

/// Dense flow field; `u` is horizontal (+x right), `v` vertical (+y down),
/// both in pixels, describing motion from the first frame to the second.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn mean(&self) -> (f32, f32) {
        let n = self.u.len().max(1) as f32;
        (
            self.u.iter().sum::<f32>() / n,
            self.v.iter().sum::<f32>() / n,
        )
    }
}

/// Horn–Schunck flow between two equally sized frames.
///
/// Intensities are normalized to [0, 1]; `lambda` is the smoothness weight in
/// the update denominator `lambda + Ix^2 + Iy^2`. Iterates until the mean
/// absolute update drops below `tol` or `max_iters` is reached.
pub fn horn_schunck(
    prev: &RgbImage,
    next: &RgbImage,
    lambda: f32,
    max_iters: usize,
    tol: f32,
) -> FlowField {
    assert_eq!(prev.dimensions(), next.dimensions(), "frame size mismatch");
    let (w, h) = prev.dimensions();
    let n = (w * h) as usize;
    let g1: Vec<f32> = to_gray(prev).iter().map(|v| v / 255.0).collect();
    let g2: Vec<f32> = to_gray(next).iter().map(|v| v / 255.0).collect();

    let wi = w as i64;
    let hi = h as i64;
    let at = |g: &[f32], x: i64, y: i64| -> f32 {
        let xc = x.clamp(0, wi - 1) as usize;
        let yc = y.clamp(0, hi - 1) as usize;
        g[yc * w as usize + xc]
    };

    // Horn & Schunck derivative estimates averaged over the 2x2x2 cube.
    let mut ix = vec![0f32; n];
    let mut iy = vec![0f32; n];
    let mut it = vec![0f32; n];
    for y in 0..hi {
        for x in 0..wi {
            let i = (y * wi + x) as usize;
            ix[i] = 0.25
                * (at(&g1, x + 1, y) - at(&g1, x, y) + at(&g1, x + 1, y + 1)
                    - at(&g1, x, y + 1)
                    + at(&g2, x + 1, y)
                    - at(&g2, x, y)
                    + at(&g2, x + 1, y + 1)
                    - at(&g2, x, y + 1));
            iy[i] = 0.25
                * (at(&g1, x, y + 1) - at(&g1, x, y) + at(&g1, x + 1, y + 1)
                    - at(&g1, x + 1, y)
                    + at(&g2, x, y + 1)
                    - at(&g2, x, y)
                    + at(&g2, x + 1, y + 1)
                    - at(&g2, x + 1, y));
            it[i] = 0.25
                * (at(&g2, x, y) - at(&g1, x, y) + at(&g2, x + 1, y) - at(&g1, x + 1, y)
                    + at(&g2, x, y + 1)
                    - at(&g1, x, y + 1)
                    + at(&g2, x + 1, y + 1)
                    - at(&g1, x + 1, y + 1));
        }
    }

    let mut u = vec![0f32; n];
    let mut v = vec![0f32; n];
    // Weighted 8-neighbor local average from the original scheme.
    let avg = |f: &[f32], x: i64, y: i64| -> f32 {
        let c = |xx: i64, yy: i64| -> f32 {
            let xc = xx.clamp(0, wi - 1) as usize;
            let yc = yy.clamp(0, hi - 1) as usize;
            f[yc * w as usize + xc]
        };
        (c(x - 1, y) + c(x + 1, y) + c(x, y - 1) + c(x, y + 1)) / 6.0
            + (c(x - 1, y - 1) + c(x + 1, y - 1) + c(x - 1, y + 1) + c(x + 1, y + 1)) / 12.0
    };

    for _ in 0..max_iters {
        let mut nu = vec![0f32; n];
        let mut nv = vec![0f32; n];
        let mut delta = 0f32;
        for y in 0..hi {
            for x in 0..wi {
                let i = (y * wi + x) as usize;
                let ubar = avg(&u, x, y);
                let vbar = avg(&v, x, y);
                let num = ix[i] * ubar + iy[i] * vbar + it[i];
                let den = lambda + ix[i] * ix[i] + iy[i] * iy[i];
                nu[i] = ubar - ix[i] * num / den;
                nv[i] = vbar - iy[i] * num / den;
                delta += (nu[i] - u[i]).abs() + (nv[i] - v[i]).abs();
            }
        }
        u = nu;
        v = nv;
        if delta / (2.0 * n as f32) < tol {
            break;
        }
    }

    FlowField {
        width: w,
        height: h,
        u,
        v,
    }
}

/// Render a flow field with the HSV color wheel. Zero motion maps to black
/// (value 0), so two identical frames produce a uniform black frame.
pub fn flow_to_image(flow: &FlowField) -> RgbImage {
    let max_mag = flow
        .u
        .iter()
        .zip(&flow.v)
        .map(|(u, v)| (u * u + v * v).sqrt())
        .fold(0f32, f32::max);
    let mut out = RgbImage::new(flow.width, flow.height);
    if max_mag <= f32::EPSILON {
        return out;
    }
    for y in 0..flow.height {
        for x in 0..flow.width {
            let i = (y * flow.width + x) as usize;
            let (u, v) = (flow.u[i], flow.v[i]);
            let mag = (u * u + v * v).sqrt();
            let angle = v.atan2(u); // [-pi, pi], 0 = rightward
            let hue = (angle.to_degrees() + 360.0) % 360.0;
            let value = mag / max_mag;
            out.put_pixel(x, y, hsv_to_rgb(hue, 1.0, value));
        }
    }
    out
}

/// Hue of the color-wheel pixel encoding direction `(u, v)`, in degrees.
pub fn direction_hue(u: f32, v: f32) -> f32 {
    (v.atan2(u).to_degrees() + 360.0) % 360.0
}

pub fn hsv_to_rgb(h_deg: f32, s: f32, v: f32) -> Rgb<u8> {
    let c = v * s;
    let hp = (h_deg % 360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    Rgb([
        ((r1 + m) * 255.0).round().clamp(0.0, 255.0) as u8,
        ((g1 + m) * 255.0).round().clamp(0.0, 255.0) as u8,
        ((b1 + m) * 255.0).round().clamp(0.0, 255.0) as u8,
    ])
}
