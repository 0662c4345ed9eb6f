//! Builtin appearance/geometry filters over 8-bit RGB frames.
//!
//! All kernels run in f32 with clamp-to-edge borders and round back to u8;
//! identical input bytes always produce identical output bytes.

use image::{Rgb, RgbImage};

/// HSV saturation channel rendered as grayscale (replicated to 3 channels).
///
/// Uses the usual `S = (max - min) / max` with `S = 0` for black pixels, so
/// any grayscale input maps to the zero image.
pub fn saturation_map(img: &RgbImage) -> RgbImage {
    let mut out = RgbImage::new(img.width(), img.height());
    for (x, y, px) in img.enumerate_pixels() {
        let max = px.0.iter().copied().max().unwrap() as f32;
        let min = px.0.iter().copied().min().unwrap() as f32;
        let s = if max == 0.0 {
            0
        } else {
            (255.0 * (max - min) / max).round().clamp(0.0, 255.0) as u8
        };
        out.put_pixel(x, y, Rgb([s, s, s]));
    }
    out
}

/// Odd-length 1-D Gaussian kernel, normalized to sum 1.
pub fn gaussian_kernel(size: usize, sigma: f32) -> Vec<f32> {
    assert!(size % 2 == 1, "kernel size must be odd");
    let r = (size / 2) as i32;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn clamp_coord(v: i64, max: u32) -> u32 {
    v.clamp(0, max as i64 - 1) as u32
}

/// Separable Gaussian blur per channel, clamp-to-edge borders.
pub fn gaussian_blur(img: &RgbImage, size: usize, sigma: f32) -> RgbImage {
    let kernel = gaussian_kernel(size, sigma);
    let r = (size / 2) as i64;
    let (w, h) = img.dimensions();

    // Horizontal pass into f32 planes, then vertical pass.
    let mut tmp = vec![[0f32; 3]; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f32; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sx = clamp_coord(x as i64 + ki as i64 - r, w);
                let px = img.get_pixel(sx, y);
                for c in 0..3 {
                    acc[c] += kw * px.0[c] as f32;
                }
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f32; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sy = clamp_coord(y as i64 + ki as i64 - r, h);
                let v = tmp[(sy * w + x) as usize];
                for c in 0..3 {
                    acc[c] += kw * v[c];
                }
            }
            let px = Rgb([
                acc[0].round().clamp(0.0, 255.0) as u8,
                acc[1].round().clamp(0.0, 255.0) as u8,
                acc[2].round().clamp(0.0, 255.0) as u8,
            ]);
            out.put_pixel(x, y, px);
        }
    }
    out
}

pub const DENOISE_KERNEL: usize = 5;
pub const DENOISE_SIGMA: f32 = 1.5;

/// Gaussian denoise, kernel 5, sigma 1.5.
pub fn denoise(img: &RgbImage) -> RgbImage {
    gaussian_blur(img, DENOISE_KERNEL, DENOISE_SIGMA)
}

pub const SHARPEN_KERNEL: usize = 5;
pub const SHARPEN_SIGMA: f32 = 1.0;
pub const SHARPEN_AMOUNT: f32 = 1.0;

/// Unsharp mask: `out = clamp(input + amount * (input - gaussian(input)))`.
pub fn sharpen(img: &RgbImage) -> RgbImage {
    let blurred = blur_f32(img, SHARPEN_KERNEL, SHARPEN_SIGMA);
    let (w, h) = img.dimensions();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let orig = img.get_pixel(x, y);
            let b = blurred[(y * w + x) as usize];
            let mut px = [0u8; 3];
            for c in 0..3 {
                let o = orig.0[c] as f32;
                px[c] = (o + SHARPEN_AMOUNT * (o - b[c])).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, Rgb(px));
        }
    }
    out
}

/// Gaussian blur keeping f32 precision (no intermediate u8 rounding); used
/// by the unsharp mask so the high-pass term is not quantized twice.
fn blur_f32(img: &RgbImage, size: usize, sigma: f32) -> Vec<[f32; 3]> {
    let kernel = gaussian_kernel(size, sigma);
    let r = (size / 2) as i64;
    let (w, h) = img.dimensions();
    let mut tmp = vec![[0f32; 3]; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f32; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sx = clamp_coord(x as i64 + ki as i64 - r, w);
                let px = img.get_pixel(sx, y);
                for c in 0..3 {
                    acc[c] += kw * px.0[c] as f32;
                }
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![[0f32; 3]; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f32; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sy = clamp_coord(y as i64 + ki as i64 - r, h);
                let v = tmp[(sy * w + x) as usize];
                for c in 0..3 {
                    acc[c] += kw * v[c];
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Per-channel min-max contrast stretch to the full 8-bit range. A constant
/// channel maps to 0.
pub fn enhance(img: &RgbImage) -> RgbImage {
    let mut min = [255u8; 3];
    let mut max = [0u8; 3];
    for px in img.pixels() {
        for c in 0..3 {
            min[c] = min[c].min(px.0[c]);
            max[c] = max[c].max(px.0[c]);
        }
    }
    let mut out = RgbImage::new(img.width(), img.height());
    for (x, y, px) in img.enumerate_pixels() {
        let mut v = [0u8; 3];
        for c in 0..3 {
            v[c] = if max[c] == min[c] {
                0
            } else {
                let span = (max[c] - min[c]) as f32;
                (255.0 * (px.0[c] - min[c]) as f32 / span).round() as u8
            };
        }
        out.put_pixel(x, y, Rgb(v));
    }
    out
}

/// Rec.601 luma, kept in f32.
pub fn to_gray(img: &RgbImage) -> Vec<f32> {
    img.pixels()
        .map(|p| 0.299 * p.0[0] as f32 + 0.587 * p.0[1] as f32 + 0.114 * p.0[2] as f32)
        .collect()
}

/// Sobel gradient magnitude (3x3 kernels) on luma, normalized per frame to
/// 8-bit; a constant frame yields the zero map.
pub fn edge_map(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    // Integer luma: constant inputs cancel exactly in the kernels instead of
    // leaving f32 residue for the per-frame normalization to amplify.
    let gray: Vec<f32> = to_gray(img).iter().map(|v| v.round()).collect();
    let at = |x: i64, y: i64| -> f32 { gray[(clamp_coord(y, h) * w + clamp_coord(x, w)) as usize] };

    let mut mag = vec![0f32; (w * h) as usize];
    let mut max_mag = 0f32;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = -at(x - 1, y - 1) - 2.0 * at(x - 1, y) - at(x - 1, y + 1)
                + at(x + 1, y - 1)
                + 2.0 * at(x + 1, y)
                + at(x + 1, y + 1);
            let gy = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1)
                + 2.0 * at(x, y + 1)
                + at(x + 1, y + 1);
            let m = (gx * gx + gy * gy).sqrt();
            mag[(y as u32 * w + x as u32) as usize] = m;
            max_mag = max_mag.max(m);
        }
    }

    let mut out = RgbImage::new(w, h);
    if max_mag > 0.0 {
        for y in 0..h {
            for x in 0..w {
                let v = (255.0 * mag[(y * w + x) as usize] / max_mag).round() as u8;
                out.put_pixel(x, y, Rgb([v, v, v]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_img(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = ((x * 13 + y * 7) % 256) as u8;
            Rgb([v, v, v])
        })
    }

    #[test]
    fn saturation_of_grayscale_is_zero_map() {
        let out = saturation_map(&gray_img(16, 16));
        assert!(out.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn saturation_of_pure_red_is_full() {
        let img = RgbImage::from_pixel(4, 4, Rgb([200, 0, 0]));
        let out = saturation_map(&img);
        assert!(out.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn edge_of_constant_is_zero_map() {
        let img = RgbImage::from_pixel(16, 16, Rgb([77, 12, 190]));
        let out = edge_map(&img);
        assert!(out.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn edge_highlights_step_boundary() {
        let img = RgbImage::from_fn(16, 16, |x, _| {
            if x < 8 {
                Rgb([0, 0, 0])
            } else {
                Rgb([255, 255, 255])
            }
        });
        let out = edge_map(&img);
        // Strongest response at the step column, none far away.
        assert_eq!(out.get_pixel(8, 8).0[0], 255);
        assert_eq!(out.get_pixel(2, 8).0[0], 0);
    }

    #[test]
    fn enhance_stretches_and_zeroes_constant_channel() {
        let img = RgbImage::from_fn(4, 1, |x, _| Rgb([(50 + 10 * x) as u8, 100, 0]));
        let out = enhance(&img);
        assert_eq!(out.get_pixel(0, 0).0[0], 0);
        assert_eq!(out.get_pixel(3, 0).0[0], 255);
        // Green and blue are constant: both map to 0.
        assert!(out.pixels().all(|p| p.0[1] == 0 && p.0[2] == 0));
    }

    #[test]
    fn gaussian_kernel_normalized_and_symmetric() {
        let k = gaussian_kernel(5, 1.5);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(k.len(), 5);
        assert!((k[0] - k[4]).abs() < 1e-7 && (k[1] - k[3]).abs() < 1e-7);
        assert!(k[2] > k[1] && k[1] > k[0]);
    }

    #[test]
    fn denoise_preserves_constant_image() {
        let img = RgbImage::from_pixel(8, 8, Rgb([90, 40, 10]));
        let out = denoise(&img);
        assert!(out.pixels().all(|p| p.0 == [90, 40, 10]));
    }

    /// Independent 2-D convolution oracle: direct dense convolution with the
    /// outer product of the documented 1-D kernel, clamp borders.
    fn conv2d_oracle(img: &RgbImage, size: usize, sigma: f32) -> Vec<[f32; 3]> {
        let k1 = gaussian_kernel(size, sigma);
        let r = (size / 2) as i64;
        let (w, h) = img.dimensions();
        let mut out = vec![[0f32; 3]; (w * h) as usize];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = [0f32; 3];
                for ky in 0..size as i64 {
                    for kx in 0..size as i64 {
                        let wgt = k1[ky as usize] * k1[kx as usize];
                        let sx = clamp_coord(x + kx - r, w);
                        let sy = clamp_coord(y + ky - r, h);
                        let px = img.get_pixel(sx, sy);
                        for c in 0..3 {
                            acc[c] += wgt * px.0[c] as f32;
                        }
                    }
                }
                out[(y as u32 * w + x as u32) as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn sharpen_matches_direct_convolution_oracle() {
        // Step edge plus texture; compare against the brute-force 2-D kernel.
        let img = RgbImage::from_fn(20, 12, |x, y| {
            let base = if x < 10 { 40 } else { 200 };
            let v = (base + ((x * 7 + y * 3) % 16)) as u8;
            Rgb([v, v.wrapping_add(30), v / 2])
        });
        let blurred = conv2d_oracle(&img, SHARPEN_KERNEL, SHARPEN_SIGMA);
        let got = sharpen(&img);
        let (w, _h) = img.dimensions();
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                let o = px.0[c] as f32;
                let expect = (o + SHARPEN_AMOUNT * (o - blurred[(y * w + x) as usize][c]))
                    .round()
                    .clamp(0.0, 255.0) as u8;
                let actual = got.get_pixel(x, y).0[c];
                assert!(
                    (expect as i16 - actual as i16).abs() <= 1,
                    "pixel ({x},{y}) ch {c}: oracle {expect}, got {actual}"
                );
            }
        }
    }

    #[test]
    fn blur_matches_direct_convolution_oracle() {
        let img = RgbImage::from_fn(17, 9, |x, y| {
            Rgb([((x * 31 + y * 17) % 256) as u8, (x % 256) as u8, (y * 11 % 256) as u8])
        });
        let oracle = conv2d_oracle(&img, DENOISE_KERNEL, DENOISE_SIGMA);
        let got = denoise(&img);
        let (w, _) = img.dimensions();
        for (x, y, _) in img.enumerate_pixels() {
            for c in 0..3 {
                let expect = oracle[(y * w + x) as usize][c].round().clamp(0.0, 255.0) as u8;
                let actual = got.get_pixel(x, y).0[c];
                assert!(
                    (expect as i16 - actual as i16).abs() <= 1,
                    "pixel ({x},{y}) ch {c}: oracle {expect}, got {actual}"
                );
            }
        }
    }
}
