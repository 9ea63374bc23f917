//! Grayscale rasters, preprocessing, and the synthetic focal-stack simulator.

mod pgm;
mod scene;
mod stack;

pub use pgm::{load_pgm, save_pgm};
pub use scene::{default_softness, render_scene, render_scene_window, Scene};
pub(crate) use stack::ensure_empty_dir;
pub use stack::{generate_stack, FocalStack, StackManifest, StackSpec};

use crate::error::{Error, Result};

/// Single-channel image with row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, checking the length and intensity-range invariants.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Constructor for internal producers that already guarantee the invariants
    /// up to rounding; values are clamped into `[0, 1]`.
    pub(crate) fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pads by replicating edge pixels `border` times on every side.
    pub fn pad_replicate(&self, border: usize) -> Image {
        let w = self.width + 2 * border;
        let h = self.height + 2 * border;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = y.saturating_sub(border).min(self.height - 1);
            for x in 0..w {
                let sx = x.saturating_sub(border).min(self.width - 1);
                data.push(self.get(sx, sy));
            }
        }
        Image {
            width: w,
            height: h,
            data,
        }
    }

    /// Extracts the `width`x`height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }
}

/// Bilinear resampling with pixel-center alignment.
pub fn resize_bilinear(image: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    if out_w == image.width && out_h == image.height {
        return Ok(image.clone());
    }
    let sx = image.width as f64 / out_w as f64;
    let sy = image.height as f64 / out_h as f64;
    let taps = |out: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let src = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| taps(x, sx, image.width)).collect();
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, wy) = taps(y, sy, image.height);
        for &(x0, x1, wx) in &cols {
            let top = image.get(x0, y0) * (1.0 - wx) + image.get(x1, y0) * wx;
            let bottom = image.get(x0, y1) * (1.0 - wx) + image.get(x1, y1) * wx;
            data.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    Ok(Image::from_clamped(out_w, out_h, data))
}

/// Luma conversion with BT.601 weights.
pub fn to_grayscale(r: &Image, g: &Image, b: &Image) -> Result<Image> {
    let dims = (r.width, r.height);
    if (g.width, g.height) != dims || (b.width, b.height) != dims {
        return Err(Error::invalid(format!(
            "plane dimensions differ: r {}x{}, g {}x{}, b {}x{}",
            r.width, r.height, g.width, g.height, b.width, b.height
        )));
    }
    let data = r
        .data
        .iter()
        .zip(&g.data)
        .zip(&b.data)
        .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect();
    Ok(Image::from_clamped(dims.0, dims.1, data))
}

/// Reflect-101 index mapping (`dcb|abcd|cba`), valid for any offset.
#[inline]
pub(crate) fn reflect101(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Pixel-integrated Gaussian: tap `i` holds the mass of N(0, sigma^2) over
/// `[i - 0.5, i + 0.5]`, renormalized over the `ceil(3 sigma)` radius. Unlike
/// point sampling this keeps sub-pixel blurs distinguishable from identity.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let cdf = |x: f64| 0.5 * libm::erfc(-x / (sigma * std::f64::consts::SQRT_2));
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| cdf(i as f64 + 0.5) - cdf(i as f64 - 0.5))
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Gaussian defocus with standard deviation `sigma` pixels, kernel radius
/// `ceil(3 sigma)`, reflect-101 borders. `sigma == 0` is the identity.
pub fn defocus_blur(image: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "blur sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (image.width, image.height);

    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        let row = &image.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect101(x as isize + t as isize - radius, w)];
            }
            horizontal[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (t, kv) in kernel.iter().enumerate() {
            let sy = reflect101(y as isize + t as isize - radius, h);
            let src = &horizontal[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    Ok(Image::from_clamped(w, h, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, data: &[f64]) -> Image {
        Image::new(w, h, data.to_vec()).unwrap()
    }

    #[test]
    fn image_invariants_are_enforced() {
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, vec![1.5]).is_err());
        assert!(Image::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn resize_identity() {
        let a = img(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(resize_bilinear(&a, 3, 2).unwrap(), a);
    }

    #[test]
    fn resize_2x2_to_1x1_is_the_average() {
        let a = img(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = resize_bilinear(&a, 1, 1).unwrap();
        assert_eq!(r.data(), &[0.5]);
    }

    #[test]
    fn resize_upsample_row_is_monotone() {
        // Source coordinates: -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
        let a = img(2, 1, &[0.0, 1.0]);
        let r = resize_bilinear(&a, 4, 1).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
        assert!(r.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resize_rejects_zero_target() {
        let a = img(2, 1, &[0.0, 1.0]);
        assert!(resize_bilinear(&a, 0, 1).is_err());
    }

    #[test]
    fn grayscale_weights() {
        let one = img(1, 1, &[1.0]);
        let zero = img(1, 1, &[0.0]);
        let x = img(1, 1, &[0.37]);
        assert!((to_grayscale(&x, &x, &x).unwrap().data()[0] - 0.37).abs() < 1e-12);
        assert!((to_grayscale(&one, &zero, &zero).unwrap().data()[0] - 0.299).abs() < 1e-12);
        assert!((to_grayscale(&zero, &zero, &one).unwrap().data()[0] - 0.114).abs() < 1e-12);
        let wide = img(2, 1, &[0.0, 0.0]);
        assert!(to_grayscale(&one, &wide, &one).is_err());
    }

    #[test]
    fn reflect101_mapping() {
        let got: Vec<_> = (-3..7).map(|i| reflect101(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect101(-5, 1), 0);
    }

    #[test]
    fn blur_identity_and_constants() {
        let a = img(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(defocus_blur(&a, 0.0).unwrap(), a);
        let c = Image::filled(7, 5, 0.42).unwrap();
        let b = defocus_blur(&c, 2.5).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.42).abs() < 1e-12));
        assert!(defocus_blur(&a, -1.0).is_err());
    }

    #[test]
    fn blur_kernel_is_normalized_with_radius_3_sigma() {
        let k = gaussian_kernel(1.2);
        assert_eq!(k.len(), 2 * 4 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crop_and_pad() {
        let a = img(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(a.crop(1, 0, 2, 2).unwrap().data(), &[0.2, 0.3, 0.5, 0.6]);
        assert!(a.crop(2, 0, 2, 2).is_err());
        let p = a.pad_replicate(1);
        assert_eq!((p.width(), p.height()), (5, 4));
        assert_eq!(p.get(0, 0), 0.1);
        assert_eq!(p.get(4, 3), 0.6);
    }
}
