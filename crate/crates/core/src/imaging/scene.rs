use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{defocus_blur, Image};
use crate::error::{Error, Result};

const ELLIPSES: usize = 48;
const BARS: usize = 12;
const WAVES: usize = 6;

/// A perfectly sharp synthetic view, standing in for a slide region.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    /// Standard deviation (pixels) of the in-focus point-spread applied to
    /// the rendered shapes.
    pub softness: f64,
    pub width: usize,
    pub height: usize,
    pub content: Image,
}

enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        cos: f64,
        sin: f64,
        value: f64,
    },
    Bar {
        cx: f64,
        cy: f64,
        half_len: f64,
        half_width: f64,
        cos: f64,
        sin: f64,
        value: f64,
    },
}

impl Shape {
    fn covers(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            Shape::Ellipse {
                cx,
                cy,
                rx,
                ry,
                cos,
                sin,
                value,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = (dx * cos + dy * sin) / rx;
                let v = (-dx * sin + dy * cos) / ry;
                (u * u + v * v <= 1.0).then_some(value)
            }
            Shape::Bar {
                cx,
                cy,
                half_len,
                half_width,
                cos,
                sin,
                value,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let along = dx * cos + dy * sin;
                let across = -dx * sin + dy * cos;
                (along.abs() <= half_len && across.abs() <= half_width).then_some(value)
            }
        }
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

/// In-focus point-spread used by [`render_scene`]: one pixel at a 64-pixel
/// rendering of the view.
pub fn default_softness(width: usize, height: usize) -> f64 {
    width.min(height) as f64 / 64.0
}

/// Renders the in-focus view for `seed` at `width`x`height`.
pub fn render_scene(seed: u64, width: usize, height: usize) -> Result<Scene> {
    render_scene_window(seed, width, height, 0, 0, default_softness(width, height))
}

/// Renders the same world as [`render_scene`] but viewed through a window
/// shifted by `(offset_x, offset_y)` pixels, with an explicit in-focus
/// point-spread `softness`. Shapes and texture are defined in world
/// coordinates, so a shifted window is a translation (exact up to the
/// reflected border of the softening blur).
pub fn render_scene_window(
    seed: u64,
    width: usize,
    height: usize,
    offset_x: i64,
    offset_y: i64,
    softness: f64,
) -> Result<Scene> {
    if width < 32 || height < 32 {
        return Err(Error::invalid(format!(
            "scene must be at least 32x32, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let size = w.min(h);

    let mut shapes = Vec::with_capacity(ELLIPSES + BARS);
    for i in 0..ELLIPSES + BARS {
        let cx = rng.random_range(-0.1 * w..1.1 * w);
        let cy = rng.random_range(-0.1 * h..1.1 * h);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = angle.sin_cos();
        let value = rng.random_range(0.05..0.95);
        if i < ELLIPSES {
            shapes.push(Shape::Ellipse {
                cx,
                cy,
                rx: rng.random_range(0.03..0.16) * size,
                ry: rng.random_range(0.03..0.16) * size,
                cos,
                sin,
                value,
            });
        } else {
            shapes.push(Shape::Bar {
                cx,
                cy,
                half_len: rng.random_range(0.1..0.35) * size,
                half_width: rng.random_range(0.01..0.04) * size,
                cos,
                sin,
                value,
            });
        }
    }

    // Band-limited texture: a few plane waves with wavelengths of 6-20% of the
    // view, so the texture survives downsampling to network resolution.
    let waves: Vec<Wave> = (0..WAVES)
        .map(|_| {
            let wavelength = rng.random_range(0.06..0.2) * size;
            let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / wavelength;
            Wave {
                kx: k * dir.cos(),
                ky: k * dir.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amplitude: rng.random_range(0.01..0.025),
            }
        })
        .collect();

    let mut data = Vec::with_capacity(width * height);
    for py in 0..height {
        let y = (py as i64 + offset_y) as f64 + 0.5;
        for px in 0..width {
            let x = (px as i64 + offset_x) as f64 + 0.5;
            let base = shapes
                .iter()
                .rev()
                .find_map(|s| s.covers(x, y))
                .unwrap_or(0.5);
            let texture: f64 = waves
                .iter()
                .map(|wv| wv.amplitude * (wv.kx * x + wv.ky * y + wv.phase).sin())
                .sum();
            data.push(base + texture);
        }
    }

    let content = defocus_blur(&Image::from_clamped(width, height, data), softness)?;
    Ok(Scene {
        seed,
        softness,
        width,
        height,
        content,
    })
}
