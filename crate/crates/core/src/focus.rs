//! Focus measures and focus-curve utilities.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{FocalStack, Image};

fn check_size(image: &Image, what: &str) -> Result<()> {
    if image.width() < 3 || image.height() < 3 {
        return Err(Error::invalid(format!(
            "{what} needs at least a 3x3 image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Mean over interior pixels of `Gx^2 + Gy^2` (3x3 Sobel), counting only
/// pixels whose squared magnitude exceeds `threshold^2`.
pub fn tenengrad(image: &Image, threshold: f64) -> Result<f64> {
    check_size(image, "tenengrad")?;
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!(
            "threshold must be >= 0, got {threshold}"
        )));
    }
    let (w, h) = (image.width(), image.height());
    let d = image.data();
    let t2 = threshold * threshold;
    let mut sum = 0.0;
    for y in 1..h - 1 {
        let (up, mid, down) = (
            &d[(y - 1) * w..y * w],
            &d[y * w..(y + 1) * w],
            &d[(y + 1) * w..(y + 2) * w],
        );
        for x in 1..w - 1 {
            let gx = (up[x + 1] + 2.0 * mid[x + 1] + down[x + 1])
                - (up[x - 1] + 2.0 * mid[x - 1] + down[x - 1]);
            let gy =
                (down[x - 1] + 2.0 * down[x] + down[x + 1]) - (up[x - 1] + 2.0 * up[x] + up[x + 1]);
            let g = gx * gx + gy * gy;
            if g > t2 {
                sum += g;
            }
        }
    }
    Ok(sum / ((w - 2) * (h - 2)) as f64)
}

/// Population variance of the 4-neighbour Laplacian over interior pixels.
pub fn laplacian_variance(image: &Image) -> Result<f64> {
    check_size(image, "laplacian_variance")?;
    let (w, h) = (image.width(), image.height());
    let d = image.data();
    let n = ((w - 2) * (h - 2)) as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = y * w + x;
            let l = d[c - w] + d[c + w] + d[c - 1] + d[c + 1] - 4.0 * d[c];
            sum += l;
            sum_sq += l * l;
        }
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FocusMeasure {
    Tenengrad { threshold: f64 },
    LaplacianVariance,
}

impl Default for FocusMeasure {
    fn default() -> Self {
        FocusMeasure::Tenengrad { threshold: 0.0 }
    }
}

impl FocusMeasure {
    pub fn evaluate(&self, image: &Image) -> Result<f64> {
        match *self {
            FocusMeasure::Tenengrad { threshold } => tenengrad(image, threshold),
            FocusMeasure::LaplacianVariance => laplacian_variance(image),
        }
    }
}

/// Focus measure values along a stack, ordered by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusCurve {
    pub values: Vec<f64>,
    pub max_value: f64,
    pub argmax_index: usize,
}

impl FocusCurve {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("focus curve is empty"));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::invalid(format!(
                "focus value {bad} is negative or NaN"
            )));
        }
        // First index of the maximum.
        let (argmax_index, max_value) =
            values
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, values[0]),
                    |best, (i, v)| if v > best.1 { (i, v) } else { best },
                );
        Ok(Self {
            values,
            max_value,
            argmax_index,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn focus_curve_of(frames: &[Arc<Image>], measure: FocusMeasure) -> Result<FocusCurve> {
    if frames.is_empty() {
        return Err(Error::invalid("focus curve of an empty stack"));
    }
    let values = frames
        .par_iter()
        .map(|f| measure.evaluate(f))
        .collect::<Result<Vec<_>>>()?;
    FocusCurve::from_values(values)
}

/// Evaluates `measure` on every full-resolution frame of `stack`.
pub fn focus_curve(stack: &FocalStack, measure: FocusMeasure) -> Result<FocusCurve> {
    focus_curve_of(stack.frames(), measure)
}

/// Divides a curve by its maximum.
pub fn normalize(curve: &FocusCurve) -> Result<FocusCurve> {
    if !(curve.max_value > 0.0) {
        return Err(Error::invalid("cannot normalize an all-zero focus curve"));
    }
    let values = curve.values.iter().map(|v| v / curve.max_value).collect();
    Ok(FocusCurve {
        values,
        max_value: 1.0,
        argmax_index: curve.argmax_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{defocus_blur, generate_stack, render_scene};
    use proptest::prelude::*;

    fn img(w: usize, h: usize, data: &[f64]) -> Image {
        Image::new(w, h, data.to_vec()).unwrap()
    }

    #[test]
    fn tenengrad_constant_is_zero() {
        let c = Image::filled(8, 6, 0.3).unwrap();
        assert_eq!(tenengrad(&c, 0.0).unwrap(), 0.0);
        assert_eq!(laplacian_variance(&c).unwrap(), 0.0);
    }

    #[test]
    fn tenengrad_vertical_step_by_hand() {
        // Gx at the single interior pixel is (1 + 2 + 1) - 0 = 4, Gy = 0.
        let step = img(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(tenengrad(&step, 0.0).unwrap(), 16.0);
        assert_eq!(tenengrad(&step, 4.0).unwrap(), 0.0);
        assert_eq!(tenengrad(&step, 3.9).unwrap(), 16.0);
    }

    #[test]
    fn undersized_images_are_rejected() {
        let tiny = img(2, 3, &[0.0; 6]);
        assert!(tenengrad(&tiny, 0.0).is_err());
        assert!(laplacian_variance(&tiny).is_err());
        let ok = img(3, 3, &[0.0; 9]);
        assert!(tenengrad(&ok, -1.0).is_err());
    }

    #[test]
    fn laplacian_of_ramp_is_zero() {
        let data: Vec<f64> = (0..36)
            .map(|i| (i % 6) as f64 * 0.1 + (i / 6) as f64 * 0.05)
            .collect();
        let ramp = img(6, 6, &data);
        assert!(laplacian_variance(&ramp).unwrap() < 1e-24);
    }

    #[test]
    fn sharp_beats_blurred_for_both_measures() {
        let s = render_scene(21, 64, 64).unwrap().content;
        let b = defocus_blur(&s, 1.5).unwrap();
        assert!(tenengrad(&s, 0.0).unwrap() > tenengrad(&b, 0.0).unwrap());
        assert!(laplacian_variance(&s).unwrap() > laplacian_variance(&b).unwrap());
    }

    #[test]
    fn padding_changes_measures_by_less_than_five_percent() {
        let s = render_scene(8, 256, 256).unwrap().content;
        let p = s.pad_replicate(5);
        for m in [FocusMeasure::default(), FocusMeasure::LaplacianVariance] {
            let (a, b) = (m.evaluate(&s).unwrap(), m.evaluate(&p).unwrap());
            assert!(((a - b) / a).abs() < 0.05, "{m:?}: {a} vs {b}");
        }
    }

    #[test]
    fn curve_of_single_image_stack() {
        let frames = vec![Arc::new(render_scene(1, 32, 32).unwrap().content)];
        let c = focus_curve_of(&frames, FocusMeasure::default()).unwrap();
        assert_eq!((c.len(), c.argmax_index), (1, 0));
        assert!(focus_curve_of(&[], FocusMeasure::default()).is_err());
    }

    #[test]
    fn normalize_examples() {
        let c = FocusCurve::from_values(vec![2.0, 4.0, 8.0]).unwrap();
        let n = normalize(&c).unwrap();
        assert_eq!(n.values, vec![0.25, 0.5, 1.0]);
        assert_eq!(normalize(&n).unwrap(), n);
        assert_eq!(n.argmax_index, c.argmax_index);
        let z = FocusCurve::from_values(vec![0.0, 0.0]).unwrap();
        assert!(normalize(&z).is_err());
        assert!(FocusCurve::from_values(vec![1.0, -0.1]).is_err());
    }

    #[test]
    fn argmax_is_first_maximum() {
        let c = FocusCurve::from_values(vec![1.0, 3.0, 3.0, 2.0]).unwrap();
        assert_eq!((c.argmax_index, c.max_value), (1, 3.0));
    }

    #[test]
    fn generated_stack_curve_properties() {
        let scene = render_scene(17, 64, 64).unwrap();
        let stack = generate_stack(&scene, 30.0, 69.0, 0.3, 47.1, 0.35).unwrap();
        for measure in [FocusMeasure::default(), FocusMeasure::LaplacianVariance] {
            let curve = focus_curve(&stack, measure).unwrap();
            assert_eq!(curve.argmax_index, stack.nearest_index(47.1));
            let n = normalize(&curve).unwrap();
            assert_eq!(n.values.iter().filter(|v| **v == 1.0).count(), 1);
            let region: Vec<usize> = (0..n.len()).filter(|&i| n.values[i] >= 0.9).collect();
            assert!(
                region.windows(2).all(|w| w[1] == w[0] + 1),
                "success region not contiguous"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn blur_never_sharpens(seed in 0u64..1000, sigma in 0.3f64..4.0) {
            let s = render_scene(seed, 48, 48).unwrap().content;
            let b = defocus_blur(&s, sigma).unwrap();
            prop_assert!(tenengrad(&s, 0.0).unwrap() >= tenengrad(&b, 0.0).unwrap());
            prop_assert!(laplacian_variance(&s).unwrap() > laplacian_variance(&b).unwrap());
        }
    }
}
