use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    default_softness, defocus_blur, load_pgm, render_scene_window, save_pgm, Image, Scene,
};
use crate::error::{Error, Result};
use crate::focus::{focus_curve_of, FocusCurve, FocusMeasure};

fn default_size() -> usize {
    256
}

fn default_spacing() -> f64 {
    0.3
}

fn default_blur_gain() -> f64 {
    1.0
}

/// Everything needed to regenerate a synthetic stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    pub view_id: String,
    /// Scene seed.
    pub seed: u64,
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    /// Window shift into the scene's world, for "nearby view" stacks.
    #[serde(default)]
    pub offset_x: i64,
    #[serde(default)]
    pub offset_y: i64,
    pub z_min: f64,
    pub z_max: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    pub z_star: f64,
    #[serde(default = "default_blur_gain")]
    pub blur_gain: f64,
    /// In-focus point-spread in pixels; defaults to `width.min(height) / 64`.
    #[serde(default)]
    pub softness: Option<f64>,
}

impl StackSpec {
    pub fn generate(&self) -> Result<FocalStack> {
        let softness = self
            .softness
            .unwrap_or_else(|| default_softness(self.width, self.height));
        let scene = render_scene_window(
            self.seed,
            self.width,
            self.height,
            self.offset_x,
            self.offset_y,
            softness,
        )?;
        let mut stack = generate_stack(
            &scene,
            self.z_min,
            self.z_max,
            self.spacing,
            self.z_star,
            self.blur_gain,
        )?;
        stack.view_id = self.view_id.clone();
        Ok(stack)
    }
}

/// On-disk `manifest.json` next to the `frame_NNNN.pgm` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    pub view_id: String,
    pub z_min: f64,
    pub z_max: f64,
    pub spacing: f64,
    pub z_star: f64,
    pub blur_gain: f64,
    pub seed: u64,
    pub focus_max: f64,
    pub focus_curve: Vec<f64>,
}

/// Images of one view at equally spaced knob angles, with the Tenengrad
/// focus curve precomputed on the full-resolution frames.
#[derive(Debug, Clone)]
pub struct FocalStack {
    pub view_id: String,
    pub seed: u64,
    pub z_min: f64,
    pub z_max: f64,
    pub spacing: f64,
    pub z_star: f64,
    pub blur_gain: f64,
    positions: Vec<f64>,
    frames: Vec<Arc<Image>>,
    curve: FocusCurve,
}

fn position_count(z_min: f64, z_max: f64, spacing: f64) -> Result<usize> {
    let q = (z_max - z_min) / spacing;
    let n = q.round();
    if (q - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::invalid(format!(
            "range {z_min}..{z_max} is not an integral number of {spacing} rad steps ({q})"
        )));
    }
    Ok(n as usize + 1)
}

/// Blurs `scene` once per position `z_k = z_min + k * spacing` with
/// `sigma = blur_gain * |z_k - z_star|`.
pub fn generate_stack(
    scene: &Scene,
    z_min: f64,
    z_max: f64,
    spacing: f64,
    z_star: f64,
    blur_gain: f64,
) -> Result<FocalStack> {
    if !(spacing > 0.0) {
        return Err(Error::invalid(format!(
            "spacing must be > 0, got {spacing}"
        )));
    }
    if !(z_min < z_star && z_star < z_max) {
        return Err(Error::invalid(format!(
            "z_star {z_star} outside the open range ({z_min}, {z_max})"
        )));
    }
    if !(blur_gain >= 0.0) {
        return Err(Error::invalid(format!(
            "blur_gain must be >= 0, got {blur_gain}"
        )));
    }
    let count = position_count(z_min, z_max, spacing)?;
    let positions: Vec<f64> = (0..count).map(|k| z_min + k as f64 * spacing).collect();
    let frames = positions
        .par_iter()
        .map(|z| defocus_blur(&scene.content, blur_gain * (z - z_star).abs()).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    FocalStack::assemble(
        format!("seed{}", scene.seed),
        scene.seed,
        (z_min, z_max, spacing, z_star, blur_gain),
        positions,
        frames,
    )
}

impl FocalStack {
    fn assemble(
        view_id: String,
        seed: u64,
        (z_min, z_max, spacing, z_star, blur_gain): (f64, f64, f64, f64, f64),
        positions: Vec<f64>,
        frames: Vec<Arc<Image>>,
    ) -> Result<Self> {
        let curve = focus_curve_of(&frames, FocusMeasure::default())?;
        Ok(Self {
            view_id,
            seed,
            z_min,
            z_max,
            spacing,
            z_star,
            blur_gain,
            positions,
            frames,
            curve,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn frames(&self) -> &[Arc<Image>] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &Arc<Image> {
        &self.frames[index]
    }

    /// Raw Tenengrad curve over the stored frames.
    pub fn curve(&self) -> &FocusCurve {
        &self.curve
    }

    /// Index whose position is nearest to `z_star`.
    pub fn nearest_index(&self, z: f64) -> usize {
        let k = ((z - self.z_min) / self.spacing).round();
        (k.max(0.0) as usize).min(self.len() - 1)
    }

    pub fn manifest(&self) -> StackManifest {
        StackManifest {
            view_id: self.view_id.clone(),
            z_min: self.z_min,
            z_max: self.z_max,
            spacing: self.spacing,
            z_star: self.z_star,
            blur_gain: self.blur_gain,
            seed: self.seed,
            focus_max: self.curve.max_value,
            focus_curve: self.curve.values.clone(),
        }
    }

    /// Writes `frame_NNNN.pgm` (16-bit) plus `manifest.json` into `dir`, which
    /// must be absent or empty.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_empty_dir(dir)?;
        for (i, frame) in self.frames.iter().enumerate() {
            save_pgm(frame, dir.join(format!("frame_{i:04}.pgm")), 65535)?;
        }
        let path = dir.join("manifest.json");
        let json = serde_json::to_vec_pretty(&self.manifest())?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Loads a stack directory. The focus curve is recomputed from the
    /// stored (quantized) frames.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: StackManifest = serde_json::from_slice(&text)?;
        let count = position_count(m.z_min, m.z_max, m.spacing)?;
        let frames = (0..count)
            .map(|i| load_pgm(dir.join(format!("frame_{i:04}.pgm"))).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let positions = (0..count).map(|k| m.z_min + k as f64 * m.spacing).collect();
        Self::assemble(
            m.view_id,
            m.seed,
            (m.z_min, m.z_max, m.spacing, m.z_star, m.blur_gain),
            positions,
            frames,
        )
    }
}

/// Creates `dir` if missing; fails if it exists with any entries.
pub(crate) fn ensure_empty_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::TargetNotEmpty(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
