//! Intensity normalization and geometric/noise augmentation.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};
use crate::volume::Volume;

/// Per-channel z-score normalization with population statistics.
///
/// Statistics are taken over `foreground` when given (shape
/// `(slice, row, col)`), otherwise over every voxel; the transform is applied
/// to every voxel either way.
pub fn zscore(volume: &Volume, foreground: Option<&Array3<bool>>) -> Result<Volume> {
    let vox = volume.voxels();
    let (s, h, w, channels) = vox.dim();
    if let Some(mask) = foreground {
        if mask.dim() != (s, h, w) {
            return Err(CoreError::ShapeMismatch(format!(
                "mask {:?} vs volume {:?}",
                mask.dim(),
                (s, h, w)
            )));
        }
    }
    let mut out = vox.clone();
    for c in 0..channels {
        let chan = vox.index_axis(Axis(3), c);
        let mut n = 0usize;
        let mut sum = 0.0f64;
        let each = |f: &mut dyn FnMut(f64)| match foreground {
            Some(mask) => Zip::from(&chan).and(mask).for_each(|&v, &m| {
                if m {
                    f(v as f64)
                }
            }),
            None => chan.iter().for_each(|&v| f(v as f64)),
        };
        each(&mut |v| {
            n += 1;
            sum += v;
        });
        if n == 0 {
            return Err(CoreError::DegenerateStats(format!("channel {c}: empty foreground mask")));
        }
        let mean = sum / n as f64;
        let mut ss = 0.0f64;
        each(&mut |v| ss += (v - mean) * (v - mean));
        let std = (ss / n as f64).sqrt();
        if !(std > 0.0) {
            return Err(CoreError::DegenerateStats(format!("channel {c} is constant")));
        }
        out.index_axis_mut(Axis(3), c)
            .mapv_inplace(|v| ((v as f64 - mean) / std) as f32);
    }
    volume.with_voxels(out)
}

/// Clamps to `[lo, hi]` and rescales linearly onto `[0, 1]`.
pub fn hu_window(volume: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if !(lo < hi) {
        return Err(CoreError::InvalidParam(format!("window [{lo}, {hi}] is empty")));
    }
    let width = (hi - lo) as f64;
    let out = volume
        .voxels()
        .mapv(|v| ((v.clamp(lo, hi) - lo) as f64 / width) as f32);
    volume.with_voxels(out)
}

pub const HU_LOW: f32 = -100.0;
pub const HU_HIGH: f32 = 400.0;

/// Histogram equalization of one slice with `bins` bins over `[0, 1]`.
///
/// Values are clamped into `[0, 1]` first. The mapping is
/// `(cdf(v) - cdf_min) / (n - cdf_min)`, so a constant slice maps to 0.
pub fn hist_equalize(slice: ArrayView2<f32>, bins: usize) -> Array2<f32> {
    let bins = bins.max(1);
    let bin_of = |v: f32| -> usize {
        let v = v.clamp(0.0, 1.0);
        ((v * bins as f32) as usize).min(bins - 1)
    };
    let mut hist = vec![0usize; bins];
    for &v in slice.iter() {
        hist[bin_of(v)] += 1;
    }
    let mut cdf = hist;
    for i in 1..bins {
        cdf[i] += cdf[i - 1];
    }
    let n = slice.len();
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let denom = (n - cdf_min) as f64;
    slice.mapv(|v| {
        if denom == 0.0 {
            0.0
        } else {
            ((cdf[bin_of(v)] - cdf_min) as f64 / denom) as f32
        }
    })
}

/// Resampling kernel for the image half of an augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    #[default]
    Bilinear,
    Nearest,
}

/// Augmentation settings. `None` disables a step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    /// Side fraction of the random crop window, in `(0, 1]`.
    pub crop_fraction: Option<f32>,
    /// Zoom factor about the slice center, in `[0.8, 1.2]`.
    pub scale: Option<f32>,
    /// Rotation about the slice center in degrees, in `[-10, 10]`.
    pub rotation_deg: Option<f32>,
    /// Standard deviation of additive Gaussian noise on the image.
    pub noise_sigma: Option<f32>,
    pub image_interp: Interp,
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.crop_fraction {
            if !(c > 0.0 && c <= 1.0) {
                return Err(CoreError::InvalidParam(format!("crop fraction {c} outside (0, 1]")));
            }
        }
        if let Some(s) = self.scale {
            if !(0.8..=1.2).contains(&s) {
                return Err(CoreError::InvalidParam(format!("scale {s} outside [0.8, 1.2]")));
            }
        }
        if let Some(r) = self.rotation_deg {
            if !(-10.0..=10.0).contains(&r) {
                return Err(CoreError::InvalidParam(format!("rotation {r} outside [-10, 10] degrees")));
            }
        }
        if let Some(n) = self.noise_sigma {
            if !(n.is_finite() && n >= 0.0) {
                return Err(CoreError::InvalidParam(format!("noise sigma {n} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Draws crop, scale and rotation uniformly from their allowed ranges.
    pub fn random<R: Rng>(rng: &mut R, min_crop: f32, noise_sigma: Option<f32>) -> Self {
        Self {
            crop_fraction: Some(rng.gen_range(min_crop.clamp(0.01, 1.0)..=1.0)),
            scale: Some(rng.gen_range(0.8..=1.2)),
            rotation_deg: Some(rng.gen_range(-10.0..=10.0)),
            noise_sigma,
            image_interp: Interp::Bilinear,
        }
    }

    fn is_geometric(&self) -> bool {
        self.crop_fraction.is_some() || self.scale.is_some() || self.rotation_deg.is_some()
    }
}

fn sample_bilinear(img: &ArrayView3<f32>, y: f64, x: f64, c: usize) -> f32 {
    let (h, w, _) = img.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = img[[y0, x0, c]] as f64 * (1.0 - fx) + img[[y0, x1, c]] as f64 * fx;
    let bot = img[[y1, x0, c]] as f64 * (1.0 - fx) + img[[y1, x1, c]] as f64 * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}

fn nearest_index(v: f64, n: usize) -> usize {
    (v.round().max(0.0) as usize).min(n - 1)
}

/// Applies crop/resize, scaling, rotation and noise to an image `(h, w, c)`
/// and its mask `(h, w)`.
///
/// Geometry is shared between image and mask; the mask always uses
/// nearest-neighbour sampling and never receives noise. Output shapes equal
/// input shapes. All randomness (crop position, noise) comes from `seed`.
pub fn augment(
    image: ArrayView3<f32>,
    mask: ArrayView2<u8>,
    params: &AugmentParams,
    seed: u64,
) -> Result<(Array3<f32>, Array2<u8>)> {
    params.validate()?;
    let (h, w, channels) = image.dim();
    if mask.dim() != (h, w) {
        return Err(CoreError::ShapeMismatch(format!(
            "mask {:?} vs image {:?}",
            mask.dim(),
            (h, w)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (mut out_img, out_mask) = if params.is_geometric() {
        let cy = (h - 1) as f64 / 2.0;
        let cx = (w - 1) as f64 / 2.0;
        let crop = params.crop_fraction.unwrap_or(1.0) as f64;
        let (oy, ox) = if params.crop_fraction.is_some() {
            let my = (1.0 - crop) * (h - 1) as f64 / 2.0;
            let mx = (1.0 - crop) * (w - 1) as f64 / 2.0;
            (rng.gen_range(-my..=my), rng.gen_range(-mx..=mx))
        } else {
            (0.0, 0.0)
        };
        let scale = params.scale.unwrap_or(1.0) as f64;
        let theta = (params.rotation_deg.unwrap_or(0.0) as f64).to_radians();
        let (sin, cos) = theta.sin_cos();
        // Inverse map from output pixel to source coordinates.
        let source = |y: usize, x: usize| -> (f64, f64) {
            let dy = (y as f64 - cy) * crop / scale;
            let dx = (x as f64 - cx) * crop / scale;
            let sy = cos * dy - sin * dx;
            let sx = sin * dy + cos * dx;
            (cy + oy + sy, cx + ox + sx)
        };
        let mut img = Array3::<f32>::zeros((h, w, channels));
        let mut msk = Array2::<u8>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = source(y, x);
                let ny = nearest_index(sy, h);
                let nx = nearest_index(sx, w);
                msk[[y, x]] = mask[[ny, nx]];
                for c in 0..channels {
                    img[[y, x, c]] = match params.image_interp {
                        Interp::Bilinear => sample_bilinear(&image, sy, sx, c),
                        Interp::Nearest => image[[ny, nx, c]],
                    };
                }
            }
        }
        (img, msk)
    } else {
        (image.to_owned(), mask.to_owned())
    };

    if let Some(sigma) = params.noise_sigma {
        if sigma > 0.0 {
            let normal = Normal::new(0.0f32, sigma)
                .map_err(|e| CoreError::InvalidParam(e.to_string()))?;
            out_img.mapv_inplace(|v| v + normal.sample(&mut rng));
        }
    }
    Ok((out_img, out_mask))
}
