//! Adversarial, L1 and error-mask objectives and the refinement
//! composition rule.
//!
//! Scalar losses are accumulated in f64 whatever the element type. Each loss
//! has a matching `*_grad` returning d(loss)/d(input) elementwise, with the
//! same probability clamping treated as part of the function.

use ndarray::{Array3, ArrayView4};
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::volume::argmax;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weight of the L1 term in the segmentation loss. `lambda_l1 = 1` is the
/// plain unweighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_l1: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1.is_finite() && self.lambda_l1 >= 0.0) {
            return Err(CoreError::InvalidParam(format!("lambda_l1 {} must be finite and >= 0", self.lambda_l1)));
        }
        Ok(())
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(CoreError::ShapeMismatch(format!("{a} vs {b} elements")));
    }
    if a == 0 {
        return Err(CoreError::ShapeMismatch("empty input".into()));
    }
    Ok(())
}

fn clamped(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, false)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, false)
    } else {
        (p, true)
    }
}

fn to64<T: Float>(v: T) -> f64 {
    v.to_f64().unwrap()
}

fn from64<T: Float>(v: f64) -> T {
    T::from(v).unwrap()
}

/// Discriminator loss: mean of `-ln D(real) - ln(1 - D(fake))`.
pub fn d_loss<T: Float>(d_real: &[T], d_fake: &[T]) -> Result<f64> {
    same_len(d_real.len(), d_fake.len())?;
    let sum: f64 = d_real
        .iter()
        .zip(d_fake)
        .map(|(&r, &f)| -clamped(to64(r)).0.ln() - (1.0 - clamped(to64(f)).0).ln())
        .sum();
    Ok(sum / d_real.len() as f64)
}

pub fn d_loss_grad<T: Float>(d_real: &[T], d_fake: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    same_len(d_real.len(), d_fake.len())?;
    let m = d_real.len() as f64;
    let gr = d_real
        .iter()
        .map(|&r| match clamped(to64(r)) {
            (p, true) => from64(-1.0 / (p * m)),
            _ => T::zero(),
        })
        .collect();
    let gf = d_fake
        .iter()
        .map(|&f| match clamped(to64(f)) {
            (p, true) => from64(1.0 / ((1.0 - p) * m)),
            _ => T::zero(),
        })
        .collect();
    Ok((gr, gf))
}

/// Non-saturating generator adversarial loss: mean of `-ln D(fake)`.
pub fn g_adv_loss<T: Float>(d_fake: &[T]) -> Result<f64> {
    same_len(d_fake.len(), d_fake.len())?;
    let sum: f64 = d_fake.iter().map(|&f| -clamped(to64(f)).0.ln()).sum();
    Ok(sum / d_fake.len() as f64)
}

pub fn g_adv_loss_grad<T: Float>(d_fake: &[T]) -> Result<Vec<T>> {
    same_len(d_fake.len(), d_fake.len())?;
    let m = d_fake.len() as f64;
    Ok(d_fake
        .iter()
        .map(|&f| match clamped(to64(f)) {
            (p, true) => from64(-1.0 / (p * m)),
            _ => T::zero(),
        })
        .collect())
}

/// Mean absolute difference.
pub fn l1_loss<T: Float>(pred: &[T], truth: &[T]) -> Result<f64> {
    same_len(pred.len(), truth.len())?;
    let sum: f64 = pred.iter().zip(truth).map(|(&p, &t)| (to64(p) - to64(t)).abs()).sum();
    Ok(sum / pred.len() as f64)
}

pub fn l1_loss_grad<T: Float>(pred: &[T], truth: &[T]) -> Result<Vec<T>> {
    same_len(pred.len(), truth.len())?;
    let inv = 1.0 / pred.len() as f64;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d = to64(p) - to64(t);
            from64(if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            })
        })
        .collect())
}

/// `adv + lambda * l1`.
pub fn seg_loss(adv: f64, l1: f64, weights: &LossWeights) -> f64 {
    adv + weights.lambda_l1 * l1
}

/// Mean binary cross entropy of probabilities against targets in `[0, 1]`.
pub fn bce_loss<T: Float>(pred: &[T], target: &[T]) -> Result<f64> {
    same_len(pred.len(), target.len())?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let (p, _) = clamped(to64(p));
            let t = to64(t);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn bce_loss_grad<T: Float>(pred: &[T], target: &[T]) -> Result<Vec<T>> {
    same_len(pred.len(), target.len())?;
    let m = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| match clamped(to64(p)) {
            (p, true) => {
                let t = to64(t);
                from64((-t / p + (1.0 - t) / (1.0 - p)) / m)
            }
            _ => T::zero(),
        })
        .collect())
}

fn clip01<T: Float>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Pixels missed by the prediction: `clip(truth - pred, 0, 1)`.
pub fn fn_mask<T: Float>(truth: &[T], pred: &[T]) -> Result<Vec<T>> {
    same_len(truth.len(), pred.len())?;
    Ok(truth.iter().zip(pred).map(|(&y, &p)| clip01(y - p)).collect())
}

/// Pixels wrongly included by the prediction: `clip(pred - truth, 0, 1)`.
pub fn fp_mask<T: Float>(truth: &[T], pred: &[T]) -> Result<Vec<T>> {
    same_len(truth.len(), pred.len())?;
    Ok(truth.iter().zip(pred).map(|(&y, &p)| clip01(p - y)).collect())
}

/// Removes false positives and adds false negatives:
/// `clip(pred - fp + fn, 0, 1)`.
pub fn compose<T: Float>(pred: &[T], fp: &[T], fn_: &[T]) -> Result<Vec<T>> {
    same_len(pred.len(), fp.len())?;
    same_len(pred.len(), fn_.len())?;
    Ok(pred
        .iter()
        .zip(fp)
        .zip(fn_)
        .map(|((&p, &f), &n)| clip01(p - f + n))
        .collect())
}

/// Final labels from per-class composed maps `(s, h, w, C)`.
///
/// With `C >= 2` this is an argmax where the lowest class index wins ties.
/// A single foreground map (`C == 1`) is thresholded: values above 0.5 are
/// labelled 1.
pub fn finalize_labels(composed: ArrayView4<f32>) -> Array3<u8> {
    if composed.dim().3 == 1 {
        let (s, h, w, _) = composed.dim();
        Array3::from_shape_fn((s, h, w), |(i, j, k)| u8::from(composed[[i, j, k, 0]] > 0.5))
    } else {
        argmax(composed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const HI: f64 = 1.0 - 1e-7;

    #[test]
    fn d_loss_examples() {
        assert!(d_loss(&[HI; 4], &[1e-7; 4]).unwrap() < 1e-6);
        let half = d_loss(&[0.5f64; 3], &[0.5; 3]).unwrap();
        assert!((half - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((half - 1.3863).abs() < 1e-4);
        assert!(d_loss(&[0.5f64; 3], &[0.5; 2]).is_err());
    }

    #[test]
    fn d_loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r: Vec<f64> = (0..100).map(|_| rng.gen_range(0.01..0.99)).collect();
        let f: Vec<f64> = (0..100).map(|_| rng.gen_range(0.01..0.99)).collect();
        let mut acc = 0.0;
        for i in 0..100 {
            acc += -(r[i].ln()) - (1.0 - f[i]).ln();
        }
        assert!((d_loss(&r, &f).unwrap() - acc / 100.0).abs() < 1e-9);
    }

    #[test]
    fn g_adv_examples() {
        assert!(g_adv_loss(&[HI; 5]).unwrap() < 1e-6);
        assert!((g_adv_loss(&[0.5f64; 5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let base = vec![0.3f64, 0.6, 0.2];
        let l0 = g_adv_loss(&base).unwrap();
        for i in 0..3 {
            let mut up = base.clone();
            up[i] += 0.05;
            assert!(g_adv_loss(&up).unwrap() < l0);
        }
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_loss(&[0.2f64, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        // one pixel, two classes, averaged over elements
        assert_eq!(l1_loss(&[0.5f64, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
        let t: Vec<f64> = (0..64).map(|_| rng.gen_range(0..2) as f64).collect();
        let mut acc = 0.0;
        for i in 0..64 {
            acc += (p[i] - t[i]).abs();
        }
        assert!((l1_loss(&p, &t).unwrap() - acc / 64.0).abs() < 1e-9);
    }

    #[test]
    fn seg_loss_examples() {
        assert_eq!(seg_loss(1.0, 2.0, &LossWeights { lambda_l1: 1.0 }), 3.0);
        assert_eq!(seg_loss(1.0, 2.0, &LossWeights { lambda_l1: 0.0 }), 1.0);
        assert!((seg_loss(0.4, 0.1, &LossWeights { lambda_l1: 10.0 }) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn mask_examples() {
        assert_eq!(fn_mask(&[1.0f64], &[0.0]).unwrap(), vec![1.0]);
        assert_eq!(fn_mask(&[0.0f64], &[1.0]).unwrap(), vec![0.0]);
        assert!((fn_mask(&[1.0f64], &[0.3]).unwrap()[0] - 0.7).abs() < 1e-12);
        assert_eq!(fp_mask(&[0.0f64], &[1.0]).unwrap(), vec![1.0]);
        assert_eq!(fp_mask(&[0.6f64], &[0.6]).unwrap(), vec![0.0]);
        assert_eq!(fp_mask(&[0.0f64], &[0.4]).unwrap(), vec![0.4]);
        assert!(fp_mask(&[0.0f64], &[0.4, 0.1]).is_err());
    }

    #[test]
    fn compose_examples() {
        let pred = [1.0f64, 0.0, 1.0, 0.0];
        let truth = [1.0f64, 1.0, 0.0, 0.0];
        let fp = fp_mask(&truth, &pred).unwrap();
        let fn_ = fn_mask(&truth, &pred).unwrap();
        assert_eq!(fp, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(fn_, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(compose(&pred, &fp, &fn_).unwrap(), truth.to_vec());
        assert_eq!(compose(&pred, &[0.0; 4], &[0.0; 4]).unwrap(), pred.to_vec());
        assert_eq!(compose(&[1.0f64], &[1.0], &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn finalize_examples() {
        let clear = Array4::from_shape_vec((1, 1, 2, 3), vec![0.1f32, 0.8, 0.1, 0.9, 0.0, 0.1]).unwrap();
        assert_eq!(finalize_labels(clear.view()).iter().copied().collect::<Vec<_>>(), vec![1, 0]);
        let tie = Array4::from_shape_vec((1, 1, 1, 3), vec![0.0f32, 1.0, 1.0]).unwrap();
        assert_eq!(finalize_labels(tie.view())[[0, 0, 0]], 1);
        let binary = Array4::from_shape_vec((1, 1, 3, 1), vec![0.2f32, 0.5, 0.9]).unwrap();
        assert_eq!(finalize_labels(binary.view()).iter().copied().collect::<Vec<_>>(), vec![0, 0, 1]);
    }

    #[test]
    fn grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r: Vec<f64> = (0..7).map(|_| rng.gen_range(0.05..0.95)).collect();
        let f: Vec<f64> = (0..7).map(|_| rng.gen_range(0.05..0.95)).collect();
        let h = 1e-6;
        let (gr, gf) = d_loss_grad(&r, &f).unwrap();
        let gg = g_adv_loss_grad(&f).unwrap();
        let gb = bce_loss_grad(&f, &r).unwrap();
        for i in 0..7 {
            let bump = |v: &[f64], d: f64| {
                let mut w = v.to_vec();
                w[i] += d;
                w
            };
            let num = (d_loss(&bump(&r, h), &f).unwrap() - d_loss(&bump(&r, -h), &f).unwrap()) / (2.0 * h);
            assert!((num - gr[i]).abs() < 1e-6);
            let num = (d_loss(&r, &bump(&f, h)).unwrap() - d_loss(&r, &bump(&f, -h)).unwrap()) / (2.0 * h);
            assert!((num - gf[i]).abs() < 1e-6);
            let num = (g_adv_loss(&bump(&f, h)).unwrap() - g_adv_loss(&bump(&f, -h)).unwrap()) / (2.0 * h);
            assert!((num - gg[i]).abs() < 1e-6);
            let num = (bce_loss(&bump(&f, h), &r).unwrap() - bce_loss(&bump(&f, -h), &r).unwrap()) / (2.0 * h);
            assert!((num - gb[i]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn binary_masks_recover_truth(seed in any::<u64>(), n in 1usize..256) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f32> = (0..n).map(|_| rng.gen_range(0..2) as f32).collect();
            let p: Vec<f32> = (0..n).map(|_| rng.gen_range(0..2) as f32).collect();
            let fp = fp_mask(&y, &p).unwrap();
            let fn_ = fn_mask(&y, &p).unwrap();
            prop_assert_eq!(compose(&p, &fp, &fn_).unwrap(), y.clone());
            prop_assert!(fp.iter().zip(&fn_).all(|(a, b)| a * b == 0.0));
            // duality under argument swap
            prop_assert_eq!(fn_mask(&y, &p).unwrap(), fp_mask(&p, &y).unwrap());
        }

        #[test]
        fn losses_are_finite_and_non_negative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let b: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..=1.0)).collect();
            for v in [d_loss(&a, &b).unwrap(), g_adv_loss(&a).unwrap(), l1_loss(&a, &b).unwrap(), bce_loss(&a, &b).unwrap()] {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
        }

        #[test]
        fn seg_loss_is_affine(adv in -5.0f64..5.0, l1 in 0.0f64..5.0, lam in 0.0f64..10.0, d in -1.0f64..1.0) {
            let w = LossWeights { lambda_l1: lam };
            prop_assert!((seg_loss(adv + d, l1, &w) - seg_loss(adv, l1, &w) - d).abs() < 1e-9);
            prop_assert!((seg_loss(adv, l1 + d, &w) - seg_loss(adv, l1, &w) - lam * d).abs() < 1e-9);
        }
    }
}
