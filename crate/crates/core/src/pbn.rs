//! Patient-wise mini-batch normalization.
//!
//! Batches never mix patients or acquisition planes, and statistics are
//! taken per channel over every pixel of every slice in the batch. At
//! inference the same statistics are computed over a patient's entire slice
//! sequence; there are no running averages.

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::volume::{extract_slices, AcquisitionPlane, PatientRecord};

pub const DEFAULT_IMAGES_PER_BATCH: usize = 128;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// One patient/plane slice sequence available for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub patient_id: String,
    pub plane: AcquisitionPlane,
    pub slices: usize,
    pub channels: usize,
}

impl PlanEntry {
    pub fn from_record(record: &PatientRecord, plane: AcquisitionPlane) -> Self {
        let spatial = record.volume.spatial_shape();
        Self {
            patient_id: record.patient_id.clone(),
            plane,
            slices: plane.slice_shape(spatial)[0],
            channels: record.volume.channels(),
        }
    }
}

/// A contiguous slice range `[start, end)` of one patient along one plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub patient_id: String,
    pub plane: AcquisitionPlane,
    pub start: usize,
    pub end: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    /// Nominal images per batch, counted as slices x modalities.
    pub images_per_batch: usize,
}

/// Splits every entry into contiguous batches of
/// `max(1, images_per_batch / channels)` slices; the last batch of an entry
/// may be short.
pub fn build_batch_plan(entries: &[PlanEntry], images_per_batch: usize) -> Result<BatchPlan> {
    if entries.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    if images_per_batch == 0 {
        return Err(CoreError::InvalidParam("images_per_batch must be positive".into()));
    }
    let mut batches = Vec::new();
    for e in entries {
        if e.slices == 0 || e.channels == 0 {
            return Err(CoreError::InvalidParam(format!(
                "patient {} has no slices or channels",
                e.patient_id
            )));
        }
        let per = (images_per_batch / e.channels).max(1);
        let mut start = 0;
        while start < e.slices {
            let end = (start + per).min(e.slices);
            batches.push(Batch {
                patient_id: e.patient_id.clone(),
                plane: e.plane,
                start,
                end,
            });
            start = end;
        }
    }
    Ok(BatchPlan {
        batches,
        images_per_batch,
    })
}

impl BatchPlan {
    /// Permutes the order of patients. Batches of one patient stay
    /// contiguous and in slice order.
    pub fn shuffle_patients(&self, seed: u64) -> BatchPlan {
        let mut groups: Vec<Vec<Batch>> = Vec::new();
        for b in &self.batches {
            match groups.last_mut() {
                Some(g) if g[0].patient_id == b.patient_id => g.push(b.clone()),
                _ => groups.push(vec![b.clone()]),
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        groups.shuffle(&mut rng);
        BatchPlan {
            batches: groups.into_iter().flatten().collect(),
            images_per_batch: self.images_per_batch,
        }
    }
}

/// Per-channel mean and population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Float> ChannelStats<T> {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn cast<U: Float>(&self) -> ChannelStats<U> {
        ChannelStats {
            mean: self.mean.iter().map(|v| U::from(*v).unwrap()).collect(),
            var: self.var.iter().map(|v| U::from(*v).unwrap()).collect(),
        }
    }
}

/// Learned affine parameters of a normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: f64,
}

impl<T: Float> BnParams<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            eps: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(CoreError::InvalidParam(format!("epsilon must be positive, got {}", self.eps)));
        }
        if self.gamma.len() != self.beta.len() {
            return Err(CoreError::ShapeMismatch("gamma and beta lengths differ".into()));
        }
        if self.gamma.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidParam("gamma/beta must be finite".into()));
        }
        Ok(())
    }
}

/// Statistics of a channel-last batch (`data.len() == m * channels`),
/// accumulated in f64. Requires `m >= 2`.
pub fn bn_stats<T: Float>(data: &[T], channels: usize) -> Result<ChannelStats<T>> {
    if channels == 0 || data.len() % channels != 0 {
        return Err(CoreError::ShapeMismatch(format!(
            "{} values do not split into {channels} channels",
            data.len()
        )));
    }
    let m = data.len() / channels;
    if m < 2 {
        return Err(CoreError::DegenerateStats(format!("batch has {m} elements per channel")));
    }
    let mut sum = vec![0.0f64; channels];
    for px in data.chunks_exact(channels) {
        for (s, v) in sum.iter_mut().zip(px) {
            *s += v.to_f64().unwrap();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
    let mut ss = vec![0.0f64; channels];
    for px in data.chunks_exact(channels) {
        for ((s, v), mu) in ss.iter_mut().zip(px).zip(&mean) {
            let d = v.to_f64().unwrap() - mu;
            *s += d * d;
        }
    }
    Ok(ChannelStats {
        mean: mean.iter().map(|v| T::from(*v).unwrap()).collect(),
        var: ss.iter().map(|s| T::from(s / m as f64).unwrap()).collect(),
    })
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub fn bn_forward<T: Float>(data: &[T], params: &BnParams<T>, stats: &ChannelStats<T>) -> Result<Vec<T>> {
    let channels = params.gamma.len();
    if stats.channels() != channels || params.beta.len() != channels || data.len() % channels.max(1) != 0 {
        return Err(CoreError::ShapeMismatch("parameters, statistics and data disagree on channels".into()));
    }
    let eps = T::from(params.eps).unwrap();
    let scale: Vec<T> = params
        .gamma
        .iter()
        .zip(&stats.var)
        .map(|(g, v)| *g / (*v + eps).sqrt())
        .collect();
    let mut out = Vec::with_capacity(data.len());
    for px in data.chunks_exact(channels) {
        for c in 0..channels {
            out.push(scale[c] * (px[c] - stats.mean[c]) + params.beta[c]);
        }
    }
    Ok(out)
}

/// Whole-patient statistics of the input channels along `plane`.
pub fn bn_inference_stats(patient: &PatientRecord, plane: AcquisitionPlane) -> Result<ChannelStats<f64>> {
    let seq = extract_slices(&patient.volume, plane);
    let data: Vec<f64> = seq.slices.iter().map(|&v| v as f64).collect();
    bn_stats(&data, patient.volume.channels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Volume;
    use ndarray::{s, Array, Array4};
    use proptest::prelude::*;
    use rand::Rng;

    fn entry(id: &str, slices: usize, channels: usize) -> PlanEntry {
        PlanEntry {
            patient_id: id.into(),
            plane: AcquisitionPlane::Axial,
            slices,
            channels,
        }
    }

    #[test]
    fn brats_patient_splits_into_five_batches() {
        let plan = build_batch_plan(&[entry("p", 155, 4)], 128).unwrap();
        let lens: Vec<usize> = plan.batches.iter().map(Batch::len).collect();
        assert_eq!(lens, vec![32, 32, 32, 32, 27]);
    }

    #[test]
    fn single_slice_patient_has_one_batch() {
        let plan = build_batch_plan(&[entry("p", 1, 4)], 128).unwrap();
        assert_eq!(plan.batches.len(), 1);
        assert_eq!(plan.batches[0].len(), 1);
    }

    #[test]
    fn batches_never_mix_patients_and_cover_everything() {
        let entries = [entry("a", 40, 4), entry("b", 70, 4)];
        let plan = build_batch_plan(&entries, 128).unwrap();
        let mut covered = std::collections::HashSet::new();
        for b in &plan.batches {
            assert!(b.start < b.end);
            for s in b.start..b.end {
                assert!(covered.insert((b.patient_id.clone(), s)));
            }
        }
        assert_eq!(covered.len(), 110);
        let shuffled = plan.shuffle_patients(3);
        assert_eq!(shuffled.batches.len(), plan.batches.len());
        for w in shuffled.batches.windows(2) {
            if w[0].patient_id == w[1].patient_id {
                assert_eq!(w[0].end, w[1].start);
            }
        }
    }

    #[test]
    fn empty_dataset_is_error() {
        assert!(matches!(build_batch_plan(&[], 128), Err(CoreError::EmptyDataset)));
    }

    #[test]
    fn stats_closed_form() {
        let st = bn_stats(&[1.0f64, 2.0, 3.0, 4.0], 1).unwrap();
        assert_eq!(st.mean, vec![2.5]);
        assert_eq!(st.var, vec![1.25]);
        let st = bn_stats(&[7.0f64; 6], 2).unwrap();
        assert_eq!(st.mean, vec![7.0, 7.0]);
        assert_eq!(st.var, vec![0.0, 0.0]);
        assert!(matches!(bn_stats(&[1.0f64, 2.0], 2), Err(CoreError::DegenerateStats(_))));
    }

    // Flat-loop oracle over an explicit (n, h, w, c) index walk.
    fn loop_stats(x: &Array4<f64>) -> (Vec<f64>, Vec<f64>) {
        let (n, h, w, c) = x.dim();
        let m = (n * h * w) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..n {
                for r in 0..h {
                    for q in 0..w {
                        s += x[[i, r, q, ch]];
                    }
                }
            }
            mean[ch] = s / m;
            let mut v = 0.0;
            for i in 0..n {
                for r in 0..h {
                    for q in 0..w {
                        v += (x[[i, r, q, ch]] - mean[ch]).powi(2);
                    }
                }
            }
            var[ch] = v / m;
        }
        (mean, var)
    }

    #[test]
    fn stats_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Array::from_shape_fn((32, 8, 8, 2), |(_, _, _, c)| rng.gen_range(-3.0..3.0) + 5.0 * c as f64);
        let st = bn_stats(x.as_slice().unwrap(), 2).unwrap();
        let (mean, var) = loop_stats(&x);
        for c in 0..2 {
            assert!((st.mean[c] - mean[c]).abs() < 1e-9);
            assert!((st.var[c] - var[c]).abs() < 1e-9);
        }
    }

    fn params(gamma: f64, beta: f64, eps: f64) -> BnParams<f64> {
        BnParams {
            gamma: vec![gamma],
            beta: vec![beta],
            eps,
        }
    }

    #[test]
    fn forward_examples() {
        let x = [1.0, 3.0];
        let st = bn_stats(&x, 1).unwrap();
        assert_eq!(bn_forward(&x, &params(1.0, 0.0, 0.0), &st).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(bn_forward(&x, &params(2.0, 1.0, 0.0), &st).unwrap(), vec![-1.0, 3.0]);
        assert_eq!(bn_forward(&x, &params(0.0, 0.7, 1e-5), &st).unwrap(), vec![0.7, 0.7]);
    }

    #[test]
    fn params_validation() {
        assert!(params(1.0, 0.0, 0.0).validate().is_err());
        assert!(params(f64::NAN, 0.0, 1e-5).validate().is_err());
        assert!(BnParams::<f64>::identity(3).validate().is_ok());
    }

    fn patient(seed: u64, slices: usize) -> PatientRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voxels = Array::from_shape_fn((slices, 6, 6, 2), |_| rng.gen_range(-1.0f32..1.0));
        let vol = Volume::new(voxels, [1.0; 3], vec!["a".into(), "b".into()], "p").unwrap();
        PatientRecord::new(vol, None).unwrap()
    }

    #[test]
    fn inference_stats_single_slice_equals_batch_stats() {
        let p = patient(4, 1);
        let st = bn_inference_stats(&p, AcquisitionPlane::Axial).unwrap();
        let data: Vec<f64> = p.volume.voxels().iter().map(|&v| v as f64).collect();
        assert_eq!(st, bn_stats(&data, 2).unwrap());
    }

    #[test]
    fn identical_patients_identical_stats() {
        let a = bn_inference_stats(&patient(9, 5), AcquisitionPlane::Coronal).unwrap();
        let b = bn_inference_stats(&patient(9, 5), AcquisitionPlane::Coronal).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn whole_patient_stats_equal_pooled_batch_moments() {
        let p = patient(12, 23);
        let whole = bn_inference_stats(&p, AcquisitionPlane::Axial).unwrap();
        let plan = build_batch_plan(&[PlanEntry::from_record(&p, AcquisitionPlane::Axial)], 14).unwrap();
        assert!(plan.batches.len() > 1);
        // Pool (count, mean, M2) across batches with the parallel-moments update.
        let mut count = vec![0.0f64; 2];
        let mut mean = vec![0.0f64; 2];
        let mut m2 = vec![0.0f64; 2];
        for b in &plan.batches {
            let sl = p.volume.voxels().slice(s![b.start..b.end, .., .., ..]);
            let data: Vec<f64> = sl.iter().map(|&v| v as f64).collect();
            let st = bn_stats(&data, 2).unwrap();
            let nb = (data.len() / 2) as f64;
            for c in 0..2 {
                let delta = st.mean[c] - mean[c];
                let tot = count[c] + nb;
                mean[c] += delta * nb / tot;
                m2[c] += st.var[c] * nb + delta * delta * count[c] * nb / tot;
                count[c] = tot;
            }
        }
        for c in 0..2 {
            assert!((whole.mean[c] - mean[c]).abs() < 1e-12);
            assert!((whole.var[c] - m2[c] / count[c]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn normalized_moments_follow_gamma_beta(
            seed in any::<u64>(), gamma in 0.1f64..3.0, beta in -2.0f64..2.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..4 * 5 * 5 * 3).map(|_| rng.gen_range(-4.0..9.0)).collect();
            let st = bn_stats(&x, 3).unwrap();
            let p = BnParams { gamma: vec![gamma; 3], beta: vec![beta; 3], eps: 1e-5 };
            let y = bn_forward(&x, &p, &st).unwrap();
            let out = bn_stats(&y, 3).unwrap();
            for c in 0..3 {
                let expected_std = gamma * st.var[c].sqrt() / (st.var[c] + 1e-5).sqrt();
                prop_assert!((out.mean[c] - beta).abs() < 1e-5);
                prop_assert!((out.var[c].sqrt() - expected_std).abs() < 1e-5);
            }
        }

        #[test]
        fn normalization_is_scale_invariant_without_eps(seed in any::<u64>(), a in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = x.iter().map(|v| v * a).collect();
            let p = BnParams { gamma: vec![1.5, 0.5], beta: vec![0.2, -0.1], eps: 0.0 };
            let y = bn_forward(&x, &p, &bn_stats(&x, 2).unwrap()).unwrap();
            let ys = bn_forward(&scaled, &p, &bn_stats(&scaled, 2).unwrap()).unwrap();
            for (u, v) in y.iter().zip(&ys) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
