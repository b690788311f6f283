use ndarray::{Array3, Array4, Axis};
use refinegan_core::pbn::{bn_forward, bn_stats, BnParams, ChannelStats, PlanEntry};
use refinegan_core::volume::{extract_slices, one_hot, slices_along};
use refinegan_core::{AcquisitionPlane, PatientRecord};
use refinegan_nets::{NetConfig, Scalar, Tensor};

use crate::config::RunConfig;
use crate::error::{Result, TrainError};

/// One patient cut into slices along a plane, ready for the networks.
#[derive(Debug, Clone)]
pub struct PatientSlices {
    pub patient_id: String,
    pub plane: AcquisitionPlane,
    /// `(slices, h, w, modalities)`, raw intensities.
    pub image: Tensor<f32>,
    /// One-hot truth `(slices, h, w, classes)`.
    pub truth: Tensor<f32>,
    pub labels: Array3<u8>,
}

impl PatientSlices {
    pub fn from_record(rec: &PatientRecord, plane: AcquisitionPlane) -> Result<Self> {
        let truth = rec
            .truth
            .as_ref()
            .ok_or_else(|| TrainError::Data(format!("patient {} has no ground truth", rec.patient_id)))?;
        let labels = truth.argmax().labels().expect("argmax yields labels").clone();
        let hot = one_hot(&labels, truth.class_count())?;
        Ok(Self {
            patient_id: rec.patient_id.clone(),
            plane,
            image: image_tensor(rec, plane)?,
            truth: array_tensor(slices_along(hot.view(), plane).slices)?,
            labels,
        })
    }

    pub fn classes(&self) -> usize {
        self.truth.channels()
    }

    pub fn plan_entry(&self) -> PlanEntry {
        PlanEntry {
            patient_id: self.patient_id.clone(),
            plane: self.plane,
            slices: self.image.batch(),
            channels: self.image.channels(),
        }
    }
}

pub fn array_tensor(a: Array4<f32>) -> Result<Tensor<f32>> {
    let (n, h, w, c) = a.dim();
    let data = if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    };
    Ok(Tensor::new([n, h, w, c], data)?)
}

pub fn tensor_array(t: &Tensor<f32>) -> Array4<f32> {
    let [n, h, w, c] = t.shape();
    Array4::from_shape_vec((n, h, w, c), t.data().to_vec()).expect("tensor length matches shape")
}

/// Image slices of a record along `plane`.
pub fn image_tensor(rec: &PatientRecord, plane: AcquisitionPlane) -> Result<Tensor<f32>> {
    array_tensor(extract_slices(&rec.volume, plane).slices)
}

/// Patient-wise normalization of the input channels: statistics over every
/// pixel of every slice in `x` unless supplied.
pub fn normalize_input<T: Scalar>(x: &Tensor<T>, stats: Option<&ChannelStats<T>>) -> Result<Tensor<T>> {
    let c = x.channels();
    let own;
    let stats = match stats {
        Some(s) => s,
        None => {
            own = bn_stats(x.data(), c)?;
            &own
        }
    };
    let params = BnParams::identity(c);
    Ok(Tensor::new(x.shape(), bn_forward(x.data(), &params, stats)?)?)
}

/// Network architecture implied by the run config and the data shape.
pub fn net_config(run: &RunConfig, height: usize, width: usize, in_channels: usize, classes: usize) -> NetConfig {
    NetConfig {
        height,
        width,
        in_channels,
        class_count: classes,
        depth: run.depth,
        base_filters: run.base_filters,
        recurrent: run.recurrent,
        noise_input: run.noise_input,
        seed: run.seed,
    }
}

/// Checks that every patient has the same slice geometry and class count,
/// and returns the corresponding network config.
pub fn dataset_net_config(run: &RunConfig, patients: &[PatientSlices]) -> Result<NetConfig> {
    let first = patients.first().ok_or(refinegan_core::CoreError::EmptyDataset)?;
    let [_, h, w, c] = first.image.shape();
    for p in patients {
        let [_, ph, pw, pc] = p.image.shape();
        if (ph, pw, pc) != (h, w, c) || p.classes() != first.classes() {
            return Err(TrainError::Data(format!(
                "patient {} has slices {ph}x{pw}x{pc} with {} classes, expected {h}x{w}x{c} with {}",
                p.patient_id,
                p.classes(),
                first.classes()
            )));
        }
    }
    let cfg = net_config(run, h, w, c, first.classes());
    cfg.validate()?;
    Ok(cfg)
}

/// Labels in slice order back to `(slice, row, col)` volume order.
pub fn restack_labels(labels: Array3<u8>, plane: AcquisitionPlane) -> Array3<u8> {
    let seq = refinegan_core::SliceSequence { plane, slices: labels.insert_axis(Axis(3)) };
    seq.restack().index_axis_move(Axis(3), 0)
}
