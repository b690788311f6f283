//! Volumes, label maps and slice sequences.
//!
//! Everything is stored channel-last: volumes are indexed
//! `(slice, row, col, channel)` and label maps `(slice, row, col)`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, Array4, ArrayView4, Axis, Zip};

use crate::error::{CoreError, Result};

/// Slicing axis of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcquisitionPlane {
    /// Slices along the first (slice) axis.
    Axial,
    /// Slices along the row axis.
    Coronal,
    /// Slices along the column axis.
    Sagittal,
}

impl AcquisitionPlane {
    pub const ALL: [AcquisitionPlane; 3] = [Self::Axial, Self::Coronal, Self::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Self::Axial => "axial",
            Self::Coronal => "coronal",
            Self::Sagittal => "sagittal",
        }
    }

    // Axis permutation taking (slice, row, col, ch) to (seq, h, w, ch).
    fn forward_axes(self) -> [usize; 4] {
        match self {
            Self::Axial => [0, 1, 2, 3],
            Self::Coronal => [1, 0, 2, 3],
            Self::Sagittal => [2, 0, 1, 3],
        }
    }

    fn inverse_axes(self) -> [usize; 4] {
        match self {
            Self::Axial => [0, 1, 2, 3],
            Self::Coronal => [1, 0, 2, 3],
            Self::Sagittal => [1, 2, 0, 3],
        }
    }

    /// Shape `(seq, h, w)` of the slices this plane produces from a
    /// `(slice, row, col)` grid.
    pub fn slice_shape(self, spatial: [usize; 3]) -> [usize; 3] {
        let p = self.forward_axes();
        [spatial[p[0]], spatial[p[1]], spatial[p[2]]]
    }
}

impl fmt::Display for AcquisitionPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AcquisitionPlane {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(Self::Axial),
            "coronal" => Ok(Self::Coronal),
            "sagittal" => Ok(Self::Sagittal),
            other => Err(CoreError::InvalidParam(format!(
                "unknown acquisition plane {other:?}"
            ))),
        }
    }
}

/// Multi-channel 3D intensity volume of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    voxels: Array4<f32>,
    spacing: [f32; 3],
    modality_names: Vec<String>,
    patient_id: String,
}

impl Volume {
    /// Validates and wraps a voxel array. Non-finite voxels are rejected.
    pub fn new(
        voxels: Array4<f32>,
        spacing: [f32; 3],
        modality_names: Vec<String>,
        patient_id: impl Into<String>,
    ) -> Result<Self> {
        let dims = voxels.dim();
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 || dims.3 == 0 {
            return Err(CoreError::InvalidVolume(format!("zero-sized dimension in {dims:?}")));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(CoreError::InvalidVolume(format!("spacing must be positive, got {spacing:?}")));
        }
        if modality_names.len() != dims.3 {
            return Err(CoreError::InvalidVolume(format!(
                "{} modality names for {} channels",
                modality_names.len(),
                dims.3
            )));
        }
        if let Some(idx) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(idx));
        }
        Ok(Self {
            voxels: voxels.as_standard_layout().into_owned(),
            spacing,
            modality_names,
            patient_id: patient_id.into(),
        })
    }

    pub fn voxels(&self) -> &Array4<f32> {
        &self.voxels
    }

    pub fn into_voxels(self) -> Array4<f32> {
        self.voxels
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn modality_names(&self) -> &[String] {
        &self.modality_names
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn channels(&self) -> usize {
        self.voxels.dim().3
    }

    /// `(slice, row, col)` extent.
    pub fn spatial_shape(&self) -> [usize; 3] {
        let d = self.voxels.dim();
        [d.0, d.1, d.2]
    }

    /// Replaces the voxel array, keeping metadata. The new array must have
    /// the same shape and be finite.
    pub fn with_voxels(&self, voxels: Array4<f32>) -> Result<Self> {
        if voxels.dim() != self.voxels.dim() {
            return Err(CoreError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                voxels.dim(),
                self.voxels.dim()
            )));
        }
        Self::new(voxels, self.spacing, self.modality_names.clone(), self.patient_id.clone())
    }

    pub fn with_patient_id(mut self, id: impl Into<String>) -> Self {
        self.patient_id = id.into();
        self
    }
}

/// Per-pixel labels or per-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum SegData {
    Labels(Array3<u8>),
    Probs(Array4<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegMap {
    data: SegData,
    class_names: Vec<String>,
    spacing: [f32; 3],
}

/// Default class names `class0..classN`.
pub fn default_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| format!("class{c}")).collect()
}

impl SegMap {
    pub fn from_labels(labels: Array3<u8>, class_names: Vec<String>, spacing: [f32; 3]) -> Result<Self> {
        let classes = class_names.len();
        if classes < 2 {
            return Err(CoreError::InvalidSegMap(format!("need at least 2 classes, got {classes}")));
        }
        if classes > 256 {
            return Err(CoreError::InvalidSegMap(format!("{classes} classes exceed u8 labels")));
        }
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(CoreError::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            data: SegData::Labels(labels.as_standard_layout().into_owned()),
            class_names,
            spacing,
        })
    }

    pub fn from_probs(probs: Array4<f32>, class_names: Vec<String>, spacing: [f32; 3]) -> Result<Self> {
        let classes = class_names.len();
        if classes < 2 || probs.dim().3 != classes {
            return Err(CoreError::InvalidSegMap(format!(
                "probability map with {} channels for {} class names",
                probs.dim().3,
                classes
            )));
        }
        for lane in probs.lanes(Axis(3)) {
            let mut sum = 0.0f64;
            for &p in lane {
                if !(0.0..=1.0).contains(&p) {
                    return Err(CoreError::InvalidSegMap(format!("probability {p} outside [0,1]")));
                }
                sum += p as f64;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(CoreError::InvalidSegMap(format!("class probabilities sum to {sum}")));
            }
        }
        Ok(Self {
            data: SegData::Probs(probs.as_standard_layout().into_owned()),
            class_names,
            spacing,
        })
    }

    pub fn data(&self) -> &SegData {
        &self.data
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn spatial_shape(&self) -> [usize; 3] {
        match &self.data {
            SegData::Labels(l) => {
                let d = l.dim();
                [d.0, d.1, d.2]
            }
            SegData::Probs(p) => {
                let d = p.dim();
                [d.0, d.1, d.2]
            }
        }
    }

    pub fn labels(&self) -> Option<&Array3<u8>> {
        match &self.data {
            SegData::Labels(l) => Some(l),
            SegData::Probs(_) => None,
        }
    }

    pub fn probs(&self) -> Option<&Array4<f32>> {
        match &self.data {
            SegData::Probs(p) => Some(p),
            SegData::Labels(_) => None,
        }
    }

    /// Expands a label map into one-hot probabilities.
    pub fn one_hot(&self) -> Result<SegMap> {
        let labels = self
            .labels()
            .ok_or_else(|| CoreError::InvalidSegMap("one_hot requires a label map".into()))?;
        let probs = one_hot(labels, self.class_count())?;
        Ok(SegMap {
            data: SegData::Probs(probs),
            class_names: self.class_names.clone(),
            spacing: self.spacing,
        })
    }

    /// Hard labels: argmax for probability maps (lowest index wins ties),
    /// identity for label maps.
    pub fn argmax(&self) -> SegMap {
        let labels = match &self.data {
            SegData::Labels(l) => l.clone(),
            SegData::Probs(p) => argmax(p.view()),
        };
        SegMap {
            data: SegData::Labels(labels),
            class_names: self.class_names.clone(),
            spacing: self.spacing,
        }
    }
}

/// One-hot encoding with channel-last class axis.
pub fn one_hot(labels: &Array3<u8>, classes: usize) -> Result<Array4<f32>> {
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(CoreError::LabelOutOfRange { label, classes });
    }
    let (s, h, w) = labels.dim();
    let mut out = Array4::<f32>::zeros((s, h, w, classes));
    Zip::from(out.lanes_mut(Axis(3)))
        .and(labels)
        .for_each(|mut lane, &l| lane[l as usize] = 1.0);
    Ok(out)
}

/// Per-pixel argmax over the last axis; ties resolve to the lowest index.
pub fn argmax<A: PartialOrd + Copy>(probs: ArrayView4<A>) -> Array3<u8> {
    let (s, h, w, _) = probs.dim();
    let mut out = Array3::<u8>::zeros((s, h, w));
    Zip::from(&mut out)
        .and(probs.lanes(Axis(3)))
        .for_each(|o, lane| {
            let mut best = 0usize;
            for (c, v) in lane.iter().enumerate().skip(1) {
                if *v > lane[best] {
                    best = c;
                }
            }
            *o = best as u8;
        });
    out
}

/// Patient volume with optional ground truth.
#[derive(Debug, Clone)]
pub struct PatientRecord {
    pub patient_id: String,
    pub volume: Volume,
    pub truth: Option<SegMap>,
}

impl PatientRecord {
    pub fn new(volume: Volume, truth: Option<SegMap>) -> Result<Self> {
        if let Some(t) = &truth {
            if t.spatial_shape() != volume.spatial_shape() {
                return Err(CoreError::ShapeMismatch(format!(
                    "truth {:?} vs volume {:?}",
                    t.spatial_shape(),
                    volume.spatial_shape()
                )));
            }
        }
        Ok(Self {
            patient_id: volume.patient_id().to_string(),
            volume,
            truth,
        })
    }
}

/// Ordered 2D slices `(seq, h, w, ch)` along one acquisition plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSequence<A = f32> {
    pub plane: AcquisitionPlane,
    pub slices: Array4<A>,
}

impl<A: Clone> SliceSequence<A> {
    pub fn len(&self) -> usize {
        self.slices.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(h, w, ch)` of every slice.
    pub fn slice_dim(&self) -> (usize, usize, usize) {
        let d = self.slices.dim();
        (d.1, d.2, d.3)
    }

    /// Inverse of [`extract_slices`]: back to `(slice, row, col, ch)`.
    pub fn restack(&self) -> Array4<A> {
        self.slices
            .view()
            .permuted_axes(self.plane.inverse_axes())
            .as_standard_layout()
            .into_owned()
    }
}

/// Reorders a `(slice, row, col, ch)` array into slices along `plane`.
pub fn slices_along<A: Clone>(array: ArrayView4<A>, plane: AcquisitionPlane) -> SliceSequence<A> {
    SliceSequence {
        plane,
        slices: array
            .permuted_axes(plane.forward_axes())
            .as_standard_layout()
            .into_owned(),
    }
}

pub fn extract_slices(volume: &Volume, plane: AcquisitionPlane) -> SliceSequence<f32> {
    slices_along(volume.voxels().view(), plane)
}

/// Label map slices as a sequence with a single channel.
pub fn extract_label_slices(labels: &Array3<u8>, plane: AcquisitionPlane) -> SliceSequence<u8> {
    slices_along(labels.view().insert_axis(Axis(3)), plane)
}
