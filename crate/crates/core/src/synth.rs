//! Synthetic imbalanced volumes with analytic ground truth.
//!
//! Each patient has a smooth random background per channel and one to three
//! ellipsoidal lesions that raise every channel by `contrast` background
//! standard deviations (times the label for nested classes). Lesion sizes
//! are tuned so the foreground fraction lands near the requested target.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::mvol::{read_mvol, write_mvol, MvolObject};
use crate::volume::{default_class_names, PatientRecord, SegMap, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub class_count: usize,
    /// Target foreground fraction, in `(0, 0.5)`.
    pub lesion_fraction: f64,
    /// Lesion/background mean gap in background standard deviations.
    pub contrast: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_patients: 10,
            slices: 16,
            height: 32,
            width: 32,
            channels: 2,
            class_count: 2,
            lesion_fraction: 0.02,
            contrast: 3.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lesion_fraction > 0.0 && self.lesion_fraction < 0.5) {
            return Err(CoreError::InvalidParam(format!(
                "lesion fraction {} outside (0, 0.5)",
                self.lesion_fraction
            )));
        }
        if !(self.contrast > 0.0 && self.contrast.is_finite()) {
            return Err(CoreError::InvalidParam(format!("contrast {} must be positive", self.contrast)));
        }
        if self.class_count < 2 || self.class_count > 255 {
            return Err(CoreError::InvalidParam(format!("class count {} outside [2, 255]", self.class_count)));
        }
        if self.n_patients == 0 || self.slices == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(CoreError::InvalidParam("all synthetic dimensions must be positive".into()));
        }
        Ok(())
    }

    fn voxels(&self) -> usize {
        self.slices * self.height * self.width
    }
}

const BACKGROUND_STD: f64 = 10.0;
const WHITE_NOISE_WEIGHT: f64 = 0.3;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

// Separable blur with edge clamping.
fn blur(field: &Array3<f64>, sigmas: [f64; 3]) -> Array3<f64> {
    let mut cur = field.clone();
    for (axis, &sigma) in sigmas.iter().enumerate() {
        if sigma <= 0.0 {
            continue;
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let mut next = cur.clone();
        for (src, mut dst) in cur.lanes(Axis(axis)).into_iter().zip(next.lanes_mut(Axis(axis))) {
            let n = src.len() as isize;
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let idx = (i + j as isize - r).clamp(0, n - 1);
                    acc += kv * src[idx as usize];
                }
                dst[i as usize] = acc;
            }
        }
        cur = next;
    }
    cur
}

fn normalize(field: &mut Array3<f64>) {
    let n = field.len() as f64;
    let mean = field.sum() / n;
    let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    field.mapv_inplace(|v| (v - mean) / std);
}

struct Ellipsoid {
    // semi-axes before the global scale factor
    base: [f64; 3],
    // relative center position in [0, 1] along each axis
    rel: [f64; 3],
}

fn rasterize(lesions: &[Ellipsoid], scale: f64, dims: [usize; 3], classes: usize) -> Option<Array3<u8>> {
    let mut labels = Array3::<u8>::zeros((dims[0], dims[1], dims[2]));
    for e in lesions {
        let r = [e.base[0] * scale, e.base[1] * scale, e.base[2] * scale];
        let mut c = [0.0; 3];
        for a in 0..3 {
            let room = dims[a] as f64 - 1.0 - 2.0 * r[a];
            if room < 0.0 {
                return None;
            }
            c[a] = r[a] + e.rel[a] * room;
        }
        let lo = |a: usize| ((c[a] - r[a]).floor().max(0.0)) as usize;
        let hi = |a: usize| ((c[a] + r[a]).ceil() as usize).min(dims[a] - 1);
        for i in lo(0)..=hi(0) {
            for j in lo(1)..=hi(1) {
                for k in lo(2)..=hi(2) {
                    let q = ((i as f64 - c[0]) / r[0]).powi(2)
                        + ((j as f64 - c[1]) / r[1]).powi(2)
                        + ((k as f64 - c[2]) / r[2]).powi(2);
                    if q <= 1.0 {
                        let depth = 1.0 - q.sqrt();
                        let label = (1 + (depth * (classes - 1) as f64).floor() as usize).min(classes - 1) as u8;
                        let cell = &mut labels[[i, j, k]];
                        *cell = (*cell).max(label);
                    }
                }
            }
        }
    }
    Some(labels)
}

fn foreground_count(labels: &Array3<u8>) -> usize {
    labels.iter().filter(|&&l| l > 0).count()
}

/// Foreground fraction of a label map.
pub fn foreground_fraction(labels: &Array3<u8>) -> f64 {
    foreground_count(labels) as f64 / labels.len() as f64
}

pub fn patient_id(index: usize) -> String {
    format!("synth-{index:03}")
}

/// Generates patient `index`; deterministic in `(spec.seed, index)`.
pub fn gen_patient(spec: &SynthSpec, index: usize) -> Result<PatientRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let dims = [spec.slices, spec.height, spec.width];
    let target = spec.lesion_fraction * spec.voxels() as f64;

    let n_lesions = rng.gen_range(1..=3usize);
    let weights: Vec<f64> = (0..n_lesions).map(|_| rng.gen_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let lesions: Vec<Ellipsoid> = weights
        .iter()
        .map(|w| {
            let vol = target * w / wsum;
            let aspect = [rng.gen_range(0.75..1.25), rng.gen_range(0.75..1.25), rng.gen_range(0.75..1.25)];
            let unit = (3.0 * vol / (4.0 * std::f64::consts::PI * aspect.iter().product::<f64>())).cbrt();
            Ellipsoid {
                base: [unit * aspect[0], unit * aspect[1], unit * aspect[2]],
                rel: [rng.gen(), rng.gen(), rng.gen()],
            }
        })
        .collect();

    // Bisection on the global size factor; keep the closest count seen.
    let mut lo = 0.05;
    let mut hi = 3.0;
    let mut best: Option<(f64, Array3<u8>)> = None;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        match rasterize(&lesions, mid, dims, spec.class_count) {
            None => hi = mid,
            Some(labels) => {
                let count = foreground_count(&labels) as f64;
                let err = (count - target).abs();
                if best.as_ref().map_or(true, |(e, _)| err < *e) {
                    best = Some((err, labels));
                }
                if count < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    let labels = match best {
        Some((_, l)) if foreground_count(&l) > 0 => l,
        _ => {
            return Err(CoreError::LesionDoesNotFit(format!(
                "fraction {} in {:?}",
                spec.lesion_fraction, dims
            )))
        }
    };
    let achieved = foreground_fraction(&labels);
    if (achieved - spec.lesion_fraction).abs() > 0.5 * spec.lesion_fraction {
        return Err(CoreError::LesionDoesNotFit(format!(
            "achieved fraction {achieved} too far from target {}",
            spec.lesion_fraction
        )));
    }

    let mut voxels = Array4::<f32>::zeros((dims[0], dims[1], dims[2], spec.channels));
    for c in 0..spec.channels {
        let white = Array3::from_shape_fn((dims[0], dims[1], dims[2]), |_| rng.sample::<f64, _>(StandardNormal));
        let mut field = blur(&white, [1.0, 2.0, 2.0]);
        normalize(&mut field);
        let extra = Array3::from_shape_fn((dims[0], dims[1], dims[2]), |_| rng.sample::<f64, _>(StandardNormal));
        field.zip_mut_with(&extra, |f, e| *f += WHITE_NOISE_WEIGHT * e);
        normalize(&mut field);
        let base = 100.0 + 40.0 * c as f64;
        let mut chan = voxels.index_axis_mut(Axis(3), c);
        ndarray::Zip::from(&mut chan)
            .and(&field)
            .and(&labels)
            .for_each(|v, &f, &l| {
                *v = (base + BACKGROUND_STD * (f + spec.contrast * l as f64)) as f32;
            });
    }
    let names = (0..spec.channels).map(|c| format!("ch{c}")).collect();
    let id = patient_id(index);
    let volume = Volume::new(voxels, [1.0; 3], names, id)?;
    let truth = SegMap::from_labels(labels, default_class_names(spec.class_count), [1.0; 3])?;
    PatientRecord::new(volume, Some(truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(CoreError::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

/// Number of training patients in an 80/20 split by index.
pub fn train_count(n: usize) -> usize {
    ((n * 4) / 5).max(1).min(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub volume_file: String,
    pub truth_file: String,
    pub split: Split,
    pub fraction: f64,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{},{}\t{}\t{}",
            self.patient_id, self.volume_file, self.truth_file, self.split, self.fraction
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CoreError::Manifest(format!("expected 4 tab-separated fields in {line:?}")));
        }
        let (vol, seg) = fields[1]
            .split_once(',')
            .ok_or_else(|| CoreError::Manifest(format!("expected two files in {:?}", fields[1])))?;
        Ok(Self {
            patient_id: fields[0].to_string(),
            volume_file: vol.to_string(),
            truth_file: seg.to_string(),
            split: fields[2].parse()?,
            fraction: fields[3]
                .parse()
                .map_err(|e| CoreError::Manifest(format!("bad fraction {:?}: {e}", fields[3])))?,
        })
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Patients with their split assignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    pub manifest: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&PatientRecord> {
        self.records
            .iter()
            .zip(&self.manifest)
            .filter(|(_, m)| m.split == split)
            .map(|(r, _)| r)
            .collect()
    }

    /// Writes MVOL files and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut text = String::new();
        for (rec, entry) in self.records.iter().zip(&self.manifest) {
            write_mvol(&MvolObject::Volume(rec.volume.clone()), dir.join(&entry.volume_file))?;
            if let Some(t) = &rec.truth {
                write_mvol(&MvolObject::Labels(t.clone()), dir.join(&entry.truth_file))?;
            }
            text.push_str(&entry.to_line());
            text.push('\n');
        }
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(ManifestEntry::parse)
            .collect()
    }

    /// Loads every patient listed in `dir/manifest.txt`.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        if manifest.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let mut records = Vec::with_capacity(manifest.len());
        for entry in &manifest {
            let volume = read_mvol(dir.join(&entry.volume_file))?
                .into_volume()?
                .with_patient_id(entry.patient_id.clone());
            let truth_path: PathBuf = dir.join(&entry.truth_file);
            let truth = if truth_path.exists() {
                Some(read_mvol(truth_path)?.into_labels()?)
            } else {
                None
            };
            records.push(PatientRecord::new(volume, truth)?);
        }
        Ok(Self { records, manifest })
    }
}

/// Generates all patients with an 80/20 patient-level split by index.
pub fn gen_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let n_train = train_count(spec.n_patients);
    let mut records = Vec::with_capacity(spec.n_patients);
    let mut manifest = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let rec = gen_patient(spec, i)?;
        let fraction = foreground_fraction(rec.truth.as_ref().and_then(SegMap::labels).unwrap());
        manifest.push(ManifestEntry {
            patient_id: rec.patient_id.clone(),
            volume_file: format!("{}.vol.mvl", rec.patient_id),
            truth_file: format!("{}.seg.mvl", rec.patient_id),
            split: if i < n_train { Split::Train } else { Split::Val },
            fraction,
        });
        records.push(rec);
    }
    Ok(Dataset { records, manifest })
}
