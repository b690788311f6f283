//! Overlap, rate and surface-distance metrics on label maps.
//!
//! Empty-mask conventions: when both masks are empty dice and iou are 1;
//! sensitivity (specificity) is 1 when the truth has no positives
//! (negatives); surface distances are undefined unless both masks are
//! non-empty, and show up as `None` in reports.

use std::io::{self, Write};

use ndarray::{Array3, Zip};

use crate::error::{CoreError, Result};
use crate::volume::SegMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn pred_volume(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn truth_volume(&self) -> u64 {
        self.tp + self.fn_
    }
}

pub fn confusion_masks(pred: &Array3<bool>, truth: &Array3<bool>) -> Result<ConfusionCounts> {
    if pred.dim() != truth.dim() {
        return Err(CoreError::ShapeMismatch(format!("{:?} vs {:?}", pred.dim(), truth.dim())));
    }
    let mut cc = ConfusionCounts::default();
    Zip::from(pred).and(truth).for_each(|&p, &t| match (p, t) {
        (true, true) => cc.tp += 1,
        (true, false) => cc.fp += 1,
        (false, false) => cc.tn += 1,
        (false, true) => cc.fn_ += 1,
    });
    Ok(cc)
}

/// One-vs-rest counts for `class`.
pub fn confusion(pred: &Array3<u8>, truth: &Array3<u8>, class: u8) -> Result<ConfusionCounts> {
    confusion_masks(&pred.mapv(|v| v == class), &truth.mapv(|v| v == class))
}

pub fn dice(cc: &ConfusionCounts) -> f64 {
    let denom = 2 * cc.tp + cc.fp + cc.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * cc.tp) as f64 / denom as f64
    }
}

pub fn iou(cc: &ConfusionCounts) -> f64 {
    let denom = cc.tp + cc.fp + cc.fn_;
    if denom == 0 {
        1.0
    } else {
        cc.tp as f64 / denom as f64
    }
}

pub fn voe(cc: &ConfusionCounts) -> f64 {
    1.0 - iou(cc)
}

/// `(|pred| - |truth|) / |truth|`; zero when both are empty, undefined when
/// only the truth is.
pub fn rvd(pred_volume: u64, truth_volume: u64) -> Option<f64> {
    match (pred_volume, truth_volume) {
        (0, 0) => Some(0.0),
        (_, 0) => None,
        (p, t) => Some((p as f64 - t as f64) / t as f64),
    }
}

pub fn sensitivity(cc: &ConfusionCounts) -> f64 {
    let denom = cc.tp + cc.fn_;
    if denom == 0 {
        1.0
    } else {
        cc.tp as f64 / denom as f64
    }
}

pub fn specificity(cc: &ConfusionCounts) -> f64 {
    let denom = cc.tn + cc.fp;
    if denom == 0 {
        1.0
    } else {
        cc.tn as f64 / denom as f64
    }
}

pub fn fnr(cc: &ConfusionCounts) -> f64 {
    1.0 - sensitivity(cc)
}

pub fn fpr(cc: &ConfusionCounts) -> f64 {
    1.0 - specificity(cc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceDistances {
    pub assd: f64,
    pub mssd: f64,
    pub hd_max: f64,
    pub hd95: f64,
}

/// Mask voxels with at least one face neighbour outside the mask. Only axes
/// with extent > 1 are considered, so a single slice uses 4-connectivity.
/// Positions beyond the grid count as background.
pub fn boundary(mask: &Array3<bool>) -> Array3<bool> {
    let (s, h, w) = mask.dim();
    let dims = [s, h, w];
    Array3::from_shape_fn((s, h, w), |(i, j, k)| {
        if !mask[[i, j, k]] {
            return false;
        }
        let idx = [i, j, k];
        for axis in 0..3 {
            if dims[axis] == 1 {
                continue;
            }
            for delta in [-1isize, 1] {
                let v = idx[axis] as isize + delta;
                if v < 0 || v >= dims[axis] as isize {
                    return true;
                }
                let mut n = idx;
                n[axis] = v as usize;
                if !mask[n] {
                    return true;
                }
            }
        }
        false
    })
}

// Squared distance transform of one line: out[p] = min_q ((p - q) * sp)^2 + f[q].
fn edt_1d(f: &[f64], sp: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let xq = q as f64 * sp;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&last) => {
                    let xv = last as f64 * sp;
                    let s = ((f[q] + xq * xq) - (f[last] + xv * xv)) / (2.0 * (xq - xv));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let xp = p as f64 * sp;
        while k + 1 < v.len() && z[k + 1] < xp {
            k += 1;
        }
        let d = xp - v[k] as f64 * sp;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in spacing units) from every voxel to
/// the nearest `true` voxel of `features`.
pub fn squared_distance_transform(features: &Array3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut dist = features.mapv(|f| if f { 0.0 } else { f64::INFINITY });
    let mut v = Vec::new();
    let mut z = Vec::new();
    for axis in 0..3 {
        let len = dist.len_of(ndarray::Axis(axis));
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for mut lane in dist.lanes_mut(ndarray::Axis(axis)) {
            for (l, x) in line.iter_mut().zip(lane.iter()) {
                *l = *x;
            }
            edt_1d(&line, spacing[axis], &mut out, &mut v, &mut z);
            for (x, o) in lane.iter_mut().zip(&out) {
                *x = *o;
            }
        }
    }
    dist
}

/// Percentile with linear interpolation between order statistics of a
/// sorted, non-empty slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Distances from each boundary voxel of `from` to the boundary of `to`.
fn directed(from_boundary: &Array3<bool>, to_sq_dist: &Array3<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    Zip::from(from_boundary).and(to_sq_dist).for_each(|&b, &d| {
        if b {
            out.push(d.sqrt());
        }
    });
    out
}

/// Symmetric surface distances between two non-empty masks.
pub fn surface_distances(pred: &Array3<bool>, truth: &Array3<bool>, spacing: [f64; 3]) -> Result<SurfaceDistances> {
    if pred.dim() != truth.dim() {
        return Err(CoreError::ShapeMismatch(format!("{:?} vs {:?}", pred.dim(), truth.dim())));
    }
    if !pred.iter().any(|&v| v) || !truth.iter().any(|&v| v) {
        return Err(CoreError::UndefinedDistance("empty mask".into()));
    }
    let bp = boundary(pred);
    let bt = boundary(truth);
    let d_pt = directed(&bp, &squared_distance_transform(&bt, spacing));
    let d_tp = directed(&bt, &squared_distance_transform(&bp, spacing));
    Ok(summarize(&d_pt, &d_tp))
}

/// Summary statistics from the two directed distance sets.
pub fn summarize(a_to_b: &[f64], b_to_a: &[f64]) -> SurfaceDistances {
    let mut pooled: Vec<f64> = a_to_b.iter().chain(b_to_a).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let assd = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let max = *pooled.last().unwrap();
    SurfaceDistances {
        assd,
        mssd: max,
        hd_max: max,
        hd95: percentile_sorted(&pooled, 0.95),
    }
}

/// Evaluation region: a single class or a union of classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub labels: Vec<u8>,
}

impl Region {
    pub fn class(name: impl Into<String>, label: u8) -> Self {
        Self {
            name: name.into(),
            labels: vec![label],
        }
    }

    pub fn union(name: impl Into<String>, labels: &[u8]) -> Self {
        Self {
            name: name.into(),
            labels: labels.to_vec(),
        }
    }

    /// One region per class, named after the class.
    pub fn per_class(map: &SegMap) -> Vec<Region> {
        map.class_names()
            .iter()
            .enumerate()
            .map(|(c, n)| Region::class(n.clone(), c as u8))
            .collect()
    }

    pub fn mask(&self, labels: &Array3<u8>) -> Array3<bool> {
        labels.mapv(|v| self.labels.contains(&v))
    }
}

/// All metrics of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMetrics {
    pub region: String,
    pub dice: f64,
    pub iou: f64,
    pub voe: f64,
    pub rvd: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub hd_max: Option<f64>,
    pub hd95: Option<f64>,
    pub assd: Option<f64>,
    pub mssd: Option<f64>,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub regions: Vec<RegionMetrics>,
}

impl MetricReport {
    pub fn get(&self, region: &str) -> Option<&RegionMetrics> {
        self.regions.iter().find(|r| r.region == region)
    }
}

pub fn region_metrics(name: &str, pred: &Array3<bool>, truth: &Array3<bool>, spacing: [f64; 3]) -> Result<RegionMetrics> {
    let cc = confusion_masks(pred, truth)?;
    let surface = if cc.pred_volume() > 0 && cc.truth_volume() > 0 {
        Some(surface_distances(pred, truth, spacing)?)
    } else {
        None
    };
    Ok(RegionMetrics {
        region: name.to_string(),
        dice: dice(&cc),
        iou: iou(&cc),
        voe: voe(&cc),
        rvd: rvd(cc.pred_volume(), cc.truth_volume()),
        sensitivity: sensitivity(&cc),
        specificity: specificity(&cc),
        fnr: fnr(&cc),
        fpr: fpr(&cc),
        hd_max: surface.map(|s| s.hd_max),
        hd95: surface.map(|s| s.hd95),
        assd: surface.map(|s| s.assd),
        mssd: surface.map(|s| s.mssd),
        counts: cc,
    })
}

/// Evaluates every region of `regions` (or one per class when empty).
/// Distances use `spacing` in mm.
pub fn evaluate(pred: &SegMap, truth: &SegMap, spacing: [f64; 3], regions: &[Region]) -> Result<MetricReport> {
    let p = pred
        .labels()
        .ok_or_else(|| CoreError::InvalidSegMap("prediction must be a label map".into()))?;
    let t = truth
        .labels()
        .ok_or_else(|| CoreError::InvalidSegMap("truth must be a label map".into()))?;
    if p.dim() != t.dim() {
        return Err(CoreError::ShapeMismatch(format!("{:?} vs {:?}", p.dim(), t.dim())));
    }
    let default_regions;
    let regions = if regions.is_empty() {
        default_regions = Region::per_class(truth);
        &default_regions
    } else {
        regions
    };
    let classes = truth.class_count();
    let mut out = Vec::with_capacity(regions.len());
    for region in regions {
        if let Some(&bad) = region.labels.iter().find(|&&l| l as usize >= classes) {
            return Err(CoreError::UnknownClass(bad));
        }
        out.push(region_metrics(&region.name, &region.mask(p), &region.mask(t), spacing)?);
    }
    Ok(MetricReport { regions: out })
}

pub const METRIC_CSV_HEADER: &str =
    "patient,region,dice,iou,voe,rvd,sensitivity,specificity,fnr,fpr,hd_max,hd95,assd,mssd";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per (patient, region), columns as in [`METRIC_CSV_HEADER`].
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[(String, MetricReport)]) -> io::Result<()> {
    writeln!(out, "{METRIC_CSV_HEADER}")?;
    for (patient, report) in rows {
        for r in &report.regions {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                patient,
                r.region,
                r.dice,
                r.iou,
                r.voe,
                opt(r.rvd),
                r.sensitivity,
                r.specificity,
                r.fnr,
                r.fpr,
                opt(r.hd_max),
                opt(r.hd95),
                opt(r.assd),
                opt(r.mssd),
            )?;
        }
    }
    Ok(())
}
