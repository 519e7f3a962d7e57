//! Per-label volumes, volumetric error, Dice score and HD95.
//!
//! HD95 conventions: surface voxels are mask voxels with at least one of
//! their 6 neighbors outside the mask (out-of-grid counts as outside); the
//! 95th percentile is nearest-rank on the sorted directed distances; the
//! symmetric value is the larger of the two directed percentiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{voxel_volume_mm3, GridDims, LabelMap, Spacing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: u16,
    pub name: Option<String>,
    pub vol_gt_cm3: f64,
    pub vol_pred_cm3: f64,
    pub err_cm3: f64,
    pub err_pct: Option<f64>,
    pub dsc: Option<f64>,
    pub hd95_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub labels: Vec<LabelMetrics>,
}

pub fn label_volume_cm3(lab: &LabelMap, label: u16) -> Result<f64> {
    lab.check_label(label)?;
    Ok(lab.count(label) as f64 * voxel_volume_mm3(&lab.spacing()) / 1000.0)
}

/// Absolute error in cm³ and, when the reference is non-empty, in percent.
pub fn volumetric_error(v_gt: f64, v_pred: f64) -> (f64, Option<f64>) {
    let err = (v_gt - v_pred).abs();
    let pct = if v_gt > 0.0 {
        Some(100.0 * err / v_gt)
    } else {
        None
    };
    (err, pct)
}

/// Dice overlap of the two binary masks of `label`; `None` when both are empty.
pub fn dice_score(gt: &LabelMap, pred: &LabelMap, label: u16) -> Result<Option<f64>> {
    gt.same_grid(pred)?;
    gt.check_label(label)?;
    pred.check_label(label)?;
    let (mut x, mut y, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in gt.voxels().iter().zip(pred.voxels()) {
        let (in_a, in_b) = (a == label, b == label);
        x += in_a as usize;
        y += in_b as usize;
        both += (in_a && in_b) as usize;
    }
    if x + y == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (x + y) as f64))
}

/// Physical centers of the 6-connected surface voxels of `label`.
pub fn surface_points(lab: &LabelMap, label: u16) -> Vec<[f64; 3]> {
    let dims = lab.dims();
    let v = lab.voxels();
    let s = lab.spacing();
    (0..dims.len())
        .filter(|&i| v[i] == label && is_surface(dims, v, i, label))
        .map(|i| voxel_center(dims, &s, i))
        .collect()
}

fn is_surface(dims: GridDims, v: &[u16], i: usize, label: u16) -> bool {
    if dims.on_border(i) {
        return true;
    }
    let mut outside = false;
    dims.for_each_neighbor(i, |j| outside |= v[j] != label);
    outside
}

fn voxel_center(dims: GridDims, s: &Spacing, i: usize) -> [f64; 3] {
    let (x, y, z) = dims.coords(i);
    [x as f64 * s.sx, y as f64 * s.sy, z as f64 * s.sz]
}

#[inline]
fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Nearest-rank percentile (`q` in (0, 1]) of unsorted values.
pub fn nearest_rank(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    values[rank - 1]
}

/// Distance from every point of `from` to its nearest point in `to`.
///
/// `to` is searched in x-sorted order and the scan stops once the x gap alone
/// exceeds the best squared distance, so results equal an exhaustive search.
pub fn directed_distances(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    let mut sorted = to.to_vec();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let xs: Vec<f64> = sorted.iter().map(|p| p[0]).collect();
    from.iter()
        .map(|p| {
            let start = xs.partition_point(|&x| x < p[0]);
            let mut best = f64::INFINITY;
            for q in &sorted[start..] {
                let dx = q[0] - p[0];
                if dx * dx > best {
                    break;
                }
                best = best.min(sq_dist(p, q));
            }
            for q in sorted[..start].iter().rev() {
                let dx = p[0] - q[0];
                if dx * dx > best {
                    break;
                }
                best = best.min(sq_dist(p, q));
            }
            best.sqrt()
        })
        .collect()
}

/// Symmetric 95th-percentile surface distance in mm; `None` if either mask is empty.
pub fn hd95_mm(gt: &LabelMap, pred: &LabelMap, label: u16) -> Result<Option<f64>> {
    gt.same_grid(pred)?;
    gt.check_label(label)?;
    pred.check_label(label)?;
    let a = surface_points(gt, label);
    let b = surface_points(pred, label);
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let ab = nearest_rank(&mut directed_distances(&a, &b), 0.95);
    let ba = nearest_rank(&mut directed_distances(&b, &a), 0.95);
    Ok(Some(ab.max(ba)))
}

/// Metrics for every foreground label.
pub fn evaluate(gt: &LabelMap, pred: &LabelMap) -> Result<MetricReport> {
    gt.same_grid(pred)?;
    if gt.num_classes() != pred.num_classes() {
        return Err(Error::ClassMismatch {
            left: gt.num_classes(),
            right: pred.num_classes(),
        });
    }
    let labels = (1..gt.num_classes() as u16)
        .map(|label| {
            let vol_gt_cm3 = label_volume_cm3(gt, label)?;
            let vol_pred_cm3 = label_volume_cm3(pred, label)?;
            let (err_cm3, err_pct) = volumetric_error(vol_gt_cm3, vol_pred_cm3);
            Ok(LabelMetrics {
                label,
                name: None,
                vol_gt_cm3,
                vol_pred_cm3,
                err_cm3,
                err_pct,
                dsc: dice_score(gt, pred, label)?,
                hd95_mm: hd95_mm(gt, pred, label)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport {
        dims: gt.dims().as_array(),
        spacing: gt.spacing().as_array(),
        labels,
    })
}
