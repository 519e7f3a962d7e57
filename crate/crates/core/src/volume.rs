//! Volume types shared by every other module.
//!
//! Voxels are stored x-fastest, then y, then z. Per-class fields keep the
//! class index fastest within each voxel, so voxel `i` owns the contiguous
//! slice `values[i * num_classes..(i + 1) * num_classes]`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the per-voxel probability sum accepted by [`ProbMap::new`].
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Physical voxel size in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let s = Spacing { sx, sy, sz };
        if s.as_array().iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(s)
        } else {
            Err(Error::InvalidSpacing(s.as_array()))
        }
    }

    pub fn isotropic(s: f64) -> Result<Self> {
        Self::new(s, s, s)
    }

    pub fn unit() -> Self {
        Spacing {
            sx: 1.0,
            sy: 1.0,
            sz: 1.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }
}

/// Voxel volume in mm³.
pub fn voxel_volume_mm3(s: &Spacing) -> f64 {
    s.sx * s.sy * s.sz
}

/// Voxel counts along x (`h`), y (`w`) and z (`d`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl GridDims {
    pub fn new(h: usize, w: usize, d: usize) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 || h.checked_mul(w).and_then(|v| v.checked_mul(d)).is_none() {
            return Err(Error::InvalidDims([h, w, d]));
        }
        Ok(GridDims { h, w, d })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.h, self.w, self.d]
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.h * self.w * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.h * (y + self.w * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.h;
        let y = (i / self.h) % self.w;
        let z = i / (self.h * self.w);
        (x, y, z)
    }

    /// Number of unordered axis-neighbor voxel pairs (6-connectivity).
    pub fn pair_count(&self) -> usize {
        let (h, w, d) = (self.h, self.w, self.d);
        (h - 1) * w * d + h * (w - 1) * d + h * w * (d - 1)
    }

    pub fn on_border(&self, i: usize) -> bool {
        let (x, y, z) = self.coords(i);
        x == 0 || y == 0 || z == 0 || x + 1 == self.h || y + 1 == self.w || z + 1 == self.d
    }

    /// Calls `f(i, j)` once for every unordered 6-neighbor pair, with `j`
    /// the forward neighbor of `i` along x, then y, then z.
    pub fn for_each_pair(&self, mut f: impl FnMut(usize, usize)) {
        let (h, w, d) = (self.h, self.w, self.d);
        let sy = h;
        let sz = h * w;
        for z in 0..d {
            for y in 0..w {
                let row = self.index(0, y, z);
                for x in 0..h {
                    let i = row + x;
                    if x + 1 < h {
                        f(i, i + 1);
                    }
                    if y + 1 < w {
                        f(i, i + sy);
                    }
                    if z + 1 < d {
                        f(i, i + sz);
                    }
                }
            }
        }
    }

    /// Calls `f(j)` for each 6-neighbor of voxel `i` inside the grid.
    #[inline]
    pub fn for_each_neighbor(&self, i: usize, mut f: impl FnMut(usize)) {
        let (x, y, z) = self.coords(i);
        let sy = self.h;
        let sz = self.h * self.w;
        if x > 0 {
            f(i - 1);
        }
        if x + 1 < self.h {
            f(i + 1);
        }
        if y > 0 {
            f(i - sy);
        }
        if y + 1 < self.w {
            f(i + sy);
        }
        if z > 0 {
            f(i - sz);
        }
        if z + 1 < self.d {
            f(i + sz);
        }
    }
}

/// One integer label per voxel, `0` being background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    dims: GridDims,
    spacing: Spacing,
    num_classes: usize,
    voxels: Vec<u16>,
}

impl LabelMap {
    pub fn new(
        dims: GridDims,
        spacing: Spacing,
        num_classes: usize,
        voxels: Vec<u16>,
    ) -> Result<Self> {
        if num_classes == 0 || num_classes > u16::MAX as usize + 1 {
            return Err(Error::InvalidClassCount(num_classes));
        }
        if voxels.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: voxels.len(),
            });
        }
        if let Some(&bad) = voxels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                num_classes,
            });
        }
        Ok(LabelMap {
            dims,
            spacing,
            num_classes,
            voxels,
        })
    }

    /// All-background map.
    pub fn zeros(dims: GridDims, spacing: Spacing, num_classes: usize) -> Result<Self> {
        Self::new(dims, spacing, num_classes, vec![0; dims.len()])
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn voxels(&self) -> &[u16] {
        &self.voxels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.voxels[self.dims.index(x, y, z)]
    }

    /// Sets one voxel; panics if `label` is out of range.
    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u16) {
        assert!(
            (label as usize) < self.num_classes,
            "label {label} out of range"
        );
        let i = self.dims.index(x, y, z);
        self.voxels[i] = label;
    }

    pub fn count(&self, label: u16) -> usize {
        self.voxels.iter().filter(|&&l| l == label).count()
    }

    pub(crate) fn voxels_mut(&mut self) -> &mut [u16] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<u16> {
        self.voxels
    }

    pub fn check_label(&self, label: u16) -> Result<()> {
        if (label as usize) < self.num_classes {
            Ok(())
        } else {
            Err(Error::LabelOutOfRange {
                label: label as usize,
                num_classes: self.num_classes,
            })
        }
    }

    pub fn same_grid(&self, other: &LabelMap) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GridMismatch(format!(
                "dims {:?} vs {:?}",
                self.dims.as_array(),
                other.dims.as_array()
            )));
        }
        if self.spacing != other.spacing {
            return Err(Error::GridMismatch(format!(
                "spacing {:?} vs {:?}",
                self.spacing.as_array(),
                other.spacing.as_array()
            )));
        }
        Ok(())
    }
}

/// Dense per-voxel, per-class field of reals with no constraint beyond shape.
///
/// Gradients are returned in this form; [`ProbMap`] and [`LogitMap`] wrap it
/// with their own invariants and deref to it, so every loss accepts either.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVolume {
    dims: GridDims,
    spacing: Spacing,
    num_classes: usize,
    values: Vec<f64>,
}

impl ClassVolume {
    pub fn new(
        dims: GridDims,
        spacing: Spacing,
        num_classes: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidClassCount(num_classes));
        }
        let expected = dims.len() * num_classes;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(ClassVolume {
            dims,
            spacing,
            num_classes,
            values,
        })
    }

    pub fn zeros(dims: GridDims, spacing: Spacing, num_classes: usize) -> Self {
        ClassVolume {
            dims,
            spacing,
            num_classes,
            values: vec![0.0; dims.len() * num_classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims, self.spacing, self.num_classes)
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Class vector of voxel `i`.
    #[inline]
    pub fn voxel(&self, i: usize) -> &[f64] {
        let c = self.num_classes;
        &self.values[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn voxel_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.num_classes;
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_shape(&self, other: &ClassVolume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GridMismatch(format!(
                "dims {:?} vs {:?}",
                self.dims.as_array(),
                other.dims.as_array()
            )));
        }
        if self.num_classes != other.num_classes {
            return Err(Error::ClassMismatch {
                left: self.num_classes,
                right: other.num_classes,
            });
        }
        Ok(())
    }
}

/// Per-voxel class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(ClassVolume);

impl ProbMap {
    pub fn new(
        dims: GridDims,
        spacing: Spacing,
        num_classes: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::from_volume(ClassVolume::new(dims, spacing, num_classes, values)?)
    }

    /// Validates range and per-voxel normalization of an existing field.
    pub fn from_volume(v: ClassVolume) -> Result<Self> {
        for i in 0..v.num_voxels() {
            let row = v.voxel(i);
            if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidProbability(format!(
                    "voxel {i} has entry {bad}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidProbability(format!(
                    "voxel {i} sums to {sum}"
                )));
            }
        }
        Ok(ProbMap(v))
    }

    pub fn as_volume(&self) -> &ClassVolume {
        &self.0
    }

    pub fn into_volume(self) -> ClassVolume {
        self.0
    }
}

impl Deref for ProbMap {
    type Target = ClassVolume;

    fn deref(&self) -> &ClassVolume {
        &self.0
    }
}

/// Unconstrained per-voxel class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap(ClassVolume);

impl LogitMap {
    pub fn new(
        dims: GridDims,
        spacing: Spacing,
        num_classes: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::from_volume(ClassVolume::new(dims, spacing, num_classes, values)?)
    }

    pub fn from_volume(v: ClassVolume) -> Result<Self> {
        if let Some(i) = v.values().iter().position(|z| !z.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(LogitMap(v))
    }

    pub fn as_volume(&self) -> &ClassVolume {
        &self.0
    }

    pub fn into_volume(self) -> ClassVolume {
        self.0
    }
}

impl Deref for LogitMap {
    type Target = ClassVolume;

    fn deref(&self) -> &ClassVolume {
        &self.0
    }
}

/// Indicator encoding of a labelmap.
pub fn one_hot(lab: &LabelMap) -> ProbMap {
    let c = lab.num_classes();
    let mut values = vec![0.0; lab.voxels().len() * c];
    for (i, &l) in lab.voxels().iter().enumerate() {
        values[i * c + l as usize] = 1.0;
    }
    ProbMap(ClassVolume {
        dims: lab.dims(),
        spacing: lab.spacing(),
        num_classes: c,
        values,
    })
}

/// Index of the largest class value per voxel; ties go to the lowest index.
pub fn argmax_labels(p: &ClassVolume) -> LabelMap {
    let voxels = (0..p.num_voxels())
        .map(|i| {
            let row = p.voxel(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    LabelMap {
        dims: p.dims(),
        spacing: p.spacing(),
        num_classes: p.num_classes(),
        voxels,
    }
}

/// Softmax of one score vector, written into `out`.
#[inline]
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-voxel softmax, stabilized by subtracting each voxel's maximum score.
pub fn softmax(z: &LogitMap) -> ProbMap {
    let c = z.num_classes();
    let mut values = vec![0.0; z.values().len()];
    for (zi, pi) in z.values().chunks_exact(c).zip(values.chunks_exact_mut(c)) {
        softmax_into(zi, pi);
    }
    ProbMap(ClassVolume {
        dims: z.dims(),
        spacing: z.spacing(),
        num_classes: c,
        values,
    })
}
