//! Synthetic multi-label phantoms and gradient-descent refinement of
//! per-voxel logits under the two-phase loss schedule.
//!
//! Phase 1 minimizes the segmentation loss alone; phase 2 adds the
//! λ-weighted non-adjacency penalty.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adjacency::{hard_adjacency, PriorAdj};
use crate::error::{Error, Result};
use crate::losses::{total_loss_and_grad_logits, LossConfig, LossTerms};
use crate::volume::{
    one_hot, softmax, ClassVolume, GridDims, LabelMap, LogitMap, ProbMap, Spacing,
};

/// Identifier of the noise generator, stored in phantom metadata.
pub const RNG_ALGORITHM: &str =
    "chacha8(rand_chacha-0.3,seed_from_u64)+standard-normal(rand_distr-0.4,ziggurat)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: GridDims,
    pub num_classes: usize,
    pub noise_sigma: f64,
    pub logit_gain: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 42,
            dims: GridDims {
                h: 48,
                w: 48,
                d: 48,
            },
            num_classes: 5,
            noise_sigma: 1.5,
            logit_gain: 2.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 3 {
            return Err(Error::InvalidConfig(format!(
                "phantom needs at least 3 classes, got {}",
                self.num_classes
            )));
        }
        if self.num_classes > u16::MAX as usize {
            return Err(Error::InvalidClassCount(self.num_classes));
        }
        if self.dims.as_array().iter().any(|&n| n < 8) {
            return Err(Error::InvalidConfig(format!(
                "phantom axes must be >= 8, got {:?}",
                self.dims.as_array()
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !self.logit_gain.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "logit_gain must be finite, got {}",
                self.logit_gain
            )));
        }
        Ok(())
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|k| ((p[k] - self.center[k]) / self.radii[k]).powi(2))
            .sum()
    }
}

/// Structures laid out along x. With three or more of them, consecutive
/// ellipsoids overlap (the overlap is split by the lower level value) and
/// structures two apart are separated by a gap. With two, they are kept apart
/// so the only foreground pair stays non-adjacent.
fn layout(dims: GridDims, structures: usize) -> Vec<Ellipsoid> {
    let step = dims.h as f64 / (structures + 1) as f64;
    let rx = if structures >= 3 {
        0.65 * step
    } else {
        0.3 * step
    };
    let cy = (dims.w as f64 - 1.0) / 2.0;
    let cz = (dims.d as f64 - 1.0) / 2.0;
    (0..structures)
        .map(|k| Ellipsoid {
            center: [(k + 1) as f64 * step - 0.5, cy, cz],
            radii: [rx, 0.35 * dims.w as f64, 0.3 * dims.d as f64],
        })
        .collect()
}

/// Ground-truth chain phantom (no noise).
pub fn phantom_labels(spec: &PhantomSpec) -> Result<LabelMap> {
    spec.validate()?;
    let dims = spec.dims;
    let shapes = layout(dims, spec.num_classes - 1);
    let voxels = (0..dims.len())
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let p = [x as f64, y as f64, z as f64];
            let mut best = (1.0, 0u16);
            for (k, e) in shapes.iter().enumerate() {
                let q = e.level(p);
                if q <= best.0 && (best.1 == 0 || q < best.0) {
                    best = (q, k as u16 + 1);
                }
            }
            best.1
        })
        .collect();
    let gt = LabelMap::new(dims, Spacing::unit(), spec.num_classes, voxels)?;
    check_layout(&gt)?;
    Ok(gt)
}

fn check_layout(gt: &LabelMap) -> Result<()> {
    let n = gt.num_classes();
    if (1..n as u16).any(|l| gt.count(l) == 0) {
        return Err(Error::InvalidConfig(
            "grid too small: a structure has no voxels".into(),
        ));
    }
    let a = hard_adjacency(gt);
    let forbidden = (1..n).any(|b| (b + 1..n).any(|c| a.get(b, c) == 0.0));
    let chained = n < 4 || (1..n - 1).all(|b| a.get(b, b + 1) > 0.0);
    if !forbidden || !chained {
        return Err(Error::InvalidConfig(
            "grid too small to separate the structure chain".into(),
        ));
    }
    Ok(())
}

/// Ground truth plus noisy logits `gain * one_hot(gt) + N(0, sigma²)`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(LabelMap, LogitMap)> {
    let gt = phantom_labels(spec)?;
    let mut values = one_hot(&gt).into_volume().into_values();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for v in values.iter_mut() {
        let noise: f64 = StandardNormal.sample(&mut rng);
        *v = spec.logit_gain * *v + spec.noise_sigma * noise;
    }
    let logits = LogitMap::new(gt.dims(), gt.spacing(), gt.num_classes(), values)?;
    Ok((gt, logits))
}

/// Overwrites a cube of logits inside structure `inside` so that it strongly
/// predicts `planted`, by `margin` over every other class. The cube has side
/// `side` and is centered on the centroid of `inside` in `gt`.
pub fn plant_blob(
    gt: &LabelMap,
    logits: &LogitMap,
    inside: u16,
    planted: u16,
    side: usize,
    margin: f64,
) -> Result<LogitMap> {
    gt.check_label(inside)?;
    gt.check_label(planted)?;
    let dims = gt.dims();
    let (mut sum, mut n) = ([0.0f64; 3], 0usize);
    for (i, &l) in gt.voxels().iter().enumerate() {
        if l == inside {
            let (x, y, z) = dims.coords(i);
            sum[0] += x as f64;
            sum[1] += y as f64;
            sum[2] += z as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidConfig(format!(
            "label {inside} absent from ground truth"
        )));
    }
    let lo = |k: usize, extent: usize| -> usize {
        let c = (sum[k] / n as f64).round() as isize - (side as isize) / 2;
        c.clamp(0, extent.saturating_sub(side) as isize) as usize
    };
    let (x0, y0, z0) = (lo(0, dims.h), lo(1, dims.w), lo(2, dims.d));
    let mut out = logits.as_volume().clone();
    for z in z0..(z0 + side).min(dims.d) {
        for y in y0..(y0 + side).min(dims.w) {
            for x in x0..(x0 + side).min(dims.h) {
                let row = out.voxel_mut(dims.index(x, y, z));
                row.iter_mut().for_each(|v| *v = 0.0);
                row[planted as usize] = margin;
            }
        }
    }
    LogitMap::from_volume(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    /// Step size per voxel: each update is `lr * I * ∇L`, with `I` the voxel
    /// count, since every loss term is a per-voxel mean.
    pub learning_rate: f64,
    pub loss: LossConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            phase1_steps: 200,
            phase2_steps: 300,
            learning_rate: 0.05,
            loss: LossConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phase1_steps + self.phase2_steps == 0 {
            return Err(Error::InvalidConfig("both phases are empty".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        self.loss.validate()
    }

    fn phase_loss(&self, phase: u8) -> LossConfig {
        match phase {
            1 => LossConfig {
                lambda: 0.0,
                ..self.loss
            },
            _ => self.loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub phase: u8,
    pub total: f64,
    pub seg: f64,
    pub dice: f64,
    pub ce: f64,
    pub nonadj: f64,
}

impl TraceEntry {
    fn new(step: usize, phase: u8, t: &LossTerms) -> Self {
        TraceEntry {
            step,
            phase,
            total: t.total,
            seg: t.seg,
            dice: t.dice,
            ce: t.ce,
            nonadj: t.nonadj,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub probs: ProbMap,
    pub logits: LogitMap,
    /// Loss terms evaluated before each update.
    pub trace: Vec<TraceEntry>,
    /// Loss terms at the returned logits, under the last phase's objective.
    pub final_terms: LossTerms,
}

/// Plain fixed-step gradient descent on the logits.
pub fn refine(
    z0: &LogitMap,
    gt: &LabelMap,
    prior: &PriorAdj,
    cfg: &RefineConfig,
) -> Result<RefineOutput> {
    cfg.validate()?;
    if z0.dims() != gt.dims() {
        return Err(Error::GridMismatch(format!(
            "logits {:?} vs labels {:?}",
            z0.dims().as_array(),
            gt.dims().as_array()
        )));
    }
    if z0.num_classes() != gt.num_classes() {
        return Err(Error::ClassMismatch {
            left: z0.num_classes(),
            right: gt.num_classes(),
        });
    }
    if prior.num_classes() != gt.num_classes() {
        return Err(Error::ClassMismatch {
            left: prior.num_classes(),
            right: gt.num_classes(),
        });
    }
    let target = one_hot(gt);
    let scale = cfg.learning_rate * z0.num_voxels() as f64;
    let mut z: ClassVolume = z0.as_volume().clone();
    let total_steps = cfg.phase1_steps + cfg.phase2_steps;
    let mut trace = Vec::with_capacity(total_steps);
    for step in 0..total_steps {
        let phase = if step < cfg.phase1_steps { 1 } else { 2 };
        let logits = LogitMap::from_volume(z).map_err(|_| Error::NonFiniteLoss { step })?;
        let (terms, grad) =
            total_loss_and_grad_logits(&logits, &target, prior, &cfg.phase_loss(phase))?;
        if !terms.total.is_finite() || grad.values().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        trace.push(TraceEntry::new(step, phase, &terms));
        z = logits.into_volume();
        for (v, g) in z.values_mut().iter_mut().zip(grad.values()) {
            *v -= scale * g;
        }
    }
    let logits =
        LogitMap::from_volume(z).map_err(|_| Error::NonFiniteLoss { step: total_steps })?;
    let last_phase = if cfg.phase2_steps > 0 { 2 } else { 1 };
    let probs = softmax(&logits);
    let final_terms =
        crate::losses::loss_terms(&probs, &target, prior, &cfg.phase_loss(last_phase))?;
    if !final_terms.total.is_finite() {
        return Err(Error::NonFiniteLoss { step: total_steps });
    }
    Ok(RefineOutput {
        probs,
        logits,
        trace,
        final_terms,
    })
}
