//! Soft Dice + cross-entropy segmentation loss, the λ-weighted total loss,
//! and their analytic gradients.
//!
//! Predictions are treated as independent per-class values: gradients with
//! respect to probabilities do not project onto the simplex. The logit
//! gradient composes them with the softmax Jacobian.

use serde::{Deserialize, Serialize};

use crate::adjacency::{nonadj_loss, nonadj_loss_and_grad, nonadj_loss_grad, PriorAdj};
use crate::error::{Error, Result};
use crate::volume::{softmax, ClassVolume, LogitMap};

/// How the Dice and cross-entropy terms are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    #[default]
    Sum,
    Product,
}

/// Default regularization weight.
pub const DEFAULT_LAMBDA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub dice_eps: f64,
    pub ce_eps: f64,
    pub combine_mode: CombineMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            dice_eps: 1e-5,
            ce_eps: 1e-12,
            combine_mode: CombineMode::Sum,
        }
    }
}

impl LossConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        LossConfig {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.dice_eps > 0.0 && self.dice_eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dice_eps must be > 0, got {}",
                self.dice_eps
            )));
        }
        if !(self.ce_eps > 0.0 && self.ce_eps < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ce_eps must be in (0, 1), got {}",
                self.ce_eps
            )));
        }
        Ok(())
    }
}

/// Every term of the total loss at one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub dice: f64,
    pub ce: f64,
    pub seg: f64,
    pub nonadj: f64,
    pub total: f64,
}

/// Validates shapes and returns the true class of every voxel of `g`.
fn target_classes(p: &ClassVolume, g: &ClassVolume) -> Result<Vec<usize>> {
    p.same_shape(g)?;
    (0..g.num_voxels())
        .map(|i| {
            let row = g.voxel(i);
            let hot = row.iter().position(|&v| v == 1.0);
            match hot {
                Some(k) if row.iter().enumerate().all(|(j, &v)| j == k || v == 0.0) => Ok(k),
                _ => Err(Error::InvalidProbability(format!(
                    "target voxel {i} is not one-hot"
                ))),
            }
        })
        .collect()
}

struct DiceParts {
    // per class: 2 Σ p g + ε, Σ p² + Σ g² + ε
    num: Vec<f64>,
    den: Vec<f64>,
}

fn dice_parts(p: &ClassVolume, target: &[usize], eps: f64) -> DiceParts {
    let n = p.num_classes();
    let mut inter = vec![0.0; n];
    let mut pp = vec![0.0; n];
    let mut gg = vec![0.0; n];
    for (i, &t) in target.iter().enumerate() {
        let row = p.voxel(i);
        for (acc, &v) in pp.iter_mut().zip(row) {
            *acc += v * v;
        }
        inter[t] += row[t];
        gg[t] += 1.0;
    }
    let num = inter.iter().map(|s| 2.0 * s + eps).collect();
    let den = pp.iter().zip(&gg).map(|(a, b)| a + b + eps).collect();
    DiceParts { num, den }
}

fn dice_from_parts(d: &DiceParts) -> f64 {
    let n = d.num.len() as f64;
    1.0 - d.num.iter().zip(&d.den).map(|(a, b)| a / b).sum::<f64>() / n
}

fn ce_value(p: &ClassVolume, target: &[usize], eps: f64) -> f64 {
    // `0.0 - ln` rather than `-ln`: a perfect voxel contributes +0, not -0
    let sum: f64 = target
        .iter()
        .enumerate()
        .map(|(i, &t)| 0.0 - p.voxel(i)[t].clamp(eps, 1.0).ln())
        .sum();
    sum / target.len() as f64
}

/// Soft Dice loss averaged over all classes, background included.
pub fn soft_dice_loss(p: &ClassVolume, g: &ClassVolume, cfg: &LossConfig) -> Result<f64> {
    let t = target_classes(p, g)?;
    Ok(dice_from_parts(&dice_parts(p, &t, cfg.dice_eps)))
}

pub fn soft_dice_grad(p: &ClassVolume, g: &ClassVolume, cfg: &LossConfig) -> Result<ClassVolume> {
    let t = target_classes(p, g)?;
    let mut grad = p.zeros_like();
    add_dice_grad(p, &t, cfg.dice_eps, 1.0, &mut grad);
    Ok(grad)
}

/// `grad += scale * ∂dice/∂p`
fn add_dice_grad(p: &ClassVolume, target: &[usize], eps: f64, scale: f64, grad: &mut ClassVolume) {
    let d = dice_parts(p, target, eps);
    add_dice_grad_parts(p, target, &d, scale, grad);
}

fn add_dice_grad_parts(
    p: &ClassVolume,
    target: &[usize],
    d: &DiceParts,
    scale: f64,
    grad: &mut ClassVolume,
) {
    let n = p.num_classes();
    let k = -scale / n as f64;
    let inv_den: Vec<f64> = d.den.iter().map(|v| 1.0 / v).collect();
    let ratio: Vec<f64> = d
        .num
        .iter()
        .zip(&inv_den)
        .map(|(a, b)| 2.0 * a * b * b)
        .collect();
    for (i, &t) in target.iter().enumerate() {
        let row = p.voxel(i);
        let out = grad.voxel_mut(i);
        for c in 0..n {
            let gi = if c == t { 2.0 * inv_den[c] } else { 0.0 };
            out[c] += k * (gi - ratio[c] * row[c]);
        }
    }
}

/// Mean negative log-probability of the true class, clamped to `[ce_eps, 1]`.
pub fn cross_entropy_loss(p: &ClassVolume, g: &ClassVolume, cfg: &LossConfig) -> Result<f64> {
    let t = target_classes(p, g)?;
    Ok(ce_value(p, &t, cfg.ce_eps))
}

pub fn cross_entropy_grad(
    p: &ClassVolume,
    g: &ClassVolume,
    cfg: &LossConfig,
) -> Result<ClassVolume> {
    let t = target_classes(p, g)?;
    let mut grad = p.zeros_like();
    add_ce_grad(p, &t, cfg.ce_eps, 1.0, &mut grad);
    Ok(grad)
}

fn add_ce_grad(p: &ClassVolume, target: &[usize], eps: f64, scale: f64, grad: &mut ClassVolume) {
    let inv_i = scale / target.len() as f64;
    for (i, &t) in target.iter().enumerate() {
        let v = p.voxel(i)[t];
        // flat outside the clamp; at exactly 1 the left derivative is used
        if (eps..=1.0).contains(&v) {
            grad.voxel_mut(i)[t] -= inv_i / v;
        }
    }
}

fn combine(mode: CombineMode, dice: f64, ce: f64) -> f64 {
    match mode {
        CombineMode::Sum => dice + ce,
        CombineMode::Product => dice * ce,
    }
}

pub fn seg_loss(p: &ClassVolume, g: &ClassVolume, cfg: &LossConfig) -> Result<f64> {
    let t = target_classes(p, g)?;
    let dice = dice_from_parts(&dice_parts(p, &t, cfg.dice_eps));
    let ce = ce_value(p, &t, cfg.ce_eps);
    Ok(combine(cfg.combine_mode, dice, ce))
}

fn add_seg_grad(p: &ClassVolume, t: &[usize], cfg: &LossConfig, grad: &mut ClassVolume) {
    let (dice_scale, ce_scale) = match cfg.combine_mode {
        CombineMode::Sum => (1.0, 1.0),
        CombineMode::Product => {
            let dice = dice_from_parts(&dice_parts(p, t, cfg.dice_eps));
            (ce_value(p, t, cfg.ce_eps), dice)
        }
    };
    add_dice_grad(p, t, cfg.dice_eps, dice_scale, grad);
    add_ce_grad(p, t, cfg.ce_eps, ce_scale, grad);
}

pub fn seg_loss_grad(p: &ClassVolume, g: &ClassVolume, cfg: &LossConfig) -> Result<ClassVolume> {
    let t = target_classes(p, g)?;
    let mut grad = p.zeros_like();
    add_seg_grad(p, &t, cfg, &mut grad);
    Ok(grad)
}

/// Every loss term at `p`; the non-adjacency term is only evaluated when
/// `lambda > 0` (it is reported as 0 otherwise).
pub fn loss_terms(
    p: &ClassVolume,
    g: &ClassVolume,
    a: &PriorAdj,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let t = target_classes(p, g)?;
    let dice = dice_from_parts(&dice_parts(p, &t, cfg.dice_eps));
    let ce = ce_value(p, &t, cfg.ce_eps);
    let seg = combine(cfg.combine_mode, dice, ce);
    let nonadj = if cfg.lambda > 0.0 {
        nonadj_loss(p, a)?
    } else {
        0.0
    };
    Ok(LossTerms {
        dice,
        ce,
        seg,
        nonadj,
        total: seg + cfg.lambda * nonadj,
    })
}

/// `seg_loss + lambda * nonadj_loss`
pub fn total_loss(p: &ClassVolume, g: &ClassVolume, a: &PriorAdj, cfg: &LossConfig) -> Result<f64> {
    let seg = seg_loss(p, g, cfg)?;
    let nonadj = nonadj_loss(p, a)?;
    Ok(seg + cfg.lambda * nonadj)
}

pub fn total_loss_grad(
    p: &ClassVolume,
    g: &ClassVolume,
    a: &PriorAdj,
    cfg: &LossConfig,
) -> Result<ClassVolume> {
    let t = target_classes(p, g)?;
    let mut grad = p.zeros_like();
    add_seg_grad(p, &t, cfg, &mut grad);
    if cfg.lambda != 0.0 {
        let reg = nonadj_loss_grad(p, a)?;
        for (out, r) in grad.values_mut().iter_mut().zip(reg.values()) {
            *out += cfg.lambda * r;
        }
    } else if p.num_classes() != a.num_classes() {
        return Err(Error::ClassMismatch {
            left: p.num_classes(),
            right: a.num_classes(),
        });
    }
    Ok(grad)
}

/// Pulls a probability-space gradient back through the per-voxel softmax:
/// `dz_k = p_k (dp_k - Σ_j p_j dp_j)`.
pub fn softmax_backward(p: &ClassVolume, dp: &ClassVolume) -> ClassVolume {
    let mut dz = p.zeros_like();
    for i in 0..p.num_voxels() {
        let (pi, gi) = (p.voxel(i), dp.voxel(i));
        let dot: f64 = pi.iter().zip(gi).map(|(a, b)| a * b).sum();
        for ((o, &pk), &gk) in dz.voxel_mut(i).iter_mut().zip(pi).zip(gi) {
            *o = pk * (gk - dot);
        }
    }
    dz
}

/// Gradient of `total_loss(softmax(z), ..)` with respect to the logits.
pub fn total_loss_grad_logits(
    z: &LogitMap,
    g: &ClassVolume,
    a: &PriorAdj,
    cfg: &LossConfig,
) -> Result<ClassVolume> {
    let p = softmax(z);
    let dp = total_loss_grad(&p, g, a, cfg)?;
    Ok(softmax_backward(&p, &dp))
}

/// Loss terms and logit gradient from a single softmax evaluation.
///
/// As in [`loss_terms`], the non-adjacency term is only evaluated when
/// `lambda > 0`.
pub fn total_loss_and_grad_logits(
    z: &LogitMap,
    g: &ClassVolume,
    a: &PriorAdj,
    cfg: &LossConfig,
) -> Result<(LossTerms, ClassVolume)> {
    if z.num_classes() != a.num_classes() {
        return Err(Error::ClassMismatch {
            left: z.num_classes(),
            right: a.num_classes(),
        });
    }
    let p = softmax(z);
    let t = target_classes(&p, g)?;
    let parts = dice_parts(&p, &t, cfg.dice_eps);
    let dice = dice_from_parts(&parts);
    let ce = ce_value(&p, &t, cfg.ce_eps);
    let seg = combine(cfg.combine_mode, dice, ce);
    let (dice_scale, ce_scale) = match cfg.combine_mode {
        CombineMode::Sum => (1.0, 1.0),
        CombineMode::Product => (ce, dice),
    };
    let (nonadj, mut dp) = if cfg.lambda > 0.0 {
        let (v, mut grad) = nonadj_loss_and_grad(&p, a)?;
        grad.values_mut().iter_mut().for_each(|x| *x *= cfg.lambda);
        (v, grad)
    } else {
        (0.0, p.zeros_like())
    };
    add_dice_grad_parts(&p, &t, &parts, dice_scale, &mut dp);
    add_ce_grad(&p, &t, cfg.ce_eps, ce_scale, &mut dp);
    let terms = LossTerms {
        dice,
        ce,
        seg,
        nonadj,
        total: seg + cfg.lambda * nonadj,
    };
    Ok((terms, softmax_backward(&p, &dp)))
}
