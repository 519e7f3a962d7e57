//! Central finite-difference checks of every analytic gradient.
//!
//! Each suite perturbs every entry of a random instance by `±h`, evaluates
//! the loss value twice, and compares the quotient with the analytic
//! gradient. Relative error per entry is `|a - n| / max(|a|, |n|)`, with
//! entries where both vanish counted as exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjacency::{nonadj_loss, nonadj_loss_grad, AdjMatrix, PriorAdj};
use crate::error::Result;
use crate::losses::{
    seg_loss, seg_loss_grad, total_loss, total_loss_grad, total_loss_grad_logits, CombineMode,
    LossConfig,
};
use crate::volume::{one_hot, softmax, ClassVolume, GridDims, LabelMap, LogitMap, Spacing};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_INSTANCES: usize = 20;

/// One random problem: logits, their softmax, a one-hot target and a prior.
#[derive(Debug, Clone)]
pub struct Instance {
    pub logits: LogitMap,
    pub probs: ClassVolume,
    pub target: ClassVolume,
    pub prior: PriorAdj,
}

/// Random instance on an `n³` grid with `classes` classes. Logits are
/// uniform in `[-1, 1]`, keeping probabilities away from zero; prior entries
/// are 0 (forbidden), 1 (always seen) or uniform in between, each with
/// probability one third.
pub fn random_instance(rng: &mut impl Rng, n: usize, classes: usize) -> Instance {
    let dims = GridDims::cube(n).expect("n >= 1");
    let spacing = Spacing::unit();
    let values = (0..dims.len() * classes)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    let logits = LogitMap::new(dims, spacing, classes, values).expect("finite logits");
    let probs = softmax(&logits).into_volume();
    let labels = (0..dims.len())
        .map(|_| rng.gen_range(0..classes) as u16)
        .collect();
    let lab = LabelMap::new(dims, spacing, classes, labels).expect("labels in range");
    let target = one_hot(&lab).into_volume();
    let mut m = vec![0.0; classes * classes];
    for b in 0..classes {
        for c in b + 1..classes {
            let v = match rng.gen_range(0..3) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..1.0),
            };
            m[b * classes + c] = v;
            m[c * classes + b] = v;
        }
    }
    let prior = PriorAdj::new(
        AdjMatrix::from_row_major(classes, m).expect("valid matrix"),
        1,
    )
    .expect("valid prior");
    Instance {
        logits,
        probs,
        target,
        prior,
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn numerical_gradient(
    x: &ClassVolume,
    h: f64,
    mut f: impl FnMut(&ClassVolume) -> f64,
) -> Vec<f64> {
    let mut work = x.clone();
    (0..x.values().len())
        .map(|k| {
            let orig = work.values()[k];
            work.values_mut()[k] = orig + h;
            let up = f(&work);
            work.values_mut()[k] = orig - h;
            let down = f(&work);
            work.values_mut()[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    SegSum,
    SegProduct,
    NonAdj,
    TotalProbs,
    TotalLogits,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::SegSum,
        Suite::SegProduct,
        Suite::NonAdj,
        Suite::TotalProbs,
        Suite::TotalLogits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::SegSum => "seg_loss(sum)",
            Suite::SegProduct => "seg_loss(product)",
            Suite::NonAdj => "nonadj_loss",
            Suite::TotalProbs => "total_loss",
            Suite::TotalLogits => "total_loss_grad_logits",
        }
    }
}

/// Maximum relative error of one suite on one instance.
pub fn check_suite(suite: Suite, inst: &Instance, h: f64) -> Result<f64> {
    let sum = LossConfig {
        combine_mode: CombineMode::Sum,
        ..LossConfig::default()
    };
    let product = LossConfig {
        combine_mode: CombineMode::Product,
        ..LossConfig::default()
    };
    let (analytic, numeric) = match suite {
        Suite::SegSum | Suite::SegProduct => {
            let cfg = if suite == Suite::SegSum { sum } else { product };
            let a = seg_loss_grad(&inst.probs, &inst.target, &cfg)?;
            let n = numerical_gradient(&inst.probs, h, |p| {
                seg_loss(p, &inst.target, &cfg).expect("shapes match")
            });
            (a.into_values(), n)
        }
        Suite::NonAdj => {
            let a = nonadj_loss_grad(&inst.probs, &inst.prior)?;
            let n = numerical_gradient(&inst.probs, h, |p| {
                nonadj_loss(p, &inst.prior).expect("classes match")
            });
            (a.into_values(), n)
        }
        Suite::TotalProbs => {
            let a = total_loss_grad(&inst.probs, &inst.target, &inst.prior, &sum)?;
            let n = numerical_gradient(&inst.probs, h, |p| {
                total_loss(p, &inst.target, &inst.prior, &sum).expect("shapes match")
            });
            (a.into_values(), n)
        }
        Suite::TotalLogits => {
            let a = total_loss_grad_logits(&inst.logits, &inst.target, &inst.prior, &sum)?;
            let n = numerical_gradient(&inst.logits, h, |z| {
                let z = LogitMap::from_volume(z.clone()).expect("finite logits");
                total_loss(&softmax(&z), &inst.target, &inst.prior, &sum).expect("shapes match")
            });
            (a.into_values(), n)
        }
    };
    Ok(max_relative_error(&analytic, &numeric))
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub suite: Suite,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub seed: u64,
    pub instances: usize,
    pub tolerance: f64,
    pub suites: Vec<SuiteResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

/// Runs every suite on `instances` random problems drawn from `seed`, with
/// cubic grids of side 4..=8 and 3..=5 classes.
pub fn run_gradcheck(
    seed: u64,
    instances: usize,
    h: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; Suite::ALL.len()];
    for _ in 0..instances {
        let n = rng.gen_range(4..=8);
        let classes = rng.gen_range(3..=5);
        let inst = random_instance(&mut rng, n, classes);
        for (w, suite) in worst.iter_mut().zip(Suite::ALL) {
            *w = w.max(check_suite(suite, &inst, h)?);
        }
    }
    let suites = Suite::ALL
        .iter()
        .zip(worst)
        .map(|(&suite, max_rel_error)| SuiteResult {
            suite,
            max_rel_error,
            passed: max_rel_error < tolerance,
        })
        .collect();
    Ok(GradcheckReport {
        seed,
        instances,
        tolerance,
        suites,
    })
}
