//! Label adjacency matrices and the non-adjacency penalty.
//!
//! Two voxels are neighbors when they differ by one step along a single axis
//! (6-connectivity). Every unordered neighbor pair is visited once by three
//! forward passes along x, y and z; a pair carrying labels `b != c` adds one
//! to both `(b, c)` and `(c, b)`.
//!
//! The soft version replaces label indicators with class probabilities and
//! is divided by the grid's unordered pair count `Z`, so the penalty does not
//! grow with the volume size.

use crate::error::{Error, Result};
use crate::volume::{ClassVolume, LabelMap};

/// Dense symmetric `n x n` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AdjMatrix {
    pub fn zeros(n: usize) -> Self {
        AdjMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds from row-major values, checking shape, symmetry (exact), a zero
    /// diagonal and finite nonnegative entries.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidClassCount(0));
        }
        if data.len() != n * n {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        let m = AdjMatrix { n, data };
        for b in 0..n {
            if m.get(b, b) != 0.0 {
                return Err(Error::InvalidMatrix(format!(
                    "nonzero diagonal at ({b}, {b})"
                )));
            }
            for c in 0..n {
                let v = m.get(b, c);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidMatrix(format!("entry ({b}, {c}) = {v}")));
                }
                if v != m.get(c, b) {
                    return Err(Error::InvalidMatrix(format!("asymmetric at ({b}, {c})")));
                }
            }
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize) -> f64 {
        self.data[b * self.n + c]
    }

    /// Adds `v` to both `(b, c)` and `(c, b)`.
    #[inline]
    fn add_sym(&mut self, b: usize, c: usize, v: f64) {
        self.data[b * self.n + c] += v;
        self.data[c * self.n + b] += v;
    }

    pub fn row_major(&self) -> &[f64] {
        &self.data
    }

    /// Unordered off-diagonal pairs `(b, c)` with `b < c`.
    pub fn upper_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |b| (b + 1..self.n).map(move |c| (b, c)))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|b| (0..self.n).all(|c| self.get(b, c) == self.get(c, b)))
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|b| self.get(b, b) == 0.0)
    }
}

/// Hard or soft neighbor-pair counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjCounts(AdjMatrix);

impl AdjCounts {
    pub fn new(m: AdjMatrix) -> Self {
        AdjCounts(m)
    }

    pub fn matrix(&self) -> &AdjMatrix {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.n
    }

    pub fn get(&self, b: usize, c: usize) -> f64 {
        self.0.get(b, c)
    }
}

/// 0/1 adjacency of a single subject.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryAdj(AdjMatrix);

impl BinaryAdj {
    pub fn new(m: AdjMatrix) -> Result<Self> {
        if let Some(v) = m.data.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidMatrix(format!("binary matrix holds {v}")));
        }
        Ok(BinaryAdj(m))
    }

    pub fn matrix(&self) -> &AdjMatrix {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.n
    }

    pub fn get(&self, b: usize, c: usize) -> bool {
        self.0.get(b, c) != 0.0
    }
}

/// Cross-subject adjacency frequencies in `[0, 1]`; zero marks a contact
/// never observed in the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorAdj {
    matrix: AdjMatrix,
    num_subjects: usize,
}

impl PriorAdj {
    pub fn new(matrix: AdjMatrix, num_subjects: usize) -> Result<Self> {
        if num_subjects == 0 {
            return Err(Error::NoSubjects);
        }
        if let Some(v) = matrix.data.iter().find(|&&v| v > 1.0) {
            return Err(Error::InvalidMatrix(format!("prior entry {v} exceeds 1")));
        }
        Ok(PriorAdj {
            matrix,
            num_subjects,
        })
    }

    /// Treats a single binary matrix as a one-subject prior.
    pub fn from_binary(b: &BinaryAdj) -> Self {
        PriorAdj {
            matrix: b.0.clone(),
            num_subjects: 1,
        }
    }

    pub fn matrix(&self) -> &AdjMatrix {
        &self.matrix
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.n
    }

    pub fn num_subjects(&self) -> usize {
        self.num_subjects
    }

    pub fn get(&self, b: usize, c: usize) -> f64 {
        self.matrix.get(b, c)
    }

    /// Penalty weights `1 - A` off the diagonal, zero on it.
    pub fn penalty_weights(&self) -> AdjMatrix {
        let n = self.matrix.n;
        let mut w = AdjMatrix::zeros(n);
        for b in 0..n {
            for c in 0..n {
                if b != c {
                    w.data[b * n + c] = 1.0 - self.matrix.get(b, c);
                }
            }
        }
        w
    }

    /// Pairs with a strictly positive prior.
    pub fn allowed_pairs(&self) -> usize {
        self.matrix
            .upper_pairs()
            .filter(|&(b, c)| self.get(b, c) > 0.0)
            .count()
    }
}

/// Counts unordered 6-neighbor pairs per distinct label pair.
pub fn hard_adjacency(lab: &LabelMap) -> AdjCounts {
    let n = lab.num_classes();
    let v = lab.voxels();
    let mut counts = vec![0u64; n * n];
    lab.dims().for_each_pair(|i, j| {
        let (b, c) = (v[i] as usize, v[j] as usize);
        if b != c {
            counts[b * n + c] += 1;
            counts[c * n + b] += 1;
        }
    });
    AdjCounts(AdjMatrix {
        n,
        data: counts.into_iter().map(|k| k as f64).collect(),
    })
}

pub fn binarize(a: &AdjCounts) -> BinaryAdj {
    let data =
        a.0.data
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
    BinaryAdj(AdjMatrix { n: a.0.n, data })
}

/// Averages per-subject binary matrices into adjacency frequencies.
pub fn aggregate_prior(mats: &[BinaryAdj]) -> Result<PriorAdj> {
    let first = mats.first().ok_or(Error::NoSubjects)?;
    let n = first.num_classes();
    let mut hits = vec![0u64; n * n];
    for m in mats {
        if m.num_classes() != n {
            return Err(Error::ClassMismatch {
                left: n,
                right: m.num_classes(),
            });
        }
        for (h, &v) in hits.iter_mut().zip(&m.0.data) {
            if v != 0.0 {
                *h += 1;
            }
        }
    }
    let total = mats.len() as f64;
    let data = hits.into_iter().map(|h| h as f64 / total).collect();
    Ok(PriorAdj {
        matrix: AdjMatrix { n, data },
        num_subjects: mats.len(),
    })
}

/// Sum of hard counts over several labelmaps.
pub fn summed_counts(labs: &[LabelMap]) -> Result<AdjCounts> {
    let first = labs.first().ok_or(Error::NoSubjects)?;
    let mut acc = AdjMatrix::zeros(first.num_classes());
    for lab in labs {
        if lab.num_classes() != acc.n {
            return Err(Error::ClassMismatch {
                left: acc.n,
                right: lab.num_classes(),
            });
        }
        for (a, v) in acc.data.iter_mut().zip(hard_adjacency(lab).0.data) {
            *a += v;
        }
    }
    Ok(AdjCounts(acc))
}

/// Probability-weighted neighbor-pair counts divided by the pair count `Z`.
pub fn soft_adjacency(p: &ClassVolume) -> AdjCounts {
    let n = p.num_classes();
    let mut m = AdjMatrix::zeros(n);
    let dims = p.dims();
    let z = dims.pair_count();
    if z == 0 {
        return AdjCounts(m);
    }
    // Accumulate the ordered outer products p(i) p(j)^T, then symmetrize.
    let mut outer = vec![0.0; n * n];
    dims.for_each_pair(|i, j| {
        let (pi, pj) = (p.voxel(i), p.voxel(j));
        for (b, &pb) in pi.iter().enumerate() {
            let row = &mut outer[b * n..(b + 1) * n];
            for (o, &pc) in row.iter_mut().zip(pj) {
                *o += pb * pc;
            }
        }
    });
    let zf = z as f64;
    for b in 0..n {
        for c in b + 1..n {
            let s = (outer[b * n + c] + outer[c * n + b]) / zf;
            m.add_sym(b, c, s);
        }
    }
    AdjCounts(m)
}

fn check_classes(p: &ClassVolume, a: &PriorAdj) -> Result<()> {
    if p.num_classes() != a.num_classes() {
        return Err(Error::ClassMismatch {
            left: p.num_classes(),
            right: a.num_classes(),
        });
    }
    Ok(())
}

/// `W p(i)` for every voxel, with `W = 1 - A` off the diagonal.
fn weighted_field(p: &ClassVolume, a: &PriorAdj) -> Vec<f64> {
    let n = p.num_classes();
    let w = a.penalty_weights();
    let mut q = vec![0.0; p.values().len()];
    for (pi, qi) in p.values().chunks_exact(n).zip(q.chunks_exact_mut(n)) {
        for (b, out) in qi.iter_mut().enumerate() {
            let row = &w.data[b * n..(b + 1) * n];
            *out = row.iter().zip(pi).map(|(x, y)| x * y).sum();
        }
    }
    q
}

/// Non-adjacency penalty: `sum_{b<c} (1 - A_bc) s_bc(p)`.
///
/// Equivalently `(1/Z) sum_{pairs (i,j)} p(i)ᵀ W p(j)`, since `W` is symmetric
/// with a zero diagonal.
pub fn nonadj_loss(p: &ClassVolume, a: &PriorAdj) -> Result<f64> {
    check_classes(p, a)?;
    let n = p.num_classes();
    let dims = p.dims();
    let z = dims.pair_count();
    if z == 0 {
        return Ok(0.0);
    }
    let q = weighted_field(p, a);
    let mut total = 0.0;
    dims.for_each_pair(|i, j| {
        let qj = &q[j * n..(j + 1) * n];
        total += p.voxel(i).iter().zip(qj).map(|(x, y)| x * y).sum::<f64>();
    });
    Ok(total / z as f64)
}

/// Gradient of [`nonadj_loss`] with respect to every class probability:
/// `(1/Z) sum_{j in N6(i)} W p(j)`.
pub fn nonadj_loss_grad(p: &ClassVolume, a: &PriorAdj) -> Result<ClassVolume> {
    check_classes(p, a)?;
    let n = p.num_classes();
    let dims = p.dims();
    let mut grad = p.zeros_like();
    let z = dims.pair_count();
    if z == 0 {
        return Ok(grad);
    }
    let q = weighted_field(p, a);
    let inv_z = 1.0 / z as f64;
    dims.for_each_pair(|i, j| {
        let g = grad.values_mut();
        for k in 0..n {
            g[i * n + k] += q[j * n + k];
            g[j * n + k] += q[i * n + k];
        }
    });
    grad.values_mut().iter_mut().for_each(|v| *v *= inv_z);
    Ok(grad)
}

/// [`nonadj_loss`] and [`nonadj_loss_grad`] from one pass over the pairs.
pub fn nonadj_loss_and_grad(p: &ClassVolume, a: &PriorAdj) -> Result<(f64, ClassVolume)> {
    check_classes(p, a)?;
    let n = p.num_classes();
    let dims = p.dims();
    let mut grad = p.zeros_like();
    let z = dims.pair_count();
    if z == 0 {
        return Ok((0.0, grad));
    }
    let q = weighted_field(p, a);
    let pv = p.values();
    let mut total = 0.0;
    dims.for_each_pair(|i, j| {
        let g = grad.values_mut();
        let (pi, qi) = (&pv[i * n..(i + 1) * n], &q[i * n..(i + 1) * n]);
        let qj = &q[j * n..(j + 1) * n];
        total += pi.iter().zip(qj).map(|(x, y)| x * y).sum::<f64>();
        for k in 0..n {
            g[i * n + k] += qj[k];
            g[j * n + k] += qi[k];
        }
    });
    let inv_z = 1.0 / z as f64;
    grad.values_mut().iter_mut().for_each(|v| *v *= inv_z);
    Ok((total * inv_z, grad))
}

/// One forbidden or unlikely contact found in a labelmap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub b: u16,
    pub c: u16,
    pub count: u64,
}

/// Observed contacts whose prior is at or below `threshold`, most frequent first.
pub fn violation_report(lab: &LabelMap, a: &PriorAdj, threshold: f64) -> Result<Vec<Violation>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidThreshold(threshold));
    }
    if lab.num_classes() != a.num_classes() {
        return Err(Error::ClassMismatch {
            left: lab.num_classes(),
            right: a.num_classes(),
        });
    }
    let counts = hard_adjacency(lab);
    let mut out: Vec<Violation> = counts
        .0
        .upper_pairs()
        .filter(|&(b, c)| counts.get(b, c) > 0.0 && a.get(b, c) <= threshold)
        .map(|(b, c)| Violation {
            b: b as u16,
            c: c as u16,
            count: counts.get(b, c) as u64,
        })
        .collect();
    out.sort_by(|x, y| y.count.cmp(&x.count).then((x.b, x.c).cmp(&(y.b, y.c))));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{one_hot, GridDims, ProbMap, Spacing};

    fn lab(h: usize, w: usize, d: usize, classes: usize, v: Vec<u16>) -> LabelMap {
        LabelMap::new(GridDims::new(h, w, d).unwrap(), Spacing::unit(), classes, v).unwrap()
    }

    #[test]
    fn single_pair() {
        let a = hard_adjacency(&lab(1, 1, 2, 3, vec![1, 2]));
        for b in 0..3 {
            for c in 0..3 {
                let expected = if (b, c) == (1, 2) || (b, c) == (2, 1) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(a.get(b, c), expected);
            }
        }
    }

    #[test]
    fn uniform_volume_has_no_contacts() {
        let a = hard_adjacency(&lab(3, 3, 3, 4, vec![2; 27]));
        assert!(a.matrix().row_major().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_square() {
        // x-fastest: row y=0 is [1, 2], row y=1 is [2, 1]
        let a = hard_adjacency(&lab(2, 2, 1, 3, vec![1, 2, 2, 1]));
        assert_eq!(a.get(1, 2), 4.0);
        assert_eq!(a.get(2, 1), 4.0);
    }

    #[test]
    fn binarize_entries() {
        let a = hard_adjacency(&lab(2, 2, 1, 3, vec![1, 2, 2, 1]));
        let b = binarize(&a);
        assert!(b.get(1, 2));
        assert!(!b.get(0, 1));
        assert!(b.matrix().is_symmetric());
        assert!(b.matrix().has_zero_diagonal());
    }

    #[test]
    fn aggregate_frequencies() {
        let with = binarize(&hard_adjacency(&lab(1, 1, 2, 3, vec![1, 2])));
        let without = binarize(&hard_adjacency(&lab(1, 1, 2, 3, vec![1, 1])));
        let prior = aggregate_prior(&[with.clone(), without]).unwrap();
        assert_eq!(prior.get(1, 2), 0.5);
        assert_eq!(prior.get(0, 1), 0.0);
        assert_eq!(prior.num_subjects(), 2);
        let all = aggregate_prior(&[with.clone(), with.clone(), with]).unwrap();
        assert_eq!(all.get(1, 2), 1.0);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate_prior(&[]), Err(Error::NoSubjects)));
        let a = binarize(&hard_adjacency(&lab(1, 1, 2, 3, vec![1, 2])));
        let b = binarize(&hard_adjacency(&lab(1, 1, 2, 4, vec![1, 2])));
        assert!(matches!(
            aggregate_prior(&[a, b]),
            Err(Error::ClassMismatch { .. })
        ));
    }

    #[test]
    fn soft_half_half_pair() {
        let p = ProbMap::new(
            GridDims::new(1, 1, 2).unwrap(),
            Spacing::unit(),
            2,
            vec![0.5; 4],
        )
        .unwrap();
        let s = soft_adjacency(&p);
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(1, 0), 0.5);
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    fn soft_equals_hard_on_one_hot() {
        let l = lab(2, 2, 1, 3, vec![1, 2, 2, 1]);
        let s = soft_adjacency(&one_hot(&l));
        let z = l.dims().pair_count() as f64;
        assert_eq!(s.get(1, 2) * z, 4.0);
    }

    #[test]
    fn nonadj_forbidden_contribution() {
        // prior forbids 1-2; a 1x1x2 map with voxels (0,.5,.5) and (0,.5,.5)
        // has s_12 = .25 + .25 = .5 over a single pair.
        let prior = PriorAdj::new(
            AdjMatrix::from_row_major(3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
                .unwrap(),
            1,
        )
        .unwrap();
        let p = ProbMap::new(
            GridDims::new(1, 1, 2).unwrap(),
            Spacing::unit(),
            3,
            vec![0.0, 0.5, 0.5, 0.0, 0.5, 0.5],
        )
        .unwrap();
        assert_eq!(soft_adjacency(&p).get(1, 2), 0.5);
        assert_eq!(nonadj_loss(&p, &prior).unwrap(), 0.5);
    }

    #[test]
    fn nonadj_zero_for_own_prior() {
        let l = lab(2, 2, 2, 4, vec![0, 1, 1, 2, 0, 3, 3, 2]);
        let prior = aggregate_prior(&[binarize(&hard_adjacency(&l))]).unwrap();
        assert_eq!(nonadj_loss(&one_hot(&l), &prior).unwrap(), 0.0);
    }

    #[test]
    fn all_allowed_prior_has_zero_gradient() {
        let mut data = vec![1.0; 16];
        for b in 0..4 {
            data[b * 4 + b] = 0.0;
        }
        let prior = PriorAdj::new(AdjMatrix::from_row_major(4, data).unwrap(), 1).unwrap();
        let p = ProbMap::new(
            GridDims::cube(2).unwrap(),
            Spacing::unit(),
            4,
            vec![0.25; 32],
        )
        .unwrap();
        let g = nonadj_loss_grad(&p, &prior).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_mismatch_is_rejected() {
        let prior = PriorAdj::new(AdjMatrix::zeros(3), 1).unwrap();
        let p = ProbMap::new(
            GridDims::cube(1).unwrap(),
            Spacing::unit(),
            2,
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(nonadj_loss(&p, &prior).is_err());
        assert!(nonadj_loss_grad(&p, &prior).is_err());
    }

    #[test]
    fn violations() {
        // 1 touches 2 (allowed) and 3 (forbidden)
        let l = lab(3, 1, 1, 4, vec![2, 1, 3]);
        let mut data = vec![0.0; 16];
        for (b, c) in [(1, 2), (2, 1)] {
            data[b * 4 + c] = 1.0;
        }
        let prior = PriorAdj::new(AdjMatrix::from_row_major(4, data).unwrap(), 1).unwrap();
        assert_eq!(
            violation_report(&l, &prior, 0.0).unwrap(),
            vec![Violation {
                b: 1,
                c: 3,
                count: 1
            }]
        );
        assert_eq!(violation_report(&l, &prior, 1.0).unwrap().len(), 2);
        assert!(matches!(
            violation_report(&l, &prior, 1.5),
            Err(Error::InvalidThreshold(_))
        ));
        assert!(violation_report(&l, &prior, -0.1).is_err());
    }

    #[test]
    fn matrix_validation() {
        assert!(AdjMatrix::from_row_major(2, vec![0.0, 1.0, 0.5, 0.0]).is_err());
        assert!(AdjMatrix::from_row_major(2, vec![1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(AdjMatrix::from_row_major(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
        assert!(
            BinaryAdj::new(AdjMatrix::from_row_major(2, vec![0.0, 0.5, 0.5, 0.0]).unwrap())
                .is_err()
        );
    }
}
