//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the code paths it is used to check: adjacency is
//! counted by visiting all six neighbors of every voxel, surface distances by
//! comparing every pair of points, holes by flood-filling from the border.

#![allow(dead_code)]

use std::collections::VecDeque;

use adjprior_core::adjacency::{AdjMatrix, PriorAdj};
use adjprior_core::phantom::{phantom_labels, PhantomSpec};
use adjprior_core::volume::{GridDims, LabelMap, Spacing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OFFSETS: [(isize, isize, isize); 6] = [
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
];

pub fn neighbor(
    dims: GridDims,
    x: usize,
    y: usize,
    z: usize,
    o: (isize, isize, isize),
) -> Option<(usize, usize, usize)> {
    let nx = x as isize + o.0;
    let ny = y as isize + o.1;
    let nz = z as isize + o.2;
    if nx < 0
        || ny < 0
        || nz < 0
        || nx >= dims.h as isize
        || ny >= dims.w as isize
        || nz >= dims.d as isize
    {
        None
    } else {
        Some((nx as usize, ny as usize, nz as usize))
    }
}

/// Every voxel, every in-grid neighbor: ordered pairs, halved afterwards.
pub fn brute_adjacency(lab: &LabelMap) -> Vec<u64> {
    let n = lab.num_classes();
    let dims = lab.dims();
    let mut ordered = vec![0u64; n * n];
    for z in 0..dims.d {
        for y in 0..dims.w {
            for x in 0..dims.h {
                let b = lab.get(x, y, z) as usize;
                for o in OFFSETS {
                    if let Some((nx, ny, nz)) = neighbor(dims, x, y, z, o) {
                        let c = lab.get(nx, ny, nz) as usize;
                        if b != c {
                            ordered[b * n + c] += 1;
                        }
                    }
                }
            }
        }
    }
    // (b,c) and (c,b) each saw every unordered pair once from each side
    let mut out = vec![0u64; n * n];
    for b in 0..n {
        for c in 0..n {
            if b != c {
                out[b * n + c] = (ordered[b * n + c] + ordered[c * n + b]) / 2;
            }
        }
    }
    out
}

pub fn random_labels(rng: &mut impl Rng, dims: GridDims, classes: usize) -> LabelMap {
    let v = (0..dims.len())
        .map(|_| rng.gen_range(0..classes) as u16)
        .collect();
    LabelMap::new(dims, Spacing::unit(), classes, v).unwrap()
}

/// Random boxes painted over background; gives spatially coherent regions.
pub fn random_blocks(
    rng: &mut impl Rng,
    dims: GridDims,
    spacing: Spacing,
    classes: usize,
    boxes: usize,
) -> LabelMap {
    let mut lab = LabelMap::zeros(dims, spacing, classes).unwrap();
    for _ in 0..boxes {
        let label = rng.gen_range(1..classes) as u16;
        let x0 = rng.gen_range(0..dims.h);
        let y0 = rng.gen_range(0..dims.w);
        let z0 = rng.gen_range(0..dims.d);
        let x1 = (x0 + rng.gen_range(1..=dims.h / 2 + 1)).min(dims.h);
        let y1 = (y0 + rng.gen_range(1..=dims.w / 2 + 1)).min(dims.w);
        let z1 = (z0 + rng.gen_range(1..=dims.d / 2 + 1)).min(dims.d);
        for z in z0..z1 {
            for y in y0..y1 {
                for x in x0..x1 {
                    lab.set(x, y, z, label);
                }
            }
        }
    }
    lab
}

/// Mask surface as physical points, from explicit coordinate arithmetic.
pub fn brute_surface(lab: &LabelMap, label: u16) -> Vec<[f64; 3]> {
    let dims = lab.dims();
    let s = lab.spacing();
    let mut pts = Vec::new();
    for z in 0..dims.d {
        for y in 0..dims.w {
            for x in 0..dims.h {
                if lab.get(x, y, z) != label {
                    continue;
                }
                let exposed = OFFSETS.iter().any(|&o| match neighbor(dims, x, y, z, o) {
                    None => true,
                    Some((nx, ny, nz)) => lab.get(nx, ny, nz) != label,
                });
                if exposed {
                    pts.push([x as f64 * s.sx, y as f64 * s.sy, z as f64 * s.sz]);
                }
            }
        }
    }
    pts
}

fn brute_directed_p95(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut d: Vec<f64> = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let dx = p[0] - q[0];
                    let dy = p[1] - q[1];
                    let dz = p[2] - q[2];
                    (dx * dx + dy * dy + dz * dz).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let k = (0.95 * d.len() as f64).ceil() as usize;
    d[k.max(1) - 1]
}

/// All-pairs HD95 with nearest-rank percentiles.
pub fn brute_hd95(gt: &LabelMap, pred: &LabelMap, label: u16) -> Option<f64> {
    let a = brute_surface(gt, label);
    let b = brute_surface(pred, label);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(brute_directed_p95(&a, &b).max(brute_directed_p95(&b, &a)))
}

/// Full directed Hausdorff distance from `gt`'s surface to `pred`'s.
pub fn brute_directed_hausdorff(gt: &LabelMap, pred: &LabelMap, label: u16) -> f64 {
    let a = brute_surface(gt, label);
    let b = brute_surface(pred, label);
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Sizes of the 6-connected components of `label`, in discovery order.
pub fn component_sizes(lab: &LabelMap, label: u16) -> Vec<usize> {
    let dims = lab.dims();
    let mut seen = vec![false; dims.len()];
    let mut sizes = Vec::new();
    for z in 0..dims.d {
        for y in 0..dims.w {
            for x in 0..dims.h {
                let i = dims.index(x, y, z);
                if seen[i] || lab.get(x, y, z) != label {
                    continue;
                }
                seen[i] = true;
                let mut size = 0;
                let mut q = VecDeque::from([(x, y, z)]);
                while let Some((cx, cy, cz)) = q.pop_front() {
                    size += 1;
                    for o in OFFSETS {
                        if let Some((nx, ny, nz)) = neighbor(dims, cx, cy, cz, o) {
                            let j = dims.index(nx, ny, nz);
                            if !seen[j] && lab.get(nx, ny, nz) == label {
                                seen[j] = true;
                                q.push_back((nx, ny, nz));
                            }
                        }
                    }
                }
                sizes.push(size);
            }
        }
    }
    sizes
}

/// Background voxels reachable from the grid border through background.
pub fn border_reachable_background(lab: &LabelMap) -> Vec<bool> {
    let dims = lab.dims();
    let mut seen = vec![false; dims.len()];
    let mut q = VecDeque::new();
    for z in 0..dims.d {
        for y in 0..dims.w {
            for x in 0..dims.h {
                let border = x == 0
                    || y == 0
                    || z == 0
                    || x + 1 == dims.h
                    || y + 1 == dims.w
                    || z + 1 == dims.d;
                if border && lab.get(x, y, z) == 0 {
                    seen[dims.index(x, y, z)] = true;
                    q.push_back((x, y, z));
                }
            }
        }
    }
    while let Some((x, y, z)) = q.pop_front() {
        for o in OFFSETS {
            if let Some((nx, ny, nz)) = neighbor(dims, x, y, z, o) {
                let j = dims.index(nx, ny, nz);
                if !seen[j] && lab.get(nx, ny, nz) == 0 {
                    seen[j] = true;
                    q.push_back((nx, ny, nz));
                }
            }
        }
    }
    seen
}

/// Unreachable background components whose outside neighbors all carry one
/// foreground label, reported as `(label, voxel count)`.
pub fn enclosed_pockets(lab: &LabelMap) -> Vec<(u16, usize)> {
    let dims = lab.dims();
    let reach = border_reachable_background(lab);
    let mut seen = reach.clone();
    let mut out = Vec::new();
    for z in 0..dims.d {
        for y in 0..dims.w {
            for x in 0..dims.h {
                let i = dims.index(x, y, z);
                if seen[i] || lab.get(x, y, z) != 0 {
                    continue;
                }
                seen[i] = true;
                let mut q = VecDeque::from([(x, y, z)]);
                let mut size = 0;
                let mut walls = std::collections::BTreeSet::new();
                while let Some((cx, cy, cz)) = q.pop_front() {
                    size += 1;
                    for o in OFFSETS {
                        let (nx, ny, nz) = neighbor(dims, cx, cy, cz, o)
                            .expect("unreachable pockets avoid the border");
                        let l = lab.get(nx, ny, nz);
                        let j = dims.index(nx, ny, nz);
                        if l != 0 {
                            walls.insert(l);
                        } else if !seen[j] {
                            seen[j] = true;
                            q.push_back((nx, ny, nz));
                        }
                    }
                }
                if walls.len() == 1 {
                    out.push((*walls.iter().next().unwrap(), size));
                }
            }
        }
    }
    out
}

/// Digitized ball: voxel centers within `r` of the grid center.
pub fn ball(n: usize, r: f64, spacing: Spacing) -> LabelMap {
    let dims = GridDims::cube(n).unwrap();
    let c = (n as f64 - 1.0) / 2.0;
    let v = (0..dims.len())
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
            (d2 <= r * r) as u16
        })
        .collect();
    LabelMap::new(dims, spacing, 2, v).unwrap()
}

/// Prior with 1 wherever `a` is positive: only never-seen pairs are penalized.
pub fn support_prior(a: &PriorAdj) -> PriorAdj {
    let n = a.num_classes();
    let m = (0..n * n)
        .map(|k| if a.get(k / n, k % n) > 0.0 { 1.0 } else { 0.0 })
        .collect();
    PriorAdj::new(AdjMatrix::from_row_major(n, m).unwrap(), a.num_subjects()).unwrap()
}

/// Reflection of `lab` across the axes selected by the low bits of `k`.
/// Contacts are unchanged, so a set of mirrors agrees on every pair.
pub fn mirror(lab: &LabelMap, k: usize) -> LabelMap {
    let dims = lab.dims();
    let mut out = lab.clone();
    for z in 0..dims.d {
        for y in 0..dims.w {
            for x in 0..dims.h {
                let sx = if k & 1 != 0 { dims.h - 1 - x } else { x };
                let sy = if k & 2 != 0 { dims.w - 1 - y } else { y };
                let sz = if k & 4 != 0 { dims.d - 1 - z } else { z };
                out.set(x, y, z, lab.get(sx, sy, sz));
            }
        }
    }
    out
}

pub fn paint_cube(lab: &mut LabelMap, rng: &mut impl Rng, label: u16, max_side: usize) {
    let dims = lab.dims();
    let side = rng.gen_range(1..=max_side);
    let x0 = rng.gen_range(0..dims.h.saturating_sub(side).max(1));
    let y0 = rng.gen_range(0..dims.w.saturating_sub(side).max(1));
    let z0 = rng.gen_range(0..dims.d.saturating_sub(side).max(1));
    for z in z0..(z0 + side).min(dims.d) {
        for y in y0..(y0 + side).min(dims.w) {
            for x in x0..(x0 + side).min(dims.h) {
                lab.set(x, y, z, label);
            }
        }
    }
}

/// Phantom labels with satellite blobs, background pockets and salt noise.
pub fn corrupted(seed: u64) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.gen_range(3..=6);
    let spec = PhantomSpec {
        seed,
        dims: GridDims::cube(20).unwrap(),
        num_classes: classes,
        ..PhantomSpec::default()
    };
    let mut lab = phantom_labels(&spec).unwrap();
    for _ in 0..rng.gen_range(1..6) {
        let label = rng.gen_range(1..classes) as u16;
        paint_cube(&mut lab, &mut rng, label, 3);
    }
    for _ in 0..rng.gen_range(1..6) {
        paint_cube(&mut lab, &mut rng, 0, 3);
    }
    let dims = lab.dims();
    for _ in 0..rng.gen_range(0..40) {
        let (x, y, z) = (
            rng.gen_range(0..dims.h),
            rng.gen_range(0..dims.w),
            rng.gen_range(0..dims.d),
        );
        lab.set(x, y, z, rng.gen_range(0..classes) as u16);
    }
    lab
}
