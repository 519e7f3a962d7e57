//! Largest-component selection and hole filling on labelmaps (6-connectivity).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::volume::{GridDims, LabelMap};

fn check_foreground(lab: &LabelMap, label: u16) -> Result<()> {
    if label == 0 || label as usize >= lab.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: label as usize,
            num_classes: lab.num_classes(),
        });
    }
    Ok(())
}

/// 6-connected components of the voxels satisfying `inside`, as
/// `(component id per voxel, component sizes)`; unlabeled voxels hold `usize::MAX`.
/// Components are numbered in order of their first voxel in storage order.
pub fn components(dims: GridDims, inside: impl Fn(usize) -> bool) -> (Vec<usize>, Vec<usize>) {
    let mut id = vec![usize::MAX; dims.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..dims.len() {
        if id[seed] != usize::MAX || !inside(seed) {
            continue;
        }
        let cid = sizes.len();
        id[seed] = cid;
        queue.push_back(seed);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            dims.for_each_neighbor(i, |j| {
                if id[j] == usize::MAX && inside(j) {
                    id[j] = cid;
                    queue.push_back(j);
                }
            });
        }
        sizes.push(size);
    }
    (id, sizes)
}

/// Keeps only the largest 6-connected component of `label`; other voxels of
/// the label become background. Equal sizes are resolved in favor of the
/// component holding the lexicographically smallest `(x, y, z)` voxel.
pub fn largest_component(lab: &LabelMap, label: u16) -> Result<LabelMap> {
    check_foreground(lab, label)?;
    let dims = lab.dims();
    let v = lab.voxels();
    let (id, sizes) = components(dims, |i| v[i] == label);
    if sizes.len() <= 1 {
        return Ok(lab.clone());
    }
    let mut first = vec![(usize::MAX, usize::MAX, usize::MAX); sizes.len()];
    for (i, &c) in id.iter().enumerate() {
        if c != usize::MAX {
            first[c] = first[c].min(dims.coords(i));
        }
    }
    let keep = (0..sizes.len())
        .min_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(first[a].cmp(&first[b])))
        .expect("at least two components");
    let mut out = lab.clone();
    for (o, &c) in out.voxels_mut().iter_mut().zip(&id) {
        if c != usize::MAX && c != keep {
            *o = 0;
        }
    }
    Ok(out)
}

/// Relabels enclosed background pockets of `label`.
///
/// A pocket is a 6-connected background component that does not touch the
/// grid border and whose every outside neighbor carries `label`. Background
/// bounded partly by other labels is left untouched.
pub fn fill_holes(lab: &LabelMap, label: u16) -> Result<LabelMap> {
    check_foreground(lab, label)?;
    let dims = lab.dims();
    let v = lab.voxels();
    let (id, sizes) = components(dims, |i| v[i] == 0);
    let mut enclosed = vec![true; sizes.len()];
    for (i, &c) in id.iter().enumerate() {
        if c == usize::MAX || !enclosed[c] {
            continue;
        }
        if dims.on_border(i) {
            enclosed[c] = false;
            continue;
        }
        dims.for_each_neighbor(i, |j| {
            if v[j] != 0 && v[j] != label {
                enclosed[c] = false;
            }
        });
    }
    let mut out = lab.clone();
    for (o, &c) in out.voxels_mut().iter_mut().zip(&id) {
        if c != usize::MAX && enclosed[c] {
            *o = label;
        }
    }
    Ok(out)
}

/// Largest-component selection for every foreground label in ascending
/// order, then hole filling for every foreground label in ascending order.
pub fn postprocess_all(lab: &LabelMap) -> LabelMap {
    let labels = 1..lab.num_classes() as u16;
    let mut out = lab.clone();
    for l in labels.clone() {
        out = largest_component(&out, l).expect("foreground label in range");
    }
    for l in labels {
        out = fill_holes(&out, l).expect("foreground label in range");
    }
    out
}
