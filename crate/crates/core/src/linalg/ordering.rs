//! Fill-reducing orderings. Every ordering is returned as `perm` with
//! `perm[new] = old`.

use super::sparse::CsrMatrix;
use std::collections::VecDeque;

/// Reverse Cuthill–McKee ordering of the (symmetrized) pattern of `a`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let at = a.transpose();
    let neighbors = |i: usize| -> Vec<usize> {
        let mut nb: Vec<usize> = a.row(i).0.iter().chain(at.row(i).0).copied().filter(|&j| j != i).collect();
        nb.sort_unstable();
        nb.dedup();
        nb
    };
    let degree: Vec<usize> = (0..n).map(|i| neighbors(i).len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&i| (degree[i], i));
    for s in starts {
        if visited[s] {
            continue;
        }
        visited[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            let mut nb: Vec<usize> = neighbors(i).into_iter().filter(|&j| !visited[j]).collect();
            nb.sort_by_key(|&j| (degree[j], j));
            for j in nb {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Geometric nested dissection for unknowns attached to lattice points.
///
/// Unknowns with `None` coordinates are ordered last, in input order. Each
/// split cuts the bounding box along its longer axis at a lattice line that
/// is a multiple of `step`; unknowns on that line form the separator and are
/// numbered after both halves. Unknowns sharing a lattice point keep their
/// relative input order, so callers can put, e.g., velocity components before
/// the pressure of the same node.
pub fn nested_dissection_2d(coords: &[Option<[u32; 2]>], step: u32, leaf_size: usize) -> Vec<usize> {
    let boxes: Vec<Option<[[u32; 2]; 2]>> = coords.iter().map(|c| c.map(|p| [p, p])).collect();
    nested_dissection_boxes(&boxes, &[step], leaf_size)
}

/// Nested dissection for unknowns attached to closed lattice boxes `[lo, hi]`.
///
/// Cuts are tried at multiples of each entry of `steps` in turn, so coarse
/// lines are used first. An unknown whose box meets the cut line is placed
/// in that separator, after the point unknowns of the separator.
pub fn nested_dissection_boxes(boxes: &[Option<[[u32; 2]; 2]>], steps: &[u32], leaf_size: usize) -> Vec<usize> {
    let mut located: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].is_some()).collect();
    let mut perm = Vec::with_capacity(boxes.len());
    let steps: Vec<u32> = steps.iter().map(|&s| s.max(1)).collect();
    dissect(boxes, &mut located, &steps, leaf_size.max(1), &mut perm);
    perm.extend((0..boxes.len()).filter(|&i| boxes[i].is_none()));
    perm
}

fn emit_sorted(boxes: &[Option<[[u32; 2]; 2]>], items: &mut [usize], out: &mut Vec<usize>) {
    items.sort_by_key(|&i| {
        let [lo, hi] = boxes[i].expect("located unknown");
        (lo != hi, lo[1], lo[0], i)
    });
    out.extend_from_slice(items);
}

fn dissect(boxes: &[Option<[[u32; 2]; 2]>], items: &mut [usize], steps: &[u32], leaf: usize, out: &mut Vec<usize>) {
    let extent = |i: usize| boxes[i].expect("located unknown");
    if items.len() <= leaf {
        emit_sorted(boxes, items, out);
        return;
    }
    let (mut lo, mut hi) = ([u32::MAX; 2], [0u32; 2]);
    for &i in items.iter() {
        let [a, b] = extent(i);
        for d in 0..2 {
            lo[d] = lo[d].min(a[d]);
            hi[d] = hi[d].max(b[d]);
        }
    }
    let axis = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
    let mut vals: Vec<u32> = items.iter().map(|&i| extent(i)[0][axis]).collect();
    vals.sort_unstable();
    let median = vals[vals.len() / 2];
    // Nearest admissible cut strictly inside the box, coarsest step first.
    let cut = steps.iter().find_map(|&step| {
        let down = median - median % step;
        [down, down + step, down.wrapping_sub(step)]
            .into_iter()
            .filter(|&c| c > lo[axis] && c < hi[axis])
            .min_by_key(|&c| c.abs_diff(median))
    });
    let Some(cut) = cut else {
        emit_sorted(boxes, items, out);
        return;
    };
    let mut left: Vec<usize> = Vec::new();
    let mut right: Vec<usize> = Vec::new();
    let mut sep: Vec<usize> = Vec::new();
    for &i in items.iter() {
        let [a, b] = extent(i);
        if b[axis] < cut {
            left.push(i);
        } else if a[axis] > cut {
            right.push(i);
        } else {
            sep.push(i);
        }
    }
    dissect(boxes, &mut left, steps, leaf, out);
    dissect(boxes, &mut right, steps, leaf, out);
    emit_sorted(boxes, &mut sep, out);
}

pub fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}
