//! First-order fast marching for `|grad psi| = 1` from a binary interface.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{BinaryImage, SdImage};
use crate::error::{invalid, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then index for determinism
        other.dist.total_cmp(&self.dist).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Far,
    Trial,
    Known,
}

fn upwind(a: f64, b: f64, h: f64) -> f64 {
    if !a.is_finite() && !b.is_finite() {
        return f64::INFINITY;
    }
    if (a - b).abs() >= h || !a.is_finite() || !b.is_finite() {
        return a.min(b) + h;
    }
    0.5 * (a + b + (2.0 * h * h - (a - b) * (a - b)).sqrt())
}

/// Signed distance (m) of the 0/1 interface: positive inside, negative
/// outside. Cells with a 4-neighbour of the other phase start at `cell / 2`,
/// the linear placement of the 0.5 level between the two centres.
pub fn signed_distance(img: &BinaryImage, cell: f64) -> Result<SdImage> {
    if !img.has_both_phases() {
        return invalid("signed distance needs both interior and exterior cells");
    }
    if !(cell > 0.0) {
        return invalid("cell size must be positive");
    }
    let (rows, cols) = (img.cells.rows(), img.cells.cols());
    let n = rows * cols;
    let phase = img.cells.as_slice();
    let mut dist = vec![f64::INFINITY; n];
    let mut state = vec![State::Far; n];
    let mut heap = BinaryHeap::new();

    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if img.cells.neighbours4(r, c).any(|(nr, nc)| phase[nr * cols + nc] != phase[i]) {
                dist[i] = 0.5 * cell;
                state[i] = State::Known;
            }
        }
    }
    let update = |i: usize, dist: &[f64], state: &[State]| -> f64 {
        let (r, c) = (i / cols, i % cols);
        let known = |j: usize| if state[j] == State::Known { dist[j] } else { f64::INFINITY };
        let a = {
            let l = if c > 0 { known(i - 1) } else { f64::INFINITY };
            let rr = if c + 1 < cols { known(i + 1) } else { f64::INFINITY };
            l.min(rr)
        };
        let b = {
            let d = if r > 0 { known(i - cols) } else { f64::INFINITY };
            let u = if r + 1 < rows { known(i + cols) } else { f64::INFINITY };
            d.min(u)
        };
        upwind(a, b, cell)
    };
    for i in 0..n {
        if state[i] == State::Known {
            let (r, c) = (i / cols, i % cols);
            for (nr, nc) in img.cells.neighbours4(r, c) {
                let j = nr * cols + nc;
                if state[j] != State::Known {
                    let t = update(j, &dist, &state);
                    if t < dist[j] {
                        dist[j] = t;
                        state[j] = State::Trial;
                        heap.push(Entry { dist: t, idx: j });
                    }
                }
            }
        }
    }
    while let Some(Entry { dist: d, idx }) = heap.pop() {
        if state[idx] == State::Known || d > dist[idx] {
            continue;
        }
        state[idx] = State::Known;
        let (r, c) = (idx / cols, idx % cols);
        for (nr, nc) in img.cells.neighbours4(r, c) {
            let j = nr * cols + nc;
            if state[j] != State::Known {
                let t = update(j, &dist, &state);
                if t < dist[j] {
                    dist[j] = t;
                    state[j] = State::Trial;
                    heap.push(Entry { dist: t, idx: j });
                }
            }
        }
    }
    let values: Vec<f64> = dist.iter().zip(phase).map(|(&d, &p)| if p == 1 { d } else { -d }).collect();
    Ok(SdImage { sub: img.sub.clone(), values: Raster::from_vec(rows, cols, values) })
}
