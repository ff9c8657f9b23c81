//! Closed-tour ordering of unordered particle endpoints.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::Point;

/// Closed polygon through every distinct endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhpaContour {
    pub vertices: Vec<Point>,
    pub tour_length: f64,
    /// Exact duplicates removed before ordering.
    pub duplicates_removed: usize,
}

pub fn tour_length(points: &[Point], tour: &[usize]) -> f64 {
    let n = tour.len();
    (0..n).map(|i| points[tour[i]].dist(points[tour[(i + 1) % n]])).sum()
}

/// Nearest-neighbour construction from vertex 0; ties go to the lowest index.
pub fn nearest_neighbour_tour(points: &[Point]) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let mut visited = vec![false; n];
    let mut tour = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    tour.push(0);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, p) in points.iter().enumerate() {
            if !visited[j] {
                let d = points[cur].dist2(*p);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
        }
        visited[best] = true;
        tour.push(best);
        cur = best;
    }
    tour
}

/// 2-opt local search until no segment reversal shortens the tour.
pub fn two_opt(points: &[Point], tour: &mut [usize]) {
    let n = tour.len();
    if n < 4 {
        return;
    }
    let d = |a: usize, b: usize| points[a].dist(points[b]);
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (tour[i], tour[i + 1]);
                let (c, e) = (tour[j], tour[(j + 1) % n]);
                let delta = d(a, c) + d(b, e) - d(a, b) - d(c, e);
                if delta < -1e-10 {
                    tour[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Or-opt: move a run of one to three consecutive vertices, either way
/// round, to the cheapest other edge. Returns whether any move was applied.
pub fn or_opt(points: &[Point], tour: &mut Vec<usize>) -> bool {
    let n = tour.len();
    if n < 5 {
        return false;
    }
    let d = |a: usize, b: usize| points[a].dist(points[b]);
    let mut any = false;
    let mut improved = true;
    while improved {
        improved = false;
        'search: for len in 1..=3.min(n - 3) {
            for start in 0..n {
                // rotate so the segment sits at the front: seg = tour[0..len]
                let mut rot: Vec<usize> = tour[start..].iter().chain(&tour[..start]).copied().collect();
                let (first, last) = (rot[0], rot[len - 1]);
                let (prev, next) = (rot[n - 1], rot[len]);
                let removal = d(prev, first) + d(last, next) - d(prev, next);
                // remaining path rot[len..n], try inserting between consecutive pairs
                for k in len..n - 1 {
                    let (a, b) = (rot[k], rot[k + 1]);
                    let base = d(a, b);
                    let forward = d(a, first) + d(last, b) - base;
                    let backward = d(a, last) + d(first, b) - base;
                    let (gain, reverse) = if backward < forward { (removal - backward, true) } else { (removal - forward, false) };
                    if gain > 1e-10 {
                        let mut seg: Vec<usize> = rot.drain(..len).collect();
                        if reverse {
                            seg.reverse();
                        }
                        let at = k + 1 - len;
                        rot.splice(at..at, seg);
                        *tour = rot;
                        any = true;
                        improved = true;
                        break 'search;
                    }
                }
            }
        }
    }
    any
}

/// Order endpoints into a closed tour: nearest-neighbour construction, then
/// 2-opt and Or-opt alternately until neither improves. Duplicate points are
/// collapsed first.
pub fn order_endpoints_tsp(points: &[Point]) -> Result<WhpaContour> {
    let mut distinct: Vec<Point> = Vec::with_capacity(points.len());
    for p in points {
        if !distinct.iter().any(|q| q.x == p.x && q.y == p.y) {
            distinct.push(*p);
        }
    }
    let duplicates_removed = points.len() - distinct.len();
    if distinct.len() < 3 {
        return invalid(format!("need at least 3 distinct endpoints, got {}", distinct.len()));
    }
    let mut tour = nearest_neighbour_tour(&distinct);
    loop {
        two_opt(&distinct, &mut tour);
        if !or_opt(&distinct, &mut tour) {
            break;
        }
    }
    let tour_length = tour_length(&distinct, &tour);
    Ok(WhpaContour { vertices: tour.iter().map(|&i| distinct[i]).collect(), tour_length, duplicates_removed })
}
