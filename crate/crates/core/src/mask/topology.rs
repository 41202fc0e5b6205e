//! Connectivity analysis for binary masks.
//!
//! All connectivity in this crate is 8-connectivity: two foreground pixels
//! are neighbours when their Chebyshev distance is 1.

use super::BinaryMask;

pub const NEIGHBORS_8: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Number of 8-connected foreground components, by flood fill.
pub fn component_count(mask: &BinaryMask) -> usize {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut components = 0;
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) || seen[r * w + c] {
                continue;
            }
            components += 1;
            seen[r * w + c] = true;
            stack.push((r, c));
            while let Some((pr, pc)) = stack.pop() {
                for (dr, dc) in NEIGHBORS_8 {
                    let (nr, nc) = (pr as i64 + dr, pc as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if mask.get(nr, nc) && !seen[nr * w + nc] {
                        seen[nr * w + nc] = true;
                        stack.push((nr, nc));
                    }
                }
            }
        }
    }
    components
}

/// Ring positions around a pixel, with a precomputed adjacency relation
/// between them (two ring cells are adjacent when their Chebyshev distance
/// is 1, i.e. they touch without going through the center).
const RING: [(i64, i64); 8] = NEIGHBORS_8;

fn ring_adjacent(i: usize, j: usize) -> bool {
    let (ri, ci) = RING[i];
    let (rj, cj) = RING[j];
    let d = (ri - rj).abs().max((ci - cj).abs());
    d == 1
}

/// Number of 8-connected components formed by the foreground neighbours of
/// `(r, c)`, using only paths inside the 3x3 ring (the center is excluded).
pub fn ring_fg_components(mask: &BinaryMask, r: usize, c: usize) -> usize {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let mut fg = [false; 8];
    for (i, (dr, dc)) in RING.iter().enumerate() {
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        if nr >= 0 && nc >= 0 && nr < h && nc < w && mask.get(nr as usize, nc as usize) {
            fg[i] = true;
        }
    }
    let mut seen = [false; 8];
    let mut components = 0;
    for start in 0..8 {
        if !fg[start] || seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..8 {
                if fg[j] && !seen[j] && ring_adjacent(i, j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components
}

/// Local simple-point test: removing `(r, c)` provably keeps the remaining
/// foreground connected when its foreground neighbours form exactly one
/// component within the ring. (The test is sufficient, not necessary: any
/// path through the removed pixel can be rerouted inside the ring.)
pub fn is_simple(mask: &BinaryMask, r: usize, c: usize) -> bool {
    ring_fg_components(mask, r, c) == 1
}

/// True when `(r, c)` has at least one background 8-neighbour (or touches
/// the frame border), i.e. it lies on the mask boundary.
pub fn is_boundary(mask: &BinaryMask, r: usize, c: usize) -> bool {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    for (dr, dc) in NEIGHBORS_8 {
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        if nr < 0 || nc < 0 || nr >= h || nc >= w {
            return true;
        }
        if !mask.get(nr as usize, nc as usize) {
            return true;
        }
    }
    false
}
