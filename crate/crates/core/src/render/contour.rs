//! Marching-squares outlines of a label in a 2D label slice.
//!
//! Pixel centres sit at integer (col, row) coordinates and the iso-line runs
//! through edge midpoints between a pixel inside the label and one outside.
//! Saddle cells keep the inside pixels apart (4-connectivity). Every loop is
//! closed (first point repeated at the end) and walks with the region on its
//! left when (col, row) is read as an ordinary (x, y) plane: outer boundaries
//! have positive shoelace area, holes negative.

use std::collections::HashMap;

use crate::volume::Slice2;

pub type Polyline = Vec<[f64; 2]>;

/// Edge-midpoint key in doubled padded coordinates.
type Key = (i64, i64);

pub fn mask_contours(slice: &Slice2<u8>, label: u8) -> Vec<Polyline> {
    let (w, h) = (slice.width as i64, slice.height as i64);
    let inside = |c: i64, r: i64| c >= 0 && r >= 0 && c < w && r < h && slice.get(c as usize, r as usize) == label;

    // oriented segments keyed by their start point
    let mut next: HashMap<Key, Key> = HashMap::new();
    let mut starts: Vec<Key> = Vec::new();
    for r in -1..h {
        for c in -1..w {
            // corners: 0 = (c, r), 1 = (c+1, r), 2 = (c+1, r+1), 3 = (c, r+1)
            let corners = [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)];
            let on: [bool; 4] = corners.map(|(x, y)| inside(x, y));
            let count = on.iter().filter(|&&b| b).count();
            if count == 0 || count == 4 {
                continue;
            }
            // edge i joins corner i and corner i+1
            let mid = |e: usize| -> Key {
                let (a, b) = (corners[e], corners[(e + 1) % 4]);
                (a.0 + b.0, a.1 + b.1)
            };
            let crossing: Vec<usize> = (0..4).filter(|&e| on[e] != on[(e + 1) % 4]).collect();
            let pairs: Vec<(usize, usize)> = if crossing.len() == 4 {
                // saddle: cut off each inside corner on its own
                (0..4).filter(|&k| on[k]).map(|k| ((k + 3) % 4, k)).collect()
            } else {
                vec![(crossing[0], crossing[1])]
            };
            for (e1, e2) in pairs {
                let (p, q) = (mid(e1), mid(e2));
                // orient with the inside on the left: cross(q − p, f − p) > 0
                let f = inside_reference(&corners, &on, e1, e2, crossing.len() == 4);
                let cross = (q.0 - p.0) * (f.1 - f.2 * p.1) - (q.1 - p.1) * (f.0 - f.2 * p.0);
                let (s, e) = if cross > 0 { (p, q) } else { (q, p) };
                next.insert(s, e);
                starts.push(s);
            }
        }
    }

    let mut out = Vec::new();
    let mut used: HashMap<Key, bool> = HashMap::new();
    for &s in &starts {
        if used.contains_key(&s) {
            continue;
        }
        let mut loop_keys = vec![s];
        used.insert(s, true);
        let mut cur = next[&s];
        while cur != s {
            used.insert(cur, true);
            loop_keys.push(cur);
            cur = next[&cur];
        }
        let mut pts = simplify(&loop_keys);
        pts.push(pts[0]);
        out.push(pts.into_iter().map(|(x, y)| [x as f64 / 2.0, y as f64 / 2.0]).collect());
    }
    out
}

/// A point on the inside of the segment e1–e2, as `(x·n, y·n, n)` in doubled
/// coordinates so the centroid of the inside corners stays integral.
fn inside_reference(corners: &[(i64, i64); 4], on: &[bool; 4], e1: usize, e2: usize, saddle: bool) -> (i64, i64, i64) {
    let doubled = |k: usize| (2 * corners[k].0, 2 * corners[k].1);
    if saddle {
        // the pair cuts off the corner shared by both edges
        let k = if (e1 + 1) % 4 == e2 { e2 } else { e1 };
        let (x, y) = doubled(k);
        return (x, y, 1);
    }
    let ins: Vec<usize> = (0..4).filter(|&k| on[k]).collect();
    let sx = ins.iter().map(|&k| doubled(k).0).sum();
    let sy = ins.iter().map(|&k| doubled(k).1).sum();
    (sx, sy, ins.len() as i64)
}

/// Drop interior points of straight runs.
fn simplify(keys: &[Key]) -> Vec<Key> {
    let n = keys.len();
    let kept: Vec<Key> = (0..n)
        .filter(|&i| {
            let (a, b, c) = (keys[(i + n - 1) % n], keys[i], keys[(i + 1) % n]);
            (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0) != 0
        })
        .map(|i| keys[i])
        .collect();
    if kept.is_empty() {
        keys.to_vec()
    } else {
        kept
    }
}

/// Twice the signed area of a closed polyline.
pub fn signed_area2(poly: &[[f64; 2]]) -> f64 {
    poly.windows(2).map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1]).sum()
}

/// Even–odd point-in-polygon test over a set of closed loops.
pub fn contains(loops: &[Polyline], p: [f64; 2]) -> bool {
    let mut inside = false;
    for poly in loops {
        for w in poly.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}
