//! Scalar reference implementations, written from the metric definitions
//! without sharing code with the library.

#![allow(dead_code)]

pub type Grid = Vec<Vec<bool>>;

pub fn region_similarity(m: &Grid, gt: &Grid) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..m.len() {
        for x in 0..m[0].len() {
            inter += usize::from(m[y][x] && gt[y][x]);
            union += usize::from(m[y][x] || gt[y][x]);
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn value(m: &Grid, y: isize, x: isize) -> bool {
    y >= 0 && x >= 0 && (y as usize) < m.len() && (x as usize) < m[0].len() && m[y as usize][x as usize]
}

/// Foreground pixels with a background 4-neighbour; outside is background.
pub fn boundary(m: &Grid) -> Vec<(isize, isize)> {
    let mut out = Vec::new();
    for y in 0..m.len() as isize {
        for x in 0..m[0].len() as isize {
            if value(m, y, x) {
                let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| !value(m, y + dy, x + dx));
                if edge {
                    out.push((y, x));
                }
            }
        }
    }
    out
}

fn matched_fraction(from: &[(isize, isize)], to: &[(isize, isize)], tol: usize) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let hit = from
        .iter()
        .filter(|&&(y, x)| to.iter().any(|&(v, u)| (y - v).unsigned_abs().max((x - u).unsigned_abs()) <= tol))
        .count();
    hit as f64 / from.len() as f64
}

pub fn contour_f(m: &Grid, gt: &Grid, tol: usize) -> f64 {
    let (bm, bg) = (boundary(m), boundary(gt));
    if bm.is_empty() && bg.is_empty() {
        return 1.0;
    }
    let pre = matched_fraction(&bm, &bg, tol);
    let rec = matched_fraction(&bg, &bm, tol);
    if pre + rec == 0.0 {
        0.0
    } else {
        2.0 * pre * rec / (pre + rec)
    }
}

pub fn mae(s: &[Vec<f64>], gt: &Grid) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in 0..s.len() {
        for x in 0..s[0].len() {
            sum += (s[y][x] - if gt[y][x] { 1.0 } else { 0.0 }).abs();
            n += 1.0;
        }
    }
    sum / n
}

pub fn f_beta(s: &[Vec<f64>], gt: &Grid, beta2: f64, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for y in 0..s.len() {
        for x in 0..s[0].len() {
            let p = s[y][x] >= threshold;
            match (p, gt[y][x]) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
    }
    if tp + fp + fn_ == 0.0 {
        return 1.0;
    }
    let pre = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if beta2 * pre + rec == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * pre * rec / (beta2 * pre + rec)
    }
}

pub fn threshold(s: &[Vec<f64>], t: f64) -> Grid {
    s.iter().map(|row| row.iter().map(|&v| v >= t).collect()).collect()
}
