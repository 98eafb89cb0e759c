//! Lloyd's algorithm with k-means++ seeding.
//!
//! Scalar codebooks (`dim == 1`) take a sorted-data fast path: every Lloyd
//! iteration is a pass of binary searches plus prefix sums. Vector codebooks
//! use brute-force assignment.

use rand::Rng as _;

use crate::seed::Rng;

const MAX_ITERS: usize = 500;

/// Fits `k` codewords of dimension `dim` to `points` (row-major, `n * dim`).
/// Returns row-major codewords; scalar codebooks come back sorted ascending
/// and pairwise distinct.
pub fn fit(points: &[f64], dim: usize, k: usize, rng: &mut Rng) -> Vec<f64> {
    debug_assert!(dim >= 1 && points.len() % dim == 0);
    let n = points.len() / dim;
    debug_assert!(n >= k && k >= 1);
    if dim == 1 {
        fit_scalar(points, k, rng)
    } else {
        fit_vector(points, dim, k, rng)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, later centres with probability
/// proportional to squared distance from the nearest chosen centre.
fn seed_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centres = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centres.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(&points[i * dim..(i + 1) * dim], &centres[..dim]))
        .collect();
    while centres.len() < k * dim {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c0 = centres.len();
        centres.extend_from_slice(&points[pick * dim..(pick + 1) * dim]);
        for (i, d) in nearest.iter_mut().enumerate() {
            let nd = sq_dist(&points[i * dim..(i + 1) * dim], &centres[c0..c0 + dim]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centres
}

fn fit_scalar(points: &[f64], k: usize, rng: &mut Rng) -> Vec<f64> {
    let mut data = points.to_vec();
    data.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(data.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in &data {
        acc += v;
        prefix.push(acc);
    }

    let mut centres = seed_plus_plus(points, 1, k, rng);
    centres.sort_by(f64::total_cmp);
    let mut bounds = vec![0usize; k + 1];
    for _ in 0..MAX_ITERS {
        make_distinct(&mut centres);
        // cell j holds data[bounds[j]..bounds[j+1]]; a point exactly on a
        // midpoint goes to the lower codeword
        let mut new_bounds = vec![0usize; k + 1];
        new_bounds[k] = data.len();
        for j in 0..k - 1 {
            let (lo, hi) = (centres[j], centres[j + 1]);
            new_bounds[j + 1] =
                data.partition_point(|&x| (x - lo) * (x - lo) <= (x - hi) * (x - hi));
            new_bounds[j + 1] = new_bounds[j + 1].max(new_bounds[j]);
        }
        let mut next = centres.clone();
        let mut empty = Vec::new();
        for j in 0..k {
            let (a, b) = (new_bounds[j], new_bounds[j + 1]);
            if b > a {
                next[j] = (prefix[b] - prefix[a]) / (b - a) as f64;
            } else {
                empty.push(j);
            }
        }
        // empty cells are moved onto the point with the largest error
        for j in empty {
            if let Some(far) = farthest_scalar(&data, &new_bounds, &next) {
                next[j] = far;
            }
        }
        next.sort_by(f64::total_cmp);
        let converged = new_bounds == bounds && next == centres;
        bounds = new_bounds;
        centres = next;
        if converged {
            break;
        }
    }
    make_distinct(&mut centres);
    centres
}

fn farthest_scalar(data: &[f64], bounds: &[usize], centres: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for j in 0..centres.len() {
        for &x in &data[bounds[j]..bounds[j + 1]] {
            let d = (x - centres[j]).abs();
            if d > 0.0 && best.map_or(true, |(bd, _)| d > bd) {
                best = Some((d, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Nudges equal neighbours of a sorted codebook apart.
fn make_distinct(c: &mut [f64]) {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 1..c.len() {
        if c[i] <= c[i - 1] {
            c[i] = c[i - 1] + scale * 1e-9;
        }
    }
}

fn fit_vector(points: &[f64], dim: usize, k: usize, rng: &mut Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centres = seed_plus_plus(points, dim, k, rng);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for i in 0..n {
            let p = &points[i * dim..(i + 1) * dim];
            let best = nearest(&centres, dim, p);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let a = assign[i];
            counts[a] += 1;
            for d in 0..dim {
                sums[a * dim + d] += points[i * dim + d];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for d in 0..dim {
                    centres[j * dim + d] = sums[j * dim + d] / counts[j] as f64;
                }
            } else {
                // move onto the worst-served point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a * dim..(a + 1) * dim], &centres[assign[a] * dim..(assign[a] + 1) * dim]);
                        let db = sq_dist(&points[b * dim..(b + 1) * dim], &centres[assign[b] * dim..(assign[b] + 1) * dim]);
                        da.total_cmp(&db)
                    })
                    .unwrap_or(0);
                centres[j * dim..(j + 1) * dim].copy_from_slice(&points[far * dim..(far + 1) * dim]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    centres
}

/// Index of the nearest codeword; ties go to the lowest index.
pub fn nearest(codewords: &[f64], dim: usize, p: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in codewords.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, p);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Nearest codeword in a sorted scalar codebook; ties go to the lowest index.
pub fn nearest_sorted(codewords: &[f64], x: f64) -> usize {
    let i = codewords.partition_point(|&c| c < x);
    if i == 0 {
        return 0;
    }
    if i == codewords.len() {
        return codewords.len() - 1;
    }
    let below = (x - codewords[i - 1]) * (x - codewords[i - 1]);
    let above = (codewords[i] - x) * (codewords[i] - x);
    if below <= above {
        i - 1
    } else {
        i
    }
}
