//! Lloyd's k-means with k-means++ seeding over 32-bit rows.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sqdist;

pub(crate) struct Clustering {
    pub centroids: Vec<f32>,
    pub assignment: Vec<u32>,
}

fn nearest(row: &[f32], centroids: &[f32], dim: usize) -> (u32, f32) {
    let mut best = (0u32, f32::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sqdist(row, centroid);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

fn assign(data: &[f32], centroids: &[f32], dim: usize) -> Vec<(u32, f32)> {
    data.par_chunks_exact(dim)
        .map(|row| nearest(row, centroids, dim))
        .collect()
}

fn seed_plus_plus(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f32> = data
        .par_chunks_exact(dim)
        .map(|r| sqdist(r, row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(d2.iter().map(|&d| f64::from(d))) {
            Ok(w) => w.sample(rng),
            // every remaining row coincides with a centroid
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        let c = row(next);
        d2.par_iter_mut()
            .zip(data.par_chunks_exact(dim))
            .for_each(|(d, r)| *d = d.min(sqdist(r, c)));
    }
    chosen
        .iter()
        .flat_map(|&i| row(i).iter().copied())
        .collect()
}

fn update(data: &[f32], dim: usize, k: usize, assignment: &[(u32, f32)], centroids: &mut [f32]) {
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (row, &(c, _)) in data.chunks_exact(dim).zip(assignment) {
        let c = c as usize;
        counts[c] += 1;
        for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
            *s += f64::from(x);
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        for d in 0..dim {
            centroids[c * dim + d] = (sums[c * dim + d] / counts[c] as f64) as f32;
        }
    }
}

/// Clusters `data` (row-major, `dim` wide) into `k` groups. Deterministic for
/// a given seed. Clusters left empty are re-seeded at the entry farthest from
/// its centroid, then all entries are reassigned.
pub(crate) fn kmeans(data: &[f32], dim: usize, k: usize, seed: u64, iters: usize) -> Clustering {
    let n = data.len() / dim;
    debug_assert!(k >= 1 && k <= n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(data, dim, k, &mut rng);
    let mut assignment = assign(data, &centroids, dim);
    for _ in 0..iters {
        update(data, dim, k, &assignment, &mut centroids);
        assignment = assign(data, &centroids, dim);
    }
    // repair empty partitions; bounded because each pass fills at least one
    for _ in 0..k {
        let mut counts = vec![0usize; k];
        for &(c, _) in &assignment {
            counts[c as usize] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let farthest = assignment
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| counts[*c as usize] > 1)
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        let Some(i) = farthest else { break };
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
        assignment = assign(data, &centroids, dim);
    }
    Clustering {
        centroids,
        assignment: assignment.into_iter().map(|(c, _)| c).collect(),
    }
}
