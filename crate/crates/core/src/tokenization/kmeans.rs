use serde::{Deserialize, Serialize};

use super::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITERS: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// `k` centroids of dimension `d`.
    pub centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let d = centroids.first().map(Vec::len).unwrap_or(0);
        if centroids.is_empty() || d == 0 {
            return Err(Error::input("codebook needs k >= 1 centroids of non-zero dimension"));
        }
        if centroids.iter().any(|c| c.len() != d || c.iter().any(|x| !x.is_finite())) {
            return Err(Error::input("codebook centroids must be finite and share a dimension"));
        }
        Ok(Self { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn fit_kmeans(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<Codebook> {
    fit_kmeans_traced(vectors, k, seed).map(|(cb, _)| cb)
}

/// k-means++ seeding followed by Lloyd iterations. Also returns the
/// objective (sum of squared distances) after each assignment step.
pub fn fit_kmeans_traced(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<(Codebook, Vec<f64>)> {
    let n = vectors.len();
    if k == 0 || n < k {
        return Err(Error::input(format!("k-means needs n >= k >= 1, got n={n}, k={k}")));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::input("k-means vectors must be finite and share a non-zero dimension"));
    }
    let mut rng = RngStream::new(seed);
    let mut centroids = plus_plus_init(vectors, k, &mut rng);

    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0f64; n];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let cb = Codebook { centroids };
        for (i, v) in vectors.iter().enumerate() {
            let (c, dd) = cb.nearest(v);
            assign[i] = c;
            dist[i] = dd;
        }
        centroids = cb.centroids;
        repair_empty(&mut assign, &mut dist, k, vectors, &mut centroids);
        history.push(dist.iter().sum());

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (v, &c) in vectors.iter().zip(&assign) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    Ok((Codebook { centroids }, history))
}

fn plus_plus_init(vectors: &[Vec<f64>], k: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.below(n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            // All points coincide with chosen centroids.
            rng.below(n)
        };
        let c = vectors[pick].clone();
        for (dd, v) in d2.iter_mut().zip(vectors) {
            *dd = dd.min(sq_dist(v, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Moves the farthest point of the largest cluster into each empty cluster.
fn repair_empty(assign: &mut [usize], dist: &mut [f64], k: usize, vectors: &[Vec<f64>], centroids: &mut [Vec<f64>]) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in assign.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
        if counts[largest] < 2 {
            return;
        }
        let far = (0..assign.len())
            .filter(|&i| assign[i] == largest)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("largest cluster is non-empty");
        centroids[empty] = vectors[far].clone();
        assign[far] = empty;
        dist[far] = 0.0;
    }
}

pub fn quantize(vectors: &[Vec<f64>], codebook: &Codebook, modality: usize) -> Result<TokenSeq> {
    if let Some(v) = vectors.iter().find(|v| v.len() != codebook.dim()) {
        return Err(Error::input(format!(
            "vector of dimension {} does not match codebook dimension {}",
            v.len(),
            codebook.dim()
        )));
    }
    let tokens = vectors.iter().map(|v| codebook.nearest(v).0 as TokenId).collect();
    TokenSeq::new(modality, tokens)
}
