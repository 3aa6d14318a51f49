use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean-centering plus projection onto `k` orthonormal principal directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    pub mean: Vec<f64>,
    /// `k` rows of length `d`.
    pub components: Vec<Vec<f64>>,
}

impl ProjectionMatrix {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::input(format!(
                "projection expects dimension {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }

    /// Maps projected coordinates back into input space.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            for (o, &cj) in out.iter_mut().zip(c) {
                *o += zi * cj;
            }
        }
        out
    }
}

/// Relative eigenvalue threshold below which a direction counts as rank-deficient.
const RANK_TOL: f64 = 1e-10;

pub fn fit_pca(samples: &[Vec<f64>], k: usize) -> Result<ProjectionMatrix> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::input(format!("PCA needs at least 2 samples, got {n}")));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::input("PCA samples must share one non-zero dimension"));
    }
    if k == 0 {
        return Err(Error::input("PCA needs k >= 1"));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top.max(f64::MIN_POSITIVE))
        .count();
    // Isotropic data is full rank; a zero-variance dataset has rank 0.
    if k > rank || k > n.min(d) {
        return Err(Error::DegenerateRank {
            requested: k,
            attainable: rank.min(n.min(d)),
        });
    }

    let components = order[..k]
        .iter()
        .map(|&i| {
            let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= norm);
            let lead = c
                .iter()
                .enumerate()
                .fold(0, |best, (j, x)| if x.abs() > c[best].abs() { j } else { best });
            if c[lead] < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            c
        })
        .collect();
    Ok(ProjectionMatrix { mean, components })
}
