use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

const PROBE_STREAM: u64 = 0x7072_6f00;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub n_per_class: usize,
    pub trials: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Z-score features with statistics of the sampled training set.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_per_class: 20,
            trials: 3,
            epochs: 100,
            lr: 0.1,
            momentum: 0.9,
            batch_size: 16,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.trials == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::input("probe counts must all be >= 1"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input("probe needs lr > 0 and momentum in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Mean test accuracy over trials.
    pub accuracy: f64,
    pub trial_accuracies: Vec<f64>,
    pub n_train_per_class: usize,
    pub seed: u64,
}

/// Multinomial logistic regression on (optionally standardized) features.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub n_classes: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `n_classes × dim`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProbeModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn scores(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * d..(c + 1) * d];
            *o = self.bias[c]
                + w.iter()
                    .zip(x)
                    .zip(self.mean.iter().zip(&self.scale))
                    .map(|((w, x), (m, s))| w * (x - m) / s)
                    .sum::<f64>();
        }
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut s = vec![0.0; self.n_classes];
        self.scores(x, &mut s);
        let mut best = 0;
        for c in 1..s.len() {
            if s[c] > s[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let hits = xs.iter().zip(ys).filter(|(x, &y)| self.predict(x) == y).count();
        hits as f64 / xs.len() as f64
    }
}

/// SGD with Nesterov momentum on the softmax cross-entropy, learning rate
/// annealed by a cosine from `cfg.lr` to zero, no weight decay.
pub fn train_probe(xs: &[Vec<f64>], ys: &[usize], n_classes: usize, cfg: &ProbeConfig, rng: &mut RngStream) -> Result<ProbeModel> {
    cfg.validate()?;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::input("probe needs equally many features and labels"));
    }
    let d = xs[0].len();
    if d == 0 || xs.iter().any(|x| x.len() != d) {
        return Err(Error::input("probe features must share one non-zero dimension"));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= n_classes) {
        return Err(Error::input(format!("label {y} >= {n_classes} classes")));
    }
    let n = xs.len() as f64;
    let (mean, scale) = if cfg.standardize {
        let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let mut model = ProbeModel {
        n_classes,
        mean,
        scale,
        weights: vec![0.0; n_classes * d],
        bias: vec![0.0; n_classes],
    };
    let per_epoch = xs.len().div_ceil(cfg.batch_size);
    let total = (cfg.epochs * per_epoch) as f64;
    let mut vel_w = vec![0.0; n_classes * d];
    let mut vel_b = vec![0.0; n_classes];
    let mut grad_w = vec![0.0; n_classes * d];
    let mut grad_b = vec![0.0; n_classes];
    let mut probs = vec![0.0; n_classes];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                model.scores(&xs[i], &mut probs);
                let m = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                probs.iter_mut().for_each(|p| *p = (*p - m).exp());
                let z: f64 = probs.iter().sum();
                for c in 0..n_classes {
                    let g = probs[c] / z - if c == ys[i] { 1.0 } else { 0.0 };
                    grad_b[c] += g;
                    for j in 0..d {
                        grad_w[c * d + j] += g * (xs[i][j] - model.mean[j]) / model.scale[j];
                    }
                }
            }
            let lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total).cos());
            let inv = 1.0 / batch.len() as f64;
            let mu = cfg.momentum;
            for ((w, v), g) in model.weights.iter_mut().zip(&mut vel_w).zip(&grad_w) {
                let g = g * inv;
                *v = mu * *v + g;
                *w -= lr * (g + mu * *v);
            }
            for ((b, v), g) in model.bias.iter_mut().zip(&mut vel_b).zip(&grad_b) {
                let g = g * inv;
                *v = mu * *v + g;
                *b -= lr * (g + mu * *v);
            }
            step += 1;
        }
    }
    Ok(model)
}

/// Trains `cfg.trials` probes, each on `cfg.n_per_class` examples per class
/// drawn afresh from the pool, and reports mean test accuracy.
pub fn linear_probe(
    pool_x: &[Vec<f64>],
    pool_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    cfg.validate()?;
    if test_x.is_empty() || test_x.len() != test_y.len() || pool_x.len() != pool_y.len() {
        return Err(Error::input("probe needs non-empty, label-aligned data"));
    }
    let n_classes = pool_y.iter().chain(test_y).max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in pool_y.iter().enumerate() {
        by_class[y].push(i);
    }
    let short: Vec<String> = by_class
        .iter()
        .enumerate()
        .filter(|(_, idx)| idx.len() < cfg.n_per_class)
        .map(|(c, idx)| format!("class {c} has {} of {} training examples", idx.len(), cfg.n_per_class))
        .collect();
    if !short.is_empty() {
        return Err(Error::Allocation(short.join("; ")));
    }
    let mut accs = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let mut rng = RngStream::derive(seed, &[PROBE_STREAM, trial as u64]);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (c, idx) in by_class.iter().enumerate() {
            let mut idx = idx.clone();
            rng.shuffle(&mut idx);
            for &i in &idx[..cfg.n_per_class] {
                xs.push(pool_x[i].clone());
                ys.push(c);
            }
        }
        let model = train_probe(&xs, &ys, n_classes, cfg, &mut rng)?;
        accs.push(model.accuracy(test_x, test_y));
    }
    Ok(ProbeResult {
        accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        trial_accuracies: accs,
        n_train_per_class: cfg.n_per_class,
        seed,
    })
}
