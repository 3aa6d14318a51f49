use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Token embedding and position tables.
    Embedding,
    /// RMSNorm gains.
    Norm,
    /// 2-D dense kernels inside blocks; the only tensors that receive weight decay.
    Projection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub norm1: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub norm2: Tensor<T>,
    /// `d_model × d_ff`
    pub up: Tensor<T>,
    /// `d_ff × d_model`
    pub down: Tensor<T>,
}

/// All weights. Dense kernels are stored `in × out` and applied as `x · W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub cfg: ModelConfig,
    /// `vocab × d_model`, shared with the output projection.
    pub tok_emb: Tensor<T>,
    /// One `max_context × d_model` table per modality.
    pub pos: Vec<Tensor<T>>,
    pub blocks: Vec<Block<T>>,
    pub final_norm: Tensor<T>,
}

impl<T: Real> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            cfg: cfg.clone(),
            tok_emb: Tensor::zeros(&[cfg.vocab_total, d]),
            pos: (0..cfg.n_modalities).map(|_| Tensor::zeros(&[cfg.max_context, d])).collect(),
            blocks: (0..cfg.n_layers)
                .map(|_| Block {
                    norm1: Tensor::zeros(&[d]),
                    wq: Tensor::zeros(&[d, d]),
                    wk: Tensor::zeros(&[d, d]),
                    wv: Tensor::zeros(&[d, d]),
                    wo: Tensor::zeros(&[d, d]),
                    norm2: Tensor::zeros(&[d]),
                    up: Tensor::zeros(&[d, cfg.d_ff()]),
                    down: Tensor::zeros(&[cfg.d_ff(), d]),
                })
                .collect(),
            final_norm: Tensor::zeros(&[d]),
        }
    }

    /// Tensor names and kinds, in the canonical order shared by [`Self::tensors`].
    pub fn names(&self) -> Vec<(String, ParamKind)> {
        let mut out = vec![("tok_emb".to_string(), ParamKind::Embedding)];
        for m in 0..self.pos.len() {
            out.push((format!("pos.{m}"), ParamKind::Embedding));
        }
        for i in 0..self.blocks.len() {
            out.push((format!("block{i}.norm1"), ParamKind::Norm));
            for w in ["wq", "wk", "wv", "wo"] {
                out.push((format!("block{i}.attn.{w}"), ParamKind::Projection));
            }
            out.push((format!("block{i}.norm2"), ParamKind::Norm));
            out.push((format!("block{i}.mlp.up"), ParamKind::Projection));
            out.push((format!("block{i}.mlp.down"), ParamKind::Projection));
        }
        out.push(("final_norm".to_string(), ParamKind::Norm));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.tok_emb];
        out.extend(self.pos.iter());
        for b in &self.blocks {
            out.extend([&b.norm1, &b.wq, &b.wk, &b.wv, &b.wo, &b.norm2, &b.up, &b.down]);
        }
        out.push(&self.final_norm);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.tok_emb];
        out.extend(self.pos.iter_mut());
        for b in &mut self.blocks {
            out.extend([
                &mut b.norm1,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.norm2,
                &mut b.up,
                &mut b.down,
            ]);
        }
        out.push(&mut self.final_norm);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let mut out = Params::<U>::zeros(&self.cfg);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    pub fn set_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_sq()).sum::<f64>().sqrt()
    }

    /// First tensor holding a non-finite value, as an error.
    pub fn check_finite(&self) -> Result<()> {
        for ((name, _), t) in self.names().into_iter().zip(self.tensors()) {
            if !t.all_finite() {
                return Err(Error::Numerical { tensor: name });
            }
        }
        Ok(())
    }
}

/// Normal(0, 0.02²) weights, residual output projections further scaled by
/// 1/√(2·n_layers), unit RMSNorm gains.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let mut rng = RngStream::new(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let residual_scale = 1.0 / (2.0 * cfg.n_layers as f64).sqrt();
    let mut p = Params::<T>::zeros(cfg);
    let names = p.names();
    for ((name, kind), t) in names.into_iter().zip(p.tensors_mut()) {
        match kind {
            ParamKind::Norm => t.data.iter_mut().for_each(|x| *x = T::one()),
            _ => {
                let scale = if name.ends_with("attn.wo") || name.ends_with("mlp.down") {
                    residual_scale
                } else {
                    1.0
                };
                for x in &mut t.data {
                    *x = T::of(normal.sample(&mut rng) * scale);
                }
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            max_context: 32,
            vocab_total: 1600,
            n_modalities: 3,
            mlp_ratio: 4,
        }
    }

    #[test]
    fn norm_gains_start_at_one() {
        let p: Params<f32> = init_params(&cfg(), 1).unwrap();
        assert!(p.final_norm.data.iter().all(|&g| g == 1.0));
        assert!(p.blocks.iter().all(|b| b.norm1.data.iter().chain(&b.norm2.data).all(|&g| g == 1.0)));
    }

    #[test]
    fn embedding_std_matches_init_scale() {
        let p: Params<f64> = init_params(&cfg(), 2).unwrap();
        assert!(p.tok_emb.len() >= 100_000);
        let n = p.tok_emb.len() as f64;
        let mean = p.tok_emb.data.iter().sum::<f64>() / n;
        let var = p.tok_emb.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.019..=0.021).contains(&sd), "std {sd}");
    }

    #[test]
    fn residual_projections_are_scaled_down() {
        let p: Params<f64> = init_params(&cfg(), 3).unwrap();
        let sd = |t: &Tensor<f64>| (t.sum_sq() / t.len() as f64).sqrt();
        let ratio = sd(&p.blocks[0].wo) / sd(&p.blocks[0].wq);
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a: Params<f32> = init_params(&cfg(), 9).unwrap();
        let b: Params<f32> = init_params(&cfg(), 9).unwrap();
        assert_eq!(a, b);
        let c: Params<f32> = init_params(&cfg(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn names_and_tensors_line_up() {
        let p: Params<f32> = Params::zeros(&cfg());
        assert_eq!(p.names().len(), p.tensors().len());
        assert_eq!(p.names()[4].0, "block0.norm1");
        assert_eq!(p.names()[5].0, "block0.attn.wq");
        assert!(p.names().iter().all(|(n, k)| (*k == ParamKind::Projection) == (n.contains("attn.") || n.contains("mlp."))));
    }
}
