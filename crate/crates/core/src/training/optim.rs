use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamKind, Params};
use crate::tensor::Real;

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub t: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &Params<T>) -> Self {
        Self {
            m: Params::zeros(&params.cfg),
            v: Params::zeros(&params.cfg),
            t: 0,
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grads<T: Real>(grads: &mut Params<T>, max_norm: f64) -> Result<f64> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::Numerical {
            tensor: "gradient norm".into(),
        });
    }
    if norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
    Ok(norm)
}

/// One bias-corrected Adam update with decoupled weight decay on projection kernels.
pub fn adamw_step<T: Real>(
    params: &mut Params<T>,
    grads: &Params<T>,
    st: &mut OptimizerState<T>,
    lr: f64,
    hp: &AdamW,
) -> Result<()> {
    if params.cfg != grads.cfg || params.cfg != st.m.cfg {
        return Err(Error::input("optimizer shapes do not match parameters"));
    }
    st.t = st.t.checked_add(1).ok_or_else(|| Error::input("optimizer step counter overflow"))?;
    let t = st.t as f64;
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - hp.beta1), T::of(1.0 - hp.beta2));
    let c1 = T::of(1.0 - hp.beta1.powf(t));
    let c2 = T::of(1.0 - hp.beta2.powf(t));
    let (lr_t, eps) = (T::of(lr), T::of(hp.eps));
    let kinds = params.names();
    let iter = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(st.m.tensors_mut())
        .zip(st.v.tensors_mut())
        .zip(kinds);
    for ((((p, g), m), v), (_, kind)) in iter {
        let decay = if kind == ParamKind::Projection {
            T::of(lr * hp.weight_decay)
        } else {
            T::zero()
        };
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + one_b1 * gi;
            v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            let theta = p.data[i];
            p.data[i] = theta - decay * theta - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::rng::RngStream;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 4,
            max_context: 3,
            vocab_total: 5,
            n_modalities: 1,
            mlp_ratio: 2,
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Params::<f64>::zeros(&cfg());
        let mut g = Params::<f64>::zeros(&cfg());
        g.tok_emb.data[0] = 1.0;
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut st, 1e-3, &AdamW::default()).unwrap();
        assert!((st.m.tok_emb.data[0] - 0.1).abs() < 1e-15);
        assert!((st.v.tok_emb.data[0] - 0.05).abs() < 1e-15);
        assert!((p.tok_emb.data[0] + 1e-3).abs() < 1e-10);
        assert_eq!(p.tok_emb.data[1], 0.0);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let p0: Params<f32> = init_params(&cfg(), 1).unwrap();
        let mut p = p0.clone();
        let g = Params::<f32>::zeros(&cfg());
        let mut st = OptimizerState::new(&p);
        let hp = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        adamw_step(&mut p, &g, &mut st, 6e-4, &hp).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn decay_touches_only_projections() {
        let p0: Params<f64> = init_params(&cfg(), 2).unwrap();
        let mut p = p0.clone();
        let g = Params::<f64>::zeros(&cfg());
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut st, 0.5, &AdamW::default()).unwrap();
        assert_eq!(p.tok_emb, p0.tok_emb);
        assert_eq!(p.pos, p0.pos);
        assert_eq!(p.final_norm, p0.final_norm);
        for (a, b) in p.blocks[0].wq.data.iter().zip(&p0.blocks[0].wq.data) {
            assert!((a - b * 0.95).abs() < 1e-15);
        }
    }

    #[test]
    fn clipping_halves_or_keeps() {
        let mut g = Params::<f64>::zeros(&cfg());
        g.tok_emb.data[0] = 2.0;
        assert_eq!(clip_grads(&mut g, 1.0).unwrap(), 2.0);
        assert_eq!(g.tok_emb.data[0], 1.0);
        g.tok_emb.data[0] = 0.5;
        clip_grads(&mut g, 1.0).unwrap();
        assert_eq!(g.tok_emb.data[0], 0.5);
        g.tok_emb.data[1] = f64::NAN;
        assert!(matches!(clip_grads(&mut g, 1.0), Err(Error::Numerical { .. })));
    }

    #[test]
    fn clipped_norm_is_min_of_norm_and_cap() {
        let mut rng = RngStream::new(3);
        for _ in 0..50 {
            let mut g = Params::<f64>::zeros(&cfg());
            let s = rng.uniform() * 3.0;
            for t in g.tensors_mut() {
                t.data.iter_mut().for_each(|x| *x = (rng.uniform() - 0.5) * s);
            }
            let before = g.global_norm();
            clip_grads(&mut g, 1.0).unwrap();
            assert!((g.global_norm() - before.min(1.0)).abs() < 1e-9);
        }
    }
}
