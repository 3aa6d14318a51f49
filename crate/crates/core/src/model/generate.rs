use super::forward::{check_inputs, embed, rms_norm};
use super::params::Params;
use crate::assembly::{AssembledSequence, TokenLayout};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{gelu, gemm, MatMut, MatRef, Real};
use crate::tokenization::TokenId;

/// Incremental decoder with a per-layer key/value cache.
pub struct Decoder<'a, T> {
    p: &'a Params<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

fn vec_mat<T: Real>(x: &[T], w: &[T], rows: usize, cols: usize, out: &mut [T], beta: T) {
    gemm(T::one(), MatRef::new(x, 1, rows), MatRef::new(w, rows, cols), beta, MatMut::new(out, 1, cols));
}

impl<'a, T: Real> Decoder<'a, T> {
    pub fn new(p: &'a Params<T>) -> Self {
        Self {
            p,
            keys: vec![Vec::new(); p.cfg.n_layers],
            values: vec![Vec::new(); p.cfg.n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds one token and returns the next-token logits.
    pub fn step(&mut self, token: TokenId, modality: u32, pos: u32) -> Result<Vec<T>> {
        let cfg = &self.p.cfg;
        if self.len >= cfg.max_context {
            return Err(Error::Length {
                len: self.len + 1,
                limit: cfg.max_context,
            });
        }
        let probe = AssembledSequence {
            token_ids: vec![token],
            modality_ids: vec![modality],
            pos_ids: vec![pos],
            loss_mask: vec![false],
        };
        check_inputs(self.p, &probe)?;
        let (d, dh, dff) = (cfg.d_model, cfg.d_head(), cfg.d_ff());
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let n = self.len + 1;

        let mut x = vec![T::zero(); d];
        embed(self.p, token, modality, pos, &mut x);
        let mut h = vec![T::zero(); d];
        let mut q = vec![T::zero(); d];
        let mut o = vec![T::zero(); d];
        let mut u = vec![T::zero(); dff];
        let mut scores = vec![T::zero(); n];
        for (li, blk) in self.p.blocks.iter().enumerate() {
            rms_norm(&x, &blk.norm1.data, &mut h);
            vec_mat(&h, &blk.wq.data, d, d, &mut q, T::zero());
            let (keys, values) = (&mut self.keys[li], &mut self.values[li]);
            let start = keys.len();
            keys.resize(start + d, T::zero());
            values.resize(start + d, T::zero());
            vec_mat(&h, &blk.wk.data, d, d, &mut keys[start..], T::zero());
            vec_mat(&h, &blk.wv.data, d, d, &mut values[start..], T::zero());
            for head in 0..cfg.n_heads {
                let cols = head * dh..(head + 1) * dh;
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &keys[j * d + cols.start..j * d + cols.end];
                    *s = q[cols.clone()].iter().zip(kj).fold(T::zero(), |a, (&x, &y)| a + x * y) * scale;
                }
                let m = scores.iter().fold(T::neg_infinity(), |a, &s| a.max(s));
                let mut sum = T::zero();
                for s in &mut scores {
                    *s = (*s - m).exp();
                    sum += *s;
                }
                let oh = &mut o[cols.clone()];
                oh.iter_mut().for_each(|v| *v = T::zero());
                for (j, &s) in scores.iter().enumerate() {
                    let w = s / sum;
                    for (ov, &vv) in oh.iter_mut().zip(&values[j * d + cols.start..j * d + cols.end]) {
                        *ov += w * vv;
                    }
                }
            }
            vec_mat(&o, &blk.wo.data, d, d, &mut x, T::one());
            rms_norm(&x, &blk.norm2.data, &mut h);
            vec_mat(&h, &blk.up.data, d, dff, &mut u, T::zero());
            u.iter_mut().for_each(|z| *z = gelu(*z));
            vec_mat(&u, &blk.down.data, dff, d, &mut x, T::one());
        }
        rms_norm(&x, &self.p.final_norm.data, &mut h);
        let mut logits = vec![T::zero(); cfg.vocab_total];
        gemm(
            T::one(),
            MatRef::new(&h, 1, d),
            self.p.tok_emb.view().t(),
            T::zero(),
            MatMut::new(&mut logits, 1, cfg.vocab_total),
        );
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numerical { tensor: "logits".into() });
        }
        self.len = n;
        Ok(logits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    /// `<= 0` selects greedy decoding (lowest id wins ties).
    pub temperature: f64,
    /// `0` disables top-k filtering.
    pub top_k: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generated {
    /// Local (per-modality) content ids; may be empty.
    pub tokens: Vec<TokenId>,
    /// False when the length cap forced the closing EOS.
    pub closed_by_eos: bool,
}

/// Picks an id from `candidates` (ascending) given their logits.
fn sample_restricted<T: Real>(logits: &[T], candidates: &[usize], cfg: SamplingConfig, rng: &mut RngStream) -> usize {
    if cfg.temperature <= 0.0 {
        let mut best = candidates[0];
        for &c in &candidates[1..] {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        return best;
    }
    let mut scored: Vec<(usize, f64)> = candidates.iter().map(|&c| (c, logits[c].as_f64() / cfg.temperature)).collect();
    if cfg.top_k > 0 && cfg.top_k < scored.len() {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(cfg.top_k);
        scored.sort_by_key(|s| s.0);
    }
    let m = scored.iter().fold(f64::NEG_INFINITY, |a, s| a.max(s.1));
    let weights: Vec<f64> = scored.iter().map(|s| (s.1 - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (s, w) in scored.iter().zip(&weights) {
        if u < *w {
            return s.0;
        }
        u -= w;
    }
    scored.last().expect("non-empty candidates").0
}

/// Appends `BOS_target` to `prefix` and decodes target-modality content until
/// `EOS_target` or `max_len` tokens.
pub fn generate<T: Real>(
    p: &Params<T>,
    layout: &TokenLayout,
    prefix: &AssembledSequence,
    target: usize,
    max_len: usize,
    sampling: SamplingConfig,
    rng: &mut RngStream,
) -> Result<Generated> {
    if prefix.is_empty() {
        return Err(Error::input("generation prefix is empty"));
    }
    if target >= layout.n_modalities() {
        return Err(Error::input(format!("target modality {target} out of range")));
    }
    let last = *prefix.token_ids.last().expect("non-empty");
    if last != layout.eos(prefix.modality_ids[prefix.len() - 1] as usize) {
        return Err(Error::input("generation prefix must end with an EOS token"));
    }
    if prefix.len() + max_len > p.cfg.max_context {
        return Err(Error::Length {
            len: prefix.len() + max_len,
            limit: p.cfg.max_context,
        });
    }
    let eos = layout.eos(target) as usize;
    let offset = layout.offset(target);
    let mut candidates: Vec<usize> = layout.content_range(target).collect();
    candidates.push(eos);
    candidates.sort_unstable();

    let mut dec = Decoder::new(p);
    for i in 0..prefix.len() {
        dec.step(prefix.token_ids[i], prefix.modality_ids[i], prefix.pos_ids[i])?;
    }
    let mut logits = dec.step(layout.bos(target), target as u32, 0)?;
    let mut tokens = Vec::new();
    loop {
        let next = sample_restricted(&logits, &candidates, sampling, rng);
        if next == eos {
            return Ok(Generated {
                tokens,
                closed_by_eos: true,
            });
        }
        tokens.push((next - offset) as TokenId);
        if tokens.len() == max_len {
            return Ok(Generated {
                tokens,
                closed_by_eos: false,
            });
        }
        logits = dec.step(next as TokenId, target as u32, tokens.len() as u32)?;
    }
}
