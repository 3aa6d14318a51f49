use super::params::Params;
use super::worker_threads;
use crate::assembly::{AssembledSequence, PaddedBatch};
use crate::error::{Error, Result};
use crate::tensor::{gelu, gemm, log_sum_exp, MatMut, MatRef, Real};

pub const RMS_EPS: f64 = 1e-5;

/// `y = x / √(mean(x²) + ε) ⊙ gain`, row-wise. Returns the per-row inverse RMS.
pub fn rms_norm<T: Real>(x: &[T], gain: &[T], y: &mut [T]) -> Vec<T> {
    let d = gain.len();
    let eps = T::of(RMS_EPS);
    x.chunks_exact(d)
        .zip(y.chunks_exact_mut(d))
        .map(|(xr, yr)| {
            let ms = xr.iter().map(|&v| v * v).sum::<T>() / T::of(d as f64);
            let r = T::one() / (ms + eps).sqrt();
            for ((yo, &xi), &g) in yr.iter_mut().zip(xr).zip(gain) {
                *yo = xi * r * g;
            }
            r
        })
        .collect()
}

pub(crate) struct LayerCache<T> {
    pub x_in: Vec<T>,
    pub r1: Vec<T>,
    pub h1: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `n_heads × len × len` attention probabilities (upper triangle zero).
    pub att: Vec<T>,
    pub o: Vec<T>,
    pub x_mid: Vec<T>,
    pub r2: Vec<T>,
    pub h2: Vec<T>,
    pub u: Vec<T>,
    pub a: Vec<T>,
}

/// Activations of one sequence, kept for the backward pass.
pub struct SeqCache<T> {
    pub len: usize,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub(crate) x_final: Vec<T>,
    pub(crate) rf: Vec<T>,
    /// `len × d_model`, after the final norm.
    pub final_hidden: Vec<T>,
    /// `len × vocab`.
    pub logits: Vec<T>,
}

pub(crate) fn check_inputs<T: Real>(p: &Params<T>, seq: &AssembledSequence) -> Result<()> {
    let cfg = &p.cfg;
    let n = seq.len();
    if seq.modality_ids.len() != n || seq.pos_ids.len() != n || seq.loss_mask.len() != n {
        return Err(Error::input("sequence fields have unequal lengths"));
    }
    if n > cfg.max_context {
        return Err(Error::Length {
            len: n,
            limit: cfg.max_context,
        });
    }
    for i in 0..n {
        let (t, m, pos) = (seq.token_ids[i] as usize, seq.modality_ids[i] as usize, seq.pos_ids[i] as usize);
        if t >= cfg.vocab_total {
            return Err(Error::input(format!("token id {t} at {i} >= vocabulary {}", cfg.vocab_total)));
        }
        // Modality id == n_modalities is the reserved padding id and carries no position embedding.
        if m > cfg.n_modalities {
            return Err(Error::input(format!("modality id {m} at {i} out of range")));
        }
        if m < cfg.n_modalities && pos >= cfg.max_context {
            return Err(Error::input(format!("position id {pos} at {i} >= context {}", cfg.max_context)));
        }
    }
    Ok(())
}

pub(crate) fn embed<T: Real>(p: &Params<T>, token: u32, modality: u32, pos: u32, out: &mut [T]) {
    out.copy_from_slice(p.tok_emb.row(token as usize));
    if (modality as usize) < p.pos.len() {
        for (o, &e) in out.iter_mut().zip(p.pos[modality as usize].row(pos as usize)) {
            *o += e;
        }
    }
}

/// Full forward pass over one sequence.
pub fn forward_seq<T: Real>(p: &Params<T>, seq: &AssembledSequence) -> Result<SeqCache<T>> {
    check_inputs(p, seq)?;
    let cfg = &p.cfg;
    let (n, d, dh, h, dff, vocab) = (seq.len(), cfg.d_model, cfg.d_head(), cfg.n_heads, cfg.d_ff(), cfg.vocab_total);
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let mut x = vec![T::zero(); n * d];
    for i in 0..n {
        embed(p, seq.token_ids[i], seq.modality_ids[i], seq.pos_ids[i], &mut x[i * d..(i + 1) * d]);
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for blk in &p.blocks {
        let x_in = x.clone();
        let mut h1 = vec![T::zero(); n * d];
        let r1 = rms_norm(&x_in, &blk.norm1.data, &mut h1);
        let proj = |w: &[T]| {
            let mut out = vec![T::zero(); n * d];
            gemm(T::one(), MatRef::new(&h1, n, d), MatRef::new(w, d, d), T::zero(), MatMut::new(&mut out, n, d));
            out
        };
        let (q, k, v) = (proj(&blk.wq.data), proj(&blk.wk.data), proj(&blk.wv.data));

        let mut att = vec![T::zero(); h * n * n];
        let mut o = vec![T::zero(); n * d];
        for head in 0..h {
            let a = &mut att[head * n * n..(head + 1) * n * n];
            gemm(
                scale,
                MatRef::cols_of(&q, n, d, head * dh, dh),
                MatRef::cols_of(&k, n, d, head * dh, dh).t(),
                T::zero(),
                MatMut::new(a, n, n),
            );
            for i in 0..n {
                let row = &mut a[i * n..(i + 1) * n];
                let m = row[..=i].iter().fold(T::neg_infinity(), |acc, &s| acc.max(s));
                let mut sum = T::zero();
                for s in &mut row[..=i] {
                    *s = (*s - m).exp();
                    sum += *s;
                }
                for s in &mut row[..=i] {
                    *s /= sum;
                }
                row[i + 1..].iter_mut().for_each(|s| *s = T::zero());
            }
            gemm(
                T::one(),
                MatRef::new(a, n, n),
                MatRef::cols_of(&v, n, d, head * dh, dh),
                T::zero(),
                MatMut::cols_of(&mut o, n, d, head * dh, dh),
            );
        }
        gemm(T::one(), MatRef::new(&o, n, d), blk.wo.view(), T::one(), MatMut::new(&mut x, n, d));

        let x_mid = x.clone();
        let mut h2 = vec![T::zero(); n * d];
        let r2 = rms_norm(&x_mid, &blk.norm2.data, &mut h2);
        let mut u = vec![T::zero(); n * dff];
        gemm(T::one(), MatRef::new(&h2, n, d), blk.up.view(), T::zero(), MatMut::new(&mut u, n, dff));
        let a: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
        gemm(T::one(), MatRef::new(&a, n, dff), blk.down.view(), T::one(), MatMut::new(&mut x, n, d));

        layers.push(LayerCache {
            x_in,
            r1,
            h1,
            q,
            k,
            v,
            att,
            o,
            x_mid,
            r2,
            h2,
            u,
            a,
        });
    }

    let mut final_hidden = vec![T::zero(); n * d];
    let rf = rms_norm(&x, &p.final_norm.data, &mut final_hidden);
    let mut logits = vec![T::zero(); n * vocab];
    gemm(
        T::one(),
        MatRef::new(&final_hidden, n, d),
        p.tok_emb.view().t(),
        T::zero(),
        MatMut::new(&mut logits, n, vocab),
    );
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical { tensor: "logits".into() });
    }
    Ok(SeqCache {
        len: n,
        layers,
        x_final: x,
        rf,
        final_hidden,
        logits,
    })
}

/// Per-position NLL of each loss target, `(position, nll)` where `position`
/// is the predicting position (target index minus one).
pub fn sequence_nll<T: Real>(logits: &[T], vocab: usize, seq: &AssembledSequence) -> Vec<(usize, f64)> {
    (0..seq.len().saturating_sub(1))
        .filter(|&l| seq.loss_mask[l + 1])
        .map(|l| {
            let row = &logits[l * vocab..(l + 1) * vocab];
            let target = seq.token_ids[l + 1] as usize;
            (l, (log_sum_exp(row) - row[target]).as_f64())
        })
        .collect()
}

/// Logits and final hidden states of a padded batch.
pub struct ForwardOutput<T> {
    pub batch: usize,
    pub len: usize,
    pub vocab: usize,
    pub d_model: usize,
    /// `batch × len × vocab`
    pub logits: Vec<T>,
    /// `batch × len × d_model`
    pub final_hidden: Vec<T>,
}

impl<T: Real> ForwardOutput<T> {
    pub fn logits_at(&self, b: usize, l: usize) -> &[T] {
        let o = (b * self.len + l) * self.vocab;
        &self.logits[o..o + self.vocab]
    }

    pub fn hidden_at(&self, b: usize, l: usize) -> &[T] {
        let o = (b * self.len + l) * self.d_model;
        &self.final_hidden[o..o + self.d_model]
    }
}

pub(crate) fn map_rows<T: Real, R: Send>(
    rows: &[AssembledSequence],
    f: impl Fn(&AssembledSequence) -> R + Sync,
) -> Vec<R> {
    let threads = worker_threads().min(rows.len()).max(1);
    if threads == 1 {
        return rows.iter().map(f).collect();
    }
    let chunk = rows.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = rows
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Forward over every row of the batch, padding included. Causal attention
/// keeps trailing padding from influencing real positions.
pub fn forward<T: Real>(p: &Params<T>, batch: &PaddedBatch) -> Result<ForwardOutput<T>> {
    let rows: Vec<AssembledSequence> = (0..batch.batch).map(|b| batch.row(b)).collect();
    let caches = map_rows::<T, _>(&rows, |r| forward_seq(p, r));
    let mut out = ForwardOutput {
        batch: batch.batch,
        len: batch.len,
        vocab: p.cfg.vocab_total,
        d_model: p.cfg.d_model,
        logits: Vec::with_capacity(batch.batch * batch.len * p.cfg.vocab_total),
        final_hidden: Vec::with_capacity(batch.batch * batch.len * p.cfg.d_model),
    };
    for c in caches {
        let c = c?;
        out.logits.extend_from_slice(&c.logits);
        out.final_hidden.extend_from_slice(&c.final_hidden);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub mean: f64,
    pub count: usize,
    /// `batch × len`; NLL at the predicting position, 0 where nothing contributes.
    pub per_position: Vec<f64>,
}

/// Mean next-token NLL over positions whose target carries a loss-mask bit.
pub fn nll_loss<T: Real>(out: &ForwardOutput<T>, batch: &PaddedBatch) -> Result<LossReport> {
    let mut per_position = vec![0.0; batch.batch * batch.len];
    let mut total = 0.0;
    let mut count = 0;
    for b in 0..batch.batch {
        let row = batch.row(b);
        let logits = &out.logits[b * batch.len * out.vocab..(b + 1) * batch.len * out.vocab];
        for (l, nll) in sequence_nll(logits, out.vocab, &row) {
            per_position[b * batch.len + l] = nll;
            total += nll;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateBatch);
    }
    Ok(LossReport {
        mean: total / count as f64,
        count,
        per_position,
    })
}

/// Mean of the final hidden states over non-padding positions.
pub fn extract_features<T: Real>(p: &Params<T>, seq: &AssembledSequence) -> Result<Vec<f64>> {
    let pad_mod = p.cfg.n_modalities as u32;
    let real: Vec<usize> = (0..seq.len()).filter(|&i| seq.modality_ids[i] != pad_mod).collect();
    if real.is_empty() {
        return Err(Error::input("cannot extract features from an all-padding sequence"));
    }
    let d = p.cfg.d_model;
    let cache = forward_seq(p, seq)?;
    let mut feat = vec![0.0; d];
    for &i in &real {
        for (f, h) in feat.iter_mut().zip(&cache.final_hidden[i * d..(i + 1) * d]) {
            *f += h.as_f64();
        }
    }
    feat.iter_mut().for_each(|f| *f /= real.len() as f64);
    Ok(feat)
}
