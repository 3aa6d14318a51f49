use super::forward::{check_inputs, forward_seq, map_rows, sequence_nll, SeqCache};
use super::params::Params;
use crate::assembly::AssembledSequence;
use crate::error::{Error, Result};
use crate::tensor::{gelu_grad, gemm, log_sum_exp, MatMut, MatRef, Real};

/// Gradients share the parameter layout.
pub type Gradients<T> = Params<T>;

/// Backward through one RMSNorm; accumulates into `dgain` and returns `dx`.
fn rms_norm_backward<T: Real>(dy: &[T], x: &[T], r: &[T], gain: &[T], dgain: &mut [T]) -> Vec<T> {
    let d = gain.len();
    let inv_d = T::of(1.0 / d as f64);
    let mut dx = vec![T::zero(); x.len()];
    for (row, &ri) in r.iter().enumerate() {
        let span = row * d..(row + 1) * d;
        let (dyr, xr, dxr) = (&dy[span.clone()], &x[span.clone()], &mut dx[span]);
        let mut s = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xr[j] * ri;
            s += gain[j] * dyr[j] * xr[j];
        }
        let c = ri * ri * ri * s * inv_d;
        for j in 0..d {
            dxr[j] = ri * gain[j] * dyr[j] - c * xr[j];
        }
    }
    dx
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Accumulates `scale · ∂(Σ NLL over targets)/∂θ` for one sequence into `grads`.
/// Returns the summed (unscaled) NLL and target count.
pub fn backward_seq<T: Real>(
    p: &Params<T>,
    seq: &AssembledSequence,
    cache: &SeqCache<T>,
    scale: T,
    grads: &mut Gradients<T>,
) -> (f64, usize) {
    let cfg = &p.cfg;
    let (n, d, dh, h, dff, vocab) = (cache.len, cfg.d_model, cfg.d_head(), cfg.n_heads, cfg.d_ff(), cfg.vocab_total);
    let att_scale = T::of(1.0 / (dh as f64).sqrt());

    let mut dlogits = vec![T::zero(); n * vocab];
    let mut total = 0.0;
    let mut count = 0;
    for (l, nll) in sequence_nll(&cache.logits, vocab, seq) {
        total += nll;
        count += 1;
        let row = &cache.logits[l * vocab..(l + 1) * vocab];
        let lse = log_sum_exp(row);
        let drow = &mut dlogits[l * vocab..(l + 1) * vocab];
        for (g, &z) in drow.iter_mut().zip(row) {
            *g = (z - lse).exp() * scale;
        }
        drow[seq.token_ids[l + 1] as usize] -= scale;
    }
    if count == 0 {
        return (0.0, 0);
    }

    // Tied unembedding.
    gemm(
        T::one(),
        MatRef::new(&dlogits, n, vocab).t(),
        MatRef::new(&cache.final_hidden, n, d),
        T::one(),
        MatMut::new(&mut grads.tok_emb.data, vocab, d),
    );
    let mut dhf = vec![T::zero(); n * d];
    gemm(T::one(), MatRef::new(&dlogits, n, vocab), p.tok_emb.view(), T::zero(), MatMut::new(&mut dhf, n, d));
    let mut dx = rms_norm_backward(&dhf, &cache.x_final, &cache.rf, &p.final_norm.data, &mut grads.final_norm.data);

    for (li, (blk, c)) in p.blocks.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.blocks[li];

        // MLP branch.
        gemm(T::one(), MatRef::new(&c.a, n, dff).t(), MatRef::new(&dx, n, d), T::one(), MatMut::new(&mut g.down.data, dff, d));
        let mut du = vec![T::zero(); n * dff];
        gemm(T::one(), MatRef::new(&dx, n, d), blk.down.view().t(), T::zero(), MatMut::new(&mut du, n, dff));
        for (v, &z) in du.iter_mut().zip(&c.u) {
            *v *= gelu_grad(z);
        }
        gemm(T::one(), MatRef::new(&c.h2, n, d).t(), MatRef::new(&du, n, dff), T::one(), MatMut::new(&mut g.up.data, d, dff));
        let mut dh2 = vec![T::zero(); n * d];
        gemm(T::one(), MatRef::new(&du, n, dff), blk.up.view().t(), T::zero(), MatMut::new(&mut dh2, n, d));
        add_into(&mut dx, &rms_norm_backward(&dh2, &c.x_mid, &c.r2, &blk.norm2.data, &mut g.norm2.data));

        // Attention branch.
        gemm(T::one(), MatRef::new(&c.o, n, d).t(), MatRef::new(&dx, n, d), T::one(), MatMut::new(&mut g.wo.data, d, d));
        let mut d_o = vec![T::zero(); n * d];
        gemm(T::one(), MatRef::new(&dx, n, d), blk.wo.view().t(), T::zero(), MatMut::new(&mut d_o, n, d));
        let (mut dq, mut dk, mut dv) = (vec![T::zero(); n * d], vec![T::zero(); n * d], vec![T::zero(); n * d]);
        let mut ds = vec![T::zero(); n * n];
        for head in 0..h {
            let a = &c.att[head * n * n..(head + 1) * n * n];
            gemm(
                T::one(),
                MatRef::cols_of(&d_o, n, d, head * dh, dh),
                MatRef::cols_of(&c.v, n, d, head * dh, dh).t(),
                T::zero(),
                MatMut::new(&mut ds, n, n),
            );
            gemm(
                T::one(),
                MatRef::new(a, n, n).t(),
                MatRef::cols_of(&d_o, n, d, head * dh, dh),
                T::zero(),
                MatMut::cols_of(&mut dv, n, d, head * dh, dh),
            );
            // Softmax backward, folded with the score scale.
            for i in 0..n {
                let (ar, dr) = (&a[i * n..(i + 1) * n], &mut ds[i * n..(i + 1) * n]);
                let dot = ar[..=i].iter().zip(&dr[..=i]).fold(T::zero(), |s, (&x, &y)| s + x * y);
                for j in 0..=i {
                    dr[j] = ar[j] * (dr[j] - dot) * att_scale;
                }
                dr[i + 1..].iter_mut().for_each(|v| *v = T::zero());
            }
            gemm(
                T::one(),
                MatRef::new(&ds, n, n),
                MatRef::cols_of(&c.k, n, d, head * dh, dh),
                T::zero(),
                MatMut::cols_of(&mut dq, n, d, head * dh, dh),
            );
            gemm(
                T::one(),
                MatRef::new(&ds, n, n).t(),
                MatRef::cols_of(&c.q, n, d, head * dh, dh),
                T::zero(),
                MatMut::cols_of(&mut dk, n, d, head * dh, dh),
            );
        }
        let h1t = MatRef::new(&c.h1, n, d).t();
        gemm(T::one(), h1t, MatRef::new(&dq, n, d), T::one(), MatMut::new(&mut g.wq.data, d, d));
        gemm(T::one(), h1t, MatRef::new(&dk, n, d), T::one(), MatMut::new(&mut g.wk.data, d, d));
        gemm(T::one(), h1t, MatRef::new(&dv, n, d), T::one(), MatMut::new(&mut g.wv.data, d, d));
        let mut dh1 = vec![T::zero(); n * d];
        gemm(T::one(), MatRef::new(&dq, n, d), blk.wq.view().t(), T::zero(), MatMut::new(&mut dh1, n, d));
        gemm(T::one(), MatRef::new(&dk, n, d), blk.wk.view().t(), T::one(), MatMut::new(&mut dh1, n, d));
        gemm(T::one(), MatRef::new(&dv, n, d), blk.wv.view().t(), T::one(), MatMut::new(&mut dh1, n, d));
        add_into(&mut dx, &rms_norm_backward(&dh1, &c.x_in, &c.r1, &blk.norm1.data, &mut g.norm1.data));
    }

    for i in 0..n {
        let row = &dx[i * d..(i + 1) * d];
        add_into(grads.tok_emb.row_mut(seq.token_ids[i] as usize), row);
        let m = seq.modality_ids[i] as usize;
        if m < grads.pos.len() {
            add_into(grads.pos[m].row_mut(seq.pos_ids[i] as usize), row);
        }
    }
    (total, count)
}

/// Mean NLL over all loss targets in `batch` and its gradient.
///
/// Per-sequence gradients are summed in batch order, so the result does not
/// depend on the number of worker threads.
pub fn backward<T: Real>(p: &Params<T>, batch: &[AssembledSequence]) -> Result<(f64, usize, Gradients<T>)> {
    for s in batch {
        check_inputs(p, s)?;
    }
    let count: usize = batch.iter().map(AssembledSequence::n_targets).sum();
    if count == 0 {
        return Err(Error::DegenerateBatch);
    }
    let scale = T::of(1.0 / count as f64);
    let per_seq = map_rows::<T, _>(batch, |s| -> Result<(f64, Gradients<T>)> {
        let cache = forward_seq(p, s)?;
        let mut g = Gradients::zeros(&p.cfg);
        let (nll, _) = backward_seq(p, s, &cache, scale, &mut g);
        Ok((nll, g))
    });
    let mut grads = Gradients::zeros(&p.cfg);
    let mut total = 0.0;
    for r in per_seq {
        let (nll, g) = r?;
        total += nll;
        grads.add_assign(&g);
    }
    grads.check_finite()?;
    Ok((total / count as f64, count, grads))
}
