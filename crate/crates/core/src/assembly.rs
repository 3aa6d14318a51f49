//! Multimodal training sequences: global id layout, delimiters, commutative
//! ordering, per-segment positions, loss masks and the span-to-end transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tokenization::{ModalityId, TokenId, TokenSeq};

/// Global id space: content ids of every modality (in modality order), then
/// `BOS_m, EOS_m` pairs, `MASK_0..MASK_{S-1}`, `EOSPAN`, `PAD`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub modalities: Vec<ModalityId>,
    pub content_sizes: Vec<usize>,
    pub n_sentinels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Content { modality: usize, local: TokenId },
    Bos(usize),
    Eos(usize),
    Mask(usize),
    EoSpan,
    Pad,
}

impl TokenLayout {
    pub fn new(modalities: Vec<ModalityId>, content_sizes: Vec<usize>, n_sentinels: usize) -> Result<Self> {
        if modalities.is_empty() || modalities.len() != content_sizes.len() {
            return Err(Error::input("layout needs one content size per modality"));
        }
        if modalities.iter().enumerate().any(|(i, m)| m.id != i) {
            return Err(Error::input("modality ids must be dense 0..M-1 in order"));
        }
        let mut names: Vec<&str> = modalities.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != modalities.len() {
            return Err(Error::input("modality names must be unique"));
        }
        if n_sentinels == 0 {
            return Err(Error::input("need at least one mask sentinel"));
        }
        Ok(Self {
            modalities,
            content_sizes,
            n_sentinels,
        })
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    /// Modality id carried by padding positions.
    pub fn pad_modality(&self) -> usize {
        self.n_modalities()
    }

    pub fn modality_by_name(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    pub fn offset(&self, m: usize) -> usize {
        self.content_sizes[..m].iter().sum()
    }

    fn n_content(&self) -> usize {
        self.content_sizes.iter().sum()
    }

    pub fn global(&self, m: usize, local: TokenId) -> TokenId {
        debug_assert!((local as usize) < self.content_sizes[m]);
        (self.offset(m) + local as usize) as TokenId
    }

    pub fn bos(&self, m: usize) -> TokenId {
        (self.n_content() + 2 * m) as TokenId
    }

    pub fn eos(&self, m: usize) -> TokenId {
        (self.n_content() + 2 * m + 1) as TokenId
    }

    pub fn mask(&self, k: usize) -> TokenId {
        assert!(k < self.n_sentinels, "sentinel {k} outside budget {}", self.n_sentinels);
        (self.n_content() + 2 * self.n_modalities() + k) as TokenId
    }

    pub fn eospan(&self) -> TokenId {
        (self.n_content() + 2 * self.n_modalities() + self.n_sentinels) as TokenId
    }

    pub fn pad(&self) -> TokenId {
        self.eospan() + 1
    }

    pub fn vocab_total(&self) -> usize {
        self.pad() as usize + 1
    }

    /// Global ids of modality `m`'s content tokens.
    pub fn content_range(&self, m: usize) -> std::ops::Range<usize> {
        let o = self.offset(m);
        o..o + self.content_sizes[m]
    }

    pub fn kind(&self, id: TokenId) -> TokenKind {
        let id = id as usize;
        let nc = self.n_content();
        let m = self.n_modalities();
        if id < nc {
            let mut rest = id;
            for (modality, &size) in self.content_sizes.iter().enumerate() {
                if rest < size {
                    return TokenKind::Content {
                        modality,
                        local: rest as TokenId,
                    };
                }
                rest -= size;
            }
            unreachable!()
        } else if id < nc + 2 * m {
            let r = id - nc;
            if r % 2 == 0 {
                TokenKind::Bos(r / 2)
            } else {
                TokenKind::Eos(r / 2)
            }
        } else if id < nc + 2 * m + self.n_sentinels {
            TokenKind::Mask(id - nc - 2 * m)
        } else if id == self.eospan() as usize {
            TokenKind::EoSpan
        } else {
            TokenKind::Pad
        }
    }
}

/// Flattened training sequence; the four lists always have equal length.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledSequence {
    pub token_ids: Vec<TokenId>,
    pub modality_ids: Vec<u32>,
    pub pos_ids: Vec<u32>,
    /// `loss_mask[j]` marks token `j` as a prediction target (predicted from position `j - 1`).
    pub loss_mask: Vec<bool>,
}

impl AssembledSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn push(&mut self, id: TokenId, modality: usize, pos: usize, target: bool) {
        self.token_ids.push(id);
        self.modality_ids.push(modality as u32);
        self.pos_ids.push(pos as u32);
        self.loss_mask.push(target);
    }

    fn push_from(&mut self, other: &Self, i: usize) {
        self.token_ids.push(other.token_ids[i]);
        self.modality_ids.push(other.modality_ids[i]);
        self.pos_ids.push(other.pos_ids[i]);
        self.loss_mask.push(other.loss_mask[i]);
    }

    /// Number of positions with a loss target.
    pub fn n_targets(&self) -> usize {
        self.loss_mask.iter().skip(1).filter(|&&b| b).count()
    }

    /// Content tokens (global ids) in sequence order, sentinels and delimiters removed.
    pub fn content_tokens(&self, layout: &TokenLayout) -> Vec<TokenId> {
        self.token_ids
            .iter()
            .copied()
            .filter(|&t| matches!(layout.kind(t), TokenKind::Content { .. }))
            .collect()
    }

    /// Order of segments by their BOS tokens.
    pub fn segment_order(&self, layout: &TokenLayout) -> Vec<usize> {
        self.token_ids
            .iter()
            .filter_map(|&t| match layout.kind(t) {
                TokenKind::Bos(m) => Some(m),
                _ => None,
            })
            .collect()
    }
}

/// Renders `segments` as `BOS_m content… EOS_m` blocks. With `commutative`
/// the block order is a uniformly random permutation drawn from `rng`.
pub fn assemble(
    layout: &TokenLayout,
    segments: &[TokenSeq],
    commutative: bool,
    max_context: usize,
    rng: &mut RngStream,
) -> Result<AssembledSequence> {
    if segments.is_empty() || segments.len() > layout.n_modalities() {
        return Err(Error::input(format!(
            "need 1..={} segments, got {}",
            layout.n_modalities(),
            segments.len()
        )));
    }
    for (i, s) in segments.iter().enumerate() {
        if s.modality >= layout.n_modalities() {
            return Err(Error::input(format!("unknown modality {}", s.modality)));
        }
        if segments[..i].iter().any(|p| p.modality == s.modality) {
            return Err(Error::input(format!("modality {} appears twice", s.modality)));
        }
        if let Some(&t) = s.tokens().iter().find(|&&t| t as usize >= layout.content_sizes[s.modality]) {
            return Err(Error::input(format!("token {t} outside modality {} vocabulary", s.modality)));
        }
    }
    let len: usize = segments.iter().map(|s| s.len() + 2).sum();
    if len > max_context {
        return Err(Error::Length {
            len,
            limit: max_context,
        });
    }
    let mut order: Vec<usize> = (0..segments.len()).collect();
    if commutative {
        rng.shuffle(&mut order);
    }
    let mut out = AssembledSequence::default();
    for &i in &order {
        let seg = &segments[i];
        let m = seg.modality;
        out.push(layout.bos(m), m, 0, !out.is_empty());
        for (p, &t) in seg.tokens().iter().enumerate() {
            out.push(layout.global(m, t), m, p + 1, true);
        }
        out.push(layout.eos(m), m, seg.len() + 1, true);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskPolicy {
    pub apply_prob: f64,
    pub n_spans: usize,
    pub span_frac_max: f64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            apply_prob: 0.5,
            n_spans: 1,
            span_frac_max: 0.25,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::input("mask apply_prob must lie in [0, 1]"));
        }
        if self.n_spans == 0 {
            return Err(Error::input("mask n_spans must be >= 1"));
        }
        if !(self.span_frac_max > 0.0 && self.span_frac_max <= 1.0) {
            return Err(Error::input("mask span_frac_max must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Attempts per span at finding a free location before giving up.
const SPAN_PLACEMENT_TRIES: usize = 16;

/// Replaces random content spans with `MASK_k` and moves them, in order, to
/// an appendix `MASK_k span… EOSPAN`. Returns whether a transform happened.
pub fn causal_mask_transform(
    seq: &AssembledSequence,
    layout: &TokenLayout,
    policy: &MaskPolicy,
    rng: &mut RngStream,
) -> Result<(AssembledSequence, bool)> {
    policy.validate()?;
    if policy.n_spans > layout.n_sentinels {
        return Err(Error::input(format!(
            "{} spans requested but only {} sentinels exist",
            policy.n_spans, layout.n_sentinels
        )));
    }
    let kinds: Vec<TokenKind> = seq.token_ids.iter().map(|&t| layout.kind(t)).collect();
    if kinds
        .iter()
        .any(|k| matches!(k, TokenKind::Pad | TokenKind::Mask(_) | TokenKind::EoSpan))
    {
        return Err(Error::input("mask transform input must not contain PAD or sentinels"));
    }
    if !rng.bernoulli(policy.apply_prob) {
        return Ok((seq.clone(), false));
    }

    let is_content: Vec<bool> = kinds.iter().map(|k| matches!(k, TokenKind::Content { .. })).collect();
    let content_len = is_content.iter().filter(|&&c| c).count();
    if content_len == 0 {
        return Ok((seq.clone(), false));
    }
    let max_span = ((policy.span_frac_max * content_len as f64).ceil() as usize).max(1);

    // (start, len) pairs over positions, kept disjoint.
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(policy.n_spans);
    let mut taken = vec![false; seq.len()];
    for _ in 0..policy.n_spans {
        let mut placed = false;
        for _ in 0..SPAN_PLACEMENT_TRIES {
            let len = 1 + rng.below(max_span);
            let starts: Vec<usize> = (0..seq.len().saturating_sub(len - 1))
                .filter(|&s| (s..s + len).all(|p| is_content[p] && !taken[p]))
                .collect();
            if starts.is_empty() {
                continue;
            }
            let s = starts[rng.below(starts.len())];
            (s..s + len).for_each(|p| taken[p] = true);
            spans.push((s, len));
            placed = true;
            break;
        }
        if !placed {
            return Ok((seq.clone(), false));
        }
    }
    spans.sort_unstable();

    let mut out = AssembledSequence::default();
    let mut i = 0;
    let mut k = 0;
    while i < seq.len() {
        if k < spans.len() && spans[k].0 == i {
            out.push(layout.mask(k), seq.modality_ids[i] as usize, seq.pos_ids[i] as usize, seq.loss_mask[i]);
            i += spans[k].1;
            k += 1;
        } else {
            out.push_from(seq, i);
            i += 1;
        }
    }
    for (k, &(s, len)) in spans.iter().enumerate() {
        out.push(layout.mask(k), seq.modality_ids[s] as usize, seq.pos_ids[s] as usize, false);
        for p in s..s + len {
            out.push(seq.token_ids[p], seq.modality_ids[p] as usize, seq.pos_ids[p] as usize, true);
        }
    }
    let &(s, len) = spans.last().expect("at least one span");
    let last = s + len - 1;
    out.push(layout.eospan(), seq.modality_ids[last] as usize, seq.pos_ids[last] as usize + 1, false);
    Ok((out, true))
}

/// Inverse of an applied [`causal_mask_transform`]; identity on untransformed input.
pub fn unmask(seq: &AssembledSequence, layout: &TokenLayout) -> Result<AssembledSequence> {
    let kinds: Vec<TokenKind> = seq.token_ids.iter().map(|&t| layout.kind(t)).collect();
    let mask_positions: Vec<(usize, usize)> = kinds
        .iter()
        .enumerate()
        .filter_map(|(i, k)| match k {
            TokenKind::Mask(j) => Some((i, *j)),
            _ => None,
        })
        .collect();
    let has_eospan = kinds.iter().any(|k| *k == TokenKind::EoSpan);
    if mask_positions.is_empty() && !has_eospan {
        return Ok(seq.clone());
    }
    if kinds.last() != Some(&TokenKind::EoSpan) || kinds[..kinds.len() - 1].contains(&TokenKind::EoSpan) {
        return Err(Error::Parse("appendix must end with the only EOSPAN".into()));
    }
    if mask_positions.len() % 2 != 0 {
        return Err(Error::Parse("every sentinel must occur exactly twice".into()));
    }
    let n = mask_positions.len() / 2;
    let (inline, appended) = mask_positions.split_at(n);
    if inline.iter().enumerate().any(|(k, &(_, j))| j != k) || appended.iter().enumerate().any(|(k, &(_, j))| j != k) {
        return Err(Error::Parse("sentinels out of order".into()));
    }
    let appendix_start = appended[0].0;
    if inline.last().map(|&(p, _)| p >= appendix_start).unwrap_or(false) {
        return Err(Error::Parse("inline sentinel inside appendix".into()));
    }

    // Span k occupies appended[k].0 + 1 .. next sentinel (or EOSPAN).
    let end = seq.len() - 1;
    let span_range = |k: usize| {
        let lo = appended[k].0 + 1;
        let hi = appended.get(k + 1).map(|&(p, _)| p).unwrap_or(end);
        lo..hi
    };
    let mut out = AssembledSequence::default();
    let mut k = 0;
    for i in 0..appendix_start {
        if let TokenKind::Mask(_) = kinds[i] {
            let r = span_range(k);
            if r.is_empty() {
                return Err(Error::Parse(format!("span {k} is empty")));
            }
            for p in r {
                if !matches!(kinds[p], TokenKind::Content { .. }) {
                    return Err(Error::Parse(format!("non-content token inside span {k}")));
                }
                out.push_from(seq, p);
            }
            let first = out.len() - span_range(k).len();
            out.loss_mask[first] = seq.loss_mask[i];
            k += 1;
        } else {
            out.push_from(seq, i);
        }
    }
    Ok(out)
}

/// Right-padded batch in flat `batch × len` layout.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PaddedBatch {
    pub batch: usize,
    pub len: usize,
    pub token_ids: Vec<TokenId>,
    pub modality_ids: Vec<u32>,
    pub pos_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
    /// Unpadded length of each row.
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn row(&self, b: usize) -> AssembledSequence {
        let r = b * self.len..(b + 1) * self.len;
        AssembledSequence {
            token_ids: self.token_ids[r.clone()].to_vec(),
            modality_ids: self.modality_ids[r.clone()].to_vec(),
            pos_ids: self.pos_ids[r.clone()].to_vec(),
            loss_mask: self.loss_mask[r].to_vec(),
        }
    }
}

pub fn pad_batch(seqs: &[AssembledSequence], len: usize, layout: &TokenLayout) -> Result<PaddedBatch> {
    let mut out = PaddedBatch {
        batch: seqs.len(),
        len,
        ..Default::default()
    };
    for s in seqs {
        if s.len() > len {
            return Err(Error::Length { len: s.len(), limit: len });
        }
        out.token_ids.extend_from_slice(&s.token_ids);
        out.modality_ids.extend_from_slice(&s.modality_ids);
        out.pos_ids.extend_from_slice(&s.pos_ids);
        out.loss_mask.extend_from_slice(&s.loss_mask);
        let pad = len - s.len();
        out.token_ids.extend(std::iter::repeat(layout.pad()).take(pad));
        out.modality_ids.extend(std::iter::repeat(layout.pad_modality() as u32).take(pad));
        out.pos_ids.extend(std::iter::repeat(0).take(pad));
        out.loss_mask.extend(std::iter::repeat(false).take(pad));
        out.lengths.push(s.len());
    }
    Ok(out)
}
