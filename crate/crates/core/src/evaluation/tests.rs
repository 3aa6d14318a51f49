use super::*;
use crate::model::ModelConfig;
use crate::tokenization::{ModalityId, TokenId};
use crate::training::{OracleGenerator, PseudoGenerator};

fn layout(sizes: [usize; 3], sentinels: usize) -> TokenLayout {
    let mods = ["A", "B", "C"].iter().enumerate().map(|(i, n)| ModalityId::new(i, *n)).collect();
    TokenLayout::new(mods, sizes.to_vec(), sentinels).unwrap()
}

fn zero_model(layout: &TokenLayout) -> Params<f64> {
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 8,
        max_context: 64,
        vocab_total: layout.vocab_total(),
        n_modalities: layout.n_modalities(),
        mlp_ratio: 2,
    };
    Params::zeros(&cfg)
}

fn random_dataset(layout: &TokenLayout, mods: &[usize], n: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed);
    let records = (0..n)
        .map(|_| {
            mods.iter()
                .map(|&m| {
                    let toks = (0..len).map(|_| rng.below(layout.content_sizes[m]) as TokenId).collect();
                    TokenSeq::new(m, toks).unwrap()
                })
                .collect()
        })
        .collect();
    Dataset::new("rand", records).unwrap()
}

#[test]
fn uniform_logits_give_vocabulary_size() {
    let lay = layout([16, 113, 1064], 4);
    assert_eq!(lay.vocab_total(), 1205);
    let p = zero_model(&lay);
    let data = random_dataset(&lay, &[0, 2], 20, 9, 1);
    let r = perplexity(&p, &lay, 64, &data, &[0, 2]).unwrap();
    assert!((r.ppl - 1205.0).abs() < 1e-3, "{}", r.ppl);
    assert_eq!(r.ppl, r.mean_nll.exp());
    // Per record: 9 content + EOS per segment; the second BOS is not scored.
    assert_eq!(r.n_tokens, 20 * 2 * 10);
    assert_eq!(r.combo, vec!["A".to_string(), "C".to_string()]);
}

/// Logits depend only on the current token: a first-order chain over the
/// two content ids of modality A plus an end-of-segment probability.
struct MarkovTable {
    layout: TokenLayout,
    start: [f64; 2],
    trans: [[f64; 2]; 2],
    stop: f64,
}

impl SequenceScorer for MarkovTable {
    fn vocab_size(&self) -> usize {
        self.layout.vocab_total()
    }

    fn logits(&self, seq: &AssembledSequence) -> Result<Vec<f64>> {
        let v = self.vocab_size();
        let mut out = vec![-1e4; seq.len() * v];
        let a0 = self.layout.global(0, 0) as usize;
        let eos = self.layout.eos(0) as usize;
        for (l, &t) in seq.token_ids.iter().enumerate() {
            let row = &mut out[l * v..(l + 1) * v];
            match self.layout.kind(t) {
                TokenKind::Bos(_) => {
                    row[a0] = self.start[0].ln();
                    row[a0 + 1] = self.start[1].ln();
                }
                TokenKind::Content { local, .. } => {
                    let p = self.trans[local as usize];
                    row[a0] = ((1.0 - self.stop) * p[0]).ln();
                    row[a0 + 1] = ((1.0 - self.stop) * p[1]).ln();
                    row[eos] = self.stop.ln();
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

#[test]
fn markov_chain_perplexity_matches_closed_form() {
    let lay = layout([2, 3, 3], 1);
    let table = MarkovTable {
        layout: lay.clone(),
        start: [0.3, 0.7],
        trans: [[0.9, 0.1], [0.4, 0.6]],
        stop: 0.2,
    };
    let seqs: Vec<Vec<TokenId>> = vec![vec![0, 0, 1, 1, 0], vec![1, 1, 1], vec![0, 1, 0, 1, 0, 0, 0], vec![1]];
    let records = seqs.iter().map(|s| vec![TokenSeq::new(0, s.clone()).unwrap()]).collect();
    let data = Dataset::new("chain", records).unwrap();
    let r = perplexity(&table, &lay, 32, &data, &[0]).unwrap();

    // Closed form from transition counts.
    let mut log_p = 0.0;
    let mut n = 0usize;
    for s in &seqs {
        log_p += table.start[s[0] as usize].ln();
        for w in s.windows(2) {
            log_p += (0.8 * table.trans[w[0] as usize][w[1] as usize]).ln();
        }
        log_p += 0.2f64.ln();
        n += s.len() + 1;
    }
    let expected = (-log_p / n as f64).exp();
    // The −1e4 logits leak e^-1e4 ≈ 0 mass, far below tolerance.
    assert!((r.ppl - expected).abs() < 1e-9, "{} vs {expected}", r.ppl);
    assert_eq!(r.n_tokens, n);
    assert_eq!(r.ppl, r.mean_nll.exp());
}

#[test]
fn perplexity_ignores_record_order() {
    let lay = layout([5, 6, 7], 2);
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 8,
        max_context: 64,
        vocab_total: lay.vocab_total(),
        n_modalities: 3,
        mlp_ratio: 2,
    };
    let p: Params<f64> = crate::model::init_params(&cfg, 3).unwrap();
    let data = random_dataset(&lay, &[0, 1], 12, 4, 2);
    let mut rev = data.records().to_vec();
    rev.reverse();
    let rev = Dataset::new("rev", rev).unwrap();
    let a = perplexity(&p, &lay, 64, &data, &[1, 0]).unwrap();
    let b = perplexity(&p, &lay, 64, &rev, &[1, 0]).unwrap();
    assert!((a.mean_nll - b.mean_nll).abs() < 1e-12);
    assert!(a.ppl >= 1.0);
    let ab = perplexity(&p, &lay, 64, &data, &[0, 1]).unwrap();
    assert_ne!(a.mean_nll, ab.mean_nll);
}

#[test]
fn missing_modality_and_empty_subset_are_input_errors() {
    let lay = layout([5, 6, 7], 2);
    let p = zero_model(&lay);
    let data = random_dataset(&lay, &[0], 3, 4, 2);
    assert!(matches!(perplexity(&p, &lay, 64, &data, &[0, 2]), Err(Error::Input(_))));
    assert!(matches!(Dataset::new("empty", vec![]), Err(Error::Input(_))));
}

#[test]
fn membership_of_identical_data_is_exactly_one() {
    let lay = layout([5, 6, 7], 2);
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 8,
        max_context: 64,
        vocab_total: lay.vocab_total(),
        n_modalities: 3,
        mlp_ratio: 2,
    };
    let p: Params<f64> = crate::model::init_params(&cfg, 4).unwrap();
    let data = random_dataset(&lay, &[1], 10, 6, 5);
    let v = sigma_membership(&p, &lay, 64, &data, &data, 3.0).unwrap();
    assert_eq!(v.ratio, 1.0);
    assert!(v.same_modality);
}

#[test]
fn membership_rejects_a_mismatched_vocabulary() {
    let lay = layout([5, 6, 7], 2);
    let other = layout([5, 6, 8], 2);
    let p = zero_model(&other);
    let data = random_dataset(&lay, &[1], 4, 6, 5);
    assert!(matches!(sigma_membership(&p, &lay, 64, &data, &data, 3.0), Err(Error::Input(_))));
}

#[test]
fn membership_threshold_is_sigma_squared() {
    // A scorer that is uniform over modality B's content but assigns tiny
    // probability to everything else.
    struct Favors(TokenLayout);
    impl SequenceScorer for Favors {
        fn vocab_size(&self) -> usize {
            self.0.vocab_total()
        }
        fn logits(&self, seq: &AssembledSequence) -> Result<Vec<f64>> {
            let v = self.vocab_size();
            let mut row = vec![-20.0; v];
            for i in self.0.content_range(1) {
                row[i] = 0.0;
            }
            row[self.0.eos(1) as usize] = 0.0;
            Ok(row.repeat(seq.len()))
        }
    }
    let lay = layout([5, 6, 7], 2);
    let s = Favors(lay.clone());
    let b = random_dataset(&lay, &[1], 5, 6, 1);
    let a = random_dataset(&lay, &[0], 5, 6, 2);
    let v = sigma_membership(&s, &lay, 64, &a, &b, 3.0).unwrap();
    assert!(v.ratio > 9.0 && !v.same_modality, "{v:?}");
    let v = sigma_membership(&s, &lay, 64, &b, &b, 3.0).unwrap();
    assert!(v.same_modality);
}

/// Predicts each observed token as the same local id at the same offset of
/// the first segment, whatever that segment's modality.
struct CopyScorer(TokenLayout);

impl SequenceScorer for CopyScorer {
    fn vocab_size(&self) -> usize {
        self.0.vocab_total()
    }

    fn logits(&self, seq: &AssembledSequence) -> Result<Vec<f64>> {
        let v = self.vocab_size();
        let first: Vec<TokenId> = seq
            .token_ids
            .iter()
            .take_while(|&&t| !matches!(self.0.kind(t), TokenKind::Eos(_)))
            .filter_map(|&t| match self.0.kind(t) {
                TokenKind::Content { local, .. } => Some(local),
                _ => None,
            })
            .collect();
        let mut out = vec![0.0; seq.len() * v];
        for l in 0..seq.len().saturating_sub(1) {
            let m = seq.modality_ids[l + 1] as usize;
            let p = seq.pos_ids[l + 1] as usize;
            if l > first.len() + 1 && p >= 1 && p <= first.len() {
                out[l * v + self.0.global(m, first[p - 1]) as usize] = 3.0;
            }
        }
        Ok(out)
    }
}

struct CopyGenerator;

impl PseudoGenerator<f64> for CopyGenerator {
    fn generate(
        &mut self,
        _params: &Params<f64>,
        _layout: &TokenLayout,
        link: &TokenSeq,
        _target: usize,
        max_len: usize,
        _rng: &mut RngStream,
    ) -> Result<Vec<TokenId>> {
        Ok(link.tokens()[..link.len().min(max_len)].to_vec())
    }
}

#[test]
fn zero_error_transitions_give_equal_hops() {
    let lay = layout([6, 6, 6], 1);
    let p = zero_model(&lay);
    let data = random_dataset(&lay, &[0, 1], 8, 5, 3);
    let cfg = CycleConfig { n: 8, max_len: 5, bootstrap: 200, level: 0.9 };
    let r = cycle_error(&p, &CopyScorer(lay.clone()), &mut CopyGenerator, &lay, &data, 1, 2, &cfg, &mut RngStream::new(1)).unwrap();
    assert_eq!(r.failures, 0);
    assert_eq!(r.two_hop, r.one_hop);
    assert!(r.two_hop_ci.0 <= r.two_hop_mean && r.two_hop_mean <= r.two_hop_ci.1);
}

#[test]
fn untrained_model_sits_at_log_vocab() {
    let lay = layout([6, 6, 6], 1);
    let p = zero_model(&lay);
    let data = random_dataset(&lay, &[0, 1], 6, 5, 4);
    let mut oracle = OracleGenerator::new();
    for r in data.records() {
        oracle.insert(&r[1], &TokenSeq::new(2, vec![1, 2, 3]).unwrap());
    }
    let cfg = CycleConfig { n: 6, max_len: 8, ..CycleConfig::default() };
    let r = cycle_error(&p, &p, &mut oracle, &lay, &data, 1, 2, &cfg, &mut RngStream::new(2)).unwrap();
    let ln_v = (lay.vocab_total() as f64).ln();
    assert!(r.two_hop.iter().chain(&r.one_hop).all(|x| (x - ln_v).abs() < 1e-9));
}

#[test]
fn failed_generations_are_counted() {
    struct Flaky;
    impl PseudoGenerator<f64> for Flaky {
        fn generate(
            &mut self,
            _: &Params<f64>,
            _: &TokenLayout,
            link: &TokenSeq,
            _: usize,
            _: usize,
            _: &mut RngStream,
        ) -> Result<Vec<TokenId>> {
            match link.tokens()[0] {
                0 | 2 => Ok(Vec::new()),
                1 => Err(Error::input("boom")),
                _ => Ok(link.tokens().to_vec()),
            }
        }
    }
    let lay = layout([6, 6, 6], 1);
    let p = zero_model(&lay);
    let data = random_dataset(&lay, &[0, 1], 40, 5, 4);
    let expected = data.records().iter().filter(|r| r[1].tokens()[0] <= 2).count();
    assert!(expected > 0 && expected < 40);
    let cfg = CycleConfig { n: 40, max_len: 8, ..CycleConfig::default() };
    let r = cycle_error(&p, &p, &mut Flaky, &lay, &data, 1, 2, &cfg, &mut RngStream::new(2)).unwrap();
    assert_eq!(r.failures, expected);
    assert_eq!(r.two_hop.len(), 40 - expected);
}

#[test]
fn bootstrap_interval_brackets_the_mean() {
    let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let (lo, hi) = bootstrap_ci(&xs, 500, 0.95, &mut RngStream::new(3));
    assert!(lo < 24.5 && 24.5 < hi && hi - lo < 20.0, "{lo} {hi}");
}
