//! Decoder-only transformer: pre-norm RMSNorm blocks, GELU MLP, no biases,
//! tied token embedding/unembedding and one learned position table per modality.

mod backward;
mod config;
mod forward;
mod generate;
mod params;

pub use backward::{backward, backward_seq, Gradients};
pub use config::ModelConfig;
pub use forward::{
    extract_features, forward, forward_seq, nll_loss, rms_norm, sequence_nll, ForwardOutput, LossReport, SeqCache,
    RMS_EPS,
};
pub use generate::{generate, Decoder, Generated, SamplingConfig};
pub use params::{init_params, ParamKind, Params};

pub(crate) use forward::map_rows;

/// Worker contexts for batch-parallel forward/backward, from `LORETTA_LAB_THREADS`.
pub fn worker_threads() -> usize {
    static THREADS: std::sync::OnceLock<usize> = std::sync::OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var("LORETTA_LAB_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(1)
    })
}

#[cfg(test)]
mod tests;
