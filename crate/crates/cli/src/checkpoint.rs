//! Checkpoint container: `LRTC` magic, u64 LE header length, JSON header,
//! then little-endian f32 tensor blobs at the offsets listed in the header.

use std::path::{Path, PathBuf};

use loretta_core::assembly::TokenLayout;
use loretta_core::datagen::Tokenizers;
use loretta_core::model::{ModelConfig, Params};
use loretta_core::rng::{RngState, RngStream};
use loretta_core::tensor::Tensor;
use loretta_core::training::{LoaderState, OptimizerState, Strategy, TrainConfig, TrainState};
use loretta_core::Error;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LRTC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the body.
    pub offset: u64,
    pub nbytes: u64,
}

/// Run metadata stored next to the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub strategy: Strategy,
    pub train: TrainConfig,
    /// Modality a cm2 run was trained on.
    pub train_modality: Option<String>,
    /// Training dataset names in loader order.
    pub datasets: Vec<String>,
    pub data_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    layout: TokenLayout,
    run: RunInfo,
    step: u64,
    adam_t: u64,
    rng: RngState,
    loaders: Vec<LoaderState>,
    next_source: usize,
    transitive_skips: u64,
    tokenizers: Option<Tokenizers>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub layout: TokenLayout,
    pub run: RunInfo,
    pub state: TrainState,
    pub tokenizers: Option<Tokenizers>,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: PathBuf::from(path),
        reason: reason.into(),
    }
}

fn groups(state: &TrainState) -> [(&'static str, &Params<f32>); 3] {
    [("", &state.params), ("adam.m.", &state.opt.m), ("adam.v.", &state.opt.v)]
}

impl Checkpoint {
    pub fn params(&self) -> &Params<f32> {
        &self.state.params
    }

    pub fn model(&self) -> &ModelConfig {
        &self.state.params.cfg
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, Error> {
        let mut tensors = Vec::new();
        let mut body: Vec<u8> = Vec::new();
        for (prefix, params) in groups(&self.state) {
            for ((name, _), t) in params.names().into_iter().zip(params.tensors()) {
                let nbytes = (t.data.len() * 4) as u64;
                tensors.push(TensorEntry {
                    name: format!("{prefix}{name}"),
                    dtype: "f32".into(),
                    shape: t.shape.clone(),
                    offset: body.len() as u64,
                    nbytes,
                });
                for x in &t.data {
                    body.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            model: self.state.params.cfg.clone(),
            layout: self.layout.clone(),
            run: self.run.clone(),
            step: self.state.step,
            adam_t: self.state.opt.t,
            rng: self.state.rng.state(),
            loaders: self.state.loaders.clone(),
            next_source: self.state.next_source,
            transitive_skips: self.state.transitive_skips,
            tokenizers: self.tokenizers.clone(),
            tensors,
        };
        let text = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + text.len() + body.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, Error> {
        if bytes.len() < 12 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad(path, "not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body_start = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(path, "header length exceeds file size"))?;
        let header: Header =
            serde_json::from_slice(&bytes[12..body_start]).map_err(|e| bad(path, format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(bad(path, format!("unsupported version {}", header.format_version)));
        }
        header.model.validate()?;
        let body = &bytes[body_start..];

        let mut entries: Vec<&TensorEntry> = header.tensors.iter().collect();
        entries.sort_by_key(|e| e.offset);
        let mut end = 0u64;
        for e in &entries {
            if e.offset < end {
                return Err(bad(path, format!("tensor {} overlaps its predecessor", e.name)));
            }
            end = e.offset.checked_add(e.nbytes).ok_or_else(|| bad(path, "offset overflow"))?;
            if end > body.len() as u64 {
                return Err(bad(path, format!("tensor {} runs past the end of the file", e.name)));
            }
        }

        let read = |name: &str, expect: &Tensor<f32>| -> Result<Tensor<f32>, Error> {
            let e = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| bad(path, format!("missing tensor {name}")))?;
            if e.dtype != "f32" || e.shape != expect.shape || e.nbytes != (expect.data.len() * 4) as u64 {
                return Err(bad(path, format!("tensor {name} has unexpected dtype or shape")));
            }
            let raw = &body[e.offset as usize..(e.offset + e.nbytes) as usize];
            Ok(Tensor {
                shape: e.shape.clone(),
                data: raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            })
        };
        let load_group = |prefix: &str| -> Result<Params<f32>, Error> {
            let mut p = Params::<f32>::zeros(&header.model);
            let names = p.names();
            for ((name, _), t) in names.into_iter().zip(p.tensors_mut()) {
                *t = read(&format!("{prefix}{name}"), t)?;
            }
            Ok(p)
        };
        let state = TrainState {
            params: load_group("")?,
            opt: OptimizerState {
                m: load_group("adam.m.")?,
                v: load_group("adam.v.")?,
                t: header.adam_t,
            },
            step: header.step,
            rng: RngStream::from_state(&header.rng).map_err(|e| bad(path, e.to_string()))?,
            loaders: header.loaders,
            next_source: header.next_source,
            transitive_skips: header.transitive_skips,
        };
        Ok(Self {
            layout: header.layout,
            run: header.run,
            state,
            tokenizers: header.tokenizers.map(Tokenizers::restored),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use loretta_core::model::init_params;
    use loretta_core::tokenization::ModalityId;

    use super::*;

    fn sample() -> Checkpoint {
        let layout = TokenLayout::new(vec![ModalityId::new(0, "A"), ModalityId::new(1, "B")], vec![5, 7], 2).unwrap();
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            max_context: 16,
            vocab_total: layout.vocab_total(),
            n_modalities: 2,
            mlp_ratio: 2,
        };
        let params: Params<f32> = init_params(&cfg, 3).unwrap();
        let mut opt = OptimizerState::new(&params);
        opt.m = init_params(&cfg, 4).unwrap();
        opt.v = init_params(&cfg, 5).unwrap();
        opt.t = 17;
        let mut rng = RngStream::new(8);
        rng.split();
        Checkpoint {
            layout,
            run: RunInfo {
                strategy: Strategy::C2m3,
                train: TrainConfig::default(),
                train_modality: None,
                datasets: vec!["ab".into()],
                data_dir: None,
            },
            state: TrainState {
                params,
                opt,
                step: 17,
                rng,
                loaders: vec![LoaderState { epoch: 2, cursor: 5 }],
                next_source: 1,
                transitive_skips: 3,
            },
            tokenizers: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        for (a, b) in back.state.params.tensors().iter().zip(ck.state.params.tensors()) {
            assert_eq!(
                a.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_is_length_prefixed_json() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LRTC");
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[12..12 + n]).unwrap();
        let dir = v["tensors"].as_array().unwrap();
        assert_eq!(dir[0]["name"], "tok_emb");
        assert_eq!(dir[0]["offset"], 0);
        assert!(dir.iter().any(|t| t["name"] == "adam.v.final_norm"));
    }

    #[test]
    fn truncated_or_overlapping_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let p = Path::new("x");
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p), Err(Error::Format { .. })));
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + n]).unwrap();
        header["tensors"][1]["offset"] = serde_json::json!(4);
        let text = serde_json::to_vec(&header).unwrap();
        let mut forged = b"LRTC".to_vec();
        forged.extend_from_slice(&(text.len() as u64).to_le_bytes());
        forged.extend_from_slice(&text);
        forged.extend_from_slice(&bytes[12 + n..]);
        let err = Checkpoint::from_bytes(&forged, p).unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
        assert!(Checkpoint::from_bytes(b"nope", p).is_err());
    }
}
