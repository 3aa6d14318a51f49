use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenization::TokenId;

pub const SHARD_MAGIC: [u8; 4] = *b"LRT1";
pub const SHARD_VERSION: u32 = 1;
pub const TOKEN_WIDTH: u32 = 4;
const HEADER_LEN: usize = 28;
/// Fills the tail of records shorter than `tokens_per_record`.
pub const PAD_TOKEN: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u32,
    pub token_width: u32,
    pub records: u64,
    pub tokens_per_record: u32,
    pub modality: u32,
}

pub fn encode_shard(modality: u32, tokens_per_record: u32, records: &[Vec<TokenId>]) -> Result<Vec<u8>> {
    let width = tokens_per_record as usize;
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * width * 4);
    out.extend_from_slice(&SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.extend_from_slice(&TOKEN_WIDTH.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&tokens_per_record.to_le_bytes());
    out.extend_from_slice(&modality.to_le_bytes());
    for (i, r) in records.iter().enumerate() {
        if r.is_empty() || r.len() > width {
            return Err(Error::input(format!(
                "record {i} has {} tokens, shard holds 1..={width}",
                r.len()
            )));
        }
        if r.contains(&PAD_TOKEN) {
            return Err(Error::input(format!("record {i} contains the padding id")));
        }
        for t in r.iter().copied().chain(std::iter::repeat_n(PAD_TOKEN, width - r.len())) {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_shard(bytes: &[u8], path: &Path) -> Result<(ShardHeader, Vec<Vec<TokenId>>)> {
    let bad = |reason: String| Error::format(path, reason);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != SHARD_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let header = ShardHeader {
        version: u32_at(4),
        token_width: u32_at(8),
        records: u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")),
        tokens_per_record: u32_at(20),
        modality: u32_at(24),
    };
    if header.version != SHARD_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    if header.token_width != TOKEN_WIDTH {
        return Err(bad(format!("unsupported token width {}", header.token_width)));
    }
    let width = header.tokens_per_record as usize;
    let expected = (header.records as usize)
        .checked_mul(width * 4)
        .ok_or_else(|| bad("record count overflows".into()))?;
    if bytes.len() - HEADER_LEN != expected || width == 0 {
        return Err(bad(format!(
            "body has {} bytes, header implies {expected}",
            bytes.len() - HEADER_LEN
        )));
    }
    let mut records = Vec::with_capacity(header.records as usize);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(width * 4).enumerate() {
        let raw: Vec<u32> = chunk
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let len = raw.iter().position(|&t| t == PAD_TOKEN).unwrap_or(width);
        if len == 0 || raw[len..].iter().any(|&t| t != PAD_TOKEN) {
            return Err(bad(format!("record {i} has malformed padding")));
        }
        records.push(raw[..len].to_vec());
    }
    Ok((header, records))
}

pub fn write_shard(path: &Path, modality: u32, tokens_per_record: u32, records: &[Vec<TokenId>]) -> Result<()> {
    let bytes = encode_shard(modality, tokens_per_record, records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_shard(path: &Path) -> Result<(ShardHeader, Vec<Vec<TokenId>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_shard(&bytes, path)
}
