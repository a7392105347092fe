use std::fmt;

use super::config::{HatConfig, StackConfig, BYTE_VOCAB};

/// Exact parameter counts per component. The backbone BOS vector is a
/// bookkeeping parameter outside the published tables and reported apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub encoder: u64,
    pub backbone: u64,
    pub decoder: u64,
    pub backbone_per_layer: u64,
    pub excluded_bos: u64,
}

impl ParamCounts {
    pub fn total(&self) -> u64 {
        self.encoder + self.backbone + self.decoder
    }
}

impl fmt::Display for ParamCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "encoder  {}", self.encoder)?;
        writeln!(f, "backbone {}", self.backbone)?;
        writeln!(f, "decoder  {}", self.decoder)?;
        write!(f, "total    {}", self.total())
    }
}

/// Self-attention, SwiGLU and two norms of one pre-norm block.
pub fn block_params(s: &StackConfig) -> u64 {
    let h = s.hidden as u64;
    let q = s.q_dim() as u64;
    let kv = s.kv_dim() as u64;
    let attn = h * q + 2 * h * kv + q * h;
    let mlp = 3 * h * s.intermediate() as u64;
    attn + mlp + 2 * h
}

pub fn count_params(c: &HatConfig) -> ParamCounts {
    let he = c.encoder.hidden as u64;
    let hb = c.backbone.hidden as u64;
    let hd = c.decoder.hidden as u64;
    let ch = c.connector.cross_hidden as u64;
    let vocab = BYTE_VOCAB as u64;

    let connector = 2 * he * ch + 2 * ch * ch + ch;
    let encoder = vocab * he + c.encoder.n_layers as u64 * block_params(&c.encoder) + connector;

    let per_layer = block_params(&c.backbone);
    let backbone = c.backbone.n_layers as u64 * per_layer;

    let cross = 2 * hd * hd + 2 * hb * hd + (hd + hb + hd);
    let decoder = c.decoder.n_layers as u64 * (block_params(&c.decoder) + cross) + hd + hd * vocab;

    ParamCounts {
        encoder,
        backbone,
        decoder,
        backbone_per_layer: per_layer,
        excluded_bos: hb,
    }
}

/// Input embedding of a tokenizer model with the given vocabulary, for
/// comparison against the 256-row byte embedding.
pub fn token_embedding_params(vocab: u64, hidden: u64) -> u64 {
    vocab * hidden
}
