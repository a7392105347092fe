//! HAT model: configuration, parameters, exact parameter accounting, the
//! teacher-forced forward pass and checkpoints.

mod checkpoint;
mod config;
mod count;
mod forward;
pub(crate) mod layers;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{parse_kv, ConnectorConfig, HatConfig, StackConfig, BYTE_VOCAB};
pub use count::{block_params, count_params, token_embedding_params, ParamCounts};
pub(crate) use forward::{forward_text_with_tape, forward_with_tape, Tape};
pub use forward::{
    backbone_forward, decode_bytes, encode_bytes, forward, forward_assigned, log_softmax, pool_words, sequence_bytes,
    sequence_spans, trace_loss, word_index_from_spans, ForwardTrace, BOS_BYTE, EOS_BYTE,
};
pub use params::{
    decays, init_params, AttnParams, BackboneParams, BlockParams, ConnectorParams, CrossParams, DecoderLayerParams,
    DecoderParams, EncoderParams, MlpParams, ParamGroup, ParamSet,
};
