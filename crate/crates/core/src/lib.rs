//! Event-relation hallucination benchmark toolkit.
//!
//! - [`kfp`]: key-frame propagation over a layer's visual tokens.
//! - [`toy_model`]: a deterministic miniature decoder that hosts the
//!   intervention.
//! - [`dataset`]: sample schema, loading, validation, prompt templates and a
//!   synthetic generator.
//! - [`scoring`]: answer parsing, accuracy, RC precision/recall/F1, SRH and
//!   bias rates.
//! - [`config`]: `key = value` run configuration files.
//! - [`harness`]: answer providers, evaluation runs and ablation sweeps.

pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod kfp;
pub mod rng;
pub mod scoring;
pub mod toy_model;

pub use error::{Error, Result};
pub use harness::{
    run_eval, run_sweep, AnswerProvider, EvalOptions, EvalRun, RandomProvider, ReplayProvider,
    SweepAxis, SweepReport, SweepSpec, ToyProvider,
};
pub use kfp::{
    apply_kfp_layer, blend_hidden, enhance_visual_tokens, frame_weights, gaussian_weight,
    layer_in_range, propagate_field, select_key_frames, FrameAttention, FrameTokenGrid,
    KfpConfig, LayerHiddenState, PropagationField, SequenceLayout,
};
pub use scoring::{score, ScoreOptions, ScoreReport};
pub use toy_model::{DecodeResult, ForwardOptions, ToyModel, ToyModelConfig};
