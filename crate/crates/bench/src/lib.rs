//! Shared fixtures for the benchmarks.

use evrel_core::dataset::{generate_synthetic, GenSpec, Sample};
use evrel_core::rng::SplitMix64;
use evrel_core::scoring::PredictionRecord;
use evrel_core::{FrameAttention, LayerHiddenState, SequenceLayout};

/// A hidden state with `frames * tokens_per_frame` visual rows after a single
/// prefix token and `text` trailing text rows.
pub fn hidden_state(frames: usize, tokens_per_frame: usize, text: usize, dim: usize, seed: u64) -> LayerHiddenState {
    let total = 1 + frames * tokens_per_frame + text;
    let layout = SequenceLayout::new(1, frames, tokens_per_frame, total).expect("valid layout");
    let mut rng = SplitMix64::new(seed);
    let data = (0..total * dim).map(|_| rng.symmetric(1.0)).collect();
    LayerHiddenState::new(layout, dim, data).expect("valid hidden state")
}

pub fn attention(frames: usize, seed: u64) -> FrameAttention {
    let mut rng = SplitMix64::new(seed);
    let scores = (0..frames).map(|_| rng.next_f64()).collect();
    FrameAttention::new(scores, "bench").expect("valid attention")
}

pub fn dataset(spec: &str, seed: u64) -> Vec<Sample> {
    generate_synthetic(&GenSpec::parse(spec, 64).expect("valid spec"), seed)
}

/// Uniformly random numeric answers.
pub fn random_predictions(samples: &[Sample], seed: u64) -> Vec<PredictionRecord> {
    let mut rng = SplitMix64::new(seed);
    samples
        .iter()
        .map(|s| PredictionRecord::new(&s.id, (rng.below(s.candidates.len()) + 1).to_string()))
        .collect()
}
