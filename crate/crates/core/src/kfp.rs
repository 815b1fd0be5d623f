//! Key-frame propagation: re-weights the visual tokens of a layer's hidden
//! state around the frames that receive the most attention.
//!
//! The pipeline for one layer is
//!
//! 1. [`select_key_frames`]: top-`k` frames by aggregated attention.
//! 2. [`propagate_field`]: a Gaussian bump of width `m` around each key frame,
//!    combined across key frames by elementwise maximum.
//! 3. [`enhance_visual_tokens`]: scale every frame by `softmax(alpha + 1)`
//!    taken over the frame axis.
//! 4. [`blend_hidden`]: `(1 - beta) * enhanced + beta * original`.
//!
//! [`apply_kfp_layer`] composes all four on a [`LayerHiddenState`]. Text
//! positions are never modified. Everything here is a pure function over
//! owned or borrowed `f64` buffers.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Visual-token block of one layer, laid out `[frame][token][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTokenGrid {
    frames: usize,
    tokens: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FrameTokenGrid {
    pub fn new(frames: usize, tokens: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || tokens == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "grid dimensions must be positive, got {frames}x{tokens}x{channels}"
            )));
        }
        let expected = frames * tokens * channels;
        if data.len() != expected {
            return Err(Error::InvalidInput(format!(
                "grid data has {} entries, expected {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "grid entry {pos} is not finite"
            )));
        }
        Ok(Self {
            frames,
            tokens,
            channels,
            data,
        })
    }

    pub fn from_fn(
        frames: usize,
        tokens: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * tokens * channels);
        for t in 0..frames {
            for n in 0..tokens {
                for d in 0..channels {
                    data.push(f(t, n, d));
                }
            }
        }
        Self::new(frames, tokens, channels, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, frame: usize, token: usize, channel: usize) -> f64 {
        self.data[(frame * self.tokens + token) * self.channels + channel]
    }

    /// All `tokens * channels` values of one frame.
    pub fn frame(&self, frame: usize) -> &[f64] {
        let stride = self.tokens * self.channels;
        &self.data[frame * stride..(frame + 1) * stride]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Where the visual block sits inside a flattened sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub visual_start: usize,
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub total_len: usize,
}

impl SequenceLayout {
    pub fn new(
        visual_start: usize,
        frames: usize,
        tokens_per_frame: usize,
        total_len: usize,
    ) -> Result<Self> {
        if frames == 0 || tokens_per_frame == 0 {
            return Err(Error::InvalidInput(
                "layout needs at least one frame and one token per frame".into(),
            ));
        }
        if visual_start + frames * tokens_per_frame > total_len {
            return Err(Error::InvalidInput(format!(
                "visual block {}..{} exceeds sequence length {total_len}",
                visual_start,
                visual_start + frames * tokens_per_frame
            )));
        }
        Ok(Self {
            visual_start,
            frames,
            tokens_per_frame,
            total_len,
        })
    }

    pub fn visual_len(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    pub fn visual_range(&self) -> Range<usize> {
        self.visual_start..self.visual_start + self.visual_len()
    }

    pub fn is_visual(&self, position: usize) -> bool {
        self.visual_range().contains(&position)
    }

    /// Sequence positions holding the tokens of `frame`.
    pub fn frame_positions(&self, frame: usize) -> Range<usize> {
        let start = self.visual_start + frame * self.tokens_per_frame;
        start..start + self.tokens_per_frame
    }

    /// Every position outside the visual block.
    pub fn text_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.total_len).filter(move |p| !self.is_visual(*p))
    }
}

/// Hidden state of one layer: `total_len` rows of `dim` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerHiddenState {
    layout: SequenceLayout,
    dim: usize,
    data: Vec<f64>,
}

impl LayerHiddenState {
    pub fn new(layout: SequenceLayout, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("hidden dimension must be positive".into()));
        }
        if data.len() != layout.total_len * dim {
            return Err(Error::InvalidInput(format!(
                "hidden state has {} entries, expected {}x{dim}",
                data.len(),
                layout.total_len
            )));
        }
        Ok(Self { layout, dim, data })
    }

    pub fn layout(&self) -> &SequenceLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.data[position * self.dim..(position + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copies the visual block out as a `frames x tokens x dim` grid.
    pub fn visual_grid(&self) -> Result<FrameTokenGrid> {
        let range = self.layout.visual_range();
        let block = self.data[range.start * self.dim..range.end * self.dim].to_vec();
        FrameTokenGrid::new(
            self.layout.frames,
            self.layout.tokens_per_frame,
            self.dim,
            block,
        )
    }

    /// Returns a copy with the visual block replaced by `grid`; text rows are
    /// copied verbatim.
    pub fn with_visual_grid(&self, grid: &FrameTokenGrid) -> Result<Self> {
        if grid.frames() != self.layout.frames
            || grid.tokens_per_frame() != self.layout.tokens_per_frame
            || grid.channels() != self.dim
        {
            return Err(Error::InvalidInput(format!(
                "grid {}x{}x{} does not fit visual block {}x{}x{}",
                grid.frames(),
                grid.tokens_per_frame(),
                grid.channels(),
                self.layout.frames,
                self.layout.tokens_per_frame,
                self.dim
            )));
        }
        let mut data = self.data.clone();
        let start = self.layout.visual_start * self.dim;
        data[start..start + grid.as_slice().len()].copy_from_slice(grid.as_slice());
        Ok(Self {
            layout: self.layout,
            dim: self.dim,
            data,
        })
    }
}

/// One non-negative ranking score per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAttention {
    scores: Vec<f64>,
    provenance: String,
}

impl FrameAttention {
    pub fn new(scores: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(pos) = scores.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidInput(format!(
                "frame score {pos} is {} (must be finite and non-negative)",
                scores[pos]
            )));
        }
        Ok(Self {
            scores,
            provenance: provenance.into(),
        })
    }

    /// A synthetic attention vector with all mass on `frame`.
    pub fn peaked(frames: usize, frame: usize) -> Result<Self> {
        if frame >= frames {
            return Err(Error::InvalidInput(format!(
                "peak frame {frame} out of range for {frames} frames"
            )));
        }
        let mut scores = vec![0.0; frames];
        scores[frame] = 1.0;
        Self::new(scores, "synthetic-peak")
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn argmax(&self) -> Option<usize> {
        select_key_frames(self, 1).ok().and_then(|v| v.first().copied())
    }
}

/// Intervention hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfpConfig {
    /// Number of key frames.
    pub k: usize,
    /// Total window width in frames; covers offsets up to `m / 2`.
    pub m: usize,
    pub sigma: f64,
    /// Weight of the original hidden state in the final blend.
    pub beta: f64,
    pub layer_lo: usize,
    /// Inclusive.
    pub layer_hi: usize,
}

impl Default for KfpConfig {
    fn default() -> Self {
        Self {
            k: 3,
            m: 5,
            sigma: 1.0,
            beta: 0.6,
            layer_lo: 8,
            layer_hi: 15,
        }
    }
}

impl KfpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.layer_lo > self.layer_hi {
            return Err(Error::InvalidConfig(format!(
                "layer range {}..{} is empty",
                self.layer_lo, self.layer_hi
            )));
        }
        Ok(())
    }

    pub fn with_layers(mut self, lo: usize, hi: usize) -> Self {
        self.layer_lo = lo;
        self.layer_hi = hi;
        self
    }
}

/// Per-frame propagated attention, each entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationField {
    alpha: Vec<f64>,
}

impl PropagationField {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if let Some(pos) = alpha
            .iter()
            .position(|a| !(a.is_finite() && (0.0..=1.0).contains(a)))
        {
            return Err(Error::InvalidInput(format!(
                "alpha[{pos}] = {} outside [0, 1]",
                alpha[pos]
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Indices of the `min(k, T)` highest-scoring frames, ascending. Equal scores
/// prefer the lower frame index.
pub fn select_key_frames(att: &FrameAttention, k: usize) -> Result<Vec<usize>> {
    if att.is_empty() {
        return Err(Error::InvalidInput("attention vector is empty".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let scores = att.scores();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // scores are finite, so total_cmp agrees with the numeric order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    order.sort_unstable();
    Ok(order)
}

/// `exp(-(t - t*)^2 / (2 sigma^2))`.
pub fn gaussian_weight(t: usize, t_star: usize, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok(gaussian_unchecked(t, t_star, sigma))
}

fn gaussian_unchecked(t: usize, t_star: usize, sigma: f64) -> f64 {
    let d = t as f64 - t_star as f64;
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Spreads each key frame over a centered window of `m` frames. Frames outside
/// every window get 0; overlaps keep the larger weight.
pub fn propagate_field(
    key_frames: &[usize],
    frames: usize,
    m: usize,
    sigma: f64,
) -> Result<PropagationField> {
    if frames == 0 {
        return Err(Error::InvalidInput("frame count must be positive".into()));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if let Some(bad) = key_frames.iter().find(|&&t| t >= frames) {
        return Err(Error::InvalidInput(format!(
            "key frame {bad} out of range for {frames} frames"
        )));
    }

    let half = m / 2;
    let mut alpha = vec![0.0f64; frames];
    for &key in key_frames {
        let lo = key.saturating_sub(half);
        let hi = (key + half).min(frames - 1);
        for (t, slot) in alpha.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *slot = slot.max(gaussian_unchecked(t, key, sigma));
        }
    }
    PropagationField::new(alpha)
}

/// `softmax(alpha + 1)` over frames.
pub fn frame_weights(field: &PropagationField) -> Vec<f64> {
    let logits: Vec<f64> = field.alpha().iter().map(|a| a + 1.0).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Scales frame `t` of `grid` by `softmax(alpha + 1)[t]`.
pub fn enhance_visual_tokens(
    grid: &FrameTokenGrid,
    field: &PropagationField,
) -> Result<FrameTokenGrid> {
    if field.len() != grid.frames() {
        return Err(Error::InvalidInput(format!(
            "propagation field has {} frames, grid has {}",
            field.len(),
            grid.frames()
        )));
    }
    let weights = frame_weights(field);
    let stride = grid.tokens_per_frame() * grid.channels();
    let data = grid
        .as_slice()
        .chunks_exact(stride)
        .zip(&weights)
        .flat_map(|(frame, &w)| frame.iter().map(move |v| w * v))
        .collect();
    FrameTokenGrid::new(
        grid.frames(),
        grid.tokens_per_frame(),
        grid.channels(),
        data,
    )
}

/// `(1 - beta) * enhanced + beta * original`, elementwise.
///
/// `beta == 1` returns `original` and `beta == 0` returns `enhanced` exactly.
/// Entries that agree in both inputs are passed through untouched, so rows
/// the enhancement did not modify stay bitwise identical.
pub fn blend_hidden(
    original: &LayerHiddenState,
    enhanced: &LayerHiddenState,
    beta: f64,
) -> Result<LayerHiddenState> {
    if original.layout != enhanced.layout || original.dim != enhanced.dim {
        return Err(Error::InvalidInput(
            "hidden states differ in shape or layout".into(),
        ));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    if beta == 1.0 {
        return Ok(original.clone());
    }
    if beta == 0.0 {
        return Ok(enhanced.clone());
    }
    let data = original
        .data
        .iter()
        .zip(&enhanced.data)
        .map(|(&h, &e)| {
            if h.to_bits() == e.to_bits() {
                h
            } else {
                (1.0 - beta) * e + beta * h
            }
        })
        .collect();
    LayerHiddenState::new(original.layout, original.dim, data)
}

/// Select, propagate, enhance and blend on one layer's hidden state.
pub fn apply_kfp_layer(
    hidden: &LayerHiddenState,
    att: &FrameAttention,
    cfg: &KfpConfig,
) -> Result<LayerHiddenState> {
    cfg.validate()?;
    let frames = hidden.layout().frames;
    if att.len() != frames {
        return Err(Error::InvalidInput(format!(
            "attention covers {} frames, visual block has {frames}",
            att.len()
        )));
    }
    let keys = select_key_frames(att, cfg.k)?;
    let field = propagate_field(&keys, frames, cfg.m, cfg.sigma)?;
    let enhanced = enhance_visual_tokens(&hidden.visual_grid()?, &field)?;
    let hidden_e = hidden.with_visual_grid(&enhanced)?;
    blend_hidden(hidden, &hidden_e, cfg.beta)
}

pub fn layer_in_range(layer: usize, cfg: &KfpConfig) -> bool {
    (cfg.layer_lo..=cfg.layer_hi).contains(&layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E_HALF: f64 = 0.6065306597126334; // exp(-1/2)
    const E_TWO: f64 = 0.1353352832366127; // exp(-2)

    fn att(scores: &[f64]) -> FrameAttention {
        FrameAttention::new(scores.to_vec(), "test").unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn hidden(frames: usize, tokens: usize, dim: usize, prefix: usize, suffix: usize) -> LayerHiddenState {
        let total = prefix + frames * tokens + suffix;
        let layout = SequenceLayout::new(prefix, frames, tokens, total).unwrap();
        let data = (0..total * dim).map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0).collect();
        LayerHiddenState::new(layout, dim, data).unwrap()
    }

    #[test]
    fn key_frames_top_two() {
        assert_eq!(select_key_frames(&att(&[0.2, 0.9, 0.7, 0.1]), 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn key_frames_ties_prefer_lower_index() {
        assert_eq!(select_key_frames(&att(&[0.5, 0.5, 0.5]), 1).unwrap(), vec![0]);
        assert_eq!(select_key_frames(&att(&[0.1, 0.5, 0.5, 0.5]), 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn key_frames_k_clamped() {
        assert_eq!(select_key_frames(&att(&[0.3, 0.8]), 5).unwrap(), vec![0, 1]);
    }

    #[test]
    fn key_frames_empty_rejected() {
        assert!(matches!(
            select_key_frames(&att(&[]), 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn negative_scores_rejected() {
        assert!(FrameAttention::new(vec![0.1, -0.2], "x").is_err());
        assert!(FrameAttention::new(vec![f64::NAN], "x").is_err());
    }

    #[test]
    fn gaussian_examples() {
        assert_eq!(gaussian_weight(2, 2, 1.0).unwrap(), 1.0);
        assert!((gaussian_weight(3, 2, 1.0).unwrap() - E_HALF).abs() < 1e-12);
        assert!((gaussian_weight(0, 2, 1.0).unwrap() - E_TWO).abs() < 1e-12);
        assert!(matches!(gaussian_weight(0, 1, 0.0), Err(Error::InvalidConfig(_))));
        assert!(gaussian_weight(0, 1, -1.0).is_err());
    }

    #[test]
    fn propagate_single_key() {
        let f = propagate_field(&[2], 6, 5, 1.0).unwrap();
        assert!(close(f.alpha(), &[E_TWO, E_HALF, 1.0, E_HALF, E_TWO, 0.0], 1e-12));
    }

    #[test]
    fn propagate_overlap_takes_max() {
        let f = propagate_field(&[0, 2], 4, 5, 1.0).unwrap();
        assert!(close(f.alpha(), &[1.0, E_HALF, 1.0, E_HALF], 1e-12));
    }

    #[test]
    fn propagate_single_frame() {
        assert_eq!(propagate_field(&[0], 1, 1, 1.0).unwrap().alpha(), &[1.0]);
    }

    #[test]
    fn propagate_rejects_out_of_range_key() {
        assert!(matches!(
            propagate_field(&[4], 4, 3, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn enhance_single_frame_is_identity() {
        let grid = FrameTokenGrid::from_fn(1, 3, 2, |_, n, d| (n * 2 + d) as f64 - 1.5).unwrap();
        let field = PropagationField::new(vec![0.37]).unwrap();
        assert_eq!(enhance_visual_tokens(&grid, &field).unwrap(), grid);
    }

    #[test]
    fn enhance_two_frames_uniform() {
        let grid = FrameTokenGrid::from_fn(2, 2, 2, |_, _, _| 1.0).unwrap();
        let field = PropagationField::new(vec![0.0, 0.0]).unwrap();
        let out = enhance_visual_tokens(&grid, &field).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn enhance_two_frames_skewed() {
        let field = PropagationField::new(vec![1.0, 0.0]).unwrap();
        let w = frame_weights(&field);
        assert!((w[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((w[1] - 0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn enhance_length_mismatch() {
        let grid = FrameTokenGrid::from_fn(3, 1, 1, |_, _, _| 1.0).unwrap();
        let field = PropagationField::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            enhance_visual_tokens(&grid, &field),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn blend_examples() {
        let layout = SequenceLayout::new(0, 1, 1, 1).unwrap();
        let h = LayerHiddenState::new(layout, 1, vec![2.0]).unwrap();
        let e = LayerHiddenState::new(layout, 1, vec![1.0]).unwrap();
        assert_eq!(blend_hidden(&h, &e, 1.0).unwrap(), h);
        assert_eq!(blend_hidden(&h, &e, 0.0).unwrap(), e);
        let mixed = blend_hidden(&h, &e, 0.6).unwrap();
        assert!((mixed.as_slice()[0] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn blend_shape_mismatch() {
        let a = hidden(2, 2, 3, 1, 2);
        let b = hidden(2, 2, 3, 1, 3);
        assert!(matches!(blend_hidden(&a, &b, 0.5), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn layer_range_is_inclusive() {
        let cfg = KfpConfig::default();
        assert!(layer_in_range(8, &cfg));
        assert!(!layer_in_range(7, &cfg));
        assert!(layer_in_range(15, &cfg));
        assert!(!layer_in_range(16, &cfg));
    }

    #[test]
    fn default_config_values() {
        let cfg = KfpConfig::default();
        assert_eq!((cfg.k, cfg.m, cfg.layer_lo, cfg.layer_hi), (3, 5, 8, 15));
        assert_eq!((cfg.sigma, cfg.beta), (1.0, 0.6));
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let base = KfpConfig::default();
        assert!(KfpConfig { k: 0, ..base }.validate().is_err());
        assert!(KfpConfig { m: 0, ..base }.validate().is_err());
        assert!(KfpConfig { sigma: 0.0, ..base }.validate().is_err());
        assert!(KfpConfig { beta: 1.01, ..base }.validate().is_err());
        assert!(KfpConfig { beta: -0.1, ..base }.validate().is_err());
        assert!(base.with_layers(5, 4).validate().is_err());
    }

    #[test]
    fn apply_beta_one_is_identity() {
        let h = hidden(6, 2, 3, 2, 4);
        let cfg = KfpConfig { beta: 1.0, ..Default::default() };
        let a = att(&[0.1, 0.2, 0.9, 0.0, 0.3, 0.3]);
        assert_eq!(apply_kfp_layer(&h, &a, &cfg).unwrap(), h);
    }

    #[test]
    fn apply_single_frame_is_identity() {
        let h = hidden(1, 3, 4, 1, 3);
        let cfg = KfpConfig { beta: 0.3, ..Default::default() };
        assert_eq!(apply_kfp_layer(&h, &att(&[0.4]), &cfg).unwrap(), h);
    }

    #[test]
    fn apply_composes_the_pipeline() {
        let h = hidden(6, 2, 3, 1, 2);
        let cfg = KfpConfig { k: 1, m: 5, sigma: 1.0, beta: 0.6, ..Default::default() };
        let a = FrameAttention::peaked(6, 2).unwrap();
        let out = apply_kfp_layer(&h, &a, &cfg).unwrap();

        // softmax over alpha + 1 with alpha from the single-key example
        let alpha = [E_TWO, E_HALF, 1.0, E_HALF, E_TWO, 0.0];
        let exps: Vec<f64> = alpha.iter().map(|a| (a + 1.0f64).exp()).collect();
        let total: f64 = exps.iter().sum();
        let w: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let layout = *h.layout();
        for (t, wt) in w.iter().enumerate() {
            for p in layout.frame_positions(t) {
                for d in 0..3 {
                    let v = h.row(p)[d];
                    let expected = 0.4 * (wt * v) + 0.6 * v;
                    assert!((out.row(p)[d] - expected).abs() < 1e-12);
                }
            }
        }
        for p in layout.text_positions() {
            assert_eq!(out.row(p), h.row(p));
        }
    }

    #[test]
    fn apply_rejects_mismatched_attention() {
        let h = hidden(4, 1, 2, 0, 1);
        assert!(apply_kfp_layer(&h, &att(&[1.0, 0.0]), &KfpConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn weights_normalized_and_bounded(alpha in prop::collection::vec(0.0f64..=1.0, 1..40)) {
            let w = frame_weights(&PropagationField::new(alpha.clone()).unwrap());
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
            // monotone in alpha
            for i in 0..alpha.len() {
                for j in 0..alpha.len() {
                    if alpha[i] <= alpha[j] {
                        prop_assert!(w[i] <= w[j]);
                    }
                }
            }
        }

        #[test]
        fn text_rows_survive_any_beta(beta in 0.0f64..=1.0, peak in 0usize..5, k in 1usize..4) {
            let h = hidden(5, 2, 3, 2, 3);
            let cfg = KfpConfig { k, beta, ..Default::default() };
            let out = apply_kfp_layer(&h, &FrameAttention::peaked(5, peak).unwrap(), &cfg).unwrap();
            for p in h.layout().text_positions() {
                prop_assert_eq!(out.row(p), h.row(p));
            }
        }

        #[test]
        fn key_frames_hold_the_peak(
            scores in prop::collection::vec(0.0f64..1.0, 1..20),
            k in 1usize..6,
            m in 1usize..9,
        ) {
            let keys = select_key_frames(&att(&scores), k).unwrap();
            let f = propagate_field(&keys, scores.len(), m, 1.0).unwrap();
            for &key in &keys {
                prop_assert_eq!(f.alpha()[key], 1.0);
            }
        }
    }
}
