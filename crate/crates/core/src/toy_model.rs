//! A small, untrained, seed-reproducible decoder used to exercise key-frame
//! propagation end to end.
//!
//! Sequence layout is `[<bos>] [T*N visual tokens] [text tokens]`. Each layer
//! is pre-norm: `x = h + attn(ln(h))`, optional intervention on `x`, then
//! `x + mlp(ln(x))`. The answer is the greedy argmax over the digit tokens
//! `"1".."choices"` at the last position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kfp::{
    apply_kfp_layer, layer_in_range, FrameAttention, FrameTokenGrid, KfpConfig,
    LayerHiddenState, SequenceLayout,
};
use crate::rng::{fnv1a64, SplitMix64};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const DIGITS: [&str; 7] = ["1", "2", "3", "4", "5", "6", "7"];

const WEIGHT_SCALE: f64 = 0.1;
const LN_EPS: f64 = 1e-5;

/// Token id of digit `n` (1-based).
pub fn digit_token(n: usize) -> TokenId {
    assert!((1..=7).contains(&n), "digit {n} outside 1..=7");
    n as TokenId
}

/// Which query rows feed the frame ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRow {
    #[default]
    LastText,
    MeanText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadReduce {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttentionAggregation {
    pub query: QueryRow,
    pub heads: HeadReduce,
}

impl AttentionAggregation {
    fn describe(&self) -> String {
        let q = match self.query {
            QueryRow::LastText => "last-text",
            QueryRow::MeanText => "mean-text",
        };
        let h = match self.heads {
            HeadReduce::Mean => "head-mean",
            HeadReduce::Max => "head-max",
        };
        format!("{q}/{h}/frame-mean")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Total vocabulary; ids `0` (`<bos>`) and `1..=7` (digits) are reserved.
    pub vocab_size: usize,
    pub frames: usize,
    pub tokens_per_frame: usize,
    /// Longer text inputs keep their last `max_text_tokens` tokens.
    pub max_text_tokens: usize,
    pub seed: u64,
    pub aggregation: AttentionAggregation,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            layers: 16,
            heads: 4,
            d_model: 32,
            d_ff: 64,
            vocab_size: 256,
            frames: 8,
            tokens_per_frame: 4,
            max_text_tokens: 16,
            seed: 0,
            aggregation: AttentionAggregation::default(),
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("frames", self.frames),
            ("tokens_per_frame", self.tokens_per_frame),
            ("max_text_tokens", self.max_text_tokens),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size <= DIGITS.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} leaves no room for word tokens after <bos> and the seven digits",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Hashes whitespace-separated words into the non-reserved id range.
    /// Bare digit words `1`..`7` map to their digit tokens.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let reserved = DIGITS.len() as u64 + 1;
        let span = self.vocab_size as u64 - reserved;
        let mut ids: Vec<TokenId> = text
            .split_whitespace()
            .map(|word| match DIGITS.iter().position(|d| *d == word) {
                Some(i) => digit_token(i + 1),
                None => (reserved + fnv1a64(word.as_bytes()) % span) as TokenId,
            })
            .collect();
        if ids.len() > self.max_text_tokens {
            ids.drain(..ids.len() - self.max_text_tokens);
        }
        ids
    }
}

/// Post-softmax attention of one layer, `[head][query][key]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    heads: usize,
    seq_len: usize,
    data: Vec<f64>,
}

impl AttentionMap {
    pub fn new(heads: usize, seq_len: usize, data: Vec<f64>) -> Result<Self> {
        if heads == 0 || seq_len == 0 || data.len() != heads * seq_len * seq_len {
            return Err(Error::InvalidInput(format!(
                "attention map of {} entries does not match {heads} heads x {seq_len}^2",
                data.len()
            )));
        }
        Ok(Self {
            heads,
            seq_len,
            data,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn get(&self, head: usize, query: usize, key: usize) -> f64 {
        self.data[(head * self.seq_len + query) * self.seq_len + key]
    }

    fn row(&self, head: usize, query: usize) -> &[f64] {
        let start = (head * self.seq_len + query) * self.seq_len;
        &self.data[start..start + self.seq_len]
    }
}

/// Reduces one layer's attention to a per-frame ranking score: pick query
/// row(s), reduce over heads, then average over each frame's tokens.
pub fn frame_attention_summary(
    attention: &AttentionMap,
    layout: &SequenceLayout,
    aggregation: AttentionAggregation,
) -> Result<FrameAttention> {
    if attention.seq_len() != layout.total_len {
        return Err(Error::InvalidInput(format!(
            "attention covers {} positions, layout has {}",
            attention.seq_len(),
            layout.total_len
        )));
    }
    let visual_end = layout.visual_range().end;
    if visual_end >= layout.total_len {
        return Err(Error::InvalidInput(
            "layout has no text positions after the visual block".into(),
        ));
    }
    let queries: Vec<usize> = match aggregation.query {
        QueryRow::LastText => vec![layout.total_len - 1],
        QueryRow::MeanText => (visual_end..layout.total_len).collect(),
    };

    // per-key score after query and head reduction
    let mut per_key = vec![0.0; layout.total_len];
    let heads = attention.heads();
    for (key, slot) in per_key.iter_mut().enumerate() {
        let head_vals = (0..heads).map(|h| {
            let s: f64 = queries.iter().map(|&q| attention.row(h, q)[key]).sum();
            s / queries.len() as f64
        });
        *slot = match aggregation.heads {
            HeadReduce::Mean => head_vals.sum::<f64>() / heads as f64,
            HeadReduce::Max => head_vals.fold(0.0, f64::max),
        };
    }

    let scores = (0..layout.frames)
        .map(|t| {
            let positions = layout.frame_positions(t);
            per_key[positions].iter().sum::<f64>() / layout.tokens_per_frame as f64
        })
        .collect();
    FrameAttention::new(scores, aggregation.describe())
}

#[derive(Debug, Clone)]
struct Block {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    w_in: Vec<f64>,
    w_out: Vec<f64>,
}

/// Immutable after construction; `forward` takes `&self` and is reentrant.
#[derive(Debug, Clone)]
pub struct ToyModel {
    cfg: ToyModelConfig,
    embed: Vec<f64>,
    blocks: Vec<Block>,
    unembed: Vec<f64>,
}

/// Knobs for one forward pass beyond the inputs themselves.
#[derive(Debug, Clone)]
pub struct ForwardOptions {
    pub kfp: Option<KfpConfig>,
    /// Replaces the per-layer attention summary at every in-range layer.
    pub attention_override: Option<FrameAttention>,
    /// Layers whose pre-MLP state and attention are recorded.
    pub taps: Vec<usize>,
    /// Decode over digits `1..=choices`.
    pub choices: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            kfp: None,
            attention_override: None,
            taps: Vec::new(),
            choices: DIGITS.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTap {
    pub layer: usize,
    /// Pre-MLP hidden state, after any intervention at this layer.
    pub hidden: LayerHiddenState,
    pub attention: AttentionMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub answer_text: String,
    pub chosen_token: TokenId,
    /// Logits of digits `1..=choices`, in order.
    pub logits: Vec<f64>,
    pub taps: Vec<LayerTap>,
}

impl ToyModel {
    /// Draws every weight from one SplitMix64 stream seeded with `cfg.seed`,
    /// mapped to `[-0.1, 0.1)`, in the order: token embedding, then per
    /// layer `Wq, Wk, Wv, Wo, W_in, W_out`, then the unembedding.
    pub fn new(cfg: ToyModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(cfg.seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.symmetric(WEIGHT_SCALE)).collect() };
        let d = cfg.d_model;
        let embed = draw(cfg.vocab_size * d);
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                wq: draw(d * d),
                wk: draw(d * d),
                wv: draw(d * d),
                wo: draw(d * d),
                w_in: draw(d * cfg.d_ff),
                w_out: draw(cfg.d_ff * d),
            })
            .collect();
        let unembed = draw(d * cfg.vocab_size);
        Ok(Self {
            cfg,
            embed,
            blocks,
            unembed,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.cfg
    }

    /// FNV-1a over the bit patterns of the first layer's weights.
    pub fn first_layer_checksum(&self) -> u64 {
        let b = &self.blocks[0];
        let bytes: Vec<u8> = [&b.wq, &b.wk, &b.wv, &b.wo, &b.w_in, &b.w_out]
            .iter()
            .flat_map(|w| w.iter().flat_map(|v| v.to_bits().to_le_bytes()))
            .collect();
        fnv1a64(&bytes)
    }

    pub fn layout_for(&self, text_len: usize) -> Result<SequenceLayout> {
        let c = &self.cfg;
        SequenceLayout::new(
            1,
            c.frames,
            c.tokens_per_frame,
            1 + c.frames * c.tokens_per_frame + text_len,
        )
    }

    pub fn forward(
        &self,
        grid: &FrameTokenGrid,
        text: &[TokenId],
        kfp: Option<&KfpConfig>,
    ) -> Result<DecodeResult> {
        let opts = ForwardOptions {
            kfp: kfp.copied(),
            ..Default::default()
        };
        self.forward_with(grid, text, &opts)
    }

    pub fn forward_with(
        &self,
        grid: &FrameTokenGrid,
        text: &[TokenId],
        opts: &ForwardOptions,
    ) -> Result<DecodeResult> {
        let c = &self.cfg;
        if grid.frames() != c.frames
            || grid.tokens_per_frame() != c.tokens_per_frame
            || grid.channels() != c.d_model
        {
            return Err(Error::InvalidInput(format!(
                "visual grid {}x{}x{} does not match model {}x{}x{}",
                grid.frames(),
                grid.tokens_per_frame(),
                grid.channels(),
                c.frames,
                c.tokens_per_frame,
                c.d_model
            )));
        }
        if text.is_empty() {
            return Err(Error::InvalidInput("text token list is empty".into()));
        }
        if let Some(bad) = text.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} outside vocabulary of {}",
                c.vocab_size
            )));
        }
        if !(1..=DIGITS.len()).contains(&opts.choices) {
            return Err(Error::InvalidInput(format!(
                "choices must be in 1..=7, got {}",
                opts.choices
            )));
        }
        if let Some(kfp) = &opts.kfp {
            kfp.validate()?;
        }
        if let Some(att) = &opts.attention_override {
            if att.len() != c.frames {
                return Err(Error::InvalidInput(format!(
                    "attention override covers {} frames, model has {}",
                    att.len(),
                    c.frames
                )));
            }
        }

        let d = c.d_model;
        let layout = self.layout_for(text.len())?;
        let seq = layout.total_len;

        let mut h = Vec::with_capacity(seq * d);
        h.extend_from_slice(self.embedding(BOS));
        h.extend_from_slice(grid.as_slice());
        for &tok in text {
            h.extend_from_slice(self.embedding(tok));
        }
        for pos in 0..seq {
            add_position(&mut h[pos * d..(pos + 1) * d], pos);
        }

        let mut taps = Vec::new();
        for (layer, block) in self.blocks.iter().enumerate() {
            let normed = layer_norm_rows(&h, d);
            let (attn_out, attention) = self.attention(block, &normed, seq)?;
            for (x, a) in h.iter_mut().zip(&attn_out) {
                *x += a;
            }

            let mut state = LayerHiddenState::new(layout, d, h)?;
            if let Some(kfp) = opts.kfp.as_ref().filter(|k| layer_in_range(layer, k)) {
                let att = match &opts.attention_override {
                    Some(a) => a.clone(),
                    None => frame_attention_summary(&attention, &layout, c.aggregation)?,
                };
                state = apply_kfp_layer(&state, &att, kfp)?;
            }
            if opts.taps.contains(&layer) {
                taps.push(LayerTap {
                    layer,
                    hidden: state.clone(),
                    attention,
                });
            }
            h = state.into_vec();

            let normed = layer_norm_rows(&h, d);
            let mlp_out = mlp(block, &normed, d, c.d_ff);
            for (x, m) in h.iter_mut().zip(&mlp_out) {
                *x += m;
            }
        }

        let last = layer_norm(&h[(seq - 1) * d..seq * d]);
        let logits: Vec<f64> = (1..=opts.choices)
            .map(|n| {
                let tok = digit_token(n) as usize;
                (0..d)
                    .map(|i| last[i] * self.unembed[i * c.vocab_size + tok])
                    .sum()
            })
            .collect();
        let best = argmax(&logits);
        Ok(DecodeResult {
            answer_text: DIGITS[best].to_string(),
            chosen_token: digit_token(best + 1),
            logits,
            taps,
        })
    }

    fn embedding(&self, tok: TokenId) -> &[f64] {
        let d = self.cfg.d_model;
        let i = tok as usize;
        &self.embed[i * d..(i + 1) * d]
    }

    fn attention(&self, block: &Block, x: &[f64], seq: usize) -> Result<(Vec<f64>, AttentionMap)> {
        let d = self.cfg.d_model;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let q = matmul(x, &block.wq, seq, d, d);
        let k = matmul(x, &block.wk, seq, d, d);
        let v = matmul(x, &block.wv, seq, d, d);
        let scale = 1.0 / (dh as f64).sqrt();

        let mut probs = vec![0.0; heads * seq * seq];
        let mut mixed = vec![0.0; seq * d];
        for head in 0..heads {
            let off = head * dh;
            for qi in 0..seq {
                let row = &mut probs[(head * seq + qi) * seq..(head * seq + qi + 1) * seq];
                let qv = &q[qi * d + off..qi * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for (ki, slot) in row.iter_mut().enumerate().take(qi + 1) {
                    let kv = &k[ki * d + off..ki * d + off + dh];
                    let s = dot(qv, kv) * scale;
                    *slot = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for slot in row.iter_mut().take(qi + 1) {
                    *slot = (*slot - max).exp();
                    sum += *slot;
                }
                for slot in row.iter_mut().take(qi + 1) {
                    *slot /= sum;
                }
                let out = &mut mixed[qi * d + off..qi * d + off + dh];
                for (ki, &p) in row.iter().enumerate().take(qi + 1) {
                    let vv = &v[ki * d + off..ki * d + off + dh];
                    for (o, x) in out.iter_mut().zip(vv) {
                        *o += p * x;
                    }
                }
            }
        }
        let out = matmul(&mixed, &block.wo, seq, d, d);
        Ok((out, AttentionMap::new(heads, seq, probs)?))
    }
}

fn mlp(block: &Block, x: &[f64], d: usize, d_ff: usize) -> Vec<f64> {
    let rows = x.len() / d;
    let mut hidden = matmul(x, &block.w_in, rows, d, d_ff);
    for v in hidden.iter_mut() {
        *v = gelu(*v);
    }
    matmul(&hidden, &block.w_out, rows, d_ff, d)
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// `a` is `rows x inner`, `b` is `inner x cols`, both row-major.
fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let dst = &mut out[r * cols..(r + 1) * cols];
        for (i, &av) in a[r * inner..(r + 1) * inner].iter().enumerate() {
            for (o, &bv) in dst.iter_mut().zip(&b[i * cols..(i + 1) * cols]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn layer_norm_rows(x: &[f64], d: usize) -> Vec<f64> {
    x.chunks_exact(d).flat_map(layer_norm).collect()
}

fn add_position(row: &mut [f64], pos: usize) {
    let d = row.len();
    for (i, v) in row.iter_mut().enumerate() {
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * freq;
        *v += 0.1 * if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Deterministic visual input in `[-1, 1)` keyed by a clip id.
pub fn synthetic_grid(cfg: &ToyModelConfig, clip: &str, seed: u64) -> FrameTokenGrid {
    let mut rng = SplitMix64::new(crate::rng::derive_seed(seed, clip));
    FrameTokenGrid::from_fn(cfg.frames, cfg.tokens_per_frame, cfg.d_model, |_, _, _| {
        rng.symmetric(1.0)
    })
    .expect("model config guarantees positive grid dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> ToyModelConfig {
        ToyModelConfig {
            layers: 4,
            seed,
            ..Default::default()
        }
    }

    fn inputs(model: &ToyModel) -> (FrameTokenGrid, Vec<TokenId>) {
        let grid = synthetic_grid(model.config(), "clip-a", 3);
        let text = model.config().tokenize("Why does the person open the door ?");
        (grid, text)
    }

    #[test]
    fn same_seed_same_weights() {
        let a = ToyModel::new(small_cfg(7)).unwrap();
        let b = ToyModel::new(small_cfg(7)).unwrap();
        assert_eq!(a.first_layer_checksum(), b.first_layer_checksum());
    }

    #[test]
    fn adjacent_seeds_differ() {
        let a = ToyModel::new(small_cfg(7)).unwrap();
        let b = ToyModel::new(small_cfg(8)).unwrap();
        assert_ne!(a.first_layer_checksum(), b.first_layer_checksum());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = ToyModelConfig {
            d_model: 33,
            heads: 2,
            ..Default::default()
        };
        assert!(matches!(ToyModel::new(cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn tokenizer_reserves_ids_and_truncates() {
        let cfg = ToyModelConfig {
            max_text_tokens: 3,
            ..Default::default()
        };
        let ids = cfg.tokenize("a b 3 c");
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[1], digit_token(3));
        assert!(ids[0] as usize > 7 && ids[2] as usize > 7);
    }

    #[test]
    fn beta_one_matches_baseline() {
        let model = ToyModel::new(small_cfg(1)).unwrap();
        let (grid, text) = inputs(&model);
        let base = model.forward(&grid, &text, None).unwrap();
        let kfp = KfpConfig {
            beta: 1.0,
            ..Default::default()
        }
        .with_layers(0, 3);
        let with = model.forward(&grid, &text, Some(&kfp)).unwrap();
        assert_eq!(base, with);
    }

    #[test]
    fn out_of_model_range_matches_baseline() {
        let model = ToyModel::new(small_cfg(1)).unwrap();
        let (grid, text) = inputs(&model);
        let base = model.forward(&grid, &text, None).unwrap();
        let kfp = KfpConfig::default().with_layers(99, 99);
        assert_eq!(base, model.forward(&grid, &text, Some(&kfp)).unwrap());
    }

    #[test]
    fn beta_zero_changes_logits() {
        let model = ToyModel::new(small_cfg(5)).unwrap();
        let (grid, text) = inputs(&model);
        let base = model.forward(&grid, &text, None).unwrap();
        let opts = ForwardOptions {
            kfp: Some(KfpConfig { k: 1, beta: 0.0, ..Default::default() }.with_layers(1, 2)),
            attention_override: Some(FrameAttention::peaked(8, 2).unwrap()),
            ..Default::default()
        };
        let out = model.forward_with(&grid, &text, &opts).unwrap();
        assert_ne!(base.logits, out.logits);
    }

    #[test]
    fn answers_are_constrained_digits() {
        let model = ToyModel::new(small_cfg(2)).unwrap();
        let (grid, text) = inputs(&model);
        for choices in 1..=7 {
            let opts = ForwardOptions { choices, ..Default::default() };
            let out = model.forward_with(&grid, &text, &opts).unwrap();
            assert_eq!(out.logits.len(), choices);
            let n: usize = out.answer_text.parse().unwrap();
            assert!((1..=choices).contains(&n));
            assert_eq!(out.chosen_token as usize, n);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let model = ToyModel::new(small_cfg(2)).unwrap();
        let grid = FrameTokenGrid::from_fn(3, 4, 32, |_, _, _| 0.0).unwrap();
        assert!(matches!(
            model.forward(&grid, &[9], None),
            Err(Error::InvalidInput(_))
        ));
        let (grid, _) = inputs(&model);
        assert!(model.forward(&grid, &[], None).is_err());
    }

    #[test]
    fn taps_record_requested_layers() {
        let model = ToyModel::new(small_cfg(2)).unwrap();
        let (grid, text) = inputs(&model);
        let opts = ForwardOptions { taps: vec![0, 2], ..Default::default() };
        let out = model.forward_with(&grid, &text, &opts).unwrap();
        let layers: Vec<usize> = out.taps.iter().map(|t| t.layer).collect();
        assert_eq!(layers, vec![0, 2]);
        let tap = &out.taps[0];
        assert_eq!(tap.attention.seq_len(), tap.hidden.layout().total_len);
    }

    #[test]
    fn text_rows_intact_at_first_hooked_layer() {
        let model = ToyModel::new(small_cfg(4)).unwrap();
        let (grid, text) = inputs(&model);
        let base = model
            .forward_with(&grid, &text, &ForwardOptions { taps: vec![1], ..Default::default() })
            .unwrap();
        let opts = ForwardOptions {
            kfp: Some(KfpConfig { beta: 0.2, ..Default::default() }.with_layers(1, 3)),
            taps: vec![1],
            ..Default::default()
        };
        let out = model.forward_with(&grid, &text, &opts).unwrap();
        let (b, o) = (&base.taps[0].hidden, &out.taps[0].hidden);
        for p in b.layout().text_positions() {
            assert_eq!(b.row(p), o.row(p));
        }
        assert_ne!(b.visual_grid().unwrap(), o.visual_grid().unwrap());
    }

    fn layout_2x2() -> SequenceLayout {
        // bos, 2 frames x 2 tokens, 2 text positions
        SequenceLayout::new(1, 2, 2, 7).unwrap()
    }

    fn map_from(heads: usize, seq: usize, f: impl Fn(usize, usize, usize) -> f64) -> AttentionMap {
        let mut data = Vec::new();
        for h in 0..heads {
            for q in 0..seq {
                for k in 0..seq {
                    data.push(f(h, q, k));
                }
            }
        }
        AttentionMap::new(heads, seq, data).unwrap()
    }

    #[test]
    fn summary_uniform_attention() {
        let layout = SequenceLayout::new(1, 3, 2, 9).unwrap();
        let att = map_from(2, 9, |_, _, _| 1.0 / 9.0);
        let s = frame_attention_summary(&att, &layout, Default::default()).unwrap();
        assert!(s.scores().iter().all(|&v| v == s.scores()[0]));
    }

    #[test]
    fn summary_mass_on_one_frame() {
        let layout = SequenceLayout::new(1, 4, 2, 11).unwrap();
        let frame2 = layout.frame_positions(2);
        let att = map_from(1, 11, |_, _, k| if frame2.contains(&k) { 0.5 } else { 0.0 });
        let s = frame_attention_summary(&att, &layout, Default::default()).unwrap();
        assert_eq!(s.argmax(), Some(2));
    }

    #[test]
    fn summary_averages_heads() {
        let layout = layout_2x2();
        let att = map_from(2, 7, |h, _, k| {
            let frame = if (1..3).contains(&k) { Some(0) } else if (3..5).contains(&k) { Some(1) } else { None };
            if frame == Some(h) { 0.5 } else { 0.0 }
        });
        let s = frame_attention_summary(&att, &layout, Default::default()).unwrap();
        // each frame: head mean of (0.5, 0) per token = 0.25, token mean = 0.25
        assert_eq!(s.scores(), &[0.25, 0.25]);

        let max = AttentionAggregation { heads: HeadReduce::Max, ..Default::default() };
        let s = frame_attention_summary(&att, &layout, max).unwrap();
        assert_eq!(s.scores(), &[0.5, 0.5]);
    }

    #[test]
    fn summary_mean_over_text_rows() {
        let layout = layout_2x2();
        // query 5 looks at frame 0, query 6 at frame 1
        let att = map_from(1, 7, |_, q, k| match (q, k) {
            (5, 1) | (5, 2) | (6, 3) | (6, 4) => 0.5,
            _ => 0.0,
        });
        let last = frame_attention_summary(&att, &layout, Default::default()).unwrap();
        assert_eq!(last.scores(), &[0.0, 0.5]);
        let mean = AttentionAggregation { query: QueryRow::MeanText, ..Default::default() };
        let s = frame_attention_summary(&att, &layout, mean).unwrap();
        assert_eq!(s.scores(), &[0.25, 0.25]);
    }

    #[test]
    fn summary_layout_mismatch() {
        let att = map_from(1, 5, |_, _, _| 0.2);
        assert!(matches!(
            frame_attention_summary(&att, &layout_2x2(), Default::default()),
            Err(Error::InvalidInput(_))
        ));
    }
}
