//! Evaluation plumbing: answer providers, evaluation runs, and ablation
//! sweeps over the intervention hyperparameters.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_prompt, candidate_permutation, shuffle_candidates, Sample, TaskKind};
use crate::error::{Error, Result};
use crate::kfp::KfpConfig;
use crate::rng::{derive_seed, SplitMix64};
use crate::scoring::{
    format_table, load_predictions, parse_answer, score, table_cells, ParsedAnswer,
    PredictionRecord, ReportFormat, ScoreOptions, ScoreReport, TABLE_COLUMNS,
};
use crate::toy_model::{synthetic_grid, ForwardOptions, ToyModel, ToyModelConfig};

/// Maps a sample and its rendered prompt to raw answer text. Implementations
/// must be deterministic for a fixed state.
pub trait AnswerProvider: Send + Sync {
    fn name(&self) -> &str;
    fn answer(&self, sample: &Sample, prompt: &str) -> Result<String>;
}

/// Uniform guess over the candidate numbers, seeded per sample id so the
/// answer does not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct RandomProvider {
    seed: u64,
}

impl RandomProvider {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl AnswerProvider for RandomProvider {
    fn name(&self) -> &str {
        "random"
    }

    fn answer(&self, sample: &Sample, _prompt: &str) -> Result<String> {
        let mut rng = SplitMix64::new(derive_seed(self.seed, &sample.id));
        Ok((rng.below(sample.candidates.len()) + 1).to_string())
    }
}

/// Answers with the toy decoder. The visual input is synthesized from the
/// sample's `video_ref`; the text input is the hashed prompt.
#[derive(Debug, Clone)]
pub struct ToyProvider {
    model: ToyModel,
    kfp: Option<KfpConfig>,
    seed: u64,
}

impl ToyProvider {
    pub fn new(model: ToyModel, kfp: Option<KfpConfig>, seed: u64) -> Result<Self> {
        if let Some(k) = &kfp {
            k.validate()?;
        }
        Ok(Self { model, kfp, seed })
    }

    /// Default-sized model whose weights derive from `seed`.
    pub fn with_seed(seed: u64, kfp: Option<KfpConfig>) -> Result<Self> {
        let model = ToyModel::new(ToyModelConfig {
            seed,
            ..Default::default()
        })?;
        Self::new(model, kfp, seed)
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }

    pub fn with_kfp(&self, kfp: Option<KfpConfig>) -> Result<Self> {
        Self::new(self.model.clone(), kfp, self.seed)
    }
}

impl AnswerProvider for ToyProvider {
    fn name(&self) -> &str {
        "toy"
    }

    fn answer(&self, sample: &Sample, prompt: &str) -> Result<String> {
        let cfg = self.model.config();
        let grid = synthetic_grid(cfg, &sample.video_ref, self.seed);
        let text = cfg.tokenize(prompt);
        let opts = ForwardOptions {
            kfp: self.kfp,
            choices: sample.candidates.len(),
            ..Default::default()
        };
        Ok(self.model.forward_with(&grid, &text, &opts)?.answer_text)
    }
}

/// Replays answers from a predictions file: `file` for harness output,
/// `external` for files written by the model bridge.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    label: &'static str,
    answers: HashMap<String, String>,
}

impl ReplayProvider {
    pub fn from_records(label: &'static str, records: Vec<PredictionRecord>) -> Result<Self> {
        let mut answers = HashMap::with_capacity(records.len());
        for r in records {
            if answers.insert(r.sample_id.clone(), r.raw_text).is_some() {
                return Err(Error::validation(r.sample_id, "duplicate prediction in replay file"));
            }
        }
        Ok(Self { label, answers })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records("file", load_predictions(path)?)
    }

    pub fn from_bridge_output(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records("external", load_predictions(path)?)
    }
}

impl AnswerProvider for ReplayProvider {
    fn name(&self) -> &str {
        self.label
    }

    fn answer(&self, sample: &Sample, _prompt: &str) -> Result<String> {
        self.answers
            .get(&sample.id)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no recorded answer for `{}`", sample.id)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Shuffle QA/CFQA candidates with this seed before prompting. Answers
    /// are mapped back to the stored candidate numbering.
    pub shuffle_seed: Option<u64>,
    /// Worker threads; 0 or 1 runs serially.
    pub workers: usize,
    /// Write per-sample `latency_ms` (makes output non-reproducible).
    pub record_timing: bool,
    pub model_name: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    /// In dataset order.
    pub predictions: Vec<PredictionRecord>,
    /// Samples whose provider call failed; recorded with empty text.
    pub failures: Vec<String>,
    pub elapsed_secs: f64,
}

impl EvalRun {
    pub fn samples_per_sec(&self) -> f64 {
        if self.elapsed_secs > 0.0 {
            self.predictions.len() as f64 / self.elapsed_secs
        } else {
            f64::INFINITY
        }
    }
}

fn eval_one(
    sample: &Sample,
    provider: &dyn AnswerProvider,
    opts: &EvalOptions,
) -> Result<(PredictionRecord, bool)> {
    let started = Instant::now();
    let perm = match opts.shuffle_seed {
        Some(seed) if sample.task != TaskKind::Rc => Some(candidate_permutation(sample, seed)?),
        _ => None,
    };
    let view = match opts.shuffle_seed {
        Some(seed) if perm.is_some() => shuffle_candidates(sample, seed)?,
        _ => sample.clone(),
    };
    let prompt = build_prompt(&view)?;
    let (mut raw, failed) = match provider.answer(&view, &prompt) {
        Ok(text) => (text, false),
        Err(e) => {
            log::warn!("provider {} failed on `{}`: {e}", provider.name(), sample.id);
            (String::new(), true)
        }
    };
    if let Some(p) = &perm {
        let texts = view.candidate_texts();
        if let ParsedAnswer::Index(i) = parse_answer(&raw, texts.len(), Some(&texts)) {
            raw = (p[i - 1] + 1).to_string();
        }
    }
    let mut record = PredictionRecord::new(&sample.id, raw);
    record.model_name = opts.model_name.clone();
    if opts.record_timing {
        record.latency_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }
    Ok((record, failed))
}

/// Prompts `provider` with every sample. A failing provider call never aborts
/// the run; it is recorded as an empty answer and listed in `failures`.
pub fn run_eval(
    samples: &[Sample],
    provider: &dyn AnswerProvider,
    opts: &EvalOptions,
) -> Result<EvalRun> {
    let started = Instant::now();
    let results: Vec<Result<(PredictionRecord, bool)>> = if opts.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| {
            samples
                .par_iter()
                .map(|s| eval_one(s, provider, opts))
                .collect()
        })
    } else {
        samples.iter().map(|s| eval_one(s, provider, opts)).collect()
    };
    let mut predictions = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    for r in results {
        let (record, failed) = r?;
        if failed {
            failures.push(record.sample_id.clone());
        }
        predictions.push(record);
    }
    Ok(EvalRun {
        predictions,
        failures,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

/// `run_eval` followed by `score`.
pub fn evaluate(
    samples: &[Sample],
    provider: &dyn AnswerProvider,
    eval_opts: &EvalOptions,
    score_opts: &ScoreOptions,
) -> Result<(EvalRun, ScoreReport)> {
    let run = run_eval(samples, provider, eval_opts)?;
    let report = score(samples, &run.predictions, score_opts)?;
    Ok((run, report))
}

/// Parses `LO..HI` (also accepts `LO-HI`), inclusive on both ends.
pub fn parse_layer_range(text: &str) -> Result<(usize, usize)> {
    let (lo, hi) = text
        .split_once("..")
        .or_else(|| text.split_once('-'))
        .ok_or_else(|| Error::InvalidConfig(format!("layer range `{text}`: expected LO..HI")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidConfig(format!("layer range `{text}`: not an integer")))
    };
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if lo > hi {
        return Err(Error::InvalidConfig(format!("layer range `{text}` is empty")));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    M,
    Beta,
    LayerRange,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(SweepAxis::M),
            "beta" => Ok(SweepAxis::Beta),
            "layers" | "layer_range" | "layer-range" => Ok(SweepAxis::LayerRange),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis `{other}` (expected m, beta or layers)"
            ))),
        }
    }
}

impl SweepAxis {
    /// Label of the KFP-disabled reference row.
    pub fn base_label(&self) -> &'static str {
        match self {
            SweepAxis::LayerRange => "Baseline",
            _ => "Base",
        }
    }

    pub fn header(&self) -> &'static str {
        match self {
            SweepAxis::M => "m",
            SweepAxis::Beta => "beta",
            SweepAxis::LayerRange => "Layer",
        }
    }

    pub fn default_values(&self) -> Vec<SweepValue> {
        match self {
            SweepAxis::M => (2..=6).map(SweepValue::M).collect(),
            SweepAxis::Beta => [0.55, 0.60, 0.65, 0.70, 0.75]
                .into_iter()
                .map(SweepValue::Beta)
                .collect(),
            SweepAxis::LayerRange => [
                (0, 5),
                (0, 10),
                (5, 10),
                (5, 15),
                (10, 15),
                (10, 20),
                (15, 20),
                (15, 25),
                (20, 25),
            ]
            .into_iter()
            .map(|(lo, hi)| SweepValue::Layers(lo, hi))
            .collect(),
        }
    }

    /// Parses a comma-separated value list for this axis.
    pub fn parse_values(&self, text: &str) -> Result<Vec<SweepValue>> {
        let items = text.split(',').map(str::trim).filter(|s| !s.is_empty());
        let values: Vec<SweepValue> = match self {
            SweepAxis::M => items
                .map(|s| {
                    s.parse()
                        .map(SweepValue::M)
                        .map_err(|_| Error::InvalidConfig(format!("m value `{s}`")))
                })
                .collect::<Result<_>>()?,
            SweepAxis::Beta => items
                .map(|s| {
                    s.parse()
                        .map(SweepValue::Beta)
                        .map_err(|_| Error::InvalidConfig(format!("beta value `{s}`")))
                })
                .collect::<Result<_>>()?,
            SweepAxis::LayerRange => items
                .map(|s| parse_layer_range(s).map(|(lo, hi)| SweepValue::Layers(lo, hi)))
                .collect::<Result<_>>()?,
        };
        if values.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one value".into()));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepValue {
    M(usize),
    Beta(f64),
    Layers(usize, usize),
}

impl SweepValue {
    pub fn apply(&self, base: KfpConfig) -> KfpConfig {
        match *self {
            SweepValue::M(m) => KfpConfig { m, ..base },
            SweepValue::Beta(beta) => KfpConfig { beta, ..base },
            SweepValue::Layers(lo, hi) => base.with_layers(lo, hi),
        }
    }
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::M(m) => write!(f, "{m}"),
            SweepValue::Beta(b) => write!(f, "{b:.2}"),
            SweepValue::Layers(lo, hi) => write!(f, "{lo}-{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    /// Settings for the parameters not being swept.
    pub fixed: KfpConfig,
}

impl SweepSpec {
    pub fn defaults(axis: SweepAxis, fixed: KfpConfig) -> Self {
        Self {
            axis,
            values: axis.default_values(),
            fixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    /// `None` for the reference row.
    pub kfp: Option<KfpConfig>,
    pub report: ScoreReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

/// One evaluation per swept value plus a KFP-disabled reference row. The
/// reference comes first for `m` and `beta` and last for layer ranges.
pub fn run_sweep(
    samples: &[Sample],
    provider: &ToyProvider,
    spec: &SweepSpec,
    eval_opts: &EvalOptions,
    score_opts: &ScoreOptions,
) -> Result<SweepReport> {
    if spec.values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let configs: Vec<KfpConfig> = spec.values.iter().map(|v| v.apply(spec.fixed)).collect();
    for c in &configs {
        c.validate()?;
    }

    let run = |kfp: Option<KfpConfig>| -> Result<ScoreReport> {
        let p = provider.with_kfp(kfp)?;
        Ok(evaluate(samples, &p, eval_opts, score_opts)?.1)
    };

    let base = SweepRow {
        label: spec.axis.base_label().to_string(),
        kfp: None,
        report: run(None)?,
    };
    let mut rows = Vec::with_capacity(spec.values.len() + 1);
    if spec.axis != SweepAxis::LayerRange {
        rows.push(base.clone());
    }
    for (value, cfg) in spec.values.iter().zip(configs) {
        log::info!("sweep {:?} = {value}", spec.axis);
        rows.push(SweepRow {
            label: value.to_string(),
            kfp: Some(cfg),
            report: run(Some(cfg))?,
        });
    }
    if spec.axis == SweepAxis::LayerRange {
        rows.push(base);
    }
    Ok(SweepReport {
        axis: spec.axis,
        rows,
    })
}

pub fn render_sweep(report: &SweepReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Table => {
            let rows: Vec<(String, Vec<String>)> = report
                .rows
                .iter()
                .map(|r| (r.label.clone(), table_cells(&r.report)))
                .collect();
            Ok(format_table(report.axis.header(), &rows, &TABLE_COLUMNS))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, GenSpec};

    fn data() -> Vec<Sample> {
        generate_synthetic(&GenSpec::parse("qa-causal=3,cfqa-temporal=2,rc-subevent=3", 2).unwrap(), 5)
    }

    fn small_toy(kfp: Option<KfpConfig>) -> ToyProvider {
        let model = ToyModel::new(ToyModelConfig { layers: 4, seed: 3, ..Default::default() }).unwrap();
        ToyProvider::new(model, kfp, 3).unwrap()
    }

    struct Flaky;

    impl AnswerProvider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn answer(&self, sample: &Sample, _: &str) -> Result<String> {
            if sample.id.ends_with('1') {
                Err(Error::InvalidInput("boom".into()))
            } else {
                Ok("1".into())
            }
        }
    }

    #[test]
    fn random_provider_is_deterministic() {
        let d = data();
        let p = RandomProvider::new(4);
        let a = run_eval(&d, &p, &EvalOptions::default()).unwrap();
        let b = run_eval(&d, &p, &EvalOptions::default()).unwrap();
        assert_eq!(a.predictions, b.predictions);
        for (s, r) in d.iter().zip(&a.predictions) {
            let n: usize = r.raw_text.parse().unwrap();
            assert!((1..=s.candidates.len()).contains(&n));
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let d = data();
        let p = small_toy(Some(KfpConfig::default().with_layers(1, 2)));
        let serial = run_eval(&d, &p, &EvalOptions::default()).unwrap();
        let parallel = run_eval(&d, &p, &EvalOptions { workers: 3, ..Default::default() }).unwrap();
        assert_eq!(serial.predictions, parallel.predictions);
    }

    #[test]
    fn provider_failures_are_recorded() {
        let d = data();
        let run = run_eval(&d, &Flaky, &EvalOptions::default()).unwrap();
        assert_eq!(run.predictions.len(), d.len());
        assert!(!run.failures.is_empty());
        for id in &run.failures {
            let rec = run.predictions.iter().find(|r| &r.sample_id == id).unwrap();
            assert_eq!(rec.raw_text, "");
        }
    }

    #[test]
    fn toy_beta_one_matches_no_kfp() {
        let d = data();
        let base = run_eval(&d, &small_toy(None), &EvalOptions::default()).unwrap();
        let kfp = KfpConfig { beta: 1.0, ..Default::default() }.with_layers(0, 3);
        let with = run_eval(&d, &small_toy(Some(kfp)), &EvalOptions::default()).unwrap();
        assert_eq!(base.predictions, with.predictions);
    }

    #[test]
    fn replay_reproduces_scores() {
        let d = data();
        let run = run_eval(&d, &RandomProvider::new(1), &EvalOptions::default()).unwrap();
        let replay = ReplayProvider::from_records("file", run.predictions.clone()).unwrap();
        let again = run_eval(&d, &replay, &EvalOptions::default()).unwrap();
        assert_eq!(run.predictions, again.predictions);
    }

    #[test]
    fn shuffled_answers_map_back_to_stored_order() {
        let d = data();
        // answers the gold of whatever order it is shown
        struct Oracle;
        impl AnswerProvider for Oracle {
            fn name(&self) -> &str {
                "oracle"
            }
            fn answer(&self, s: &Sample, _: &str) -> Result<String> {
                Ok((s.gold_index + 1).to_string())
            }
        }
        let opts = EvalOptions { shuffle_seed: Some(8), ..Default::default() };
        let (_, report) = evaluate(&d, &Oracle, &opts, &ScoreOptions::default()).unwrap();
        assert_eq!(report.overall.accuracy, Some(1.0));
    }

    #[test]
    fn timing_is_opt_in() {
        let d = data();
        let run = run_eval(&d, &RandomProvider::new(1), &EvalOptions::default()).unwrap();
        assert!(run.predictions.iter().all(|r| r.latency_ms.is_none()));
        let opts = EvalOptions { record_timing: true, ..Default::default() };
        let run = run_eval(&d, &RandomProvider::new(1), &opts).unwrap();
        assert!(run.predictions.iter().all(|r| r.latency_ms.is_some()));
    }

    #[test]
    fn layer_range_parsing() {
        assert_eq!(parse_layer_range("8..15").unwrap(), (8, 15));
        assert_eq!(parse_layer_range("0-5").unwrap(), (0, 5));
        assert!(parse_layer_range("9..3").is_err());
        assert!(parse_layer_range("nine").is_err());
    }

    #[test]
    fn sweep_value_parsing() {
        let v = SweepAxis::Beta.parse_values("0.5, 0.7").unwrap();
        assert_eq!(v, vec![SweepValue::Beta(0.5), SweepValue::Beta(0.7)]);
        assert!(SweepAxis::M.parse_values("").is_err());
        assert!("gamma".parse::<SweepAxis>().is_err());
        assert_eq!(SweepValue::Layers(0, 5).to_string(), "0-5");
        assert_eq!(SweepValue::Beta(0.6).to_string(), "0.60");
    }

    #[test]
    fn sweep_rows_match_independent_runs() {
        let d = data();
        let toy = small_toy(None);
        let fixed = KfpConfig::default().with_layers(1, 3);
        let spec = SweepSpec { axis: SweepAxis::M, values: vec![SweepValue::M(3)], fixed };
        let report = run_sweep(&d, &toy, &spec, &EvalOptions::default(), &ScoreOptions::default()).unwrap();
        assert_eq!(report.rows[0].label, "Base");
        let cfg = KfpConfig { m: 3, ..fixed };
        let (_, independent) = evaluate(
            &d,
            &toy.with_kfp(Some(cfg)).unwrap(),
            &EvalOptions::default(),
            &ScoreOptions::default(),
        )
        .unwrap();
        assert_eq!(report.rows[1].report, independent);
        let table = render_sweep(&report, ReportFormat::Table).unwrap();
        assert!(table.lines().next().unwrap().starts_with("m "));
    }

    #[test]
    fn sweep_rejects_invalid_values() {
        let spec = SweepSpec {
            axis: SweepAxis::Beta,
            values: vec![SweepValue::Beta(1.5)],
            fixed: KfpConfig::default(),
        };
        let r = run_sweep(&data(), &small_toy(None), &spec, &EvalOptions::default(), &ScoreOptions::default());
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}
