//! Answer parsing and every metric reported for a run: accuracy per task and
//! relation, RC confusion matrices with precision/recall/F1, SRH (per-video
//! accuracy averaged over videos) and the bias-rate decomposition of QA
//! answers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::{CandidateRole, RelationKind, Sample, TaskKind, ABSTAIN_INCOMPLETE};
use crate::error::{Error, Result};

/// Marker for a table cell with no samples behind it.
pub const EMPTY_CELL: &str = "—";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedAnswer {
    /// 1-based candidate number.
    Index(usize),
    Unparseable,
}

impl ParsedAnswer {
    pub fn index(&self) -> Option<usize> {
        match self {
            ParsedAnswer::Index(i) => Some(*i),
            ParsedAnswer::Unparseable => None,
        }
    }
}

fn integer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(\d+)\b").expect("static pattern"))
}

/// First standalone integer in `1..=n_candidates`, else an exact
/// (case-insensitive, trailing period ignored) match against `candidates`.
pub fn parse_answer(raw_text: &str, n_candidates: usize, candidates: Option<&[&str]>) -> ParsedAnswer {
    for cap in integer_pattern().captures_iter(raw_text) {
        if let Ok(n) = cap[1].parse::<usize>() {
            if (1..=n_candidates).contains(&n) {
                return ParsedAnswer::Index(n);
            }
        }
    }
    let normalize = |s: &str| s.trim().trim_end_matches('.').trim().to_lowercase();
    if let Some(texts) = candidates {
        let answer = normalize(raw_text);
        if !answer.is_empty() {
            if let Some(i) = texts.iter().take(n_candidates).position(|t| normalize(t) == answer) {
                return ParsedAnswer::Index(i + 1);
            }
        }
    }
    ParsedAnswer::Unparseable
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

impl PredictionRecord {
    pub fn new(sample_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            raw_text: raw_text.into(),
            model_name: None,
            latency_ms: None,
        }
    }
}

/// A prediction resolved against its sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample_id: String,
    pub raw_text: String,
    pub parsed: ParsedAnswer,
}

impl Prediction {
    pub fn resolve(record: &PredictionRecord, sample: &Sample) -> Self {
        let texts = sample.candidate_texts();
        Self {
            sample_id: record.sample_id.clone(),
            raw_text: record.raw_text.clone(),
            parsed: parse_answer(&record.raw_text, sample.candidates.len(), Some(&texts)),
        }
    }
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, predictions_to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    /// Per-class values weighted by gold support.
    Weighted,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "weighted" => Ok(Averaging::Weighted),
            other => Err(Error::InvalidConfig(format!(
                "unknown averaging `{other}` (expected macro or weighted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreOptions {
    pub averaging: Averaging,
    /// Count the second abstention candidate as correct on CFQA.
    pub cfqa_accept_any_abstention: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Missing,
    Unparseable,
    /// 0-based candidate index.
    Chosen(usize),
}

struct Scored<'a> {
    sample: &'a Sample,
    outcome: Outcome,
    correct: bool,
}

impl Scored<'_> {
    fn chosen_role(&self) -> Option<CandidateRole> {
        match self.outcome {
            Outcome::Chosen(i) => Some(self.sample.candidates[i].role),
            _ => None,
        }
    }
}

/// Joins predictions onto samples in dataset order.
fn resolve<'a>(
    samples: &'a [Sample],
    predictions: &[PredictionRecord],
    opts: &ScoreOptions,
) -> Result<Vec<Scored<'a>>> {
    let known: HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(predictions.len());
    let mut orphans = Vec::new();
    for p in predictions {
        if !known.contains(p.sample_id.as_str()) {
            orphans.push(p.sample_id.clone());
            continue;
        }
        if by_id.insert(p.sample_id.as_str(), p).is_some() {
            return Err(Error::validation(&p.sample_id, "duplicate prediction for sample"));
        }
    }
    if !orphans.is_empty() {
        return Err(Error::OrphanPredictions(orphans));
    }

    Ok(samples
        .iter()
        .map(|sample| {
            let outcome = match by_id.get(sample.id.as_str()) {
                None => Outcome::Missing,
                Some(rec) => match Prediction::resolve(rec, sample).parsed {
                    ParsedAnswer::Index(i) => Outcome::Chosen(i - 1),
                    ParsedAnswer::Unparseable => Outcome::Unparseable,
                },
            };
            let correct = match outcome {
                Outcome::Chosen(i) if i == sample.gold_index => true,
                Outcome::Chosen(i) => {
                    opts.cfqa_accept_any_abstention
                        && sample.task == TaskKind::Cfqa
                        && sample.candidates[i].role == CandidateRole::Abstention
                }
                _ => false,
            };
            Scored {
                sample,
                outcome,
                correct,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    /// `None` when `total == 0`.
    pub accuracy: Option<f64>,
}

impl Tally {
    fn from_counts(correct: usize, total: usize) -> Self {
        Self {
            correct,
            total,
            accuracy: (total > 0).then(|| correct as f64 / total as f64),
        }
    }

    fn of<'a, 'b: 'a>(items: impl Iterator<Item = &'a Scored<'b>>) -> Self {
        let (mut correct, mut total) = (0, 0);
        for s in items {
            total += 1;
            correct += s.correct as usize;
        }
        Self::from_counts(correct, total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub task: TaskKind,
    pub relation: RelationKind,
    #[serde(flatten)]
    pub tally: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: TaskKind,
    #[serde(flatten)]
    pub tally: Tally,
}

/// RC metrics for one relation. Confusion rows are gold labels, columns are
/// predicted labels, both in template order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcMetrics {
    pub relation: RelationKind,
    pub labels: Vec<String>,
    pub confusion: [[usize; 3]; 3],
    /// Missing or unparseable answers; counted wrong, absent from `confusion`.
    pub unscored: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub averaging: Averaging,
}

impl RcMetrics {
    pub fn scored(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.confusion[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.scored() + self.unscored
    }
}

/// Precision, recall and F1 for each of the three classes.
pub fn per_class_prf(confusion: &[[usize; 3]; 3]) -> [(f64, f64, f64); 3] {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    std::array::from_fn(|c| {
        let tp = confusion[c][c];
        let predicted: usize = (0..3).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    })
}

/// Macro averages over the labels that occur in gold or predictions (a label
/// never seen on either side has undefined precision and recall); weighted
/// averages use gold support.
fn average_prf(confusion: &[[usize; 3]; 3], averaging: Averaging) -> (f64, f64, f64) {
    let per_class = per_class_prf(confusion);
    let support: [usize; 3] = std::array::from_fn(|c| confusion[c].iter().sum());
    let predicted: [usize; 3] = std::array::from_fn(|c| (0..3).map(|r| confusion[r][c]).sum());
    let weights: Vec<f64> = match averaging {
        Averaging::Macro => {
            let present = (0..3).filter(|&c| support[c] + predicted[c] > 0).count();
            (0..3)
                .map(|c| {
                    if support[c] + predicted[c] > 0 {
                        1.0 / present as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        Averaging::Weighted => {
            let total: usize = support.iter().sum();
            (0..3)
                .map(|c| if total == 0 { 0.0 } else { support[c] as f64 / total as f64 })
                .collect()
        }
    };
    let avg = |pick: fn(&(f64, f64, f64)) -> f64| -> f64 {
        per_class.iter().zip(&weights).map(|(v, w)| pick(v) * w).sum()
    };
    (avg(|v| v.0), avg(|v| v.1), avg(|v| v.2))
}

fn rc_metrics(scored: &[Scored<'_>], relation: RelationKind, averaging: Averaging) -> Result<RcMetrics> {
    let mut confusion = [[0usize; 3]; 3];
    let mut unscored = 0;
    let mut correct = 0;
    let mut any = false;
    for s in scored
        .iter()
        .filter(|s| s.sample.task == TaskKind::Rc && s.sample.relation == relation)
    {
        any = true;
        correct += s.correct as usize;
        match s.outcome {
            Outcome::Chosen(p) => confusion[s.sample.gold_index][p] += 1,
            _ => unscored += 1,
        }
    }
    if !any {
        return Err(Error::EmptySet(format!("no RC samples for relation {relation}")));
    }
    let (precision, recall, f1) = average_prf(&confusion, averaging);
    let total: usize = confusion.iter().flatten().sum::<usize>() + unscored;
    Ok(RcMetrics {
        relation,
        labels: relation.rc_labels().iter().map(|l| l.to_string()).collect(),
        confusion,
        unscored,
        precision,
        recall,
        f1,
        accuracy: correct as f64 / total as f64,
        averaging,
    })
}

/// Confusion matrix and averaged precision/recall/F1 for one RC relation.
pub fn rc_confusion_and_prf(
    samples: &[Sample],
    predictions: &[PredictionRecord],
    relation: RelationKind,
    averaging: Averaging,
) -> Result<RcMetrics> {
    let scored = resolve(samples, predictions, &ScoreOptions::default())?;
    rc_metrics(&scored, relation, averaging)
}

fn srh_of(scored: &[Scored<'_>]) -> Option<f64> {
    let mut per_video: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in scored {
        let entry = per_video.entry(s.sample.video_ref.as_str()).or_default();
        entry.0 += s.correct as usize;
        entry.1 += 1;
    }
    if per_video.is_empty() {
        return None;
    }
    let sum: f64 = per_video
        .values()
        .map(|&(c, n)| c as f64 / n as f64)
        .sum();
    Some(sum / per_video.len() as f64)
}

/// Unweighted mean over videos of each video's accuracy across all tasks.
pub fn srh(samples: &[Sample], predictions: &[PredictionRecord]) -> Result<f64> {
    let scored = resolve(samples, predictions, &ScoreOptions::default())?;
    srh_of(&scored).ok_or_else(|| Error::EmptySet("SRH needs at least one sample".into()))
}

/// Which candidate roles parseable QA answers landed on.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasReport {
    /// Parseable QA answers (the denominator of every rate).
    pub answered: usize,
    /// Missing or unparseable QA answers, excluded from the rates.
    pub excluded: usize,
    pub correct_rate: f64,
    pub vl_bias_rate: f64,
    pub l_bias_rate: f64,
    pub abstention_rate: f64,
    /// Anything not covered above; zero on schema-valid QA data.
    pub residual_rate: f64,
}

impl BiasReport {
    pub fn total_rate(&self) -> f64 {
        self.correct_rate + self.vl_bias_rate + self.l_bias_rate + self.abstention_rate + self.residual_rate
    }
}

fn bias_of(scored: &[Scored<'_>]) -> BiasReport {
    let mut counts = [0usize; 5];
    let mut excluded = 0;
    for s in scored.iter().filter(|s| s.sample.task == TaskKind::Qa) {
        let slot = match s.chosen_role() {
            None => {
                excluded += 1;
                continue;
            }
            Some(CandidateRole::GroundTruth) => 0,
            Some(CandidateRole::VlBias) => 1,
            Some(CandidateRole::LBias) => 2,
            Some(CandidateRole::Abstention) => 3,
            Some(CandidateRole::RelationLabel) => 4,
        };
        counts[slot] += 1;
    }
    let answered: usize = counts.iter().sum();
    let rate = |i: usize| if answered == 0 { 0.0 } else { counts[i] as f64 / answered as f64 };
    BiasReport {
        answered,
        excluded,
        correct_rate: rate(0),
        vl_bias_rate: rate(1),
        l_bias_rate: rate(2),
        abstention_rate: rate(3),
        residual_rate: rate(4),
    }
}

pub fn bias_rates(samples: &[Sample], predictions: &[PredictionRecord]) -> Result<BiasReport> {
    let scored = resolve(samples, predictions, &ScoreOptions::default())?;
    Ok(bias_of(&scored))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub samples: usize,
    pub predictions: usize,
    pub missing: usize,
    pub unparseable: usize,
    /// Unparseable share of the answered samples.
    pub unparseable_rate: f64,
    pub overall: Tally,
    pub tasks: Vec<TaskAccuracy>,
    pub buckets: Vec<BucketAccuracy>,
    pub rc: Vec<RcMetrics>,
    pub srh: Option<f64>,
    pub bias: BiasReport,
    /// CFQA answers that picked the non-gold abstention candidate.
    pub cfqa_other_abstention: usize,
    pub cfqa_accept_any_abstention: bool,
}

impl ScoreReport {
    pub fn task(&self, task: TaskKind) -> Tally {
        self.tasks
            .iter()
            .find(|t| t.task == task)
            .map(|t| t.tally)
            .unwrap_or_default()
    }

    pub fn bucket(&self, task: TaskKind, relation: RelationKind) -> Tally {
        self.buckets
            .iter()
            .find(|b| b.task == task && b.relation == relation)
            .map(|b| b.tally)
            .unwrap_or_default()
    }

    pub fn rc(&self, relation: RelationKind) -> Option<&RcMetrics> {
        self.rc.iter().find(|m| m.relation == relation)
    }
}

pub fn score(
    samples: &[Sample],
    predictions: &[PredictionRecord],
    opts: &ScoreOptions,
) -> Result<ScoreReport> {
    let scored = resolve(samples, predictions, opts)?;

    let missing = scored.iter().filter(|s| s.outcome == Outcome::Missing).count();
    let unparseable = scored.iter().filter(|s| s.outcome == Outcome::Unparseable).count();
    let answered = scored.len() - missing;

    let tasks = TaskKind::ALL
        .iter()
        .map(|&task| TaskAccuracy {
            task,
            tally: Tally::of(scored.iter().filter(|s| s.sample.task == task)),
        })
        .collect();
    let mut buckets = Vec::new();
    for task in TaskKind::ALL {
        for relation in RelationKind::ALL {
            buckets.push(BucketAccuracy {
                task,
                relation,
                tally: Tally::of(
                    scored
                        .iter()
                        .filter(|s| s.sample.task == task && s.sample.relation == relation),
                ),
            });
        }
    }
    let rc = RelationKind::ALL
        .iter()
        .filter_map(|&r| rc_metrics(&scored, r, opts.averaging).ok())
        .collect();
    let cfqa_other_abstention = scored
        .iter()
        .filter(|s| s.sample.task == TaskKind::Cfqa)
        .filter(|s| match s.outcome {
            Outcome::Chosen(i) => {
                let c = &s.sample.candidates[i];
                c.role == CandidateRole::Abstention && c.text != ABSTAIN_INCOMPLETE
            }
            _ => false,
        })
        .count();

    Ok(ScoreReport {
        samples: samples.len(),
        predictions: predictions.len(),
        missing,
        unparseable,
        unparseable_rate: if answered == 0 {
            0.0
        } else {
            unparseable as f64 / answered as f64
        },
        overall: Tally::of(scored.iter()),
        tasks,
        buckets,
        rc,
        srh: srh_of(&scored),
        bias: bias_of(&scored),
        cfqa_other_abstention,
        cfqa_accept_any_abstention: opts.cfqa_accept_any_abstention,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!(
                "unknown report format `{other}` (expected table or json)"
            ))),
        }
    }
}

/// Accuracy as a one-decimal percentage, or the empty marker.
pub fn percent_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", v * 100.0),
        None => EMPTY_CELL.to_string(),
    }
}

pub const TABLE_COLUMNS: [&str; 8] = ["CFQA", "QA-C", "QA-T", "QA-S", "RC-C", "RC-T", "RC-S", "SRH"];

/// Column values in [`TABLE_COLUMNS`] order.
pub fn table_cells(report: &ScoreReport) -> Vec<String> {
    use RelationKind::*;
    let mut cells = vec![percent_cell(report.task(TaskKind::Cfqa).accuracy)];
    for task in [TaskKind::Qa, TaskKind::Rc] {
        for rel in [Causal, Temporal, Subevent] {
            cells.push(percent_cell(report.bucket(task, rel).accuracy));
        }
    }
    cells.push(percent_cell(report.srh));
    cells
}

/// A fixed-width table whose first column holds `rows[i].0`.
pub fn format_table(label_header: &str, rows: &[(String, Vec<String>)], columns: &[&str]) -> String {
    let label_width = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain([label_header.chars().count()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = write!(out, "{label_header:<label_width$}");
    for c in columns {
        let _ = write!(out, " | {c:>6}");
    }
    out.push('\n');
    let _ = write!(out, "{}", "-".repeat(label_width));
    for _ in columns {
        out.push_str("-+-------");
    }
    out.push('\n');
    for (label, cells) in rows {
        let _ = write!(out, "{label:<label_width$}");
        for c in cells {
            // pad by chars: the empty marker is multi-byte
            let pad = 6usize.saturating_sub(c.chars().count());
            let _ = write!(out, " | {}{c}", " ".repeat(pad));
        }
        out.push('\n');
    }
    out
}

fn render_table(report: &ScoreReport) -> String {
    let mut out = format_table(
        "Run",
        &[("accuracy (%)".to_string(), table_cells(report))],
        &TABLE_COLUMNS,
    );
    out.push('\n');
    let rows: Vec<(String, Vec<String>)> = RelationKind::ALL
        .iter()
        .map(|&rel| {
            let cells = match report.rc(rel) {
                Some(m) => vec![
                    percent_cell(Some(m.precision)),
                    percent_cell(Some(m.recall)),
                    percent_cell(Some(m.f1)),
                ],
                None => vec![EMPTY_CELL.to_string(); 3],
            };
            (format!("RC-{rel}"), cells)
        })
        .collect();
    out.push_str(&format_table("Relation", &rows, &["P", "R", "F1"]));
    out.push('\n');
    let b = &report.bias;
    let _ = writeln!(
        out,
        "QA answer roles over {} parsed answers: correct {} | vl_bias {} | l_bias {} | abstention {}",
        b.answered,
        percent_cell(Some(b.correct_rate)),
        percent_cell(Some(b.vl_bias_rate)),
        percent_cell(Some(b.l_bias_rate)),
        percent_cell(Some(b.abstention_rate)),
    );
    let _ = writeln!(
        out,
        "coverage: {} samples, {} missing, {} unparseable ({}%), overall accuracy {}",
        report.samples,
        report.missing,
        report.unparseable,
        percent_cell(Some(report.unparseable_rate)),
        percent_cell(report.overall.accuracy),
    );
    let _ = writeln!(
        out,
        "CFQA answers choosing the other abstention: {} (scored {})",
        report.cfqa_other_abstention,
        if report.cfqa_accept_any_abstention { "correct" } else { "incorrect" }
    );
    out
}

pub fn render_report(report: &ScoreReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Table => Ok(render_table(report)),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
    }
}
