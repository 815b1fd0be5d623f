//! Benchmark samples: schema, JSON Lines I/O, validation, prompt templates,
//! candidate shuffling, and a synthetic generator.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

pub const ABSTAIN_INCOMPLETE: &str = "Video information is incomplete, unable to judge.";
pub const ABSTAIN_CONFUSED: &str = "I can't understand, don't know what to choose.";

pub const RC_CANDIDATES: usize = 3;
pub const QA_CANDIDATES: usize = 7;

const PROMPT_HEAD: &str = "Your answer should choose from the following candidate answers. \
                           You should only answer the candidate number.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Rc,
    Qa,
    Cfqa,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Rc, TaskKind::Qa, TaskKind::Cfqa];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Rc => "rc",
            TaskKind::Qa => "qa",
            TaskKind::Cfqa => "cfqa",
        }
    }

    pub fn candidate_count(&self) -> usize {
        match self {
            TaskKind::Rc => RC_CANDIDATES,
            TaskKind::Qa | TaskKind::Cfqa => QA_CANDIDATES,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Causal,
    Temporal,
    Subevent,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::Causal,
        RelationKind::Temporal,
        RelationKind::Subevent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelationKind::Causal => "causal",
            RelationKind::Temporal => "temporal",
            RelationKind::Subevent => "subevent",
        }
    }

    /// Fixed RC label set, in template order.
    pub fn rc_labels(&self) -> [&'static str; 3] {
        match self {
            RelationKind::Causal => ["None", "Cause", "Effect"],
            RelationKind::Temporal => ["None", "Before", "After"],
            RelationKind::Subevent => ["None", "Main_Event", "Sub_Event"],
        }
    }

    /// Direction gloss printed under the RC candidate line.
    pub fn rc_gloss(&self) -> &'static str {
        match self {
            RelationKind::Causal => "Cause: Event A causes Event B. Effect: Event B causes Event A.",
            RelationKind::Temporal => {
                "Before: Event B occurs before Event A. After: Event A occurs before Event B."
            }
            RelationKind::Subevent => {
                "Main_Event: Event A contains Event B. Sub_Event: Event B contains Event A."
            }
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRole {
    GroundTruth,
    VlBias,
    LBias,
    Abstention,
    RelationLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub text: String,
    pub role: CandidateRole,
}

impl Candidate {
    pub fn new(text: impl Into<String>, role: CandidateRole) -> Self {
        Self {
            text: text.into(),
            role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub video_ref: String,
    pub task: TaskKind,
    pub relation: RelationKind,
    pub question: String,
    pub candidates: Vec<Candidate>,
    /// 0-based.
    pub gold_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rc_label_gloss: Option<String>,
}

impl Sample {
    pub fn gold(&self) -> &Candidate {
        &self.candidates[self.gold_index]
    }

    /// Gold RC label text, `None` for QA and CFQA.
    pub fn rc_label(&self) -> Option<&str> {
        (self.task == TaskKind::Rc).then(|| self.gold().text.as_str())
    }

    pub fn candidate_texts(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.text.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(&self.id, msg));
        if self.id.trim().is_empty() {
            return Err(Error::validation("<empty>", "sample id is empty"));
        }
        if self.video_ref.trim().is_empty() {
            return fail("video_ref is empty".into());
        }
        let expected = self.task.candidate_count();
        if self.candidates.len() != expected {
            return fail(format!(
                "{} sample has {} candidates, expected {expected}",
                self.task,
                self.candidates.len()
            ));
        }
        if self.gold_index >= self.candidates.len() {
            return fail(format!("gold_index {} out of range", self.gold_index));
        }
        let count = |role| self.candidates.iter().filter(|c| c.role == role).count();

        match self.task {
            TaskKind::Rc => {
                let labels = self.relation.rc_labels();
                for (i, (c, label)) in self.candidates.iter().zip(labels).enumerate() {
                    if c.role != CandidateRole::RelationLabel {
                        return fail(format!("RC candidate {} must have role relation_label", i + 1));
                    }
                    if c.text != label {
                        return fail(format!(
                            "RC candidate {} is `{}`, expected `{label}` for {} relations",
                            i + 1,
                            c.text,
                            self.relation
                        ));
                    }
                }
                if let Some(gloss) = &self.rc_label_gloss {
                    if gloss != self.relation.rc_gloss() {
                        return fail(format!(
                            "rc_label_gloss does not match the {} template gloss",
                            self.relation
                        ));
                    }
                }
            }
            TaskKind::Qa => {
                let roles = [
                    (CandidateRole::GroundTruth, 1),
                    (CandidateRole::VlBias, 2),
                    (CandidateRole::LBias, 2),
                    (CandidateRole::Abstention, 2),
                ];
                for (role, want) in roles {
                    let got = count(role);
                    if got != want {
                        return fail(format!("QA sample has {got} {role:?} candidates, expected {want}"));
                    }
                }
                if self.gold().role != CandidateRole::GroundTruth {
                    return fail("QA gold candidate must have role ground_truth".into());
                }
            }
            TaskKind::Cfqa => {
                if count(CandidateRole::RelationLabel) > 0 || count(CandidateRole::GroundTruth) > 0 {
                    return fail(
                        "CFQA candidates may not carry ground_truth or relation_label roles".into(),
                    );
                }
                let gold = self.gold();
                if gold.role != CandidateRole::Abstention || gold.text != ABSTAIN_INCOMPLETE {
                    return fail(format!(
                        "CFQA gold must be the abstention candidate `{ABSTAIN_INCOMPLETE}`"
                    ));
                }
            }
        }
        if self.task != TaskKind::Rc && self.rc_label_gloss.is_some() {
            return fail("rc_label_gloss is only allowed on RC samples".into());
        }
        Ok(())
    }
}

/// Samples that loaded cleanly plus one diagnostic per rejected line.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub samples: Vec<Sample>,
    pub diagnostics: Vec<Error>,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

/// Parses JSON Lines, collecting every bad record instead of stopping at the
/// first. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset(text: &str) -> LoadReport {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = match serde_json::from_str(line) {
            Ok(s) => s,
            Err(e) => {
                report.diagnostics.push(Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let checked = sample.validate().and_then(|_| {
            if seen.insert(sample.id.clone()) {
                Ok(())
            } else {
                Err(Error::validation(&sample.id, "duplicate sample id"))
            }
        });
        match checked {
            Ok(()) => report.samples.push(sample),
            Err(Error::Validation {
                sample_id, message, ..
            }) => report.diagnostics.push(Error::Validation {
                sample_id,
                line: Some(line_no),
                message,
            }),
            Err(other) => report.diagnostics.push(other),
        }
    }
    if report.samples.is_empty() && report.diagnostics.is_empty() {
        log::warn!("dataset contains no samples");
    }
    report
}

pub fn load_dataset_report(path: impl AsRef<Path>) -> Result<LoadReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_dataset(&text))
}

/// Loads and validates a dataset, failing on the first bad record.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let mut report = load_dataset_report(path)?;
    if report.diagnostics.is_empty() {
        Ok(report.samples)
    } else {
        Err(report.diagnostics.swap_remove(0))
    }
}

pub fn to_jsonl(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_jsonl(samples)?).map_err(|e| Error::io(path, e))
}

/// Renders the task's prompt template for `sample`.
pub fn build_prompt(sample: &Sample) -> Result<String> {
    sample.validate()?;
    let head = format!("According to the video, {} {PROMPT_HEAD}", sample.question);
    let prompt = match sample.task {
        TaskKind::Rc => {
            let [a, b, c] = sample.relation.rc_labels();
            format!(
                "{head}\nCandidate answers: (1) {a} (2) {b} (3) {c}.\n{}",
                sample.relation.rc_gloss()
            )
        }
        TaskKind::Qa | TaskKind::Cfqa => {
            let options: Vec<String> = sample
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| format!("({}) {}", i + 1, c.text))
                .collect();
            format!("{head}\nCandidate answers: {}", options.join(" "))
        }
    };
    Ok(prompt)
}

/// The seeded candidate permutation for `sample`: position `i` of the
/// shuffled list holds original candidate `perm[i]`. Depends only on the
/// sample id and `seed`.
pub fn candidate_permutation(sample: &Sample, seed: u64) -> Result<Vec<usize>> {
    if sample.task == TaskKind::Rc {
        return Err(Error::InvalidInput(format!(
            "sample `{}`: RC candidate order is fixed by the template",
            sample.id
        )));
    }
    let mut perm: Vec<usize> = (0..sample.candidates.len()).collect();
    SplitMix64::new(derive_seed(seed, &sample.id)).shuffle(&mut perm);
    Ok(perm)
}

pub fn shuffle_candidates(sample: &Sample, seed: u64) -> Result<Sample> {
    let perm = candidate_permutation(sample, seed)?;
    let mut out = sample.clone();
    out.candidates = perm.iter().map(|&i| sample.candidates[i].clone()).collect();
    out.gold_index = perm
        .iter()
        .position(|&i| i == sample.gold_index)
        .expect("permutation covers every index");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub total: usize,
    pub videos: usize,
    pub by_task: BTreeMap<TaskKind, usize>,
    pub by_task_relation: BTreeMap<(TaskKind, RelationKind), usize>,
    /// RC counts keyed by relation and gold label text.
    pub rc_labels: BTreeMap<(RelationKind, String), usize>,
}

impl DatasetStats {
    pub fn compute(samples: &[Sample]) -> Self {
        let mut by_task = BTreeMap::new();
        let mut by_task_relation = BTreeMap::new();
        let mut rc_labels = BTreeMap::new();
        let mut videos = BTreeSet::new();
        for s in samples {
            videos.insert(s.video_ref.as_str());
            *by_task.entry(s.task).or_insert(0) += 1;
            *by_task_relation.entry((s.task, s.relation)).or_insert(0) += 1;
            if let Some(label) = s.rc_label() {
                *rc_labels.entry((s.relation, label.to_string())).or_insert(0) += 1;
            }
        }
        Self {
            total: samples.len(),
            videos: videos.len(),
            by_task,
            by_task_relation,
            rc_labels,
        }
    }

    pub fn task(&self, task: TaskKind) -> usize {
        self.by_task.get(&task).copied().unwrap_or(0)
    }

    pub fn task_relation(&self, task: TaskKind, relation: RelationKind) -> usize {
        self.by_task_relation
            .get(&(task, relation))
            .copied()
            .unwrap_or(0)
    }

    pub fn rc_label(&self, relation: RelationKind, label: &str) -> usize {
        self.rc_labels
            .get(&(relation, label.to_string()))
            .copied()
            .unwrap_or(0)
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}  videos: {}", self.total, self.videos)?;
        writeln!(f, "{:<6} {:>9} {:>9} {:>9} {:>9}", "task", "causal", "temporal", "subevent", "total")?;
        for task in TaskKind::ALL {
            write!(f, "{:<6}", task.to_string())?;
            for rel in RelationKind::ALL {
                write!(f, " {:>9}", self.task_relation(task, rel))?;
            }
            writeln!(f, " {:>9}", self.task(task))?;
        }
        for rel in RelationKind::ALL {
            let labels: Vec<String> = rel
                .rc_labels()
                .iter()
                .map(|l| format!("{l} {}", self.rc_label(rel, l)))
                .collect();
            writeln!(f, "RC {rel}: {}", labels.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfficialField {
    Task(TaskKind),
    TaskRelation(TaskKind, RelationKind),
    RcLabel(RelationKind, &'static str),
}

impl OfficialField {
    fn actual(&self, stats: &DatasetStats) -> usize {
        match *self {
            OfficialField::Task(t) => stats.task(t),
            OfficialField::TaskRelation(t, r) => stats.task_relation(t, r),
            OfficialField::RcLabel(r, l) => stats.rc_label(r, l),
        }
    }
}

impl fmt::Display for OfficialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OfficialField::Task(t) => write!(f, "{t}"),
            OfficialField::TaskRelation(t, r) => write!(f, "{t}-{r}"),
            OfficialField::RcLabel(r, l) => write!(f, "RC-{r}-{l}"),
        }
    }
}

/// Published benchmark counts.
pub const OFFICIAL_COUNTS: [(OfficialField, usize); 18] = {
    use OfficialField::*;
    use RelationKind::*;
    use TaskKind::*;
    [
        (Task(Qa), 967),
        (TaskRelation(Qa, Temporal), 212),
        (TaskRelation(Qa, Causal), 497),
        (TaskRelation(Qa, Subevent), 258),
        (Task(Cfqa), 967),
        (Task(Rc), 5742),
        (TaskRelation(Rc, Temporal), 2683),
        (RcLabel(Temporal, "Before"), 665),
        (RcLabel(Temporal, "After"), 669),
        (RcLabel(Temporal, "None"), 1349),
        (TaskRelation(Rc, Causal), 1511),
        (RcLabel(Causal, "Cause"), 135),
        (RcLabel(Causal, "Effect"), 138),
        (RcLabel(Causal, "None"), 1238),
        (TaskRelation(Rc, Subevent), 1548),
        (RcLabel(Subevent, "Main_Event"), 258),
        (RcLabel(Subevent, "Sub_Event"), 258),
        (RcLabel(Subevent, "None"), 1032),
    ]
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfficialCheck {
    pub field: OfficialField,
    pub expected: usize,
    pub actual: usize,
}

impl OfficialCheck {
    pub fn passed(&self) -> bool {
        self.expected == self.actual
    }

    pub fn delta(&self) -> i64 {
        self.actual as i64 - self.expected as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfficialStatsReport {
    pub checks: Vec<OfficialCheck>,
}

impl OfficialStatsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(OfficialCheck::passed)
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &OfficialCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

impl fmt::Display for OfficialStatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>8} {:>8} {:>7}", "field", "expected", "actual", "delta")?;
        for c in &self.checks {
            let mark = if c.passed() { "" } else { "  MISMATCH" };
            writeln!(
                f,
                "{:<24} {:>8} {:>8} {:>+7}{mark}",
                c.field.to_string(),
                c.expected,
                c.actual,
                c.delta()
            )?;
        }
        let failed = self.mismatches().count();
        if failed == 0 {
            writeln!(f, "official counts: PASS ({} fields)", self.checks.len())
        } else {
            writeln!(f, "official counts: FAIL ({failed} of {} fields differ)", self.checks.len())
        }
    }
}

pub fn validate_official_stats(stats: &DatasetStats) -> OfficialStatsReport {
    let checks = OFFICIAL_COUNTS
        .iter()
        .map(|&(field, expected)| OfficialCheck {
            field,
            expected,
            actual: field.actual(stats),
        })
        .collect();
    OfficialStatsReport { checks }
}

/// One line of a synthetic-generation request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenEntry {
    pub task: TaskKind,
    pub relation: RelationKind,
    /// RC only: index into the relation's label set; `None` draws a label
    /// uniformly per sample.
    pub rc_label: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSpec {
    pub entries: Vec<GenEntry>,
    /// Samples are assigned round-robin to this many clips.
    pub videos: usize,
}

impl GenSpec {
    /// Counts matching the published dataset; CFQA mirrors the QA relation split.
    pub fn official() -> Self {
        use RelationKind::*;
        let mut entries = Vec::new();
        for (rel, n) in [(Temporal, 212), (Causal, 497), (Subevent, 258)] {
            for task in [TaskKind::Qa, TaskKind::Cfqa] {
                entries.push(GenEntry { task, relation: rel, rc_label: None, count: n });
            }
        }
        let rc = [
            (Temporal, [1349, 665, 669]),
            (Causal, [1238, 135, 138]),
            (Subevent, [1032, 258, 258]),
        ];
        for (rel, counts) in rc {
            for (label, count) in counts.into_iter().enumerate() {
                entries.push(GenEntry {
                    task: TaskKind::Rc,
                    relation: rel,
                    rc_label: Some(label),
                    count,
                });
            }
        }
        Self { entries, videos: 574 }
    }

    /// Parses `task-relation[-label]=count` items separated by commas, e.g.
    /// `qa-causal=10,rc-temporal-before=4,cfqa-subevent=2`.
    pub fn parse(text: &str, videos: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, count) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("`{item}`: expected key=count")))?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("`{item}`: count is not an integer")))?;
            let parts: Vec<&str> = key.trim().split('-').collect();
            let task = match parts.first().copied() {
                Some("rc") => TaskKind::Rc,
                Some("qa") => TaskKind::Qa,
                Some("cfqa") => TaskKind::Cfqa,
                _ => return Err(Error::InvalidConfig(format!("`{item}`: unknown task"))),
            };
            let relation = match parts.get(1).copied() {
                Some("causal") => RelationKind::Causal,
                Some("temporal") => RelationKind::Temporal,
                Some("subevent") => RelationKind::Subevent,
                _ => return Err(Error::InvalidConfig(format!("`{item}`: unknown relation"))),
            };
            let rc_label = match parts.get(2) {
                None => None,
                Some(label) if task == TaskKind::Rc => Some(
                    relation
                        .rc_labels()
                        .iter()
                        .position(|l| l.eq_ignore_ascii_case(label))
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!("`{item}`: unknown {relation} label"))
                        })?,
                ),
                Some(_) => {
                    return Err(Error::InvalidConfig(format!(
                        "`{item}`: labels only apply to rc entries"
                    )))
                }
            };
            if parts.len() > 3 {
                return Err(Error::InvalidConfig(format!("`{item}`: too many key parts")));
            }
            entries.push(GenEntry { task, relation, rc_label, count });
        }
        if videos == 0 {
            return Err(Error::InvalidConfig("video count must be positive".into()));
        }
        Ok(Self { entries, videos })
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }
}

const EVENTS: [&str; 24] = [
    "opens the car door",
    "drops the key into a drain",
    "paints the ceiling",
    "hides the turkey",
    "climbs onto the roof",
    "swaps the sandwiches",
    "falls asleep in church",
    "chases the teddy bear",
    "sneezes on the cake",
    "pushes the armchair",
    "tears the curtain",
    "hits the chair with a shoe",
    "crushes the pepper",
    "puts the meat into the vase",
    "takes out the flowers",
    "locks himself out",
    "cuts the string",
    "sits on the hat",
    "changes clothes on the beach",
    "burns the toast",
    "fixes the television",
    "steals the parking space",
    "knocks over the ladder",
    "sings in the waiting room",
];

fn qa_question(relation: RelationKind, event: &str) -> String {
    match relation {
        RelationKind::Temporal => format!("What happens after the man {event}?"),
        RelationKind::Causal => format!("Why does the person perform the action: {event}?"),
        RelationKind::Subevent => {
            format!("During the scene where the man {event}, which of the following event occurred?")
        }
    }
}

/// Deterministic schema-conforming samples with exactly the requested counts.
pub fn generate_synthetic(spec: &GenSpec, seed: u64) -> Vec<Sample> {
    let videos = spec.videos.max(1);
    let mut samples = Vec::with_capacity(spec.total());
    for entry in &spec.entries {
        for _ in 0..entry.count {
            let index = samples.len();
            let id = format!("{}-{}-{index:06}", entry.task.as_str(), entry.relation.as_str());
            let mut rng = SplitMix64::new(derive_seed(seed, &id));
            let mut events = EVENTS;
            rng.shuffle(&mut events);
            let video_ref = format!("clip-{:04}", index % videos);
            let sample = match entry.task {
                TaskKind::Rc => {
                    let label = entry.rc_label.unwrap_or_else(|| rng.below(RC_CANDIDATES));
                    Sample {
                        id,
                        video_ref,
                        task: TaskKind::Rc,
                        relation: entry.relation,
                        question: format!(
                            "What is the {} relation between Event A: the man {} and Event B: the man {}?",
                            entry.relation, events[0], events[1]
                        ),
                        candidates: entry
                            .relation
                            .rc_labels()
                            .iter()
                            .map(|l| Candidate::new(*l, CandidateRole::RelationLabel))
                            .collect(),
                        gold_index: label,
                        rc_label_gloss: None,
                    }
                }
                TaskKind::Qa | TaskKind::Cfqa => {
                    // CFQA keeps the would-be answer as a vision-language distractor
                    let first_role = if entry.task == TaskKind::Qa {
                        CandidateRole::GroundTruth
                    } else {
                        CandidateRole::VlBias
                    };
                    let mut candidates = vec![
                        Candidate::new(format!("The man {}.", events[1]), first_role),
                        Candidate::new(format!("The man {}.", events[2]), CandidateRole::VlBias),
                        Candidate::new(format!("The man {}.", events[3]), CandidateRole::VlBias),
                        Candidate::new(format!("The man {}.", events[4]), CandidateRole::LBias),
                        Candidate::new(format!("The man {}.", events[5]), CandidateRole::LBias),
                        Candidate::new(ABSTAIN_INCOMPLETE, CandidateRole::Abstention),
                        Candidate::new(ABSTAIN_CONFUSED, CandidateRole::Abstention),
                    ];
                    let gold_text = if entry.task == TaskKind::Qa {
                        candidates[0].text.clone()
                    } else {
                        ABSTAIN_INCOMPLETE.to_string()
                    };
                    rng.shuffle(&mut candidates);
                    let gold_index = candidates
                        .iter()
                        .position(|c| c.text == gold_text)
                        .expect("gold candidate present");
                    Sample {
                        id,
                        video_ref,
                        task: entry.task,
                        relation: entry.relation,
                        question: qa_question(entry.relation, events[0]),
                        candidates,
                        gold_index,
                        rc_label_gloss: None,
                    }
                }
            };
            debug_assert!(sample.validate().is_ok(), "{:?}", sample.validate());
            samples.push(sample);
        }
    }
    samples
}
