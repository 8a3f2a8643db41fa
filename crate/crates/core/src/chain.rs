//! The staged prompting protocol.
//!
//! A chain asks the model a fixed sequence of questions about one numbered
//! person: scene context, body language, the emotions of the people around
//! them, their facial action units, and finally a self-correcting decision
//! that reviews every earlier answer. Each stage's answer is threaded into the
//! following prompts. [`PromptMode`] selects the subset of stages used, which
//! is how the ablation configurations are expressed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au::{AuCatalog, EmotionLabel, RankedAus};
use crate::client::{Backend, BackendError, ChatMessage, ChatRequest, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};

pub const DEFAULT_TEMPLATES_TOML: &str = include_str!("../assets/templates.toml");

const TEMPLATE_VERSION: u32 = 1;
const PLACEHOLDERS: [&str; 4] = ["target_id", "prior_answers", "au_list", "frame_count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    Context,
    BodyLanguage,
    OthersEmotions,
    ActionUnits,
    SelfCorrection,
}

impl StageId {
    pub const ORDER: [StageId; 5] = [
        StageId::Context,
        StageId::BodyLanguage,
        StageId::OthersEmotions,
        StageId::ActionUnits,
        StageId::SelfCorrection,
    ];

    /// 1-based position in the full chain.
    pub fn number(&self) -> u8 {
        *self as u8 + 1
    }

    pub fn key(&self) -> &'static str {
        match self {
            StageId::Context => "context",
            StageId::BodyLanguage => "body_language",
            StageId::OthersEmotions => "others_emotions",
            StageId::ActionUnits => "action_units",
            StageId::SelfCorrection => "self_correction",
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            StageId::Context => "Scene context",
            StageId::BodyLanguage => "Body language",
            StageId::OthersEmotions => "Emotions of others",
            StageId::ActionUnits => "Facial action units",
            StageId::SelfCorrection => "Final decision",
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Order in which earlier findings are laid out for the final stage:
/// context, body, action units, then others' emotions.
const EVIDENCE_ORDER: [StageId; 4] = [
    StageId::Context,
    StageId::BodyLanguage,
    StageId::ActionUnits,
    StageId::OthersEmotions,
];

/// Which stages a chain runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// One plain question, no visual annotations.
    Plain,
    Muscle,
    MuscleContext,
    MuscleContextBody,
    #[default]
    Full,
}

impl PromptMode {
    pub const ALL: [PromptMode; 5] = [
        PromptMode::Plain,
        PromptMode::Muscle,
        PromptMode::MuscleContext,
        PromptMode::MuscleContextBody,
        PromptMode::Full,
    ];

    pub fn stages(&self) -> &'static [StageId] {
        use StageId::*;
        match self {
            PromptMode::Plain => &[SelfCorrection],
            PromptMode::Muscle => &[ActionUnits, SelfCorrection],
            PromptMode::MuscleContext => &[Context, ActionUnits, SelfCorrection],
            PromptMode::MuscleContextBody => &[Context, BodyLanguage, ActionUnits, SelfCorrection],
            PromptMode::Full => &StageId::ORDER,
        }
    }

    /// Whether frames carry the numbered-box / landmark / AU overlays.
    pub fn uses_visual_prompts(&self) -> bool {
        !matches!(self, PromptMode::Plain)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::Plain => "plain",
            PromptMode::Muscle => "muscle",
            PromptMode::MuscleContext => "muscle-context",
            PromptMode::MuscleContextBody => "muscle-context-body",
            PromptMode::Full => "full",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['+', '_'], "-").as_str() {
            "plain" => Ok(PromptMode::Plain),
            "muscle" => Ok(PromptMode::Muscle),
            "muscle-context" => Ok(PromptMode::MuscleContext),
            "muscle-context-body" => Ok(PromptMode::MuscleContextBody),
            "full" | "sovtp" => Ok(PromptMode::Full),
            other => Err(format!("unknown prompt mode {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("cannot read templates {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("template file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("template file version {0} is not supported")]
    Version(u32),
    #[error("template for {stage}: {reason}")]
    Template { stage: String, reason: String },
    #[error("stage {0} is not part of this prompt mode")]
    StageNotInMode(StageId),
    #[error("stage {stage} needs earlier stages {expected:?}, state has {found:?}")]
    Sequencing {
        stage: StageId,
        expected: Vec<StageId>,
        found: Vec<StageId>,
    },
    #[error("chain needs at least one frame")]
    NoFrames,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(&'static str),
}

/// A stage prompt with `{name}` placeholders, checked at load time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub stage: StageId,
    pub source: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(stage: StageId, source: &str) -> Result<Self, ChainError> {
        let fail = |reason: String| ChainError::Template {
            stage: stage.to_string(),
            reason,
        };
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = source.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => name.push(ch),
                            None => return Err(fail("unterminated placeholder".into())),
                        }
                    }
                    let slot = PLACEHOLDERS
                        .iter()
                        .find(|p| **p == name)
                        .ok_or_else(|| fail(format!("unknown placeholder {{{name}}}")))?;
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(slot));
                }
                '}' => return Err(fail("unmatched '}'".into())),
                other => literal.push(other),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self {
            stage,
            source: source.to_string(),
            segments,
        })
    }

    pub fn placeholders(&self) -> Vec<&'static str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(*n),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    fn render(&self, values: &BTreeMap<&'static str, String>) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => out.push_str(&values[name]),
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct TemplateFile {
    version: u32,
    #[serde(default)]
    response_format: String,
    plain: String,
    #[serde(rename = "stage")]
    stages: Vec<StageRecordFile>,
}

#[derive(Deserialize)]
struct StageRecordFile {
    id: StageId,
    template: String,
}

/// The stage templates for one prompt mode, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub mode: PromptMode,
    pub response_format: String,
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn from_toml_str(text: &str, mode: PromptMode) -> Result<Self, ChainError> {
        let file: TemplateFile = toml::from_str(text)?;
        if file.version != TEMPLATE_VERSION {
            return Err(ChainError::Version(file.version));
        }
        let mut by_stage = BTreeMap::new();
        for rec in file.stages {
            if by_stage.insert(rec.id, rec.template).is_some() {
                return Err(ChainError::Template {
                    stage: rec.id.to_string(),
                    reason: "defined more than once".into(),
                });
            }
        }
        let templates = match mode {
            PromptMode::Plain => vec![PromptTemplate::parse(StageId::SelfCorrection, &file.plain)?],
            _ => mode
                .stages()
                .iter()
                .map(|&s| {
                    let src = by_stage.get(&s).ok_or_else(|| ChainError::Template {
                        stage: s.to_string(),
                        reason: "missing from template file".into(),
                    })?;
                    PromptTemplate::parse(s, src)
                })
                .collect::<Result<_, _>>()?,
        };
        PromptTemplate::parse(StageId::SelfCorrection, &file.response_format).and_then(|t| {
            if t.placeholders().is_empty() {
                Ok(())
            } else {
                Err(ChainError::Template {
                    stage: "response_format".into(),
                    reason: "must not contain placeholders".into(),
                })
            }
        })?;
        Ok(Self {
            mode,
            response_format: file.response_format,
            templates,
        })
    }

    pub fn load(path: &Path, mode: PromptMode) -> Result<Self, ChainError> {
        let text = std::fs::read_to_string(path).map_err(|source| ChainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, mode)
    }

    pub fn builtin(mode: PromptMode) -> Self {
        Self::from_toml_str(DEFAULT_TEMPLATES_TOML, mode).expect("bundled templates are valid")
    }

    pub fn stages(&self) -> Vec<StageId> {
        self.templates.iter().map(|t| t.stage).collect()
    }

    pub fn template(&self, stage: StageId) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.stage == stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageId,
    pub question: String,
    pub reasoning: String,
    pub answer: String,
}

/// Final outcome of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prediction {
    Label(EmotionLabel),
    Unparseable,
}

impl Prediction {
    pub fn label(&self) -> Option<EmotionLabel> {
        match self {
            Prediction::Label(l) => Some(*l),
            Prediction::Unparseable => None,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Label(l) => write!(f, "{l}"),
            Prediction::Unparseable => f.write_str("Unparseable"),
        }
    }
}

impl FromStr for Prediction {
    type Err = crate::au::UnknownLabel;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("unparseable") {
            Ok(Prediction::Unparseable)
        } else {
            s.parse().map(Prediction::Label)
        }
    }
}

impl Serialize for Prediction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub target_face_id: u32,
    pub frame_count: usize,
    pub records: Vec<StageRecord>,
    /// Set once the final stage has been answered.
    pub final_label: Option<Prediction>,
}

impl ChainState {
    pub fn new(target_face_id: u32, frame_count: usize) -> Self {
        Self {
            target_face_id,
            frame_count,
            records: Vec::new(),
            final_label: None,
        }
    }

    pub fn record(&self, stage: StageId) -> Option<&StageRecord> {
        self.records.iter().find(|r| r.stage == stage)
    }

    pub fn stages(&self) -> Vec<StageId> {
        self.records.iter().map(|r| r.stage).collect()
    }
}

/// `AU6 (Cheek Raiser), AU12 (Lip Corner Puller)` in rank order.
pub fn format_au_list(ranked: &RankedAus, catalog: &AuCatalog) -> String {
    if ranked.is_empty() {
        return "none detected".into();
    }
    ranked
        .iter()
        .map(|au| match catalog.name(au.au_id) {
            Some(name) => format!("AU{} ({name})", au.au_id),
            None => format!("AU{}", au.au_id),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn format_priors(records: &[&StageRecord], with_reasoning: bool) -> String {
    if records.is_empty() {
        return "(none yet)".into();
    }
    records
        .iter()
        .map(|r| {
            let mut block = format!("[{}]\n", r.stage.title());
            if with_reasoning && !r.reasoning.is_empty() {
                block.push_str(&format!("Reasoning: {}\n", r.reasoning));
            }
            block.push_str(&format!("Answer: {}", r.answer));
            block
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Renders the prompt for `stage`, given everything answered so far.
///
/// The state must hold exactly the mode's stages that precede `stage`. The
/// final stage lays out every earlier finding, reasoning included, in
/// evidence order; other stages see earlier answers in stage order.
pub fn build_stage_prompt(
    stage: StageId,
    state: &ChainState,
    ranked: &RankedAus,
    templates: &TemplateSet,
    catalog: &AuCatalog,
) -> Result<String, ChainError> {
    let order = templates.stages();
    let pos = order
        .iter()
        .position(|s| *s == stage)
        .ok_or(ChainError::StageNotInMode(stage))?;
    let expected = order[..pos].to_vec();
    if state.stages() != expected {
        return Err(ChainError::Sequencing {
            stage,
            expected,
            found: state.stages(),
        });
    }
    let template = templates.template(stage).expect("stage is in the set");

    let priors: Vec<&StageRecord> = if stage == StageId::SelfCorrection {
        EVIDENCE_ORDER
            .iter()
            .filter_map(|s| state.record(*s))
            .collect()
    } else {
        state.records.iter().collect()
    };

    let values: BTreeMap<&'static str, String> = [
        ("target_id", state.target_face_id.to_string()),
        ("frame_count", state.frame_count.to_string()),
        ("au_list", format_au_list(ranked, catalog)),
        (
            "prior_answers",
            format_priors(&priors, stage == StageId::SelfCorrection),
        ),
    ]
    .into();

    let mut prompt = template.render(&values);
    if !templates.response_format.is_empty() {
        prompt.push_str("\n\n");
        prompt.push_str(&templates.response_format);
    }
    Ok(prompt)
}

fn find_marker(haystack_lower: &str, marker: &str, rightmost: bool) -> Option<usize> {
    if rightmost {
        haystack_lower.rfind(marker)
    } else {
        haystack_lower.find(marker)
    }
}

/// Splits a reply into `(reasoning, answer)` on the `REASONING:` / `ANSWER:`
/// markers (case-insensitive). Without an answer marker the whole reply is the
/// answer.
pub fn split_response(text: &str) -> (String, String) {
    // ASCII lowering keeps byte offsets aligned with the original
    let lower = text.to_ascii_lowercase();
    let Some(a) = find_marker(&lower, "answer:", true) else {
        return (String::new(), text.trim().to_string());
    };
    let answer = text[a + "answer:".len()..].trim().to_string();
    let before = &text[..a];
    let reasoning = match find_marker(&lower[..a], "reasoning:", false) {
        Some(r) => &before[r + "reasoning:".len()..],
        None => before,
    };
    (reasoning.trim().to_string(), answer)
}

const SYNONYMS: [(&str, EmotionLabel); 16] = [
    ("surprise", EmotionLabel::Surprise),
    ("surprised", EmotionLabel::Surprise),
    ("fear", EmotionLabel::Fear),
    ("fearful", EmotionLabel::Fear),
    ("afraid", EmotionLabel::Fear),
    ("disgust", EmotionLabel::Disgust),
    ("disgusted", EmotionLabel::Disgust),
    ("anger", EmotionLabel::Anger),
    ("angry", EmotionLabel::Anger),
    ("happiness", EmotionLabel::Happiness),
    ("happy", EmotionLabel::Happiness),
    ("sadness", EmotionLabel::Sadness),
    ("sad", EmotionLabel::Sadness),
    ("neutral", EmotionLabel::Neutral),
    ("calm", EmotionLabel::Neutral),
    ("neutrality", EmotionLabel::Neutral),
];

/// Maps a free-text answer to a label.
///
/// Whole words are matched case-insensitively against the label names and a
/// small synonym table. Exactly one distinct label must match; none or
/// several gives [`Prediction::Unparseable`].
pub fn parse_emotion(answer: &str) -> Prediction {
    let mut found: Option<EmotionLabel> = None;
    for word in answer
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
    {
        let word = word.to_lowercase();
        if let Some((_, label)) = SYNONYMS.iter().find(|(syn, _)| *syn == word) {
            match found {
                None => found = Some(*label),
                Some(prev) if prev == *label => {}
                Some(_) => return Prediction::Unparseable,
            }
        }
    }
    found.map_or(Prediction::Unparseable, Prediction::Label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Independent runs whose final labels are majority-voted.
    pub num_trajectories: u32,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            model: crate::client::BackendConfig::default().model,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            num_trajectories: 1,
        }
    }
}

/// One backend call, as logged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub video_id: Option<String>,
    pub target_face_id: u32,
    pub trajectory: u32,
    pub stage: StageId,
    pub stage_number: u8,
    pub request_hash: String,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub state: ChainState,
    pub transcript: Vec<TranscriptEntry>,
}

/// A chain stopped by a backend failure, with everything completed before it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("chain aborted at stage {stage}: {error}")]
pub struct ChainAbort {
    pub stage: StageId,
    pub error: BackendError,
    pub state: ChainState,
    pub transcript: Vec<TranscriptEntry>,
}

/// Everything a chain needs besides the backend.
pub struct ChainInputs<'a> {
    /// PNG-encoded annotated frames, sent with every stage.
    pub frames: &'a [Vec<u8>],
    pub target_face_id: u32,
    pub ranked: &'a RankedAus,
    pub templates: &'a TemplateSet,
    pub catalog: &'a AuCatalog,
    pub video_id: Option<&'a str>,
}

/// Runs the mode's stages in order against `backend`.
pub fn run_chain(
    inputs: &ChainInputs<'_>,
    backend: &dyn Backend,
    params: &ChainParams,
) -> Result<ChainRun, ChainAbort> {
    run_trajectory(inputs, backend, params, 0)
}

fn run_trajectory(
    inputs: &ChainInputs<'_>,
    backend: &dyn Backend,
    params: &ChainParams,
    trajectory: u32,
) -> Result<ChainRun, ChainAbort> {
    let mut state = ChainState::new(inputs.target_face_id, inputs.frames.len());
    let mut transcript = Vec::new();

    for stage in inputs.templates.stages() {
        let abort = |error, state: ChainState, transcript| ChainAbort {
            stage,
            error,
            state,
            transcript,
        };
        if inputs.frames.is_empty() {
            return Err(abort(
                BackendError::InvalidRequest(ChainError::NoFrames.to_string()),
                state,
                transcript,
            ));
        }
        let prompt = build_stage_prompt(stage, &state, inputs.ranked, inputs.templates, inputs.catalog)
            .expect("stages are visited in template order");
        let message = inputs
            .frames
            .iter()
            .fold(ChatMessage::user(prompt.clone()), |m, png| m.with_png(png));
        let request = ChatRequest {
            model: params.model.clone(),
            messages: vec![message],
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            stage: Some(stage.number()),
        };
        let mut entry = TranscriptEntry {
            video_id: inputs.video_id.map(str::to_string),
            target_face_id: inputs.target_face_id,
            trajectory,
            stage,
            stage_number: stage.number(),
            request_hash: request.request_hash(),
            prompt: prompt.clone(),
            response: None,
            error: None,
            latency_ms: 0,
        };

        match backend.complete(&request) {
            Ok(completion) => {
                entry.response = Some(completion.text.clone());
                entry.latency_ms = completion.latency_ms;
                transcript.push(entry);
                let (reasoning, answer) = split_response(&completion.text);
                state.records.push(StageRecord {
                    stage,
                    question: prompt,
                    reasoning,
                    answer,
                });
            }
            Err(error) => {
                entry.error = Some(error.to_string());
                transcript.push(entry);
                return Err(abort(error, state, transcript));
            }
        }
    }

    let last = state.records.last().expect("every mode has a final stage");
    state.final_label = Some(parse_emotion(&last.answer));
    Ok(ChainRun { state, transcript })
}

/// Result of several independent runs of the same chain.
#[derive(Debug, Clone, PartialEq)]
pub struct VotedRun {
    pub runs: Vec<ChainRun>,
    pub label: Prediction,
}

impl VotedRun {
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.runs.iter().flat_map(|r| r.transcript.iter().cloned()).collect()
    }
}

/// Plurality vote over parsed labels. Unparseable runs do not vote; a tie goes
/// to the label reached first.
pub fn majority_vote(labels: &[Prediction]) -> Prediction {
    let mut counts: Vec<(EmotionLabel, usize)> = Vec::new();
    for l in labels.iter().filter_map(Prediction::label) {
        match counts.iter_mut().find(|(x, _)| *x == l) {
            Some((_, n)) => *n += 1,
            None => counts.push((l, 1)),
        }
    }
    let best = counts.iter().map(|(_, n)| *n).max();
    counts
        .into_iter()
        .find(|(_, n)| Some(*n) == best)
        .map_or(Prediction::Unparseable, |(l, _)| Prediction::Label(l))
}

/// Runs `params.num_trajectories` chains and votes on their final labels.
/// Any aborted trajectory aborts the whole run.
pub fn run_voted(
    inputs: &ChainInputs<'_>,
    backend: &dyn Backend,
    params: &ChainParams,
) -> Result<VotedRun, ChainAbort> {
    let mut runs = Vec::new();
    for t in 0..params.num_trajectories.max(1) {
        match run_trajectory(inputs, backend, params, t) {
            Ok(run) => runs.push(run),
            Err(mut abort) => {
                let mut transcript: Vec<TranscriptEntry> =
                    runs.iter().flat_map(|r: &ChainRun| r.transcript.clone()).collect();
                transcript.append(&mut abort.transcript);
                abort.transcript = transcript;
                return Err(abort);
            }
        }
    }
    let labels: Vec<Prediction> = runs
        .iter()
        .map(|r| r.state.final_label.unwrap_or(Prediction::Unparseable))
        .collect();
    Ok(VotedRun {
        label: majority_vote(&labels),
        runs,
    })
}
