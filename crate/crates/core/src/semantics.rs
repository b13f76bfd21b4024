//! Per-frame semantic parses and the text-model contracts the map relies on.
//!
//! Large-model backends plug in through [`Embedder`], [`Summarizer`] and
//! [`Scorer`]. The crate ships deterministic mocks plus a replay backend that
//! serves recorded responses.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::ImageBuffer;

pub const EMBEDDING_DIM: usize = 256;
/// Separator used when concatenating text buffers.
pub const DELIMITER: &str = "; ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedInstance {
    pub local_id: u32,
    pub text: String,
    /// Mask image path; resolved against the parse file's directory on load.
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRegion {
    pub local_id: u32,
    pub text: String,
    pub members: BTreeSet<u32>,
}

/// Structured description of one frame: instances and the regions grouping them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SemanticParse {
    pub frame_id: String,
    pub instances: Vec<ParsedInstance>,
    pub regions: Vec<ParsedRegion>,
}

impl SemanticParse {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.local_id) {
                return Err(Error::DuplicateLocalId {
                    kind: "instance",
                    id: inst.local_id,
                });
            }
        }
        let mut regions = BTreeSet::new();
        for r in &self.regions {
            if !regions.insert(r.local_id) {
                return Err(Error::DuplicateLocalId {
                    kind: "region",
                    id: r.local_id,
                });
            }
            if let Some(m) = r.members.iter().find(|m| !seen.contains(m)) {
                return Err(Error::DanglingMember {
                    region: r.local_id,
                    member: *m,
                });
            }
        }
        Ok(())
    }

    pub fn instance(&self, local_id: u32) -> Option<&ParsedInstance> {
        self.instances.iter().find(|i| i.local_id == local_id)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    id: u32,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct RegionRecord {
    id: u32,
    text: String,
    #[serde(default)]
    members: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParseRecord {
    frame_id: String,
    #[serde(default)]
    instances: Vec<InstanceRecord>,
    #[serde(default)]
    regions: Vec<RegionRecord>,
}

/// Parses the JSON form of a semantic parse without touching the filesystem.
pub fn parse_from_json(json: &str, origin: &Path) -> Result<SemanticParse> {
    let rec: ParseRecord = serde_json::from_str(json).map_err(|e| Error::MalformedParse {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;
    let parse = SemanticParse {
        frame_id: rec.frame_id,
        instances: rec
            .instances
            .into_iter()
            .map(|i| ParsedInstance {
                local_id: i.id,
                text: i.text,
                mask: i.mask,
            })
            .collect(),
        regions: rec
            .regions
            .into_iter()
            .map(|r| ParsedRegion {
                local_id: r.id,
                text: r.text,
                members: r.members.into_iter().collect(),
            })
            .collect(),
    };
    parse.validate()?;
    Ok(parse)
}

pub fn parse_to_json(parse: &SemanticParse) -> String {
    let rec = ParseRecord {
        frame_id: parse.frame_id.clone(),
        instances: parse
            .instances
            .iter()
            .map(|i| InstanceRecord {
                id: i.local_id,
                text: i.text.clone(),
                mask: i.mask.clone(),
            })
            .collect(),
        regions: parse
            .regions
            .iter()
            .map(|r| RegionRecord {
                id: r.local_id,
                text: r.text.clone(),
                members: r.members.iter().copied().collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&rec).expect("parse records always serialize")
}

/// Loads and validates a parse file. Mask paths are made absolute relative to
/// the file's directory and must exist.
pub fn load_parse(path: &Path) -> Result<SemanticParse> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut parse = parse_from_json(&text, path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for inst in &mut parse.instances {
        if let Some(mask) = &inst.mask {
            let resolved = if mask.is_absolute() {
                mask.clone()
            } else {
                dir.join(mask)
            };
            if !resolved.exists() {
                return Err(Error::MissingMask {
                    id: inst.local_id,
                    path: resolved,
                });
            }
            inst.mask = Some(resolved);
        }
    }
    Ok(parse)
}

/// Unit-length text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    /// Normalizes `values`; a zero vector becomes the first basis vector.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
            if let Some(first) = values.first_mut() {
                *first = 1.0;
            }
        }
        Self { values }
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[axis] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Embedding;
}

pub trait Summarizer: Send + Sync {
    /// Condenses `text` to at most `limit` characters.
    fn summarize(&self, text: &str, limit: usize) -> String;
}

pub trait Scorer: Send + Sync {
    /// Relevance in [0, 1] of a unit (its text and optionally a rendered image) to a goal.
    fn score(&self, unit_text: &str, unit_image: Option<&ImageBuffer>, goal: &str) -> f64;
}

// Stable 64-bit FNV-1a; std's hasher is not guaranteed stable across releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const ALIASES: &[(&str, &str)] = &[
    ("tv", "television"),
    ("fridge", "refrigerator"),
    ("couch", "sofa"),
    ("sofa", "couch"),
];

fn add_feature(acc: &mut [f64], feature: &str, weight: f64) {
    let h = fnv1a(feature.as_bytes());
    let bin = (h % EMBEDDING_DIM as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    acc[bin] += sign * weight;
}

fn add_token(acc: &mut [f64], token: &str) {
    add_feature(acc, &format!("w:{token}"), 1.0);
    let padded: Vec<char> = format!("#{token}#").chars().collect();
    for tri in padded.windows(3) {
        let s: String = tri.iter().collect();
        add_feature(acc, &format!("c:{s}"), 0.5);
    }
}

/// Deterministic bag-of-features embedding: hashed word and character-trigram
/// features, with a handful of common abbreviations expanded.
pub fn mock_embed(text: &str) -> Embedding {
    let lower = text.to_lowercase();
    let mut acc = vec![0.0; EMBEDDING_DIM];
    let mut any = false;
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        any = true;
        add_token(&mut acc, token);
        for (short, long) in ALIASES {
            if token == *short {
                add_token(&mut acc, long);
            }
        }
    }
    if !any {
        return Embedding::basis(EMBEDDING_DIM, 0);
    }
    Embedding::normalized(acc)
}

/// Deduplicates delimiter-separated segments and, if still too long, keeps the
/// longest prefix of whole segments that fits.
pub fn mock_summarize(text: &str, limit: usize) -> String {
    assert!(limit > 0, "summary limit must be positive");
    let mut seen = BTreeSet::new();
    let segments: Vec<&str> = text
        .split(DELIMITER.trim_end())
        .map(str::trim)
        .filter(|s| !s.is_empty() && seen.insert(*s))
        .collect();

    let mut out = String::new();
    let mut len = 0;
    for (i, seg) in segments.iter().enumerate() {
        let extra = seg.chars().count() + if i > 0 { DELIMITER.len() } else { 0 };
        if len + extra > limit {
            if i == 0 {
                out = seg.chars().take(limit).collect::<String>().trim_end().to_string();
            }
            break;
        }
        if i > 0 {
            out.push_str(DELIMITER);
        }
        out.push_str(seg);
        len += extra;
    }
    out
}

/// Appends `addition` to `existing` with the delimiter, summarizing when the
/// result would exceed `limit` characters.
pub fn concat_text(existing: &str, addition: &str, limit: usize, summarizer: &dyn Summarizer) -> String {
    let joined = if existing.is_empty() {
        addition.to_string()
    } else if addition.is_empty() {
        existing.to_string()
    } else {
        format!("{existing}{DELIMITER}{addition}")
    };
    if joined.chars().count() > limit {
        let summary = summarizer.summarize(&joined, limit);
        if summary.chars().count() > limit {
            // contract breach by a backend; keep the buffer bounded regardless
            return mock_summarize(&summary, limit);
        }
        summary
    } else {
        joined
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockEmbedder;

impl Embedder for MockEmbedder {
    fn embed(&self, text: &str) -> Embedding {
        mock_embed(text)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockSummarizer;

impl Summarizer for MockSummarizer {
    fn summarize(&self, text: &str, limit: usize) -> String {
        mock_summarize(text, limit)
    }
}

/// Cosine of mock embeddings mapped from [-1, 1] to [0, 1]. Ignores images.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockScorer;

impl Scorer for MockScorer {
    fn score(&self, unit_text: &str, _unit_image: Option<&ImageBuffer>, goal: &str) -> f64 {
        let c = cosine(&mock_embed(unit_text), &mock_embed(goal));
        ((c + 1.0) * 0.5).clamp(0.0, 1.0)
    }
}

/// Recorded responses from a real backend. Misses fall through to the mocks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayRecording {
    pub embeddings: HashMap<String, Vec<f64>>,
    pub summaries: HashMap<String, String>,
    pub scores: Vec<RecordedScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedScore {
    pub unit_text: String,
    pub goal: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    recording: ReplayRecording,
    scores: HashMap<(String, String), f64>,
}

impl ReplayBackend {
    pub fn new(recording: ReplayRecording) -> Self {
        let scores = recording
            .scores
            .iter()
            .map(|r| ((r.unit_text.clone(), r.goal.clone()), r.score.clamp(0.0, 1.0)))
            .collect();
        Self { recording, scores }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let recording = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::new(recording))
    }
}

impl Embedder for ReplayBackend {
    fn embed(&self, text: &str) -> Embedding {
        match self.recording.embeddings.get(text) {
            Some(v) => Embedding::normalized(v.clone()),
            None => mock_embed(text),
        }
    }
}

impl Summarizer for ReplayBackend {
    fn summarize(&self, text: &str, limit: usize) -> String {
        match self.recording.summaries.get(text) {
            Some(s) if s.chars().count() <= limit => s.clone(),
            _ => mock_summarize(text, limit),
        }
    }
}

impl Scorer for ReplayBackend {
    fn score(&self, unit_text: &str, unit_image: Option<&ImageBuffer>, goal: &str) -> f64 {
        match self.scores.get(&(unit_text.to_string(), goal.to_string())) {
            Some(s) => *s,
            None => MockScorer.score(unit_text, unit_image, goal),
        }
    }
}

/// The embedder and summarizer a map update consults.
pub struct TextModels {
    pub embedder: Box<dyn Embedder>,
    pub summarizer: Box<dyn Summarizer>,
}

impl TextModels {
    pub fn mock() -> Self {
        Self {
            embedder: Box::new(MockEmbedder),
            summarizer: Box::new(MockSummarizer),
        }
    }
}

impl Default for TextModels {
    fn default() -> Self {
        Self::mock()
    }
}

impl std::fmt::Debug for TextModels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextModels").finish_non_exhaustive()
    }
}
