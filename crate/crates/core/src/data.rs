//! Dataset handling: sample records, vocabulary, train/val/test splitting,
//! per-coordinate normalization, and a procedural motion-language generator.
//!
//! The on-disk dataset format is line-delimited JSON, one self-contained
//! sample per line (see `docs/FORMATS.md` in the repository root for the
//! normative description). Malformed lines are rejected individually with
//! their line number; parsing continues.
//!
//! The synthetic generator exists so synchronization claims are testable at
//! desk scale: every sample carries exact ground-truth intervals for each
//! primitive, and each primitive leaves a frame-local signature (postures,
//! raised limbs, pulses) that a per-frame encoder can recognize without
//! temporal context.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tokenize;
use crate::segmentation::{GroundTruthAnnotation, SegmentInterval};
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const SOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub const PAD_WORD: &str = "<pad>";
pub const SOS_WORD: &str = "<sos>";
pub const EOS_WORD: &str = "<eos>";
pub const UNK_WORD: &str = "<unk>";

const RESERVED: [&str; 4] = [PAD_WORD, SOS_WORD, EOS_WORD, UNK_WORD];

/// One annotated action word with the frame interval it occupies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSpan {
    pub word: String,
    pub start: usize,
    pub end: usize,
}

/// One motion-language sample as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub id: String,
    pub fps: f64,
    /// Frame width; 63 (21 joints × xyz) in the canonical layout.
    pub width: usize,
    /// `T_x` rows of `width` coordinates each.
    pub frames: Vec<Vec<f64>>,
    pub descriptions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<Vec<AnnotatedSpan>>,
}

impl MotionSample {
    pub fn t_x(&self) -> usize {
        self.frames.len()
    }

    /// Enforce the record invariants; violations carry the failing detail.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "sample {} has {} frames, need at least 2",
                self.id,
                self.frames.len()
            )));
        }
        if self.width == 0 {
            return Err(Error::InvalidArgument(format!(
                "sample {} declares zero width",
                self.id
            )));
        }
        for (j, row) in self.frames.iter().enumerate() {
            if row.len() != self.width {
                return Err(Error::InvalidArgument(format!(
                    "sample {} frame {} has width {}, declared {}",
                    self.id,
                    j,
                    row.len(),
                    self.width
                )));
            }
        }
        if self.descriptions.is_empty() || self.descriptions.iter().any(|d| tokenize(d).is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "sample {} needs at least one non-empty description",
                self.id
            )));
        }
        if let Some(spans) = &self.annotation {
            let mut prev_start = 0usize;
            for (i, span) in spans.iter().enumerate() {
                if span.start >= span.end {
                    return Err(Error::InvalidArgument(format!(
                        "sample {} annotation {} is degenerate ({}..{})",
                        self.id, i, span.start, span.end
                    )));
                }
                if span.end > self.frames.len() {
                    return Err(Error::InvalidArgument(format!(
                        "sample {} annotation {} ends at {}, past the last frame {}",
                        self.id,
                        i,
                        span.end,
                        self.frames.len()
                    )));
                }
                if i > 0 && span.start < prev_start {
                    return Err(Error::InvalidArgument(format!(
                        "sample {} annotation {} out of chronological order",
                        self.id, i
                    )));
                }
                prev_start = span.start;
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> Option<GroundTruthAnnotation> {
        self.annotation.as_ref().map(|spans| GroundTruthAnnotation {
            action_words: spans.iter().map(|s| s.word.clone()).collect(),
            segments: spans
                .iter()
                .map(|s| SegmentInterval { start: s.start, end: s.end })
                .collect(),
        })
    }

    pub fn frames_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.frames.len() * self.width);
        for row in &self.frames {
            data.extend_from_slice(row);
        }
        Tensor::new(vec![self.frames.len(), self.width], data)
            .expect("validated sample has consistent widths")
    }
}

/// A line that failed to parse or validate, with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

/// Read a line-delimited dataset. Invalid lines become [`Rejection`]s and
/// parsing continues; only I/O failures abort.
pub fn parse_dataset(path: &Path) -> Result<(Vec<MotionSample>, Vec<Rejection>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    let mut rejections = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MotionSample>(&line) {
            Ok(sample) => match sample.validate() {
                Ok(()) => samples.push(sample),
                Err(e) => rejections.push(Rejection {
                    line: i + 1,
                    reason: e.to_string(),
                }),
            },
            Err(e) => rejections.push(Rejection {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok((samples, rejections))
}

/// Write samples as line-delimited JSON; inverse of [`parse_dataset`] on
/// valid data.
pub fn write_dataset(path: &Path, samples: &[MotionSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| {
            Error::InvalidArgument(format!("sample {} cannot serialize: {}", s.id, e))
        })?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seeded shuffle followed by fraction split. The same seed and fractions
/// always produce the same partition.
pub fn split_dataset(
    mut samples: Vec<MotionSample>,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Vec<MotionSample>, Vec<MotionSample>, Vec<MotionSample>)> {
    if !(0.0..=1.0).contains(&train_frac)
        || !(0.0..=1.0).contains(&val_frac)
        || train_frac + val_frac > 1.0
    {
        return Err(Error::InvalidArgument(format!(
            "split fractions {train_frac}/{val_frac} must be in [0,1] and sum to at most 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    let n = samples.len();
    let n_train = (n as f64 * train_frac).floor() as usize;
    let n_val = (n as f64 * val_frac).floor() as usize;
    let rest = samples.split_off(n_train.min(n));
    let mut val = rest;
    let test = val.split_off(n_val.min(val.len()));
    Ok((samples, val, test))
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    freq: BTreeMap<String, u64>,
}

/// Word ↔ id bijection with the four reserved tokens pinned to ids 0–3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    freq: BTreeMap<String, u64>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(repr: VocabRepr) -> Self {
        let index = repr
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            words: repr.words,
            index,
            freq: repr.freq,
        }
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            words: v.words,
            freq: v.freq,
        }
    }
}

impl Vocabulary {
    fn reserved_only() -> Self {
        let words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            words,
            index,
            freq: BTreeMap::new(),
        }
    }

    /// Count words over every description, then assign ids to words with
    /// frequency at least `min_freq`, ordered by descending frequency and
    /// lexicographically within ties. Rarer words fall back to the unknown
    /// token at lookup time.
    pub fn build(samples: &[MotionSample], min_freq: u64) -> Vocabulary {
        let mut vocab = Vocabulary::reserved_only();
        let mut freq: BTreeMap<String, u64> = BTreeMap::new();
        for s in samples {
            for d in &s.descriptions {
                for token in tokenize(d) {
                    if RESERVED.contains(&token.as_str()) {
                        continue;
                    }
                    *freq.entry(token).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(&String, &u64)> = freq.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        for (word, &count) in ranked {
            if count >= min_freq {
                vocab.index.insert(word.clone(), vocab.words.len());
                vocab.words.push(word.clone());
            }
        }
        vocab.freq = freq;
        vocab
    }

    /// Total id count, reserved tokens included.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved tokens are always present
    }

    pub fn id_of(&self, word: &str) -> usize {
        *self.index.get(word).unwrap_or(&UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word_of(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn frequency(&self, word: &str) -> u64 {
        self.freq.get(word).copied().unwrap_or(0)
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_of(t)).collect()
    }

    /// Token ids the decoder is trained to emit: the sentence's words
    /// followed by the end token. The start token is never a target.
    pub fn target_ids(&self, sentence: &str) -> Vec<usize> {
        let mut ids = self.encode_tokens(&tokenize(sentence));
        ids.push(EOS_ID);
        ids
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&id| {
                self.word_of(id)
                    .unwrap_or(UNK_WORD)
                    .to_string()
            })
            .collect()
    }
}

/// Per-coordinate affine normalizer fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Mean and standard deviation per coordinate over every frame of every
    /// sample, in deterministic iteration order. Deviations are floored at
    /// 1e-8 so constant coordinates stay finite.
    pub fn fit(samples: &[MotionSample]) -> Result<Self> {
        let width = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot fit a normalizer on no samples".into()))?
            .width;
        let mut mean = vec![0.0f64; width];
        let mut count = 0u64;
        for s in samples {
            if s.width != width {
                return Err(Error::ShapeMismatch {
                    op: "normalizer fit",
                    lhs: vec![width],
                    rhs: vec![s.width],
                });
            }
            for row in &s.frames {
                for (m, &x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
                count += 1;
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0f64; width];
        for s in samples {
            for row in &s.frames {
                for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = x - m;
                    *v += d * d;
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(1e-8))
            .collect();
        Ok(Normalizer { mean, std })
    }

    /// `(x - mean) / std` per coordinate, as a `[T_x, width]` tensor.
    pub fn apply(&self, sample: &MotionSample) -> Result<Tensor> {
        if sample.width != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "normalizer apply",
                lhs: vec![self.mean.len()],
                rhs: vec![sample.width],
            });
        }
        let mut data = Vec::with_capacity(sample.frames.len() * sample.width);
        for row in &sample.frames {
            for ((&x, &m), &s) in row.iter().zip(&self.mean).zip(&self.std) {
                data.push((x - m) / s);
            }
        }
        Tensor::new(vec![sample.frames.len(), sample.width], data)
    }
}

// --- Synthetic generator ---------------------------------------------------

/// The seven motion primitives of the synthetic library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Primitive {
    WalkForward,
    WalkBackward,
    Turn,
    Wave,
    Kick,
    Stomp,
    Squat,
}

pub const ALL_PRIMITIVES: [Primitive; 7] = [
    Primitive::WalkForward,
    Primitive::WalkBackward,
    Primitive::Turn,
    Primitive::Wave,
    Primitive::Kick,
    Primitive::Stomp,
    Primitive::Squat,
];

impl Primitive {
    pub fn parse(name: &str) -> Result<Primitive> {
        match name {
            "walk-forward" => Ok(Primitive::WalkForward),
            "walk-backward" => Ok(Primitive::WalkBackward),
            "turn" => Ok(Primitive::Turn),
            "wave" => Ok(Primitive::Wave),
            "kick" => Ok(Primitive::Kick),
            "stomp" => Ok(Primitive::Stomp),
            "squat" => Ok(Primitive::Squat),
            other => Err(Error::InvalidConfig(format!(
                "unknown primitive {other:?}; expected one of walk-forward, walk-backward, turn, wave, kick, stomp, squat"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::WalkForward => "walk-forward",
            Primitive::WalkBackward => "walk-backward",
            Primitive::Turn => "turn",
            Primitive::Wave => "wave",
            Primitive::Kick => "kick",
            Primitive::Stomp => "stomp",
            Primitive::Squat => "squat",
        }
    }

    /// The annotated action word: the word whose position in the caption
    /// anchors this primitive's language segment.
    pub fn action_word(&self) -> &'static str {
        match self {
            Primitive::WalkForward | Primitive::WalkBackward => "walks",
            Primitive::Turn => "turns",
            Primitive::Wave => "waves",
            Primitive::Kick => "kicks",
            Primitive::Stomp => "stomps",
            Primitive::Squat => "squats",
        }
    }

    fn clause(&self) -> &'static str {
        match self {
            Primitive::WalkForward => "walks forward",
            Primitive::WalkBackward => "walks backwards",
            Primitive::Turn => "turns around",
            Primitive::Wave => "waves the right hand",
            Primitive::Kick => "kicks with the right leg",
            Primitive::Stomp => "stomps the right foot",
            Primitive::Squat => "squats down",
        }
    }

    fn duration_range(&self) -> (usize, usize) {
        match self {
            Primitive::WalkForward | Primitive::WalkBackward => (26, 30),
            Primitive::Turn => (16, 20),
            Primitive::Wave => (21, 25),
            Primitive::Kick | Primitive::Stomp => (13, 17),
            Primitive::Squat => (18, 22),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Speed {
    Slow,
    Normal,
    Fast,
}

impl Speed {
    fn amp(&self) -> f64 {
        match self {
            Speed::Slow => 0.75,
            Speed::Normal => 1.0,
            Speed::Fast => 1.25,
        }
    }

    fn freq(&self) -> f64 {
        match self {
            Speed::Slow => 0.7,
            Speed::Normal => 1.0,
            Speed::Fast => 1.4,
        }
    }

    fn adverb(&self) -> Option<&'static str> {
        match self {
            Speed::Slow => Some("slowly"),
            Speed::Normal => None,
            Speed::Fast => Some("quickly"),
        }
    }
}

/// Scenario description for [`synth_generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    pub min_primitives: usize,
    pub max_primitives: usize,
    /// Library subset to draw from; all seven primitives by default.
    pub primitives: Vec<Primitive>,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples: 100,
            min_primitives: 2,
            max_primitives: 3,
            primitives: ALL_PRIMITIVES.to_vec(),
            fps: 20.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("synth needs at least one sample".into()));
        }
        if self.min_primitives == 0
            || self.min_primitives > self.max_primitives
            || self.max_primitives > 3
        {
            return Err(Error::InvalidConfig(format!(
                "primitive count range {}..={} must sit inside 1..=3",
                self.min_primitives, self.max_primitives
            )));
        }
        if self.primitives.is_empty() {
            return Err(Error::InvalidConfig("empty primitive library".into()));
        }
        if self.fps <= 0.0 {
            return Err(Error::InvalidConfig("fps must be positive".into()));
        }
        Ok(())
    }
}

// Joint indices in the documented 21-joint layout. Coordinate `j*3 + a`
// holds joint `j`, axis `a` with x forward, y up, z to the skeleton's right.
const ROOT: usize = 0;
const SPINE: usize = 1;
const CHEST: usize = 2;
const NECK: usize = 3;
const HEAD: usize = 4;
const R_SHOULDER: usize = 5;
const R_ELBOW: usize = 6;
const R_WRIST: usize = 7;
const L_SHOULDER: usize = 8;
const L_ELBOW: usize = 9;
const L_WRIST: usize = 10;
const R_HIP: usize = 11;
const R_KNEE: usize = 12;
const R_ANKLE: usize = 13;
const L_HIP: usize = 14;
const L_KNEE: usize = 15;
const L_ANKLE: usize = 16;
const R_FOOT: usize = 17;
const L_FOOT: usize = 18;
const R_HAND: usize = 19;
const L_HAND: usize = 20;

pub const SYNTH_WIDTH: usize = 63;

fn base_pose() -> [f64; SYNTH_WIDTH] {
    let mut p = [0.0; SYNTH_WIDTH];
    let mut set = |joint: usize, x: f64, y: f64, z: f64| {
        p[joint * 3] = x;
        p[joint * 3 + 1] = y;
        p[joint * 3 + 2] = z;
    };
    set(ROOT, 0.0, 1.0, 0.0);
    set(SPINE, 0.0, 1.2, 0.0);
    set(CHEST, 0.0, 1.4, 0.0);
    set(NECK, 0.0, 1.55, 0.0);
    set(HEAD, 0.0, 1.7, 0.0);
    set(R_SHOULDER, 0.0, 1.45, 0.2);
    set(R_ELBOW, 0.0, 1.2, 0.25);
    set(R_WRIST, 0.0, 0.95, 0.25);
    set(L_SHOULDER, 0.0, 1.45, -0.2);
    set(L_ELBOW, 0.0, 1.2, -0.25);
    set(L_WRIST, 0.0, 0.95, -0.25);
    set(R_HIP, 0.0, 0.95, 0.1);
    set(R_KNEE, 0.0, 0.5, 0.1);
    set(R_ANKLE, 0.0, 0.1, 0.1);
    set(L_HIP, 0.0, 0.95, -0.1);
    set(L_KNEE, 0.0, 0.5, -0.1);
    set(L_ANKLE, 0.0, 0.1, -0.1);
    set(R_FOOT, 0.12, 0.05, 0.1);
    set(L_FOOT, 0.12, 0.05, -0.1);
    set(R_HAND, 0.0, 0.85, 0.25);
    set(L_HAND, 0.0, 0.85, -0.25);
    p
}

fn add(frame: &mut [f64], joint: usize, axis: usize, delta: f64) {
    frame[joint * 3 + axis] += delta;
}

/// Offset one frame by a primitive's signature. Every primitive combines a
/// static posture marker (visible in any single frame of its span) with an
/// oscillation or pulse so frames inside a span still vary.
fn apply_primitive(frame: &mut [f64], prim: Primitive, local_t: usize, dur: usize, speed: Speed) {
    let a = speed.amp();
    let phi = 0.45 * speed.freq() * local_t as f64;
    let prog = local_t as f64 / dur as f64;
    let pulse = (std::f64::consts::PI * prog).sin();
    let swing = phi.sin();
    // Constant whole-span tempo cue on channels no primitive animates:
    // hurried motion carries a sideways sway, slow motion the opposite.
    // Unlike amplitude (confounded with pulse phase), this keeps the speed
    // class readable from any single frame of the span.
    add(frame, SPINE, 2, 0.20 * (a - 1.0));
    add(frame, CHEST, 2, 0.16 * (a - 1.0));
    match prim {
        Primitive::WalkForward | Primitive::WalkBackward => {
            let dir = if prim == Primitive::WalkForward { 1.0 } else { -1.0 };
            // Torso lean marks the direction in every single frame.
            add(frame, HEAD, 0, 0.20 * a * dir);
            add(frame, NECK, 0, 0.16 * a * dir);
            add(frame, CHEST, 0, 0.12 * a * dir);
            for (r, l, amp) in [
                (R_KNEE, L_KNEE, 0.30),
                (R_ANKLE, L_ANKLE, 0.35),
                (R_FOOT, L_FOOT, 0.35),
            ] {
                add(frame, r, 0, amp * a * swing);
                add(frame, l, 0, -amp * a * swing);
            }
            for (r, l, amp) in [(R_WRIST, L_WRIST, 0.22), (R_HAND, L_HAND, 0.24)] {
                add(frame, r, 0, -amp * a * swing);
                add(frame, l, 0, amp * a * swing);
            }
        }
        Primitive::Turn => {
            // Antisymmetric shoulder twist peaking mid-turn.
            add(frame, R_SHOULDER, 0, 0.28 * a * pulse);
            add(frame, L_SHOULDER, 0, -0.28 * a * pulse);
            add(frame, R_HIP, 0, -0.12 * a * pulse);
            add(frame, L_HIP, 0, 0.12 * a * pulse);
            add(frame, HEAD, 2, 0.22 * a * pulse);
        }
        Primitive::Wave => {
            // Raised right arm is the static marker; lateral wag animates it.
            add(frame, R_WRIST, 1, 0.55 * a);
            add(frame, R_HAND, 1, 0.60 * a);
            add(frame, R_ELBOW, 1, 0.28 * a);
            let wag = (1.6 * phi).sin();
            add(frame, R_WRIST, 2, 0.18 * a * wag);
            add(frame, R_HAND, 2, 0.20 * a * wag);
        }
        Primitive::Kick => {
            add(frame, R_ANKLE, 0, 0.55 * a * pulse);
            add(frame, R_ANKLE, 1, 0.28 * a * pulse);
            add(frame, R_FOOT, 0, 0.60 * a * pulse);
            add(frame, R_FOOT, 1, 0.30 * a * pulse);
            add(frame, R_KNEE, 0, 0.30 * a * pulse);
        }
        Primitive::Stomp => {
            // Vertical-only lift distinguishes it from the forward kick.
            add(frame, R_KNEE, 1, 0.40 * a * pulse);
            add(frame, R_ANKLE, 1, 0.45 * a * pulse);
            add(frame, R_FOOT, 1, 0.45 * a * pulse);
        }
        Primitive::Squat => {
            for (joint, amp) in [
                (ROOT, 0.35),
                (SPINE, 0.35),
                (CHEST, 0.34),
                (NECK, 0.33),
                (HEAD, 0.33),
            ] {
                add(frame, joint, 1, -amp * a * pulse);
            }
            add(frame, R_KNEE, 2, 0.16 * a * pulse);
            add(frame, L_KNEE, 2, -0.16 * a * pulse);
            add(frame, R_KNEE, 1, -0.18 * a * pulse);
            add(frame, L_KNEE, 1, -0.18 * a * pulse);
        }
    }
}

const JOINERS: [&str; 3] = ["then", "and then", "and"];

/// Generate a deterministic corpus: same config and seed, same bytes.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<MotionSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let n_prims = rng.random_range(cfg.min_primitives..=cfg.max_primitives);
        let mut prims: Vec<(Primitive, Speed, usize)> = Vec::with_capacity(n_prims);
        for _ in 0..n_prims {
            let mut prim = cfg.primitives[rng.random_range(0..cfg.primitives.len())];
            // Avoid immediate repetition when the library allows it.
            if cfg.primitives.len() > 1 {
                while prims.last().is_some_and(|(p, _, _)| *p == prim) {
                    prim = cfg.primitives[rng.random_range(0..cfg.primitives.len())];
                }
            }
            let speed = match rng.random_range(0..3) {
                0 => Speed::Slow,
                1 => Speed::Normal,
                _ => Speed::Fast,
            };
            let (lo, hi) = prim.duration_range();
            let dur = rng.random_range(lo..=hi);
            prims.push((prim, speed, dur));
        }

        let t_x: usize = prims.iter().map(|(_, _, d)| d).sum();
        let mut frames = Vec::with_capacity(t_x);
        let mut annotation = Vec::with_capacity(n_prims);
        let mut root_x = 0.0f64;
        let mut start = 0usize;
        for &(prim, speed, dur) in &prims {
            annotation.push(AnnotatedSpan {
                word: prim.action_word().to_string(),
                start,
                end: start + dur,
            });
            for local_t in 0..dur {
                let mut frame = base_pose().to_vec();
                apply_primitive(&mut frame, prim, local_t, dur, speed);
                match prim {
                    Primitive::WalkForward => root_x += 0.018 * speed.amp(),
                    Primitive::WalkBackward => root_x -= 0.018 * speed.amp(),
                    _ => {}
                }
                frame[ROOT * 3] += root_x;
                for x in frame.iter_mut() {
                    *x += rng.random_range(-0.02..0.02);
                }
                frames.push(frame);
            }
            start += dur;
        }

        let mut clauses = Vec::with_capacity(n_prims);
        let mut joiners = Vec::with_capacity(n_prims.saturating_sub(1));
        for (j, &(prim, speed, _)) in prims.iter().enumerate() {
            if j > 0 {
                joiners.push(JOINERS[rng.random_range(0..JOINERS.len())]);
            }
            let mut clause = prim.clause().to_string();
            if let Some(adv) = speed.adverb() {
                clause.push(' ');
                clause.push_str(adv);
            }
            clauses.push(clause);
        }
        let assemble = |joiner_at: &dyn Fn(usize) -> &'static str| {
            let mut s = String::from("a person");
            for (j, clause) in clauses.iter().enumerate() {
                if j > 0 {
                    s.push(' ');
                    s.push_str(joiner_at(j - 1));
                }
                s.push(' ');
                s.push_str(clause);
            }
            s
        };
        // The first caption uses the drawn connectives; the rest swap in each
        // uniform alternative so scoring against the caption set does not
        // punish an arbitrary-but-valid connective choice.
        let mut descriptions = vec![assemble(&|slot| joiners[slot])];
        for alt in JOINERS {
            let variant = assemble(&|_| alt);
            if !descriptions.contains(&variant) {
                descriptions.push(variant);
            }
        }

        out.push(MotionSample {
            id: format!("synth-{seed}-{i:05}"),
            fps: cfg.fps,
            width: SYNTH_WIDTH,
            frames,
            descriptions,
            annotation: Some(annotation),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sample(id: &str, desc: &str) -> MotionSample {
        MotionSample {
            id: id.into(),
            fps: 20.0,
            width: 2,
            frames: vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]],
            descriptions: vec![desc.into()],
            annotation: None,
        }
    }

    #[test]
    fn dataset_roundtrip_is_identity() {
        let cfg = SynthConfig {
            samples: 5,
            ..SynthConfig::default()
        };
        let samples = synth_generate(&cfg, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_dataset(&path, &samples).unwrap();
        let (parsed, rejected) = parse_dataset(&path).unwrap();
        assert!(rejected.is_empty());
        assert_eq!(parsed, samples);
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let good = serde_json::to_string(&tiny_sample("ok", "a person walks")).unwrap();
        let bad_width = {
            let mut s = tiny_sample("bad-width", "a person walks");
            s.frames[1] = vec![9.0]; // declared width 2, actual 1
            serde_json::to_string(&s).unwrap()
        };
        let body = format!("{good}\nnot json at all\n{bad_width}\n{good}\n");
        std::fs::write(&path, body).unwrap();
        let (samples, rejections) = parse_dataset(&path).unwrap();
        assert_eq!(samples.len(), 2, "parsing continues past bad lines");
        assert_eq!(rejections.len(), 2);
        assert_eq!(rejections[0].line, 2);
        assert_eq!(rejections[1].line, 3);
        assert!(rejections[1].reason.contains("width"), "{}", rejections[1].reason);
    }

    #[test]
    fn unordered_annotation_is_rejected() {
        let mut s = tiny_sample("bad-annot", "a person walks");
        s.annotation = Some(vec![
            AnnotatedSpan { word: "walks".into(), start: 2, end: 3 },
            AnnotatedSpan { word: "turns".into(), start: 0, end: 2 },
        ]);
        assert!(s.validate().is_err());
        let mut degenerate = tiny_sample("bad-annot-2", "a person walks");
        degenerate.annotation = Some(vec![AnnotatedSpan { word: "walks".into(), start: 1, end: 1 }]);
        assert!(degenerate.validate().is_err());
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let cfg = SynthConfig { samples: 20, ..SynthConfig::default() };
        let samples = synth_generate(&cfg, 3).unwrap();
        let (a_train, a_val, a_test) = split_dataset(samples.clone(), 0.7, 0.15, 42).unwrap();
        let (b_train, b_val, b_test) = split_dataset(samples.clone(), 0.7, 0.15, 42).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_val, b_val);
        assert_eq!(a_test, b_test);
        assert_eq!(a_train.len() + a_val.len() + a_test.len(), samples.len());
        let (c_train, ..) = split_dataset(samples, 0.7, 0.15, 43).unwrap();
        assert_ne!(a_train, c_train, "different seed shuffles differently");
    }

    #[test]
    fn vocabulary_assigns_reserved_then_frequency_order() {
        let samples = vec![
            tiny_sample("1", "walks walks walks forward"),
            tiny_sample("2", "turns forward walks"),
        ];
        let v = Vocabulary::build(&samples, 1);
        assert_eq!(v.id_of(PAD_WORD), PAD_ID);
        assert_eq!(v.id_of(SOS_WORD), SOS_ID);
        assert_eq!(v.id_of(EOS_WORD), EOS_ID);
        assert_eq!(v.id_of(UNK_WORD), UNK_ID);
        // walks ×4, forward ×2, turns ×1.
        assert_eq!(v.id_of("walks"), 4);
        assert_eq!(v.id_of("forward"), 5);
        assert_eq!(v.id_of("turns"), 6);
        assert_eq!(v.id_of("nonexistent"), UNK_ID);
        assert_eq!(v.frequency("walks"), 4);
    }

    #[test]
    fn vocabulary_ties_break_lexicographically_and_min_freq_prunes() {
        let samples = vec![tiny_sample("1", "zebra apple zebra apple mango")];
        let v = Vocabulary::build(&samples, 1);
        assert_eq!(v.id_of("apple"), 4, "freq 2, lexicographically first");
        assert_eq!(v.id_of("zebra"), 5);
        assert_eq!(v.id_of("mango"), 6);
        let pruned = Vocabulary::build(&samples, 10);
        assert_eq!(pruned.len(), 4, "only reserved ids survive");
        assert_eq!(pruned.id_of("apple"), UNK_ID);
    }

    #[test]
    fn vocabulary_build_is_deterministic_and_serde_roundtrips() {
        let cfg = SynthConfig { samples: 30, ..SynthConfig::default() };
        let samples = synth_generate(&cfg, 5).unwrap();
        let a = Vocabulary::build(&samples, 1);
        let b = Vocabulary::build(&samples, 1);
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
        assert_eq!(back.id_of("walks"), a.id_of("walks"));
    }

    #[test]
    fn target_ids_end_with_eos_and_never_contain_sos() {
        let samples = vec![tiny_sample("1", "a person walks forward")];
        let v = Vocabulary::build(&samples, 1);
        let ids = v.target_ids("a person walks forward");
        assert_eq!(ids.last(), Some(&EOS_ID));
        assert_eq!(ids.len(), 5);
        assert!(!ids.contains(&SOS_ID));
        assert!(!ids.contains(&PAD_ID));
    }

    #[test]
    fn normalizer_zeroes_mean_and_units_variance() {
        let cfg = SynthConfig { samples: 10, ..SynthConfig::default() };
        let samples = synth_generate(&cfg, 7).unwrap();
        let norm = Normalizer::fit(&samples).unwrap();
        let mut sums = vec![0.0f64; SYNTH_WIDTH];
        let mut sq = vec![0.0f64; SYNTH_WIDTH];
        let mut count = 0usize;
        for s in &samples {
            let t = norm.apply(s).unwrap();
            for j in 0..s.t_x() {
                for c in 0..SYNTH_WIDTH {
                    let x = t.data()[j * SYNTH_WIDTH + c];
                    sums[c] += x;
                    sq[c] += x * x;
                }
            }
            count += s.t_x();
        }
        for c in 0..SYNTH_WIDTH {
            let mean = sums[c] / count as f64;
            let var = sq[c] / count as f64 - mean * mean;
            assert!(mean.abs() < 1e-9, "coordinate {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "coordinate {c} var {var}");
        }
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let cfg = SynthConfig { samples: 8, ..SynthConfig::default() };
        let a = synth_generate(&cfg, 99).unwrap();
        let b = synth_generate(&cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&cfg, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_annotations_tile_the_motion_in_order() {
        let cfg = SynthConfig { samples: 40, ..SynthConfig::default() };
        for s in synth_generate(&cfg, 123).unwrap() {
            s.validate().unwrap();
            let spans = s.annotation.as_ref().unwrap();
            assert!(!spans.is_empty() && spans.len() <= 3);
            let mut cursor = 0;
            for span in spans {
                assert_eq!(span.start, cursor, "segments abut exactly");
                assert!(span.end > span.start);
                cursor = span.end;
            }
            assert_eq!(cursor, s.t_x(), "segments tile all frames");
            // Action words appear in the caption in chronological order.
            let lang = crate::segmentation::language_segmentation(
                &{
                    let mut t = tokenize(&s.descriptions[0]);
                    t.push(EOS_WORD.to_string());
                    t
                },
                &spans.iter().map(|a| a.word.clone()).collect::<Vec<_>>(),
            );
            assert!(lang.is_some(), "caption {:?} aligns with its own annotation", s.descriptions[0]);
        }
    }

    #[test]
    fn single_walk_sample_matches_construction() {
        let cfg = SynthConfig {
            samples: 3,
            min_primitives: 1,
            max_primitives: 1,
            primitives: vec![Primitive::WalkForward],
            fps: 20.0,
        };
        for s in synth_generate(&cfg, 4).unwrap() {
            let spans = s.annotation.as_ref().unwrap();
            assert_eq!(spans.len(), 1);
            assert_eq!(spans[0].word, "walks");
            assert_eq!((spans[0].start, spans[0].end), (0, s.t_x()));
            assert!(s.descriptions[0].contains("walks"));
        }
    }

    #[test]
    fn unknown_primitive_name_is_a_config_error() {
        assert!(Primitive::parse("walk-forward").is_ok());
        let err = Primitive::parse("moonwalk").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
