//! Semantic motion segmentation: carve a generated caption into language
//! segments, lift the attention windows of each segment into motion
//! primitive intervals, and score those against ground-truth annotations.
//!
//! Frames are integers and every interval is half-open (`start` inclusive,
//! `end` exclusive), so set sizes are plain counts and all scores reduce to
//! integer arithmetic divided at the end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open integer frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInterval {
    pub start: usize,
    pub end: usize,
}

impl SegmentInterval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidArgument(format!(
                "interval start {} exceeds end {}",
                start, end
            )));
        }
        Ok(SegmentInterval { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, frame: i64) -> bool {
        frame >= self.start as i64 && frame < (self.end as i64)
    }

    pub fn intersection_len(&self, other: &SegmentInterval) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    /// Number of integers in the set union (not the covering interval).
    pub fn union_len(&self, other: &SegmentInterval) -> usize {
        self.len() + other.len() - self.intersection_len(other)
    }
}

/// Round to nearest integer, halves up: 2.5 → 3, 3.49 → 3.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Ground-truth segmentation of one sample: each annotated action word with
/// the frame interval it occupies, in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub action_words: Vec<String>,
    pub segments: Vec<SegmentInterval>,
}

impl GroundTruthAnnotation {
    /// Enforce one non-degenerate interval per action word, ordered in time.
    pub fn validate(&self) -> Result<()> {
        if self.action_words.len() != self.segments.len() {
            return Err(Error::InvalidArgument(format!(
                "{} action words but {} segments",
                self.action_words.len(),
                self.segments.len()
            )));
        }
        let mut prev_start = 0usize;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.start >= seg.end {
                return Err(Error::InvalidArgument(format!(
                    "annotation segment {} is degenerate ({}..{})",
                    i, seg.start, seg.end
                )));
            }
            if i > 0 && seg.start < prev_start {
                return Err(Error::InvalidArgument(format!(
                    "annotation segment {} out of chronological order",
                    i
                )));
            }
            prev_start = seg.start;
        }
        Ok(())
    }
}

/// Positions of the action words inside a predicted caption, plus the
/// terminator index. Segment `m` spans word indices `k[m] .. k[m+1]`, with
/// the index one past the terminator closing the final segment so the
/// end-of-sentence token always belongs to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSegments {
    /// Strictly increasing action-word indices `k_m`.
    pub k: Vec<usize>,
    /// Index of the end-of-sentence token.
    pub k_eos: usize,
}

impl LanguageSegments {
    pub fn n_segments(&self) -> usize {
        self.k.len()
    }

    /// Half-open word-index range of segment `m`.
    pub fn bounds(&self, m: usize) -> (usize, usize) {
        let lo = self.k[m];
        let hi = if m + 1 < self.k.len() {
            self.k[m + 1]
        } else {
            self.k_eos + 1
        };
        (lo, hi)
    }
}

/// Locate each expected action word in the predicted caption, each strictly
/// after the previous one; `None` means the prediction cannot be aligned
/// (some action word missing or out of order) and the sample is excluded
/// from segmentation scoring. The token list must contain the terminator.
pub fn language_segmentation(tokens: &[String], action_words: &[String]) -> Option<LanguageSegments> {
    if action_words.is_empty() {
        return None;
    }
    let k_eos = tokens.iter().position(|t| t == crate::data::EOS_WORD)?;
    let mut k = Vec::with_capacity(action_words.len());
    let mut from = 0usize;
    for word in action_words {
        let idx = tokens[from..k_eos].iter().position(|t| t == word)? + from;
        k.push(idx);
        from = idx + 1;
    }
    Some(LanguageSegments { k, k_eos })
}

/// One predicted motion primitive interval. `gap` flags configurations
/// whose member windows did not overlap or abut, in which case the interval
/// is the covering hull of the union.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub interval: SegmentInterval,
    pub gap: bool,
}

/// Combined segmentation of one generated caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub language: LanguageSegments,
    pub motion_segments: Vec<MotionSegment>,
}

/// Merge each language segment's per-word attention windows into one motion
/// primitive interval: the covering interval `[min start, max end)` of the
/// member windows. Requires one window per token (terminator included).
pub fn motion_segmentation(
    word_segments: &[SegmentInterval],
    lang: &LanguageSegments,
) -> Result<Vec<MotionSegment>> {
    if word_segments.len() <= lang.k_eos {
        return Err(Error::InvalidArgument(format!(
            "{} word windows cannot cover tokens up to terminator index {}",
            word_segments.len(),
            lang.k_eos
        )));
    }
    let mut out = Vec::with_capacity(lang.n_segments());
    for m in 0..lang.n_segments() {
        let (lo, hi) = lang.bounds(m);
        let members: Vec<&SegmentInterval> = word_segments[lo..hi]
            .iter()
            .filter(|s| !s.is_empty())
            .collect();
        if members.is_empty() {
            // All member windows were empty (possible only past motion end).
            out.push(MotionSegment {
                interval: SegmentInterval { start: 0, end: 0 },
                gap: false,
            });
            continue;
        }
        let start = members.iter().map(|s| s.start).min().unwrap();
        let end = members.iter().map(|s| s.end).max().unwrap();
        let mut sorted: Vec<(usize, usize)> = members.iter().map(|s| (s.start, s.end)).collect();
        sorted.sort_unstable();
        let mut covered_to = sorted[0].0;
        let mut gap = false;
        for (s, e) in sorted {
            if s > covered_to {
                gap = true;
            }
            covered_to = covered_to.max(e);
        }
        out.push(MotionSegment {
            interval: SegmentInterval { start, end },
            gap,
        });
    }
    Ok(out)
}

/// Intersection over union of two integer intervals. Empty union scores 0.
pub fn iou(p: &SegmentInterval, g: &SegmentInterval) -> f64 {
    let union = p.union_len(g);
    if union == 0 {
        return 0.0;
    }
    p.intersection_len(g) as f64 / union as f64
}

/// Intersection over prediction: 1 exactly when the prediction lies inside
/// the ground truth. An empty prediction scores 0.
pub fn iop(p: &SegmentInterval, g: &SegmentInterval) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.intersection_len(g) as f64 / p.len() as f64
}

fn paired<'a>(
    p: &'a [SegmentInterval],
    g: &'a [SegmentInterval],
) -> Result<impl Iterator<Item = (&'a SegmentInterval, &'a SegmentInterval)>> {
    if p.is_empty() {
        return Err(Error::InvalidArgument(
            "segmentation scoring needs at least one segment".into(),
        ));
    }
    if p.len() != g.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted segments vs {} ground-truth segments",
            p.len(),
            g.len()
        )));
    }
    Ok(p.iter().zip(g.iter()))
}

/// Fraction of segments whose IoU reaches the threshold.
pub fn iou_score(p: &[SegmentInterval], g: &[SegmentInterval], theta: f64) -> Result<f64> {
    let pairs = paired(p, g)?;
    let hits = pairs.filter(|(p, g)| iou(p, g) >= theta).count();
    Ok(hits as f64 / p.len() as f64)
}

/// Mean IoU over segments, no threshold.
pub fn iou_score_continuous(p: &[SegmentInterval], g: &[SegmentInterval]) -> Result<f64> {
    let pairs = paired(p, g)?;
    Ok(pairs.map(|(p, g)| iou(p, g)).sum::<f64>() / p.len() as f64)
}

/// Fraction of segments whose IoP reaches the threshold.
pub fn iop_score(p: &[SegmentInterval], g: &[SegmentInterval], theta: f64) -> Result<f64> {
    let pairs = paired(p, g)?;
    let hits = pairs.filter(|(p, g)| iop(p, g) >= theta).count();
    Ok(hits as f64 / p.len() as f64)
}

/// Mean IoP over segments, no threshold.
pub fn iop_score_continuous(p: &[SegmentInterval], g: &[SegmentInterval]) -> Result<f64> {
    let pairs = paired(p, g)?;
    Ok(pairs.map(|(p, g)| iop(p, g)).sum::<f64>() / p.len() as f64)
}

/// Per-sample alignment-position score: for each language segment, the
/// fraction of its words whose rounded position lands inside the segment's
/// ground-truth interval, averaged over segments so the result stays in
/// [0, 1] even when a segment holds many words.
pub fn element_of_score(
    positions: &[f64],
    lang: &LanguageSegments,
    g: &[SegmentInterval],
) -> Result<f64> {
    if positions.len() <= lang.k_eos {
        return Err(Error::InvalidArgument(format!(
            "{} positions cannot cover tokens up to terminator index {}",
            positions.len(),
            lang.k_eos
        )));
    }
    if g.len() != lang.n_segments() {
        return Err(Error::InvalidArgument(format!(
            "{} ground-truth segments vs {} language segments",
            g.len(),
            lang.n_segments()
        )));
    }
    if lang.n_segments() == 0 {
        return Err(Error::InvalidArgument(
            "segmentation scoring needs at least one segment".into(),
        ));
    }
    let mut total = 0.0;
    for m in 0..lang.n_segments() {
        let (lo, hi) = lang.bounds(m);
        let mut hits = 0usize;
        for &p in &positions[lo..hi] {
            if g[m].contains(round_half_up(p)) {
                hits += 1;
            }
        }
        total += hits as f64 / (hi - lo) as f64;
    }
    Ok(total / lang.n_segments() as f64)
}

/// Everything needed to score one alignable sample.
#[derive(Debug, Clone)]
pub struct AlignedSample {
    pub predicted: Vec<SegmentInterval>,
    pub ground_truth: Vec<SegmentInterval>,
    /// Alignment positions per token; absent when the attention mode does
    /// not produce positions.
    pub positions: Option<Vec<f64>>,
    pub language: LanguageSegments,
}

/// Corpus-level segmentation report: thresholded IoU/IoP over a θ grid plus
/// continuous means, with the bookkeeping needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSegReport {
    pub theta_grid: Vec<f64>,
    pub iou_thresholded: Vec<f64>,
    pub iop_thresholded: Vec<f64>,
    pub iou_continuous: f64,
    pub iop_continuous: f64,
    /// Mean alignment-position score over samples that have positions.
    pub element_of_continuous: Option<f64>,
    /// Samples that entered the means.
    pub scored: usize,
    /// Samples dropped because their caption could not be aligned.
    pub excluded: usize,
}

pub const DEFAULT_THETA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Average the per-sample scores of the alignable samples.
pub fn corpus_scores(
    samples: &[AlignedSample],
    excluded: usize,
    theta_grid: &[f64],
) -> Result<CorpusSegReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "no alignable samples to score".into(),
        ));
    }
    let n = samples.len() as f64;
    let mut iou_thresholded = Vec::with_capacity(theta_grid.len());
    let mut iop_thresholded = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        let mut iou_sum = 0.0;
        let mut iop_sum = 0.0;
        for s in samples {
            iou_sum += iou_score(&s.predicted, &s.ground_truth, theta)?;
            iop_sum += iop_score(&s.predicted, &s.ground_truth, theta)?;
        }
        iou_thresholded.push(iou_sum / n);
        iop_thresholded.push(iop_sum / n);
    }
    let mut iou_cont = 0.0;
    let mut iop_cont = 0.0;
    for s in samples {
        iou_cont += iou_score_continuous(&s.predicted, &s.ground_truth)?;
        iop_cont += iop_score_continuous(&s.predicted, &s.ground_truth)?;
    }
    let mut elem_sum = 0.0;
    let mut elem_n = 0usize;
    for s in samples {
        if let Some(positions) = &s.positions {
            elem_sum += element_of_score(positions, &s.language, &s.ground_truth)?;
            elem_n += 1;
        }
    }
    Ok(CorpusSegReport {
        theta_grid: theta_grid.to_vec(),
        iou_thresholded,
        iop_thresholded,
        iou_continuous: iou_cont / n,
        iop_continuous: iop_cont / n,
        element_of_continuous: (elem_n > 0).then(|| elem_sum / elem_n as f64),
        scored: samples.len(),
        excluded,
    })
}
