//! Plot-ready exports of a generation's alignment byproducts: the attention
//! matrix, the position trace, per-word transparency weights, and per-segment
//! averaged attention rows.
//!
//! Transparency and segment coefficients are computed from the *raw*
//! (pre-window) attention rows — they describe what the alignment model
//! believes. The attention table itself is exported from the post-window
//! rows — what the decoder actually consumed. In soft-attention runs the two
//! coincide.
//!
//! All files are deterministic byte-for-byte for identical inputs: fixed
//! column order, fixed number formatting (17 significant digits, so
//! re-parsing reproduces the exact values).

use std::path::{Path, PathBuf};

use crate::attention::AttentionMap;
use crate::decoder::GenerationResult;
use crate::error::{Error, Result};
use crate::segmentation::LanguageSegments;

/// Sharpening factor applied inside the transparency softmax.
pub const DEFAULT_SHARPEN: f64 = 100.0;

/// Per-word skeleton transparency: `G_ij = softmax_j(F·α_ij)`, then each row
/// rescaled by its maximum so the strongest frame is exactly opaque.
#[derive(Debug, Clone, PartialEq)]
pub struct TransparencyWeights {
    /// `[T_y][T_x]`, every entry in `(0, 1]`, every row maximum exactly 1.
    pub v: Vec<Vec<f64>>,
    pub f: f64,
}

pub fn transparency(attn: &AttentionMap, f: f64) -> Result<TransparencyWeights> {
    if attn.raw_rows.is_empty() {
        return Err(Error::InvalidArgument(
            "transparency needs at least one attention row".into(),
        ));
    }
    let mut v = Vec::with_capacity(attn.raw_rows.len());
    for row in &attn.raw_rows {
        if row.is_empty() {
            return Err(Error::InvalidArgument("empty attention row".into()));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let g: Vec<f64> = row.iter().map(|&a| (f * (a - max)).exp()).collect();
        let sum: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|x| x / sum).collect();
        let g_max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        v.push(g.iter().map(|x| x / g_max).collect());
    }
    Ok(TransparencyWeights { v, f })
}

/// Segment-averaged attention: row `m` is the mean of the raw attention rows
/// of the words in language segment `m` (the final segment includes the end
/// token's row).
pub fn segment_coefficients(attn: &AttentionMap, lang: &LanguageSegments) -> Result<Vec<Vec<f64>>> {
    let rows = &attn.raw_rows;
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "segment coefficients need at least one attention row".into(),
        ));
    }
    if lang.k_eos >= rows.len() {
        return Err(Error::InvalidArgument(format!(
            "terminator at word {} but only {} attention rows",
            lang.k_eos,
            rows.len()
        )));
    }
    let t_x = rows[0].len();
    let mut out = Vec::with_capacity(lang.n_segments());
    for m in 0..lang.n_segments() {
        let (lo, hi) = lang.bounds(m);
        if lo >= hi || hi > rows.len() {
            return Err(Error::InvalidArgument(format!(
                "segment {m} spans words {lo}..{hi} over {} rows",
                rows.len()
            )));
        }
        let mut mean = vec![0.0f64; t_x];
        for row in &rows[lo..hi] {
            for (acc, &x) in mean.iter_mut().zip(row) {
                *acc += x;
            }
        }
        let inv = 1.0 / (hi - lo) as f64;
        for x in mean.iter_mut() {
            *x *= inv;
        }
        out.push(mean);
    }
    Ok(out)
}

/// Files written by [`export`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExportPaths {
    pub attention: PathBuf,
    pub trace: PathBuf,
    pub transparency: PathBuf,
    /// Present only when language segments were supplied.
    pub gamma: Option<PathBuf>,
}

fn write_matrix(
    path: &Path,
    label_header: &str,
    labels: &[String],
    rows: &[Vec<f64>],
) -> Result<()> {
    let t_x = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut body = String::new();
    body.push_str(label_header);
    for j in 0..t_x {
        body.push_str(&format!(",frame_{j}"));
    }
    body.push('\n');
    for (label, row) in labels.iter().zip(rows) {
        body.push_str(label);
        for x in row {
            body.push_str(&format!(",{x:.16e}"));
        }
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Write the four plot-ready tables for one generation.
///
/// `tokens` are the emitted words (row labels, aligned with attention rows).
/// The trace file has one record per token: position and window bounds are
/// blank in soft-attention runs, the attention argmax column is always
/// present.
pub fn export(
    out_dir: &Path,
    tokens: &[String],
    result: &GenerationResult,
    language: Option<&LanguageSegments>,
    sharpen: f64,
) -> Result<ExportPaths> {
    if tokens.len() != result.attention.rows.len() {
        return Err(Error::InvalidArgument(format!(
            "{} token labels for {} attention rows",
            tokens.len(),
            result.attention.rows.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let attention_path = out_dir.join("attention.csv");
    write_matrix(&attention_path, "token", tokens, &result.attention.rows)?;

    let trace_path = out_dir.join("trace.csv");
    {
        let mut body = String::from("token,position,segment_start,segment_end,argmax_frame\n");
        let traced = !result.trace.positions.is_empty();
        for (i, token) in tokens.iter().enumerate() {
            let row = &result.attention.rows[i];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap_or(0);
            if traced {
                let p = result.trace.positions[i];
                let s = &result.trace.segments[i];
                body.push_str(&format!(
                    "{token},{p:.16e},{},{},{argmax}\n",
                    s.start, s.end
                ));
            } else {
                body.push_str(&format!("{token},,,,{argmax}\n"));
            }
        }
        std::fs::write(&trace_path, body).map_err(|e| Error::io(&trace_path, e))?;
    }

    let transparency_path = out_dir.join("transparency.csv");
    let tw = transparency(&result.attention, sharpen)?;
    write_matrix(&transparency_path, "token", tokens, &tw.v)?;

    let gamma = match language {
        Some(lang) => {
            let path = out_dir.join("gamma.csv");
            let gamma_rows = segment_coefficients(&result.attention, lang)?;
            let labels: Vec<String> = (0..gamma_rows.len()).map(|m| format!("segment_{m}")).collect();
            write_matrix(&path, "segment", &labels, &gamma_rows)?;
            Some(path)
        }
        None => None,
    };

    Ok(ExportPaths {
        attention: attention_path,
        trace: trace_path,
        transparency: transparency_path,
        gamma,
    })
}

/// Parse a matrix written by [`export`] back into labels and rows (used by
/// round-trip tests and downstream tooling).
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label = parts
            .next()
            .ok_or_else(|| Error::Parse {
                location: format!("{}:{}", path.display(), i + 1),
                reason: "empty line".into(),
            })?
            .to_string();
        let mut row = Vec::new();
        for p in parts {
            row.push(p.parse::<f64>().map_err(|e| Error::Parse {
                location: format!("{}:{}", path.display(), i + 1),
                reason: format!("bad number {p:?}: {e}"),
            })?);
        }
        labels.push(label);
        rows.push(row);
    }
    Ok((labels, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{AlignmentTrace, AttentionConfig, AttentionKind};
    use crate::decoder::greedy_decode;
    use crate::encoder::EncoderConfig;
    use crate::model::{Model, ModelConfig};
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn softmax_row(rng: &mut ChaCha8Rng, t_x: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..t_x).map(|_| rng.random_range(-2.0..2.0)).collect();
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = raw.iter().map(|x| (x - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn random_map(seed: u64, t_y: usize, t_x: usize) -> AttentionMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t_y).map(|_| softmax_row(&mut rng, t_x)).collect();
        AttentionMap {
            raw_rows: rows.clone(),
            rows,
        }
    }

    #[test]
    fn transparency_row_max_is_exactly_one() {
        let map = random_map(1, 6, 14);
        let tw = transparency(&map, DEFAULT_SHARPEN).unwrap();
        for row in &tw.v {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(max, 1.0);
            assert!(row.iter().all(|&x| x > 0.0 && x <= 1.0));
        }
    }

    #[test]
    fn uniform_attention_is_fully_opaque() {
        let t_x = 9;
        let map = AttentionMap {
            rows: vec![vec![1.0 / t_x as f64; t_x]],
            raw_rows: vec![vec![1.0 / t_x as f64; t_x]],
        };
        let tw = transparency(&map, DEFAULT_SHARPEN).unwrap();
        assert!(tw.v[0].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn sharpening_concentrates_on_the_argmax() {
        let mut row = vec![0.05; 10];
        row[3] = 0.55;
        let map = AttentionMap {
            rows: vec![row.clone()],
            raw_rows: vec![row],
        };
        let sharp = transparency(&map, 1000.0).unwrap();
        assert_eq!(sharp.v[0][3], 1.0);
        for (j, &x) in sharp.v[0].iter().enumerate() {
            if j != 3 {
                assert!(x < 1e-6, "entry {j} = {x}");
            }
        }
        // Dominance grows with F: competitors shrink monotonically.
        let soft = transparency(&map, 10.0).unwrap();
        let mid = transparency(&map, 100.0).unwrap();
        for j in 0..10 {
            if j != 3 {
                assert!(mid.v[0][j] < soft.v[0][j]);
                assert!(sharp.v[0][j] < mid.v[0][j]);
            }
        }
    }

    #[test]
    fn single_word_segment_gamma_is_that_row() {
        let map = random_map(2, 4, 10);
        // Words: 0 1 2 3 where 3 is the terminator; segments at words 1 and 2.
        let lang = LanguageSegments { k: vec![1, 2], k_eos: 3 };
        let gamma = segment_coefficients(&map, &lang).unwrap();
        assert_eq!(gamma.len(), 2);
        assert_eq!(gamma[0], map.raw_rows[1], "single-word segment");
        // Final segment averages word 2 and the terminator row.
        for j in 0..10 {
            let want = (map.raw_rows[2][j] + map.raw_rows[3][j]) / 2.0;
            assert!((gamma[1][j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_rows_average_to_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row = softmax_row(&mut rng, 8);
        let map = AttentionMap {
            rows: vec![row.clone(), row.clone(), row.clone()],
            raw_rows: vec![row.clone(), row.clone(), row.clone()],
        };
        let lang = LanguageSegments { k: vec![0], k_eos: 2 };
        let gamma = segment_coefficients(&map, &lang).unwrap();
        for (a, b) in gamma[0].iter().zip(&row) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn three_row_segment_matches_independent_mean() {
        let map = random_map(4, 5, 12);
        let lang = LanguageSegments { k: vec![1], k_eos: 3 };
        let gamma = segment_coefficients(&map, &lang).unwrap();
        for j in 0..12 {
            let want = (map.raw_rows[1][j] + map.raw_rows[2][j] + map.raw_rows[3][j]) / 3.0;
            assert!((gamma[0][j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_segment_indices_are_rejected() {
        let map = random_map(5, 3, 6);
        let lang = LanguageSegments { k: vec![0], k_eos: 5 };
        assert!(segment_coefficients(&map, &lang).is_err());
        let empty = AttentionMap { rows: vec![], raw_rows: vec![] };
        assert!(transparency(&empty, 100.0).is_err());
    }

    fn toy_result(seed: u64, masked: bool) -> (Vec<String>, GenerationResult) {
        let cfg = ModelConfig {
            encoder: EncoderConfig::mlp(6, vec![5, 4]),
            attention: AttentionConfig {
                mask: masked,
                ..AttentionConfig::new(AttentionKind::LocalRecurrent)
            },
            vocab_size: 8,
            embed_dim: 3,
            decoder_hidden: 4,
        };
        let model = Model::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let motion = Tensor::new(
            vec![24, 6],
            (0..24 * 6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let result = greedy_decode(&model, &motion, 6).unwrap();
        let tokens: Vec<String> = result.tokens.iter().map(|t| format!("w{t}")).collect();
        (tokens, result)
    }

    #[test]
    fn export_round_trips_every_matrix() {
        let (tokens, result) = toy_result(10, false);
        let dir = tempfile::tempdir().unwrap();
        let lang = LanguageSegments { k: vec![0], k_eos: tokens.len() - 1 };
        let paths = export(dir.path(), &tokens, &result, Some(&lang), DEFAULT_SHARPEN).unwrap();

        let (labels, rows) = read_matrix(&paths.attention).unwrap();
        assert_eq!(labels, tokens);
        assert_eq!(rows.len(), result.attention.rows.len());
        for (a, b) in rows.iter().zip(&result.attention.rows) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x, y, "17 significant digits reparse exactly");
            }
        }
        let (_, v) = read_matrix(&paths.transparency).unwrap();
        let tw = transparency(&result.attention, DEFAULT_SHARPEN).unwrap();
        for (a, b) in v.iter().zip(&tw.v) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let (_, g) = read_matrix(&paths.gamma.clone().unwrap()).unwrap();
        let want = segment_coefficients(&result.attention, &lang).unwrap();
        assert_eq!(g, want);
    }

    #[test]
    fn exports_are_byte_reproducible() {
        let (tokens, result) = toy_result(11, true);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        export(d1.path(), &tokens, &result, None, DEFAULT_SHARPEN).unwrap();
        export(d2.path(), &tokens, &result, None, DEFAULT_SHARPEN).unwrap();
        for name in ["attention.csv", "trace.csv", "transparency.csv"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn masked_export_zeroes_outside_windows_and_argmax_matches() {
        let (tokens, result) = toy_result(12, true);
        let dir = tempfile::tempdir().unwrap();
        let paths = export(dir.path(), &tokens, &result, None, DEFAULT_SHARPEN).unwrap();
        let (_, rows) = read_matrix(&paths.attention).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let seg = &result.trace.segments[i];
            for (j, &x) in row.iter().enumerate() {
                if !(seg.start <= j && j < seg.end) {
                    assert_eq!(x, 0.0, "row {i} frame {j}");
                }
            }
        }
        // Trace argmax column equals independent recomputation.
        let trace_body = std::fs::read_to_string(&paths.trace).unwrap();
        for (i, line) in trace_body.lines().skip(1).enumerate() {
            let argmax: usize = line.rsplit(',').next().unwrap().parse().unwrap();
            let row = &result.attention.rows[i];
            let want = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, want);
        }
    }

    #[test]
    fn soft_trace_leaves_position_fields_blank() {
        let map = random_map(6, 2, 5);
        let result = GenerationResult {
            tokens: vec![4, 2],
            log_probs: vec![-0.5, -0.1],
            score: -0.6,
            normalized_score: -0.6,
            attention: map,
            trace: AlignmentTrace { positions: vec![], segments: vec![] },
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = export(
            dir.path(),
            &["hello".into(), "<eos>".into()],
            &result,
            None,
            DEFAULT_SHARPEN,
        )
        .unwrap();
        let body = std::fs::read_to_string(&paths.trace).unwrap();
        let line = body.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "hello");
        assert_eq!(fields[1], "");
        assert_eq!(fields[2], "");
        assert_eq!(fields[3], "");
        assert!(paths.gamma.is_none());
    }

    #[test]
    fn unwritable_output_directory_surfaces_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let (tokens, result) = toy_result(13, false);
        match export(&blocker, &tokens, &result, None, DEFAULT_SHARPEN) {
            Err(Error::Io { path, .. }) => assert!(path.contains("file")),
            other => panic!("expected an io error, got {other:?}"),
        }
    }

    #[test]
    fn label_row_count_mismatch_is_rejected() {
        let (mut tokens, result) = toy_result(14, false);
        tokens.pop();
        let dir = tempfile::tempdir().unwrap();
        assert!(export(dir.path(), &tokens, &result, None, DEFAULT_SHARPEN).is_err());
    }

    proptest! {
        #[test]
        fn gamma_entries_stay_within_column_bounds(seed in 0u64..50) {
            let map = random_map(seed, 5, 9);
            let lang = LanguageSegments { k: vec![0, 2], k_eos: 4 };
            let gamma = segment_coefficients(&map, &lang).unwrap();
            for m in 0..lang.n_segments() {
                let (lo, hi) = lang.bounds(m);
                for j in 0..9 {
                    let col: Vec<f64> = (lo..hi).map(|i| map.raw_rows[i][j]).collect();
                    let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(gamma[m][j] >= min - 1e-12 && gamma[m][j] <= max + 1e-12);
                }
            }
        }

        #[test]
        fn transparency_rows_always_peak_at_one(seed in 0u64..50, f in 1.0f64..500.0) {
            let map = random_map(seed, 3, 7);
            let tw = transparency(&map, f).unwrap();
            for row in &tw.v {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(max, 1.0);
            }
        }
    }
}
