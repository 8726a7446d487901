//! Attention analysis (attended tokens and statements), localization
//! curves, two-class LDA over embeddings, and heatmap emission.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minilang::program_statement_spans;
use crate::neural::{encode, Model, Role, Tensor};

/// Largest matrix [`emit_heatmap`] renders.
pub const HEATMAP_MAX: usize = 200;
/// Histogram resolution of [`lda_project`].
pub const LDA_BINS: usize = 64;
const ROW_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("invalid attention matrix: {0}")]
    BadMatrix(String),
    #[error("k must lie in (0, 100], got {0}")]
    BadK(f64),
    #[error("each class needs at least two instances")]
    DegenerateClasses,
    #[error("{n} tokens exceed the heatmap limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("{0}")]
    Mismatch(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot analyse MUT text: {0}")]
    Source(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> InterpretError + '_ {
    move |e| InterpretError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Row-stochastic n×n self-attention over a token sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix {
    pub weights: Tensor,
    pub tokens: Vec<String>,
    /// Statement id of each token.
    pub stmt_spans: Vec<usize>,
}

impl AttentionMatrix {
    pub fn new(weights: Tensor, tokens: Vec<String>, stmt_spans: Vec<usize>) -> Result<Self, InterpretError> {
        let n = weights.rows();
        if n == 0 || weights.cols() != n {
            return Err(InterpretError::BadMatrix(format!("shape {:?} is not square and non-empty", weights.shape)));
        }
        if tokens.len() != n || stmt_spans.len() != n {
            return Err(InterpretError::BadMatrix(format!("{n} rows but {} tokens, {} spans", tokens.len(), stmt_spans.len())));
        }
        for i in 0..n {
            let row = weights.row(i);
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(InterpretError::BadMatrix(format!("row {i} has a negative or non-finite weight")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(InterpretError::BadMatrix(format!("row {i} sums to {s}")));
            }
        }
        Ok(AttentionMatrix { weights, tokens, stmt_spans })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn statement_count(&self) -> usize {
        self.stmt_spans.iter().max().map_or(0, |m| m + 1)
    }
}

/// Head mean of the final layer, rows renormalized to sum to one.
pub fn collapse_attention(per_layer: &[Vec<Tensor>]) -> Result<Tensor, InterpretError> {
    let last = per_layer
        .last()
        .filter(|heads| !heads.is_empty())
        .ok_or_else(|| InterpretError::BadMatrix("no attention layers".into()))?;
    let shape = last[0].shape;
    if last.iter().any(|h| h.shape != shape) {
        return Err(InterpretError::BadMatrix("heads differ in shape".into()));
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for h in last {
        for (o, w) in out.data.iter_mut().zip(&h.data) {
            *o += w;
        }
    }
    for row in out.data.chunks_mut(shape[1].max(1)) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|w| *w /= s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub k: f64,
    /// Attended (token, index) pairs in index order.
    pub attended_tokens: Vec<(String, usize)>,
    /// Attended statement ids, ascending.
    pub attended_statements: Vec<usize>,
}

impl AttentionReport {
    pub fn token_indices(&self) -> BTreeSet<usize> {
        self.attended_tokens.iter().map(|(_, i)| *i).collect()
    }
}

/// Number of tokens taken from each row: ⌈k/100 · n⌉.
pub fn per_row_count(k: f64, n: usize) -> usize {
    ((k * n as f64) / 100.0).ceil() as usize
}

/// Whether a statement with `size` tokens, `hit` of them attended, counts as
/// attended: more than k% covered, or fully covered.
pub fn statement_attended(hit: usize, size: usize, k: f64) -> bool {
    size > 0 && (hit as f64 * 100.0 > k * size as f64 || hit == size)
}

/// Per row, the ⌈k/100·n⌉ heaviest columns (lower index first on ties) are
/// attended; a statement is attended when its attended share exceeds k%.
pub fn attention_analysis(sa: &AttentionMatrix, k: f64) -> Result<AttentionReport, InterpretError> {
    if !(k > 0.0 && k <= 100.0) {
        return Err(InterpretError::BadK(k));
    }
    let n = sa.len();
    let take = per_row_count(k, n).min(n);
    let mut attended = BTreeSet::new();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for r in 0..n {
        let row = sa.weights.row(r);
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        attended.extend(order[..take].iter().copied());
    }
    let n_stmt = sa.statement_count();
    let mut size = vec![0usize; n_stmt];
    let mut hit = vec![0usize; n_stmt];
    for (i, &s) in sa.stmt_spans.iter().enumerate() {
        size[s] += 1;
        if attended.contains(&i) {
            hit[s] += 1;
        }
    }
    Ok(AttentionReport {
        k,
        attended_tokens: attended.iter().map(|&i| (sa.tokens[i].clone(), i)).collect(),
        attended_statements: (0..n_stmt).filter(|&s| statement_attended(hit[s], size[s], k)).collect(),
    })
}

/// Reports for one pair, one per grid value, with its buggy statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAttention {
    pub pair_id: String,
    pub buggy_statements: Vec<usize>,
    pub reports: Vec<AttentionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: f64,
    pub hits: usize,
    pub total: usize,
    pub percent: f64,
}

/// For each k, the percentage of pairs with at least one buggy statement
/// among the attended statements.
pub fn localization_curve(pairs: &[PairAttention], k_grid: &[f64]) -> Result<Vec<CurvePoint>, InterpretError> {
    if pairs.is_empty() {
        return Err(InterpretError::Mismatch("no pairs to localize".into()));
    }
    for p in pairs {
        let ks: Vec<f64> = p.reports.iter().map(|r| r.k).collect();
        if ks != k_grid {
            return Err(InterpretError::Mismatch(format!("pair `{}` has reports for k = {ks:?}", p.pair_id)));
        }
    }
    Ok(k_grid
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let hits = pairs
                .iter()
                .filter(|p| p.buggy_statements.iter().any(|s| p.reports[j].attended_statements.contains(s)))
                .count();
            CurvePoint { k, hits, total: pairs.len(), percent: 100.0 * hits as f64 / pairs.len() as f64 }
        })
        .collect())
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_k_grid(spec: &str) -> Result<Vec<f64>, InterpretError> {
    let bad = || InterpretError::Mismatch(format!("bad k grid `{spec}`"));
    let nums = |s: &str| s.split(|c| c == ':' || c == ',').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>();
    let grid = if spec.contains(':') {
        let v = nums(spec)?;
        let [start, stop, step] = v[..] else { return Err(bad()) };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| start + i as f64 * step).collect()
    } else {
        nums(spec)?
    };
    match grid.iter().find(|&&k| !(k > 0.0 && k <= 100.0)) {
        Some(&k) => Err(InterpretError::BadK(k)),
        None => Ok(grid),
    }
}

/// Final-layer head-mean attention of the φ encoder over `mut_text`, with
/// statement ids. Truncated input keeps the leading tokens.
pub fn mut_attention(model: &Model, mut_text: &str) -> Result<AttentionMatrix, InterpretError> {
    let (tokens, spans) = program_statement_spans(mut_text).map_err(|e| InterpretError::Source(e.to_string()))?;
    let (ids, _) = model.token_ids(mut_text);
    let n = ids.len();
    if n > tokens.len() {
        return Err(InterpretError::Mismatch("token streams disagree".into()));
    }
    let (_, layers) = encode(model, Role::Phi, &ids).map_err(|e| InterpretError::Source(e.to_string()))?;
    let weights = collapse_attention(&layers)?;
    AttentionMatrix::new(weights, tokens[..n].iter().map(|t| t.lexeme.clone()).collect(), spans[..n].to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaProjection {
    /// Unit direction, oriented so the buggy class projects higher.
    pub direction: Vec<f64>,
    pub projected: Vec<f64>,
    /// `true` marks the buggy class.
    pub labels: Vec<bool>,
    pub correct: ClassStats,
    pub buggy: ClassStats,
    pub bin_edges: Vec<f64>,
    /// Normalized histograms (densities) of the two classes.
    pub hist_correct: Vec<f64>,
    pub hist_buggy: Vec<f64>,
    pub overlap: f64,
}

fn stats(values: impl Iterator<Item = f64> + Clone) -> ClassStats {
    let count = values.clone().count();
    let mean = values.clone().sum::<f64>() / count as f64;
    let variance = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    ClassStats { count, mean, variance }
}

/// Fisher direction w ∝ (S_W + εI)⁻¹(μ_buggy − μ_correct), where ε is 1e-6
/// times the mean diagonal of S_W so the result does not depend on the
/// scale of the embeddings. When the class means coincide every direction
/// is equally (un)informative and the first axis is used.
pub fn lda_project(embeddings: &[Vec<f64>], labels: &[bool]) -> Result<LdaProjection, InterpretError> {
    if embeddings.len() != labels.len() {
        return Err(InterpretError::Mismatch(format!("{} embeddings, {} labels", embeddings.len(), labels.len())));
    }
    let n1 = labels.iter().filter(|&&b| b).count();
    let n0 = labels.len() - n1;
    if n0 < 2 || n1 < 2 {
        return Err(InterpretError::DegenerateClasses);
    }
    let d = embeddings[0].len();
    if d == 0 || embeddings.iter().any(|e| e.len() != d) {
        return Err(InterpretError::Mismatch("embeddings must share a positive dimension".into()));
    }
    let mut mu = [DVector::<f64>::zeros(d), DVector::<f64>::zeros(d)];
    for (e, &b) in embeddings.iter().zip(labels) {
        mu[b as usize] += DVector::from_column_slice(e);
    }
    mu[0] /= n0 as f64;
    mu[1] /= n1 as f64;
    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (e, &b) in embeddings.iter().zip(labels) {
        let c = DVector::from_column_slice(e) - &mu[b as usize];
        sw += &c * c.transpose();
    }
    let diff = &mu[1] - &mu[0];
    let eps = 1e-6 * (sw.trace() / d as f64).max(f64::MIN_POSITIVE);
    let reg = &sw + DMatrix::<f64>::identity(d, d) * eps;
    let mut w = match reg.clone().cholesky() {
        Some(ch) => ch.solve(&diff),
        None => reg.lu().solve(&diff).unwrap_or_else(|| diff.clone()),
    };
    let norm = w.norm();
    if norm > 0.0 && norm.is_finite() {
        w /= norm;
    } else {
        w = DVector::zeros(d);
        w[0] = 1.0;
    }
    let projected: Vec<f64> = embeddings.iter().map(|e| e.iter().zip(w.iter()).map(|(a, b)| a * b).sum()).collect();
    let pick = |want: bool| projected.iter().zip(labels).filter(move |(_, &b)| b == want).map(|(v, _)| *v);
    let (lo, hi) = projected.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let width = (hi - lo) / LDA_BINS as f64;
    let bin = |v: f64| {
        if hi > lo {
            (((v - lo) / (hi - lo)) * LDA_BINS as f64).floor().min((LDA_BINS - 1) as f64) as usize
        } else {
            0
        }
    };
    let mut counts = [vec![0usize; LDA_BINS], vec![0usize; LDA_BINS]];
    for (&v, &b) in projected.iter().zip(labels) {
        counts[b as usize][bin(v)] += 1;
    }
    // Σ min(h0, h1)·width with h_c = count / (n_c · width)
    let overlap: f64 = (0..LDA_BINS).map(|i| (counts[0][i] as f64 / n0 as f64).min(counts[1][i] as f64 / n1 as f64)).sum();
    let density = |c: &[usize], n: usize| c.iter().map(|&k| if width > 0.0 { k as f64 / (n as f64 * width) } else { 0.0 }).collect();
    Ok(LdaProjection {
        direction: w.iter().copied().collect(),
        correct: stats(pick(false)),
        buggy: stats(pick(true)),
        bin_edges: (0..=LDA_BINS).map(|i| lo + i as f64 * width).collect(),
        hist_correct: density(&counts[0], n0),
        hist_buggy: density(&counts[1], n1),
        overlap,
        projected,
        labels: labels.to_vec(),
    })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Gray level of each cell: 255 (white) at weight 0, 0 (black) at the row
/// maximum.
pub fn gray_levels(sa: &AttentionMatrix) -> Vec<Vec<u8>> {
    (0..sa.len())
        .map(|r| {
            let row = sa.weights.row(r);
            let max = row.iter().cloned().fold(0.0, f64::max);
            row.iter().map(|&w| if max > 0.0 { (255.0 * (1.0 - w / max)).round() as u8 } else { 255 }).collect()
        })
        .collect()
}

/// Writes `path` as an SVG heatmap and the raw weights next to it as CSV.
/// Returns the CSV path.
pub fn emit_heatmap(sa: &AttentionMatrix, path: &Path) -> Result<PathBuf, InterpretError> {
    let n = sa.len();
    if n > HEATMAP_MAX {
        return Err(InterpretError::TooLarge { n, max: HEATMAP_MAX });
    }
    let cell = 14;
    let margin = 10 + 7 * sa.tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1).min(24);
    let size = margin + cell * n + 10;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="monospace" font-size="10">"#);
    let _ = writeln!(svg, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    for (i, tok) in sa.tokens.iter().enumerate() {
        let t = xml_escape(tok);
        let c = margin + i * cell + cell / 2;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, margin - 4, c + 3);
        let _ = writeln!(svg, r#"<text transform="translate({},{}) rotate(-90)" x="0" y="0">{t}</text>"#, c + 3, margin - 4);
    }
    for (r, row) in gray_levels(sa).iter().enumerate() {
        for (c, g) in row.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>"#,
                margin + c * cell,
                margin + r * cell
            );
        }
    }
    svg.push_str("</svg>\n");
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, svg).map_err(io_err(path))?;
    let csv_path = path.with_extension("csv");
    write_weights_csv(sa, &csv_path)?;
    Ok(csv_path)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> InterpretError + '_ {
    move |e| InterpretError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// One row per token: index, token, statement, then the row's weights.
pub fn write_weights_csv(sa: &AttentionMatrix, path: &Path) -> Result<(), InterpretError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["index".to_string(), "token".into(), "statement".into()];
    header.extend((0..sa.len()).map(|j| format!("w{j}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for i in 0..sa.len() {
        let mut rec = vec![i.to_string(), sa.tokens[i].clone(), sa.stmt_spans[i].to_string()];
        rec.extend(sa.weights.row(i).iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_weights_csv(path: &Path) -> Result<AttentionMatrix, InterpretError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let (mut tokens, mut spans, mut data) = (vec![], vec![], vec![]);
    let bad = |m: String| InterpretError::Io { path: path.display().to_string(), message: m };
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        tokens.push(rec.get(1).unwrap_or_default().to_string());
        spans.push(rec.get(2).unwrap_or_default().parse().map_err(|e| bad(format!("statement: {e}")))?);
        for x in rec.iter().skip(3) {
            data.push(x.parse::<f64>().map_err(|e| bad(format!("weight: {e}")))?);
        }
    }
    let n = tokens.len();
    if data.len() != n * n {
        return Err(bad(format!("{} weights for {n} tokens", data.len())));
    }
    AttentionMatrix::new(Tensor::from_vec(n, n, data), tokens, spans)
}

/// SVG of the two projected histograms (correct in blue, buggy in red).
pub fn lda_svg(p: &LdaProjection) -> String {
    let (w, h, pad) = (640.0, 320.0, 30.0);
    let top = p.hist_correct.iter().chain(&p.hist_buggy).cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let bw = (w - 2.0 * pad) / LDA_BINS as f64;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="monospace" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (hist, color) in [(&p.hist_correct, "#1f77b4"), (&p.hist_buggy, "#d62728")] {
        for (i, &v) in hist.iter().enumerate() {
            let bh = (h - 2.0 * pad) * v / top;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{bw:.2}" height="{bh:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                pad + i as f64 * bw,
                h - pad - bh
            );
        }
    }
    let _ = writeln!(svg, r#"<text x="{pad}" y="18">overlap {:.4}</text>"#, p.overlap);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[&[f64]], spans: Vec<usize>) -> AttentionMatrix {
        let n = rows.len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        AttentionMatrix::new(Tensor::from_vec(n, n, data), (0..n).map(|i| format!("tok{i}")).collect(), spans).unwrap()
    }

    #[test]
    fn collapse_single_head_is_identity() {
        let a = Tensor::from_vec(2, 2, vec![0.3, 0.7, 0.6, 0.4]);
        assert_eq!(collapse_attention(&[vec![a.clone()]]).unwrap(), a);
    }

    #[test]
    fn collapse_averages_heads_of_the_last_layer() {
        let i = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let junk = Tensor::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        let out = collapse_attention(&[vec![junk], vec![i, x]]).unwrap();
        assert_eq!(out.data, vec![0.5; 4]);
        assert!(collapse_attention(&[]).is_err());
    }

    #[test]
    fn collapse_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let heads: Vec<Tensor> = (0..3)
                .map(|_| {
                    let mut t = Tensor::from_vec(n, n, (0..n * n).map(|_| rng.random::<f64>()).collect());
                    for r in t.data.chunks_mut(n) {
                        let s: f64 = r.iter().sum();
                        r.iter_mut().for_each(|w| *w /= s);
                    }
                    t
                })
                .collect();
            let out = collapse_attention(&[heads]).unwrap();
            for r in 0..n {
                assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn top_one_per_row() {
        let sa = matrix(&[&[0.9, 0.1], &[0.2, 0.8]], vec![0, 0]);
        let r = attention_analysis(&sa, 50.0).unwrap();
        assert_eq!(r.attended_tokens, vec![("tok0".into(), 0), ("tok1".into(), 1)]);
    }

    #[test]
    fn saturation() {
        let n = 6;
        let row = vec![1.0 / n as f64; n];
        let rows: Vec<&[f64]> = (0..n).map(|_| row.as_slice()).collect();
        let sa = matrix(&rows, vec![0, 0, 1, 1, 1, 2]);
        let r = attention_analysis(&sa, 100.0).unwrap();
        assert_eq!(r.token_indices().len(), n);
        assert_eq!(r.attended_statements, vec![0, 1, 2]);
    }

    #[test]
    fn one_of_ten_tokens_is_not_enough_at_twenty_percent() {
        assert!(!statement_attended(1, 10, 20.0));
        assert!(!statement_attended(2, 10, 20.0));
        assert!(statement_attended(3, 10, 20.0));
        // a single attended column in a 10-token, one-statement method
        let n = 10;
        let mut rows = vec![vec![0.0; n]; n];
        rows.iter_mut().for_each(|r| r[4] = 1.0);
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let sa = matrix(&refs, vec![0; n]);
        let r = attention_analysis(&sa, 10.0).unwrap();
        assert_eq!(r.token_indices().into_iter().collect::<Vec<_>>(), vec![4]);
        assert!(r.attended_statements.is_empty());
    }

    #[test]
    fn ties_prefer_lower_indices() {
        let sa = matrix(&[&[0.25; 4], &[0.25; 4], &[0.25; 4], &[0.25; 4]], vec![0; 4]);
        let r = attention_analysis(&sa, 25.0).unwrap();
        assert_eq!(r.token_indices().into_iter().collect::<Vec<_>>(), vec![0]);
        assert!(attention_analysis(&sa, 0.0).is_err());
        assert!(attention_analysis(&sa, 101.0).is_err());
    }

    #[test]
    fn curve_extremes() {
        let rep = |stmts: Vec<usize>| AttentionReport { k: 10.0, attended_tokens: vec![], attended_statements: stmts };
        let hit = PairAttention { pair_id: "a".into(), buggy_statements: vec![1], reports: vec![rep(vec![1, 2])] };
        let miss = PairAttention { pair_id: "b".into(), buggy_statements: vec![0], reports: vec![rep(vec![1])] };
        assert_eq!(localization_curve(&[hit.clone()], &[10.0]).unwrap()[0].percent, 100.0);
        assert_eq!(localization_curve(&[miss.clone()], &[10.0]).unwrap()[0].percent, 0.0);
        assert_eq!(localization_curve(&[hit, miss.clone()], &[10.0]).unwrap()[0].percent, 50.0);
        assert!(localization_curve(&[miss], &[20.0]).is_err());
    }

    #[test]
    fn k_grids() {
        assert_eq!(parse_k_grid("5:50:5").unwrap(), (1..=10).map(|i| 5.0 * i as f64).collect::<Vec<_>>());
        assert_eq!(parse_k_grid("5, 20").unwrap(), vec![5.0, 20.0]);
        assert!(parse_k_grid("0:10:5").is_err());
        assert!(parse_k_grid("5:x:5").is_err());
    }

    fn clusters(rng: &mut ChaCha8Rng, a: [f64; 2], b: [f64; 2], n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![];
        let mut y = vec![];
        for (c, label) in [(a, false), (b, true)] {
            for _ in 0..n {
                x.push(vec![c[0] + rng.sample(normal), c[1] + rng.sample(normal)]);
                y.push(label);
            }
        }
        (x, y)
    }

    #[test]
    fn separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = clusters(&mut rng, [0.0, 0.0], [10.0, 0.0], 300);
        let p = lda_project(&x, &y).unwrap();
        assert!(p.direction[0] > 0.99, "{:?}", p.direction);
        assert!(p.overlap < 0.05);
        assert!(p.buggy.mean > p.correct.mean);
        let norm: f64 = p.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_clouds_overlap_fully() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, _) = clusters(&mut rng, [1.0, 2.0], [0.0, 0.0], 200);
        let x: Vec<Vec<f64>> = x[..200].to_vec();
        let both: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y: Vec<bool> = (0..400).map(|i| i >= 200).collect();
        let p = lda_project(&both, &y).unwrap();
        assert!((p.overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lda_needs_two_per_class() {
        assert!(matches!(lda_project(&[vec![0.0], vec![1.0], vec![2.0]], &[false, false, true]), Err(InterpretError::DegenerateClasses)));
    }

    #[test]
    fn heatmap_files() {
        let dir = tempfile::tempdir().unwrap();
        let sa = AttentionMatrix::new(Tensor::from_vec(1, 1, vec![1.0]), vec!["<x&>".into()], vec![0]).unwrap();
        let svg_path = dir.path().join("h.svg");
        let csv_path = emit_heatmap(&sa, &svg_path).unwrap();
        let svg = fs::read_to_string(&svg_path).unwrap();
        assert!(svg.contains("rgb(0,0,0)") && svg.contains("&lt;x&amp;&gt;"));
        assert_eq!(read_weights_csv(&csv_path).unwrap(), sa);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 7;
        let mut t = Tensor::from_vec(n, n, (0..n * n).map(|_| rng.random::<f64>()).collect());
        for r in t.data.chunks_mut(n) {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|w| *w /= s);
        }
        let toks = vec![",".to_string(), "\"".into(), "a".into(), "(".into(), ")".into(), ";".into(), "x".into()];
        let sa = AttentionMatrix::new(t, toks, vec![0, 0, 0, 1, 1, 1, 2]).unwrap();
        let back = read_weights_csv(&emit_heatmap(&sa, &svg_path).unwrap()).unwrap();
        assert_eq!(back.tokens, sa.tokens);
        assert!(back.weights.data.iter().zip(&sa.weights.data).all(|(a, b)| (a - b).abs() < 1e-9));
        let big = Tensor::filled(201, 201, 1.0 / 201.0);
        let big = AttentionMatrix::new(big, vec!["t".into(); 201], vec![0; 201]).unwrap();
        assert!(matches!(emit_heatmap(&big, &svg_path), Err(InterpretError::TooLarge { .. })));
    }

    #[test]
    fn gray_is_monotone_in_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.random_range(2..10);
            let mut t = Tensor::from_vec(n, n, (0..n * n).map(|_| rng.random::<f64>()).collect());
            for r in t.data.chunks_mut(n) {
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|w| *w /= s);
            }
            let sa = AttentionMatrix::new(t, vec!["t".into(); n], vec![0; n]).unwrap();
            let g = gray_levels(&sa);
            for r in 0..n {
                let row = sa.weights.row(r);
                for a in 0..n {
                    for b in 0..n {
                        if row[a] < row[b] {
                            assert!(g[r][a] >= g[r][b]);
                        }
                    }
                }
                assert!(g[r].contains(&0));
            }
        }
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(AttentionMatrix::new(Tensor::from_vec(1, 1, vec![0.5]), vec!["a".into()], vec![0]).is_err());
        assert!(AttentionMatrix::new(Tensor::zeros(0, 0), vec![], vec![]).is_err());
    }
}
