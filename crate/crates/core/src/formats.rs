//! Plain-text interchange formats.
//!
//! Every file starts with a magic line `NAME vN`; in the score CSV it is
//! written as a `#` comment so spreadsheet tools skip it. After the magic
//! line, blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! CROSSMAX-SKELETON v1
//! <id> <label|-> <T> <N> <T*N*3 values, row-major frame/point/xyz>
//!
//! CROSSMAX-TOPOLOGY v1
//! <child> <parent>
//!
//! CROSSMAX-EMBEDDING v1
//! <N> <C> <modality>
//! <C values>            (N lines)
//!
//! CROSSMAX-LOGITS v1
//! <N> <K>
//! classes <K dataset class ids>     (optional, default 0..K)
//! <id> <label|-> <K joints> <K bones> <K velocities> <dj> <db> <dv>
//!
//! #CROSSMAX-SCORES v1
//! id,class,p_prob,novelty,label
//! <id>,<class>,<p_prob>,<novelty>,<label|->
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is lossless and reruns are byte-identical.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::cne::LogitsRecord;
use crate::crossmmd::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::skeleton::{BoneTopology, Modality, SkeletonSequence};

pub const SKELETON_FORMAT: (&str, u32) = ("CROSSMAX-SKELETON", 1);
pub const TOPOLOGY_FORMAT: (&str, u32) = ("CROSSMAX-TOPOLOGY", 1);
pub const EMBEDDING_FORMAT: (&str, u32) = ("CROSSMAX-EMBEDDING", 1);
pub const LOGITS_FORMAT: (&str, u32) = ("CROSSMAX-LOGITS", 1);
pub const SCORES_FORMAT: (&str, u32) = ("CROSSMAX-SCORES", 1);
pub const SPLIT_FORMAT: (&str, u32) = ("crossmax-split", 1);
pub const MODEL_FORMAT: (&str, u32) = ("crossmax-model", 1);
pub const METRICS_FORMAT: (&str, u32) = ("crossmax-metrics", 1);

/// Checks a decoded `(format, version)` pair against the expected one.
pub fn check_header(format: &str, version: u32, expected: (&str, u32)) -> Result<()> {
    if format != expected.0 || version != expected.1 {
        return Err(Error::Format {
            found: format!("{format} v{version}"),
            expected: format!("{} v{}", expected.0, expected.1),
        });
    }
    Ok(())
}

/// Inserts a `# config: <echo>` comment after the magic line.
pub fn with_echo(text: &str, echo: &str) -> String {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let echo = echo.replace(['\n', '\r'], " ");
    format!("{first}\n# config: {echo}\n{rest}")
}

fn header_line(fmt: (&str, u32)) -> String {
    format!("{} v{}\n", fmt.0, fmt.1)
}

/// Non-blank, non-comment lines with 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                self.last = i + 1;
                return Some((i + 1, t));
            }
        }
        None
    }

    fn expect_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = self.last;
        self.next_line()
            .ok_or_else(|| Error::parse(last + 1, format!("unexpected end of input, expected {what}")))
    }

    fn header(&mut self, fmt: (&str, u32)) -> Result<()> {
        let (_, line) = self.expect_line("format header")?;
        parse_magic(line, fmt)
    }
}

fn parse_magic(line: &str, fmt: (&str, u32)) -> Result<()> {
    let mut parts = line.split_whitespace();
    let name = parts.next().unwrap_or_default();
    let version = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok());
    match (version, parts.next()) {
        (Some(v), None) => check_header(name, v, fmt),
        _ => Err(Error::Format {
            found: line.chars().take(64).collect(),
            expected: format!("{} v{}", fmt.0, fmt.1),
        }),
    }
}

fn parse_usize(tok: Option<&str>, line: usize, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} {tok:?}")))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid number {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn parse_label(tok: Option<&str>, line: usize) -> Result<Option<usize>> {
    match tok {
        Some("-") => Ok(None),
        other => parse_usize(other, line, "label").map(Some),
    }
}

fn parse_id(tok: Option<&str>, line: usize) -> Result<String> {
    tok.map(str::to_string)
        .ok_or_else(|| Error::parse(line, "missing sample id"))
}

fn label_text(label: Option<usize>) -> String {
    label.map_or_else(|| "-".to_string(), |l| l.to_string())
}

fn push_values<'a>(out: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        let _ = write!(out, " {v}");
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id == "-" || id.contains(|c: char| c.is_whitespace() || c == ',' || c == '#') {
        return Err(Error::invalid(format!(
            "sample id {id:?} must be non-empty and free of whitespace, commas and '#'"
        )));
    }
    Ok(())
}

/// A skeleton sequence with its sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonRecord {
    pub id: String,
    pub sequence: SkeletonSequence,
}

/// Upper bound on values per record, so a corrupt header cannot trigger a
/// huge allocation.
const MAX_VALUES: usize = 1 << 26;

pub fn parse_skeletons(text: &str) -> Result<Vec<SkeletonRecord>> {
    let mut lines = Lines::new(text);
    lines.header(SKELETON_FORMAT)?;
    let mut out = Vec::new();
    while let Some((ln, line)) = lines.next_line() {
        let mut toks = line.split_whitespace();
        let id = parse_id(toks.next(), ln)?;
        let label = parse_label(toks.next(), ln)?;
        let frames = parse_usize(toks.next(), ln, "frame count")?;
        let points = parse_usize(toks.next(), ln, "point count")?;
        let expected = frames
            .checked_mul(points)
            .and_then(|x| x.checked_mul(3))
            .filter(|&x| x <= MAX_VALUES)
            .ok_or_else(|| Error::parse(ln, "sequence dimensions too large"))?;
        let values = toks.map(|t| parse_f64(t, ln)).collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(Error::parse(
                ln,
                format!(
                    "expected {expected} coordinates for {frames}x{points}x3, got {}",
                    values.len()
                ),
            ));
        }
        let sequence =
            SkeletonSequence::from_flat(frames, points, values, label).map_err(|e| Error::parse(ln, e.to_string()))?;
        out.push(SkeletonRecord { id, sequence });
    }
    Ok(out)
}

pub fn write_skeletons(records: &[SkeletonRecord]) -> Result<String> {
    let mut out = header_line(SKELETON_FORMAT);
    for r in records {
        check_id(&r.id)?;
        let s = &r.sequence;
        let _ = write!(out, "{} {} {} {}", r.id, label_text(s.label()), s.frames(), s.points());
        push_values(&mut out, s.coords().iter());
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_topology(text: &str) -> Result<BoneTopology> {
    let mut lines = Lines::new(text);
    lines.header(TOPOLOGY_FORMAT)?;
    let mut edges = Vec::new();
    while let Some((ln, line)) = lines.next_line() {
        let mut toks = line.split_whitespace();
        let child = parse_usize(toks.next(), ln, "child joint")?;
        let parent = parse_usize(toks.next(), ln, "parent joint")?;
        if toks.next().is_some() {
            return Err(Error::parse(ln, "expected exactly two joint indices"));
        }
        edges.push((child, parent));
    }
    BoneTopology::new(edges)
}

pub fn write_topology(topo: &BoneTopology) -> String {
    let mut out = header_line(TOPOLOGY_FORMAT);
    for (c, p) in topo.edges() {
        let _ = writeln!(out, "{c} {p}");
    }
    out
}

const MAX_ROWS: usize = 1 << 24;

pub fn parse_embeddings(text: &str) -> Result<EmbeddingBatch> {
    let mut lines = Lines::new(text);
    lines.header(EMBEDDING_FORMAT)?;
    let (ln, dims) = lines.expect_line("dimension line")?;
    let mut toks = dims.split_whitespace();
    let n = parse_usize(toks.next(), ln, "row count")?;
    let c = parse_usize(toks.next(), ln, "channel count")?;
    let modality: Modality = toks
        .next()
        .ok_or_else(|| Error::parse(ln, "missing modality"))?
        .parse()
        .map_err(|e: Error| Error::parse(ln, e.to_string()))?;
    if n == 0 || c == 0 || n.saturating_mul(c) > MAX_VALUES || n > MAX_ROWS {
        return Err(Error::parse(ln, format!("unsupported embedding shape {n}x{c}")));
    }
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        let (ln, line) = lines.expect_line("embedding row")?;
        let before = data.len();
        for t in line.split_whitespace() {
            data.push(parse_f64(t, ln)?);
        }
        if data.len() - before != c {
            return Err(Error::parse(
                ln,
                format!("expected {c} values, got {}", data.len() - before),
            ));
        }
    }
    if let Some((ln, _)) = lines.next_line() {
        return Err(Error::parse(ln, format!("more than the declared {n} rows")));
    }
    let data = Array2::from_shape_vec((n, c), data).map_err(|e| Error::shape(e.to_string()))?;
    EmbeddingBatch::new(data, modality)
}

pub fn write_embeddings(batch: &EmbeddingBatch) -> String {
    let mut out = header_line(EMBEDDING_FORMAT);
    let _ = writeln!(out, "{} {} {}", batch.rows(), batch.channels(), batch.modality().name());
    for row in batch.data().rows() {
        let mut line = String::new();
        push_values(&mut line, row.iter());
        out.push_str(line.trim_start());
        out.push('\n');
    }
    out
}

/// Logits records plus the map from output index to dataset class id.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsFile {
    pub classes: Vec<usize>,
    pub records: Vec<LogitsRecord>,
}

impl LogitsFile {
    pub fn class_of(&self, output: usize) -> Option<usize> {
        self.classes.get(output).copied()
    }
}

pub fn parse_logits(text: &str) -> Result<LogitsFile> {
    let mut lines = Lines::new(text);
    lines.header(LOGITS_FORMAT)?;
    let (ln, dims) = lines.expect_line("dimension line")?;
    let mut toks = dims.split_whitespace();
    let n = parse_usize(toks.next(), ln, "record count")?;
    let k = parse_usize(toks.next(), ln, "class count")?;
    if toks.next().is_some() {
        return Err(Error::parse(ln, "dimension line must be `<N> <K>`"));
    }
    if !(2..=MAX_ROWS).contains(&k) || n > MAX_ROWS {
        return Err(Error::parse(ln, format!("unsupported logits shape {n}x{k}")));
    }
    let mut classes: Vec<usize> = (0..k).collect();
    let mut records = Vec::with_capacity(n.min(1 << 16));
    let mut first = true;
    while records.len() < n {
        let (ln, line) = lines.expect_line("logits record")?;
        let mut toks = line.split_whitespace();
        if first && line.starts_with("classes") {
            first = false;
            toks.next();
            classes = toks
                .map(|t| parse_usize(Some(t), ln, "class id"))
                .collect::<Result<_>>()?;
            if classes.len() != k {
                return Err(Error::parse(
                    ln,
                    format!("expected {k} class ids, got {}", classes.len()),
                ));
            }
            continue;
        }
        first = false;
        let id = parse_id(toks.next(), ln)?;
        let label = parse_label(toks.next(), ln)?;
        let values = toks.map(|t| parse_f64(t, ln)).collect::<Result<Vec<_>>>()?;
        if values.len() != 3 * k + 3 {
            return Err(Error::parse(
                ln,
                format!("expected {} values, got {}", 3 * k + 3, values.len()),
            ));
        }
        let record = LogitsRecord {
            id,
            label,
            joints: values[..k].to_vec(),
            bones: values[k..2 * k].to_vec(),
            velocities: values[2 * k..3 * k].to_vec(),
            distances: [values[3 * k], values[3 * k + 1], values[3 * k + 2]],
        };
        record.validate().map_err(|e| Error::parse(ln, e.to_string()))?;
        records.push(record);
    }
    if let Some((ln, _)) = lines.next_line() {
        return Err(Error::parse(ln, format!("more than the declared {n} records")));
    }
    Ok(LogitsFile { classes, records })
}

pub fn write_logits(file: &LogitsFile) -> Result<String> {
    let k = file.classes.len();
    let mut out = header_line(LOGITS_FORMAT);
    let _ = writeln!(out, "{} {}", file.records.len(), k);
    out.push_str("classes");
    for c in &file.classes {
        let _ = write!(out, " {c}");
    }
    out.push('\n');
    for r in &file.records {
        check_id(&r.id)?;
        r.validate()?;
        if r.classes() != k {
            return Err(Error::shape(format!(
                "record {} has {} logits, file has {k}",
                r.id,
                r.classes()
            )));
        }
        let _ = write!(out, "{} {}", r.id, label_text(r.label));
        push_values(
            &mut out,
            r.joints.iter().chain(&r.bones).chain(&r.velocities).chain(&r.distances),
        );
        out.push('\n');
    }
    Ok(out)
}

/// One row of the score table. `class` and `label` use dataset class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub class: usize,
    pub p_prob: f64,
    pub novelty: f64,
    pub label: Option<usize>,
}

const SCORE_COLUMNS: &str = "id,class,p_prob,novelty,label";

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, magic) = lines.next().ok_or_else(|| Error::parse(1, "empty score file"))?;
    parse_magic(magic.trim_start_matches('#').trim(), SCORES_FORMAT)?;
    let mut lines = lines.filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, SCORE_COLUMNS)) => {}
        Some((ln, other)) => {
            return Err(Error::parse(
                ln,
                format!("expected columns {SCORE_COLUMNS:?}, got {other:?}"),
            ))
        }
        None => return Err(Error::parse(2, "missing column header")),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::parse(ln, format!("expected 5 columns, got {}", cols.len())));
        }
        let p_prob = parse_f64(cols[2], ln)?;
        let novelty = parse_f64(cols[3], ln)?;
        if !(0.0..=1.0).contains(&p_prob) {
            return Err(Error::parse(ln, format!("p_prob {p_prob} outside [0, 1]")));
        }
        out.push(ScoreRow {
            id: parse_id(Some(cols[0]).filter(|s| !s.is_empty()), ln)?,
            class: parse_usize(Some(cols[1]), ln, "class")?,
            p_prob,
            novelty,
            label: parse_label(Some(cols[4]), ln)?,
        });
    }
    Ok(out)
}

pub fn write_scores(rows: &[ScoreRow]) -> Result<String> {
    let mut out = format!("#{}", header_line(SCORES_FORMAT));
    out.push_str(SCORE_COLUMNS);
    out.push('\n');
    for r in rows {
        check_id(&r.id)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.id,
            r.class,
            r.p_prob,
            r.novelty,
            label_text(r.label)
        );
    }
    Ok(out)
}
