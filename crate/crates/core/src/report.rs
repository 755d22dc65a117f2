//! Original-vs-adversarial comparison, result tables and data-map plots.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::cartography::{CartographyMap, Partition, Region};
use crate::ingest::{PredictionSet, QaDataset};
use crate::metrics::{round2, EvalReport};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("table has no rows")]
    EmptyRows,
    #[error("table label {0:?} contains a line break")]
    InvalidLabel(String),
    #[error("table line {line}: {detail}")]
    TableParse { line: usize, detail: String },
    #[error("data map is empty")]
    EmptyMap,
}

/// Adversarial ids matched to the original id they were derived from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AdversarialPairing {
    /// `(original_id, adversarial_id)` in adversarial dataset order.
    pub pairs: Vec<(String, String)>,
    pub unmatched_adversarial: Vec<String>,
}

/// Pairs each adversarial id with the original id it equals, or with the
/// longest original id `o` such that the adversarial id is `o-<suffix>`.
pub fn pair_examples(original: &QaDataset, adversarial: &QaDataset) -> AdversarialPairing {
    let mut pairing = AdversarialPairing::default();
    for adv_id in adversarial.ids() {
        let matched = if original.contains(adv_id) {
            Some(adv_id)
        } else {
            adv_id
                .rmatch_indices('-')
                .map(|(i, _)| &adv_id[..i])
                .find(|prefix| original.contains(prefix))
        };
        match matched {
            Some(orig) => pairing.pairs.push((orig.to_string(), adv_id.to_string())),
            None => pairing.unmatched_adversarial.push(adv_id.to_string()),
        }
    }
    pairing
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub exact_match: f64,
    pub f1: f64,
    pub count: usize,
    pub missing: Vec<String>,
}

impl From<&EvalReport> for ReportSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            exact_match: r.aggregate_em,
            f1: r.aggregate_f1,
            count: r.len(),
            missing: r.missing_predictions.clone(),
        }
    }
}

/// A paired example whose exact-match outcome changed between the runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Flip {
    pub original_id: String,
    pub adversarial_id: String,
    pub original_answer: String,
    pub adversarial_answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarialReport {
    pub original: ReportSummary,
    pub adversarial: ReportSummary,
    pub delta_em: f64,
    pub delta_f1: f64,
    /// Pairs correct on the original and wrong on the adversarial example.
    pub flips: Vec<Flip>,
    /// Pairs wrong on the original and correct on the adversarial example.
    pub gains: Vec<Flip>,
    pub unmatched: Vec<String>,
}

pub fn adversarial_compare(
    orig_report: &EvalReport,
    adv_report: &EvalReport,
    pairing: &AdversarialPairing,
    orig_preds: &PredictionSet,
    adv_preds: &PredictionSet,
) -> AdversarialReport {
    let orig_scores = orig_report.score_index();
    let adv_scores = adv_report.score_index();
    let mut flips = Vec::new();
    let mut gains = Vec::new();

    for (orig_id, adv_id) in &pairing.pairs {
        let (Some(o), Some(a)) = (
            orig_scores.get(orig_id.as_str()),
            adv_scores.get(adv_id.as_str()),
        ) else {
            continue;
        };
        let target = match (o.em, a.em) {
            (1, 0) => &mut flips,
            (0, 1) => &mut gains,
            _ => continue,
        };
        target.push(Flip {
            original_id: orig_id.clone(),
            adversarial_id: adv_id.clone(),
            original_answer: orig_preds.get(orig_id).unwrap_or_default().to_string(),
            adversarial_answer: adv_preds.get(adv_id).unwrap_or_default().to_string(),
        });
    }

    AdversarialReport {
        original: orig_report.into(),
        adversarial: adv_report.into(),
        delta_em: adv_report.aggregate_em - orig_report.aggregate_em,
        delta_f1: adv_report.aggregate_f1 - orig_report.aggregate_f1,
        flips,
        gains,
        unmatched: pairing.unmatched_adversarial.clone(),
    }
}

impl AdversarialReport {
    /// JSON with aggregate numbers rounded to two decimals.
    pub fn to_json(&self) -> Vec<u8> {
        let summary = |s: &ReportSummary| {
            serde_json::json!({
                "exact_match": round2(s.exact_match),
                "f1": round2(s.f1),
                "count": s.count,
                "missing": s.missing,
            })
        };
        let doc = serde_json::json!({
            "original": summary(&self.original),
            "adversarial": summary(&self.adversarial),
            "delta_em": round2(self.delta_em),
            "delta_f1": round2(self.delta_f1),
            "flips": self.flips,
            "gains": self.gains,
            "unmatched": self.unmatched,
        });
        let mut out = serde_json::to_vec_pretty(&doc).expect("report serialization cannot fail");
        out.push(b'\n');
        out
    }

    pub fn to_table(&self) -> String {
        render_table(&[
            TableRow::new("Original", self.original.exact_match, self.original.f1),
            TableRow::new(
                "Adversarial",
                self.adversarial.exact_match,
                self.adversarial.f1,
            ),
            TableRow::new("Delta", self.delta_em, self.delta_f1),
        ])
        .expect("fixed rows are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub label: String,
    pub em: f64,
    pub f1: f64,
}

impl TableRow {
    pub fn new(label: impl Into<String>, em: f64, f1: f64) -> Self {
        Self {
            label: label.into(),
            em,
            f1,
        }
    }
}

const EM_HEADER: &str = "Exact Match";
const EM_WIDTH: usize = 11;
const F1_WIDTH: usize = 8;

/// Renders a fixed-width results table.
///
/// Grammar: a header line, a rule of `-`, then one line per row. A row is
/// `label` left-aligned to the widest label, two spaces, EM right-aligned in
/// 11 columns, two spaces, F1 right-aligned in 8 columns. Numbers carry two
/// decimals. The last two whitespace-separated fields of a row are the
/// numbers and everything before them, right-trimmed, is the label.
pub fn render_table(rows: &[TableRow]) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyRows);
    }
    if let Some(r) = rows.iter().find(|r| r.label.contains(['\n', '\r'])) {
        return Err(ReportError::InvalidLabel(r.label.clone()));
    }
    let width = rows
        .iter()
        .map(|r| r.label.chars().count())
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let header = format!("{:width$}  {EM_HEADER:>EM_WIDTH$}  {:>F1_WIDTH$}", "", "F1");
    let rule = "-".repeat(header.chars().count());
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{rule}").unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<width$}  {:>EM_WIDTH$.2}  {:>F1_WIDTH$.2}",
            r.label,
            round2(r.em),
            round2(r.f1)
        )
        .unwrap();
    }
    Ok(out)
}

/// Reads a table produced by [`render_table`] back into rows.
pub fn parse_table(text: &str) -> Result<Vec<TableRow>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end().ends_with("F1") && h.contains(EM_HEADER) => {}
        _ => {
            return Err(ReportError::TableParse {
                line: 1,
                detail: "missing header".into(),
            })
        }
    }
    match lines.next() {
        Some((_, rule)) if !rule.is_empty() && rule.chars().all(|c| c == '-') => {}
        _ => {
            return Err(ReportError::TableParse {
                line: 2,
                detail: "missing rule".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: &str| ReportError::TableParse {
            line: i + 1,
            detail: detail.to_string(),
        };
        let line = line.trim_end();
        let (rest, f1) = line.rsplit_once(' ').ok_or_else(|| err("missing F1"))?;
        let rest = rest.trim_end();
        let (label, em) = rest.rsplit_once(' ').ok_or_else(|| err("missing EM"))?;
        let em: f64 = em.trim().parse().map_err(|_| err("EM is not a number"))?;
        let f1: f64 = f1.trim().parse().map_err(|_| err("F1 is not a number"))?;
        rows.push(TableRow::new(label.trim_end(), em, f1));
    }
    Ok(rows)
}

pub const SVG_WIDTH: f64 = 720.0;
pub const SVG_HEIGHT: f64 = 540.0;
pub const PLOT_LEFT: f64 = 70.0;
pub const PLOT_TOP: f64 = 30.0;
pub const PLOT_WIDTH: f64 = 490.0;
pub const PLOT_HEIGHT: f64 = 450.0;
pub const MAX_VARIABILITY: f64 = 0.5;

const EASY_COLOR: &str = "#2ca02c";
const AMBIGUOUS_COLOR: &str = "#f2c500";
const HARD_COLOR: &str = "#d62728";
const OTHER_COLOR: &str = "#9e9e9e";

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Pixel position of a (variability, confidence) pair.
pub fn plot_position(variability: f64, confidence: f64) -> (f64, f64) {
    let v = variability.clamp(0.0, MAX_VARIABILITY);
    let c = confidence.clamp(0.0, 1.0);
    (
        PLOT_LEFT + v / MAX_VARIABILITY * PLOT_WIDTH,
        PLOT_TOP + (1.0 - c) * PLOT_HEIGHT,
    )
}

/// Renders the data map as an SVG 1.1 document: variability on x over
/// [0, 0.5], confidence on y over [0, 1], one `<circle class="marker">` per
/// point. Color follows region membership; an id in both `easy` (or `hard`)
/// and `ambiguous` is drawn in the easy (or hard) color.
pub fn render_datamap(map: &CartographyMap, partition: &Partition) -> Result<String, ReportError> {
    if map.is_empty() {
        return Err(ReportError::EmptyMap);
    }
    let mut svg = String::with_capacity(256 + map.len() * 112);
    writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>"#
    )
    .unwrap();

    let right = PLOT_LEFT + PLOT_WIDTH;
    let bottom = PLOT_TOP + PLOT_HEIGHT;
    writeln!(svg, r#"<g class="axes" stroke="black" stroke-width="1">"#).unwrap();
    writeln!(
        svg,
        r#"<line x1="{PLOT_LEFT}" y1="{bottom}" x2="{right}" y2="{bottom}"/>"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<line x1="{PLOT_LEFT}" y1="{PLOT_TOP}" x2="{PLOT_LEFT}" y2="{bottom}"/>"#
    )
    .unwrap();
    writeln!(svg, "</g>").unwrap();

    writeln!(svg, r#"<g class="ticks">"#).unwrap();
    for i in 0..=5 {
        let v = i as f64 / 10.0;
        let (x, _) = plot_position(v, 0.0);
        writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            bottom + 5.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text class="tick" x="{x:.2}" y="{}" text-anchor="middle">{v:.1}</text>"#,
            bottom + 18.0
        )
        .unwrap();
    }
    for i in 0..=5 {
        let c = i as f64 / 5.0;
        let (_, y) = plot_position(0.0, c);
        writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{PLOT_LEFT}" y2="{y:.2}" stroke="black"/>"#,
            PLOT_LEFT - 5.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text class="tick" x="{}" y="{:.2}" text-anchor="end">{c:.1}</text>"#,
            PLOT_LEFT - 8.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(svg, "</g>").unwrap();

    writeln!(
        svg,
        r#"<text class="axis-label" x="{:.2}" y="{}" text-anchor="middle">variability</text>"#,
        PLOT_LEFT + PLOT_WIDTH / 2.0,
        SVG_HEIGHT - 15.0
    )
    .unwrap();
    let (cx, cy) = (20.0, PLOT_TOP + PLOT_HEIGHT / 2.0);
    writeln!(
        svg,
        r#"<text class="axis-label" x="{cx}" y="{cy}" text-anchor="middle" transform="rotate(-90 {cx} {cy})">confidence</text>"#
    )
    .unwrap();

    let groups: [(Option<Region>, &str, &str); 4] = [
        (None, "other", OTHER_COLOR),
        (Some(Region::Ambiguous), "ambiguous", AMBIGUOUS_COLOR),
        (Some(Region::Hard), "hard", HARD_COLOR),
        (Some(Region::Easy), "easy", EASY_COLOR),
    ];
    let regions: Vec<Option<Region>> = map
        .points()
        .iter()
        .map(|p| partition.region_of(&p.example_id))
        .collect();
    for (region, name, color) in groups {
        writeln!(
            svg,
            r#"<g class="region-{name}" fill="{color}" fill-opacity="0.7">"#
        )
        .unwrap();
        for (p, _) in map
            .points()
            .iter()
            .zip(&regions)
            .filter(|(_, r)| **r == region)
        {
            let (x, y) = plot_position(p.variability, p.confidence);
            writeln!(
                svg,
                r#"<circle class="marker" cx="{x:.2}" cy="{y:.2}" r="2.5" data-id="{}"/>"#,
                xml_escape(&p.example_id)
            )
            .unwrap();
        }
        writeln!(svg, "</g>").unwrap();
    }

    let legend_x = right + 20.0;
    writeln!(svg, r#"<g class="legend">"#).unwrap();
    let entries = [
        ("easy-to-learn", EASY_COLOR),
        ("ambiguous", AMBIGUOUS_COLOR),
        ("hard-to-learn", HARD_COLOR),
        ("other", OTHER_COLOR),
    ];
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = PLOT_TOP + 10.0 + i as f64 * 20.0;
        writeln!(
            svg,
            r#"<rect x="{legend_x}" y="{}" width="10" height="10" fill="{color}"/>"#,
            y - 9.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{y}">{label}</text>"#,
            legend_x + 16.0
        )
        .unwrap();
    }
    writeln!(svg, "</g>").unwrap();
    writeln!(svg, "</svg>").unwrap();
    Ok(svg)
}

/// Ids of the original dataset that no adversarial example was paired with.
pub fn unpaired_originals<'a>(
    original: &'a QaDataset,
    pairing: &AdversarialPairing,
) -> Vec<&'a str> {
    let paired: HashSet<&str> = pairing.pairs.iter().map(|(o, _)| o.as_str()).collect();
    original.ids().filter(|id| !paired.contains(id)).collect()
}
