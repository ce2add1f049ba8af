//! Report document, rectangle layout and static SVG.
//!
//! The JSON report is the single source of truth: the SVG is computed from
//! its `layout` block alone, and the browser explorer reads the same file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cart::{Criterion, DecisionTree};
use crate::diagnostics::{LeafReport, Mode};
use crate::error::{Error, Result};
use crate::forest::Aggregation;
use crate::model_selection::SearchResult;

pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_CANVAS_WIDTH: f64 = 1000.0;

/// JSON Schema (draft 2020-12) for report documents.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub criterion: Criterion,
    pub threshold: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub n_samples: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub group_counts: (usize, usize),
    pub n_trees: usize,
    pub policy: PolicySummary,
    pub root_impurity: f64,
    pub flagged_sample_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub thresholds: Vec<f64>,
    pub aggregation: Aggregation,
    /// Grid index of the policy threshold.
    pub default_index: usize,
    pub per_leaf: BTreeMap<usize, Vec<f64>>,
}

/// Per-sample consistency, emitted only on request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub leaf_id: usize,
    pub treatment: u8,
    pub consistency_grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FillGroup {
    #[serde(rename = "0")]
    Group0,
    #[serde(rename = "1")]
    Group1,
    #[serde(rename = "tie")]
    Tie,
}

/// One leaf drawn as a fixed-height rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRectangle {
    pub leaf_id: usize,
    pub x: f64,
    pub width: f64,
    /// Leaf depth; row 0 is drawn at the bottom.
    pub row: usize,
    pub group: FillGroup,
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub version: u32,
    pub metadata: Metadata,
    pub model_selection: SearchResult,
    pub tree: DecisionTree,
    pub leaves: Vec<LeafReport>,
    pub consistency_thresholds: Vec<f64>,
    pub consistency: ConsistencySummary,
    pub layout: Vec<LeafRectangle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<SampleRecord>>,
}

impl PositivityReport {
    pub fn cv_auc(&self) -> f64 {
        self.model_selection.cv_auc
    }

    /// Flagged leaves whose aggregated consistency reaches `min_consistency`.
    pub fn violations(&self, min_consistency: f64) -> impl Iterator<Item = &LeafReport> {
        self.leaves
            .iter()
            .filter(move |l| l.is_violating && l.consistency >= min_consistency)
    }

    /// Flagged leaves ordered by consistency, then size, then leaf id.
    pub fn ranked_violations(&self) -> Vec<&LeafReport> {
        let mut flagged: Vec<&LeafReport> = self.leaves.iter().filter(|l| l.is_violating).collect();
        flagged.sort_by(|a, b| {
            b.consistency
                .total_cmp(&a.consistency)
                .then(b.n_samples().cmp(&a.n_samples()))
                .then(a.leaf_id.cmp(&b.leaf_id))
        });
        flagged
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_report_json(report: &PositivityReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<PositivityReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PositivityReport::from_json(&text)
}

/// Lays leaves out left to right with widths proportional to sample counts.
pub fn layout(leaves: &[LeafReport], canvas_width: f64) -> Result<Vec<LeafRectangle>> {
    if !(canvas_width > 0.0 && canvas_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("canvas width {canvas_width}")));
    }
    let total: usize = leaves.iter().map(LeafReport::n_samples).sum();
    let mut x = 0.0;
    Ok(leaves
        .iter()
        .map(|leaf| {
            let width = if total == 0 {
                0.0
            } else {
                canvas_width * leaf.n_samples() as f64 / total as f64
            };
            let group = match leaf.n0.cmp(&leaf.n1) {
                std::cmp::Ordering::Greater => FillGroup::Group0,
                std::cmp::Ordering::Less => FillGroup::Group1,
                std::cmp::Ordering::Equal => FillGroup::Tie,
            };
            let rect = LeafRectangle {
                leaf_id: leaf.leaf_id,
                x,
                width,
                row: leaf.depth,
                group,
                opacity: leaf.consistency.clamp(0.0, 1.0),
            };
            x += width;
            rect
        })
        .collect())
}

/// Fill colors. The defaults are the Okabe-Ito orange and blue, with gray for
/// ties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    pub group0: String,
    pub group1: String,
    pub tie: String,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            group0: "#E69F00".into(),
            group1: "#0072B2".into(),
            tie: "#999999".into(),
        }
    }
}

impl Palette {
    pub fn color(&self, group: FillGroup) -> &str {
        match group {
            FillGroup::Group0 => &self.group0,
            FillGroup::Group1 => &self.group1,
            FillGroup::Tie => &self.tie,
        }
    }
}

const ROW_HEIGHT: f64 = 40.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// SVG 1.1 document for a layout. Output bytes depend only on the inputs.
pub fn svg_document(layout: &[LeafRectangle], palette: &Palette) -> String {
    let plot_width = layout
        .iter()
        .map(|r| r.x + r.width)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .filter(|w| *w > 0.0)
        .unwrap_or(DEFAULT_CANVAS_WIDTH);
    let rows = layout.iter().map(|r| r.row + 1).max().unwrap_or(1);
    let plot_height = rows as f64 * ROW_HEIGHT;
    let width = MARGIN_LEFT + plot_width + MARGIN_RIGHT;
    let height = MARGIN_TOP + plot_height + MARGIN_BOTTOM;
    let axis_y = MARGIN_TOP + plot_height;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.3}" height="{height:.3}" viewBox="0 0 {width:.3} {height:.3}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width:.3}" height="{height:.3}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<g id="leaves">"#);
    for r in layout {
        // Row 0 sits on the x-axis.
        let y = axis_y - (r.row + 1) as f64 * ROW_HEIGHT;
        let _ = writeln!(
            svg,
            r#"<rect id="leaf-{id}" x="{x:.3}" y="{y:.3}" width="{w:.3}" height="{h:.3}" fill="{fill}" fill-opacity="{o:.4}"><title>leaf {id}</title></rect>"#,
            id = r.leaf_id,
            x = MARGIN_LEFT + r.x,
            w = r.width,
            h = ROW_HEIGHT,
            fill = palette.color(r.group),
            o = r.opacity,
        );
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r##"<g id="axes" stroke="#333333" stroke-width="1">"##);
    let _ = writeln!(
        svg,
        r#"<line x1="{x:.3}" y1="{top:.3}" x2="{x:.3}" y2="{axis_y:.3}"/>"#,
        x = MARGIN_LEFT,
        top = MARGIN_TOP
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x1:.3}" y1="{axis_y:.3}" x2="{x2:.3}" y2="{axis_y:.3}"/>"#,
        x1 = MARGIN_LEFT,
        x2 = MARGIN_LEFT + plot_width
    );
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r##"<g id="labels" font-family="sans-serif" font-size="12" fill="#333333">"##
    );
    for row in 0..rows {
        let y = axis_y - (row as f64 + 0.5) * ROW_HEIGHT;
        let _ = writeln!(
            svg,
            r#"<text x="{x:.3}" y="{y:.3}" text-anchor="end" dominant-baseline="middle">{row}</text>"#,
            x = MARGIN_LEFT - 8.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x:.3}" y="{y:.3}" text-anchor="middle" transform="rotate(-90 {x:.3} {y:.3})">depth</text>"#,
        x = 20.0,
        y = MARGIN_TOP + plot_height / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{x:.3}" y="{y:.3}" text-anchor="middle">samples (grouped by leaf)</text>"#,
        x = MARGIN_LEFT + plot_width / 2.0,
        y = axis_y + 30.0
    );
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

pub fn render_svg(layout: &[LeafRectangle], palette: &Palette, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, svg_document(layout, palette)).map_err(|e| Error::io(path, e))
}
