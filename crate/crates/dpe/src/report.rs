//! CSV, JSON and SVG emitters. Column order is part of the format.

use std::fmt::Write;

use dpe_core::contribution::NormProfile;
use dpe_core::detection::DetectionReport;

use crate::error::{Result, RunError};

pub const DETECTION_HEADER: &str = "group,t,accuracy,rank";
pub const NORMS_HEADER: &str = "head,pair,score";
pub const BENCH_HEADER: &str = "engine,L,H,d,tile,mean_ms,std_ms,peak_bytes";
pub const EVAL_HEADER: &str = "baseline,L,accuracy,samples";

pub fn detection_csv(report: &DetectionReport) -> String {
    let mut out = format!("{DETECTION_HEADER}\n");
    for (g, (scores, ranks)) in report.scores.iter().zip(&report.ranks).enumerate() {
        for ((t, s), r) in report.grid.iter().zip(scores).zip(ranks) {
            writeln!(out, "{g},{t},{s},{r}").unwrap();
        }
    }
    out
}

pub fn detection_json(report: &DetectionReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn norms_csv(profile: &NormProfile) -> String {
    let mut out = format!("{NORMS_HEADER}\n");
    for h in 0..profile.num_heads() {
        for (j, s) in profile.head_scores(h).iter().enumerate() {
            writeln!(out, "{h},{j},{s}").unwrap();
        }
    }
    out
}

pub fn norms_json(profile: &NormProfile) -> String {
    let heads: Vec<&[f64]> = (0..profile.num_heads()).map(|h| profile.head_scores(h)).collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "num_heads": profile.num_heads(),
        "num_pairs": profile.num_pairs(),
        "sample_count": profile.sample_count(),
        "scores": heads,
    }))
    .expect("profile serializes")
}

fn check_header(text: &str, header: &str) -> Result<()> {
    match text.lines().next() {
        Some(first) if first.trim() == header => Ok(()),
        other => Err(RunError::Data(format!("expected CSV header {header:?}, found {other:?}"))),
    }
}

/// Read a norm profile back from [`norms_csv`] output. Rows may come in
/// any order but must cover every `(head, pair)` exactly once.
pub fn parse_norms_csv(text: &str) -> Result<NormProfile> {
    check_header(text, NORMS_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || RunError::Data(format!("line {}: malformed row {line:?}", i + 1));
        let mut fields = line.split(',');
        let head: usize = fields.next().and_then(|f| f.trim().parse().ok()).ok_or_else(bad)?;
        let pair: usize = fields.next().and_then(|f| f.trim().parse().ok()).ok_or_else(bad)?;
        let score: f64 = fields.next().and_then(|f| f.trim().parse().ok()).ok_or_else(bad)?;
        if fields.next().is_some() {
            return Err(bad());
        }
        rows.push((head, pair, score));
    }
    let heads = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let pairs = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if heads * pairs != rows.len() || rows.is_empty() {
        return Err(RunError::Data(format!(
            "{} rows do not cover {heads} heads x {pairs} pairs",
            rows.len()
        )));
    }
    let mut scores = vec![f64::NAN; heads * pairs];
    for (h, j, s) in rows {
        let slot = &mut scores[h * pairs + j];
        if !slot.is_nan() {
            return Err(RunError::Data(format!("duplicate row for head {h} pair {j}")));
        }
        *slot = s;
    }
    NormProfile::from_scores(heads, pairs, scores, 1).map_err(|e| RunError::Data(e.to_string()))
}

/// White-to-blue heatmap with optional per-cell labels.
pub fn svg_heatmap(title: &str, rows: &[String], cols: &[String], values: &[Vec<f64>], labels: Option<&[Vec<String>]>) -> String {
    let cell = if cols.len() > 32 { 10.0 } else { 48.0 };
    let (left, top) = (90.0, 50.0);
    let width = left + cell * cols.len() as f64 + 20.0;
    let height = top + cell * rows.len() as f64 + 40.0;
    let max = values.iter().flatten().cloned().fold(0.0f64, f64::max);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(out, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title)).unwrap();
    for (i, name) in rows.iter().enumerate() {
        let y = top + cell * (i as f64 + 0.5);
        writeln!(out, r#"<text x="{}" y="{y}" text-anchor="end" dominant-baseline="middle">{}</text>"#, left - 6.0, escape(name)).unwrap();
    }
    if cols.len() <= 32 {
        for (j, name) in cols.iter().enumerate() {
            let x = left + cell * (j as f64 + 0.5);
            writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, top - 8.0, escape(name)).unwrap();
        }
    }
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let level = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let shade = |hi: f64| (255.0 - level * (255.0 - hi)).round() as u8;
            let (x, y) = (left + cell * j as f64, top + cell * i as f64);
            writeln!(
                out,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#{:02x}{:02x}{:02x}" stroke="#ffffff"><title>{v}</title></rect>"##,
                shade(8.0),
                shade(81.0),
                shade(156.0)
            )
            .unwrap();
            if let Some(text) = labels.and_then(|l| l.get(i)).and_then(|r| r.get(j)) {
                let fill = if level > 0.55 { "#ffffff" } else { "#000000" };
                writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" fill="{fill}">{}</text>"#,
                    x + cell / 2.0,
                    y + cell / 2.0,
                    escape(text)
                )
                .unwrap();
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy heatmap with rank labels: groups as rows, detecting lengths
/// as columns.
pub fn detection_svg(report: &DetectionReport) -> String {
    let rows: Vec<String> = (0..report.num_groups()).map(|g| format!("group {g}")).collect();
    let cols: Vec<String> = report.grid.iter().map(|&t| short_length(t)).collect();
    let labels: Vec<Vec<String>> = report.ranks.iter().map(|r| r.iter().map(|x| x.to_string()).collect()).collect();
    svg_heatmap("accuracy by detecting length (labels: rank)", &rows, &cols, &report.scores, Some(&labels))
}

pub fn norms_svg(profile: &NormProfile) -> String {
    let rows: Vec<String> = (0..profile.num_heads()).map(|h| format!("head {h}")).collect();
    let cols: Vec<String> = (0..profile.num_pairs()).map(|j| j.to_string()).collect();
    let values: Vec<Vec<f64>> = (0..profile.num_heads()).map(|h| profile.head_scores(h).to_vec()).collect();
    svg_heatmap("mean 2-norm contribution per pair", &rows, &cols, &values, None)
}

fn short_length(t: u32) -> String {
    if t >= 1024 && t.is_multiple_of(1024) {
        format!("{}k", t / 1024)
    } else {
        t.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_round_trip() {
        let p = NormProfile::from_scores(2, 3, vec![0.0, 1.5, 2.25, 1e-9, 3.0, 0.1], 4).unwrap();
        let back = parse_norms_csv(&norms_csv(&p)).unwrap();
        assert_eq!(back.scores(), p.scores());
    }

    #[test]
    fn malformed_norms() {
        assert!(parse_norms_csv("head,pair\n0,0\n").is_err());
        assert!(parse_norms_csv("head,pair,score\n0,0,x\n").is_err());
        assert!(parse_norms_csv("head,pair,score\n0,0,1\n0,0,1\n").is_err());
        assert!(parse_norms_csv("head,pair,score\n0,1,1\n").is_err());
        assert!(parse_norms_csv("head,pair,score\n").is_err());
    }

    #[test]
    fn lengths_are_abbreviated() {
        assert_eq!(short_length(131072), "128k");
        assert_eq!(short_length(512), "512");
    }
}
