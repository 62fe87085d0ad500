//! Plain-text tables in the layouts used by the reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use affgrasp_core::learning::{EsmEntry, HeatmapSummary};
use affgrasp_core::synthdata::{AffordanceLabel, Category};
use serde::Serialize;

pub const SUMMARY_HEADER: [&str; 4] = ["Category", "Affordances", "Objects", "Views"];
pub const ESM_HEADER: [&str; 6] = ["Object", "Grasp", "Wrap/Cut", "Pour", "Contain", "Wear"];
pub const ABLATION_HEADER: [&str; 6] = ["Point feature", "Edge feature", "MHSA module", "AP", "AUC", "IoU"];
pub const SWEEP_CSV_HEADER: &str = "latent_len,esm";
pub const ABLATION_CSV_HEADER: &str = "point,edge,mhsa,ap,auc,iou";

/// A markdown-style table with a header row and a separator.
pub fn table<S: AsRef<str>>(header: &[S], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.as_ref().len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.iter().map(|h| h.as_ref()).collect());
    out += &format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub category: Category,
    pub affordances: Vec<AffordanceLabel>,
    pub objects: usize,
    pub views: usize,
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                capitalized(r.category.name()),
                r.affordances.iter().map(|a| a.name()).collect::<Vec<_>>().join(", "),
                r.objects.to_string(),
                r.views.to_string(),
            ]
        })
        .collect();
    table(&SUMMARY_HEADER, &body)
}

fn esm_column(task: AffordanceLabel) -> usize {
    match task {
        AffordanceLabel::Grasp => 1,
        AffordanceLabel::Wrap | AffordanceLabel::CutStab => 2,
        AffordanceLabel::Pour => 3,
        AffordanceLabel::Contain => 4,
        AffordanceLabel::Wear => 5,
    }
}

/// ESM per object (rows) and task (columns); "-" where a task has no
/// ground truth. The last row averages each column.
pub fn esm_table(entries: &[EsmEntry]) -> String {
    let mut by_object: BTreeMap<&str, [Option<f64>; 6]> = BTreeMap::new();
    for e in entries {
        by_object.entry(&e.object_id).or_default()[esm_column(e.task)] = Some(e.esm);
    }
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut rows: Vec<Vec<String>> = by_object
        .iter()
        .map(|(id, cols)| std::iter::once(id.to_string()).chain(cols[1..].iter().map(|&v| fmt(v))).collect())
        .collect();
    let mean = |c: usize| {
        let vals: Vec<f64> = by_object.values().filter_map(|cols| cols[c]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    rows.push(std::iter::once("Average".to_string()).chain((1..6).map(|c| fmt(mean(c)))).collect());
    table(&ESM_HEADER, &rows)
}

/// Mean ESM per category and overall, one row per generator.
pub fn comparison_table(methods: &[(&str, &[EsmEntry])], categories: &[Category]) -> String {
    let header: Vec<String> =
        std::iter::once("Method".to_string()).chain(categories.iter().map(|c| capitalized(c.name()))).chain(["Average".to_string()]).collect();
    let rows: Vec<Vec<String>> = methods
        .iter()
        .map(|(name, entries)| {
            let mut row = vec![name.to_string()];
            for c in categories {
                let v: Vec<f64> = entries.iter().filter(|e| e.category == *c).map(|e| e.esm).collect();
                row.push(if v.is_empty() { "-".into() } else { format!("{:.4}", v.iter().sum::<f64>() / v.len() as f64) });
            }
            let all: Vec<f64> = entries.iter().map(|e| e.esm).collect();
            row.push(if all.is_empty() { "-".into() } else { format!("{:.4}", all.iter().sum::<f64>() / all.len() as f64) });
            row
        })
        .collect();
    table(&header, &rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub point: bool,
    pub edge: bool,
    pub mhsa: bool,
    pub metrics: HeatmapSummary,
}

fn mark(b: bool) -> String {
    if b { "✓" } else { "✗" }.to_string()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                mark(r.point),
                mark(r.edge),
                mark(r.mhsa),
                format!("{:.4}", r.metrics.ap),
                format!("{:.4}", r.metrics.auc),
                format!("{:.4}", r.metrics.iou),
            ]
        })
        .collect();
    table(&ABLATION_HEADER, &body)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.point, r.edge, r.mhsa, r.metrics.ap, r.metrics.auc, r.metrics.iou).expect("writing to a string");
    }
    out
}

pub fn sweep_csv(rows: &[(usize, f64)]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for (l, e) in rows {
        writeln!(out, "{l},{e}").expect("writing to a string");
    }
    out
}

/// Header cells of the first table in `text`.
pub fn header_of(text: &str) -> Vec<String> {
    text.lines().next().unwrap_or("").trim_matches('|').split('|').map(|c| c.trim().to_string()).collect()
}
