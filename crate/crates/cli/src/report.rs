//! Tab-separated metrics report: a `# drunet-lab v1` banner, comment lines
//! (timestamp, configuration echo), one row per image and class, a
//! `## summary` block and an optional `## wilcoxon` block.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use drunet_core::metrics::{mean_metrics, wilcoxon_signed_rank, ClassMetrics};
use drunet_core::{Error, Result};

pub const BANNER: &str = "# drunet-lab v1";
pub const HEADER: &str = "image_id\tclass\tdice\tjaccard\tprecision\trecall";
pub const METRICS: [&str; 4] = ["dice", "jaccard", "precision", "recall"];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub image_id: String,
    pub class: usize,
    /// In [`METRICS`] order.
    pub values: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilcoxonRow {
    pub class: usize,
    pub metric: &'static str,
    pub mean_difference: f64,
    pub statistic: f64,
    pub n_effective: usize,
    pub p_value: f64,
    pub method: &'static str,
}

pub fn rows_from_metrics(ids: &[String], per_image: &[Vec<ClassMetrics>]) -> Vec<ReportRow> {
    ids.iter()
        .zip(per_image)
        .flat_map(|(id, ms)| {
            ms.iter().map(move |m| ReportRow {
                image_id: id.clone(),
                class: m.class,
                values: [m.dice, m.jaccard, m.precision, m.recall],
            })
        })
        .collect()
}

/// Values use the shortest representation that parses back to the same
/// f64, so a reloaded report compares exactly.
pub fn render(
    timestamp: &str,
    config_echo: &str,
    rows: &[ReportRow],
    per_image: &[Vec<ClassMetrics>],
    comparison: Option<(&str, &[WilcoxonRow])>,
) -> String {
    let mut out = format!("{BANNER}\n# generated {timestamp}\n");
    for line in config_echo.lines() {
        let _ = writeln!(out, "# config {line}");
    }
    let _ = writeln!(out, "{HEADER}");
    for r in rows {
        let [d, j, p, rc] = r.values;
        let _ = writeln!(out, "{}\t{}\t{d}\t{j}\t{p}\t{rc}", r.image_id, r.class);
    }
    let _ = writeln!(out, "## summary\nclass\timages\tdice\tjaccard\tprecision\trecall");
    for s in mean_metrics(per_image) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.class, s.images, s.dice, s.jaccard, s.precision, s.recall
        );
    }
    if let Some((other, tests)) = comparison {
        let _ = writeln!(out, "## wilcoxon {other}");
        let _ = writeln!(
            out,
            "class\tmetric\tmean_difference\tstatistic\tn_effective\tp_value\tmethod"
        );
        for t in tests {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.class, t.metric, t.mean_difference, t.statistic, t.n_effective, t.p_value, t.method
            );
        }
    }
    out
}

/// Reads the per-image rows of a report, ignoring the summary and any
/// comparison block.
pub fn parse_rows(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, BANNER)) => {}
        _ => return Err(Error::Data(format!("report does not start with {BANNER:?}"))),
    }
    let mut header_seen = false;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.starts_with("## ") {
            break;
        }
        if !header_seen {
            if line == HEADER {
                header_seen = true;
            } else if !line.starts_with('#') {
                return Err(Error::Data(format!("report line {line_no}: expected column header")));
            }
            continue;
        }
        let bad = || Error::Data(format!("report line {line_no}: malformed row {line:?}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let mut values = [0.0; 4];
        for (v, s) in values.iter_mut().zip(&f[2..]) {
            *v = s.parse().map_err(|_| bad())?;
        }
        rows.push(ReportRow {
            image_id: f[0].to_string(),
            class: f[1].parse().map_err(|_| bad())?,
            values,
        });
    }
    if !header_seen {
        return Err(Error::Data("report has no column header".into()));
    }
    Ok(rows)
}

/// Paired signed-rank test of `a − b` for every class and metric column.
/// Rows must pair up one-to-one by image id and class.
pub fn compare(a: &[ReportRow], b: &[ReportRow]) -> Result<Vec<WilcoxonRow>> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "reports have different lengths: {} vs {} rows",
            a.len(),
            b.len()
        )));
    }
    if let Some((x, y)) = a
        .iter()
        .zip(b)
        .find(|(x, y)| (&x.image_id, x.class) != (&y.image_id, y.class))
    {
        return Err(Error::Data(format!(
            "reports do not pair up: ({}, class {}) vs ({}, class {})",
            x.image_id, x.class, y.image_id, y.class
        )));
    }
    let classes: BTreeSet<usize> = a.iter().map(|r| r.class).collect();
    let mut out = Vec::new();
    for &class in &classes {
        let pairs: Vec<(&ReportRow, &ReportRow)> = a.iter().zip(b).filter(|(x, _)| x.class == class).collect();
        for (m, &metric) in METRICS.iter().enumerate() {
            let xs: Vec<f64> = pairs.iter().map(|(x, _)| x.values[m]).collect();
            let ys: Vec<f64> = pairs.iter().map(|(_, y)| y.values[m]).collect();
            let w = wilcoxon_signed_rank(&xs, &ys)?;
            let mean_difference = xs.iter().zip(&ys).map(|(x, y)| x - y).sum::<f64>() / xs.len() as f64;
            out.push(WilcoxonRow {
                class,
                metric,
                mean_difference,
                statistic: w.statistic,
                n_effective: w.n_effective,
                p_value: w.p_value,
                method: w.method.as_str(),
            });
        }
    }
    Ok(out)
}
