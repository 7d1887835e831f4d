//! Markdown tables and a long-format CSV from `rounds.csv` files.

use std::fmt::Write as _;

use traverse_da::eval::{BinMetrics, MetricReport};
use traverse_da::geometry::ClassId;
use traverse_da::selftrain::ROUNDS_CSV_HEADER;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub class: String,
    pub bin: String,
    pub values: [Option<f64>; 5],
}

/// One self-training run. `toggles` is `[PO-F, FB-F, FB-S]` when known.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInput {
    pub name: String,
    pub toggles: Option<[bool; 3]>,
    pub rows: Vec<RoundRow>,
}

pub fn column_index(name: &str) -> Option<usize> {
    BinMetrics::COLUMNS.iter().position(|c| *c == name)
}

pub fn parse_rounds_csv(text: &str) -> Result<Vec<RoundRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == ROUNDS_CSV_HEADER => {}
        Some(h) => return Err(format!("unexpected header {h:?}")),
        None => return Err("empty file".into()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let line_no = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!(
                "line {line_no}: expected 8 fields, got {}",
                f.len()
            ));
        }
        let round = f[0]
            .parse()
            .map_err(|_| format!("line {line_no}: bad round {:?}", f[0]))?;
        let mut values = [None; 5];
        for (k, v) in f[3..].iter().enumerate() {
            values[k] = match *v {
                "NA" => None,
                s => Some(
                    s.parse::<f64>()
                        .map_err(|_| format!("line {line_no}: bad value {s:?}"))?,
                ),
            };
        }
        rows.push(RoundRow {
            round,
            class: f[1].to_string(),
            bin: f[2].to_string(),
            values,
        });
    }
    Ok(rows)
}

/// Narrow bins by upper edge, then the wide ones; `0-30, 30-50, 50-80, 0-80`.
pub fn order_bins<'a>(bins: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for b in bins {
        if !out.iter().any(|o| o == b) {
            out.push(b.to_string());
        }
    }
    let key = |b: &str| -> (f64, f64) {
        let mut parts = b.splitn(2, '-');
        let lo = parts.next().and_then(|x| x.parse::<f64>().ok());
        let hi = parts.next().and_then(|x| x.parse::<f64>().ok());
        match (lo, hi) {
            (Some(lo), Some(hi)) => (hi, -lo),
            _ => (f64::INFINITY, 0.0),
        }
    };
    out.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(a.cmp(b))
    });
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

fn mark(t: Option<[bool; 3]>, k: usize) -> &'static str {
    match t {
        Some(t) if t[k] => "x",
        Some(_) => "",
        None => "?",
    }
}

fn header(out: &mut String, first: &[&str], bins: &[String]) {
    let cols: Vec<&str> = first
        .iter()
        .copied()
        .chain(bins.iter().map(String::as_str))
        .collect();
    let _ = writeln!(out, "| {} |", cols.join(" | "));
    let _ = writeln!(out, "|{}", "---:|".repeat(cols.len()));
}

fn value(rows: &[RoundRow], round: usize, class: &str, bin: &str, col: usize) -> Option<f64> {
    rows.iter()
        .find(|r| r.round == round && r.class == class && r.bin == bin)
        .and_then(|r| r.values[col])
}

fn rounds_of(rows: &[RoundRow]) -> Vec<usize> {
    let mut r: Vec<usize> = rows.iter().map(|r| r.round).collect();
    r.sort_unstable();
    r.dedup();
    r
}

/// Per-run round tables for each class, a final-round comparison when
/// several runs are given, and one table per extra metrics file. AP values
/// are shown in percent.
pub fn render(runs: &[RunInput], metrics: &[(String, MetricReport)], col: usize) -> String {
    let column = BinMetrics::COLUMNS[col];
    let mut out = String::from("# Self-training report\n");
    for run in runs {
        let bins = order_bins(run.rows.iter().map(|r| r.bin.as_str()));
        let _ = writeln!(
            out,
            "\n## {} (PO-F: {}, FB-F: {}, FB-S: {})",
            run.name,
            mark(run.toggles, 0),
            mark(run.toggles, 1),
            mark(run.toggles, 2)
        );
        if run.rows.is_empty() {
            out.push_str("\nNo evaluated rounds.\n");
            continue;
        }
        for class in ClassId::ALL.map(ClassId::name) {
            if !run.rows.iter().any(|r| r.class == class) {
                continue;
            }
            let _ = writeln!(out, "\n### {class} ({column})\n");
            header(&mut out, &["Round"], &bins);
            for round in rounds_of(&run.rows) {
                let cells: Vec<String> = bins
                    .iter()
                    .map(|b| pct(value(&run.rows, round, class, b, col)))
                    .collect();
                let _ = writeln!(out, "| {round} | {} |", cells.join(" | "));
            }
        }
    }

    if runs.len() > 1 {
        let bins = order_bins(
            runs.iter()
                .flat_map(|r| r.rows.iter().map(|x| x.bin.as_str())),
        );
        let _ = writeln!(out, "\n## Final round ({column})");
        for class in ClassId::ALL.map(ClassId::name) {
            let _ = writeln!(out, "\n### {class}\n");
            header(&mut out, &["Run", "PO-F", "FB-F", "FB-S"], &bins);
            for run in runs {
                let last = rounds_of(&run.rows).last().copied();
                let cells: Vec<String> = bins
                    .iter()
                    .map(|b| pct(last.and_then(|k| value(&run.rows, k, class, b, col))))
                    .collect();
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    run.name,
                    mark(run.toggles, 0),
                    mark(run.toggles, 1),
                    mark(run.toggles, 2),
                    cells.join(" | ")
                );
            }
        }
    }

    for (name, report) in metrics {
        let _ = writeln!(out, "\n## {name}");
        out.push_str(&metrics_markdown(report, &[]));
    }
    out
}

/// One table per class: a row per metric column, a column per depth bin.
/// Bins missing from `bin_order` are appended in the standard order.
pub fn metrics_markdown(report: &MetricReport, bin_order: &[String]) -> String {
    let mut out = String::new();
    for (class, bins) in &report.classes {
        let order = if bin_order.is_empty() {
            order_bins(bins.keys().map(String::as_str))
        } else {
            bin_order.to_vec()
        };
        let _ = writeln!(out, "\n### {class}\n");
        header(&mut out, &["Metric"], &order);
        for (k, name) in BinMetrics::COLUMNS.iter().enumerate() {
            let cells: Vec<String> = order
                .iter()
                .map(|b| pct(bins.get(b).and_then(|m| m.values()[k])))
                .collect();
            let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
        }
    }
    out
}

fn flag(t: Option<[bool; 3]>, k: usize) -> &'static str {
    match t {
        Some(t) if t[k] => "1",
        Some(_) => "0",
        None => "NA",
    }
}

/// Long format, one row per run, round, class, and bin.
pub fn plot_csv(runs: &[RunInput], col: usize) -> String {
    let mut out = String::from("run,po_f,fb_f,fb_s,round,class,depth_bin,value\n");
    for run in runs {
        for r in &run.rows {
            let v = r.values[col].map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                run.name,
                flag(run.toggles, 0),
                flag(run.toggles, 1),
                flag(run.toggles, 2),
                r.round,
                r.class,
                r.bin,
                v
            );
        }
    }
    out
}
