//! Loss curves and metric tables rendered from the CSV outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::{LOSS_CSV, METRICS_CSV, REFINE_LOSS_CSV};

pub const REPORT_MD: &str = "report.md";

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(CliError::Data(format!(
                "{} row {} has {} fields, header has {}",
                path.display(),
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn numbers(t: &Table, col: usize, path: &Path) -> Result<Vec<f64>> {
    t.rows
        .iter()
        .map(|r| {
            r[col]
                .parse::<f64>()
                .map_err(|_| CliError::Data(format!("{}: `{}` is not a number", path.display(), r[col])))
        })
        .collect()
}

/// Line chart of every series against `x`, as a standalone SVG document.
pub fn line_chart(title: &str, x_label: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (720.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let finite = |v: &&f64| v.is_finite();
    let x_min = x.iter().filter(finite).cloned().fold(f64::INFINITY, f64::min);
    let x_max = x.iter().filter(finite).cloned().fold(f64::NEG_INFINITY, f64::max);
    let all = series.iter().flat_map(|(_, v)| v.iter()).filter(finite);
    let y_min = all.clone().cloned().fold(f64::INFINITY, f64::min);
    let y_max = all.cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let (xs, ys) = (span(x_min, x_max), span(y_min, y_max));
    let px = |v: f64| left + (v - x_min) / xs * pw;
    let py = |v: f64| top + ph - (v - y_min) / ys * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    if x.is_empty() || !y_min.is_finite() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, left + pw / 2.0, top + ph / 2.0);
    } else {
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = y_min + f * ys;
            let xv = x_min + f * xs;
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, py(yv) + 4.0, tick(yv));
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(xv), top + ph + 18.0, tick(xv));
        }
        for (i, (name, ys)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = x
                .iter()
                .zip(ys)
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .map(|(&a, &b)| format!("{:.2},{:.2}", px(a), py(b)))
                .collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
            let ly = top + 16.0 * i as f64 + 10.0;
            let lx = left + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 18.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(name));
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, escape(x_label));
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn loss_chart(path: &Path, title: &str) -> Result<(String, Vec<(String, f64)>)> {
    let t = read_csv(path)?;
    let step = t
        .header
        .iter()
        .position(|h| h == "step")
        .ok_or_else(|| CliError::Data(format!("{} has no step column", path.display())))?;
    let x = numbers(&t, step, path)?;
    let mut series = Vec::new();
    for (i, name) in t.header.iter().enumerate() {
        if name != "step" && name != "epoch" {
            series.push((name.clone(), numbers(&t, i, path)?));
        }
    }
    let last = series.iter().filter_map(|(n, v)| v.last().map(|l| (n.clone(), *l))).collect();
    Ok((line_chart(title, "step", &x, &series), last))
}

/// Mean of every metric column per region, skipping absent values.
pub fn region_means(t: &Table) -> Vec<(String, usize, Vec<Option<f64>>)> {
    let mut out: Vec<(String, usize, Vec<(f64, usize)>)> = Vec::new();
    for row in &t.rows {
        let region = &row[1];
        let idx = match out.iter().position(|(r, _, _)| r == region) {
            Some(i) => i,
            None => {
                out.push((region.clone(), 0, vec![(0.0, 0); t.header.len() - 2]));
                out.len() - 1
            }
        };
        out[idx].1 += 1;
        for (acc, v) in out[idx].2.iter_mut().zip(&row[2..]) {
            if let Ok(x) = v.parse::<f64>() {
                acc.0 += x;
                acc.1 += 1;
            }
        }
    }
    out.into_iter()
        .map(|(r, n, sums)| (r, n, sums.into_iter().map(|(s, c)| (c > 0).then(|| s / c as f64)).collect()))
        .collect()
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

/// Writes `loss.svg`, `refine_loss.svg` and `report.md` into `out` for
/// whichever CSVs exist in `input`.
pub fn render(input: &Path, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut md = String::from("# Run report\n\n");
    let mut found = false;
    for (csv, svg, title) in [
        (LOSS_CSV, "loss.svg", "Adversarial training losses"),
        (REFINE_LOSS_CSV, "refine_loss.svg", "Refinement loss"),
    ] {
        let path = input.join(csv);
        if !path.exists() {
            continue;
        }
        found = true;
        let (chart, last) = loss_chart(&path, title)?;
        fs::write(out.join(svg), chart)?;
        let _ = writeln!(md, "## {title}\n\n![{title}]({svg})\n");
        let rows: Vec<Vec<String>> = last.iter().map(|(n, v)| vec![n.clone(), format!("{v:.6}")]).collect();
        md.push_str(&markdown_table(&["final value".into(), "".into()], &rows));
        md.push('\n');
    }
    let metrics = input.join(METRICS_CSV);
    if metrics.exists() {
        found = true;
        let t = read_csv(&metrics)?;
        if t.header.len() < 3 || t.header[0] != "patient" || t.header[1] != "region" {
            return Err(CliError::Data(format!("{} is not a metric table", metrics.display())));
        }
        md.push_str("## Metrics per class (mean over patients)\n\n");
        let mut header = vec!["region".to_string(), "patients".to_string()];
        header.extend(t.header[2..].iter().cloned());
        let rows: Vec<Vec<String>> = region_means(&t)
            .into_iter()
            .map(|(r, n, means)| {
                let mut row = vec![r, n.to_string()];
                row.extend(means.iter().map(|m| m.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))));
                row
            })
            .collect();
        md.push_str(&markdown_table(&header, &rows));
        md.push_str("\n## Metrics per patient\n\n");
        md.push_str(&markdown_table(&t.header, &t.rows));
    }
    if !found {
        return Err(CliError::Data(format!("no CSV outputs found in {}", input.display())));
    }
    fs::write(out.join(REPORT_MD), md)?;
    Ok(())
}
