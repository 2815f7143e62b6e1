//! SVG line charts of aggregate tables and the matching CSV reader.

use std::fmt::Write as _;
use std::path::Path;

use super::{write_aggregate_csv, AggregateRow, Method, AGGREGATE_HEADER};
use crate::error::{Error, Result};

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 40.0;
const LEGEND_H: f64 = 24.0;

fn color(m: Method) -> &'static str {
    match m {
        Method::Target => "#1f77b4",
        Method::Oracle => "#d62728",
        Method::Naive => "#2ca02c",
        Method::Detect => "#9467bd",
    }
}

/// Writes an SVG of mean coefficient error against the number of informative
/// sources, one panel per `(dist, alpha, h)` and one series per method, with
/// ±1 standard-error bars. The aggregate CSV is written next to it with a
/// `.csv` extension.
pub fn emit_plot(rows: &[AggregateRow], svg_path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    let svg_path = svg_path.as_ref();

    let mut panels: Vec<(&str, f64, f64)> = Vec::new();
    for r in rows {
        let key = (r.dist.name(), r.alpha, r.h);
        if !panels.iter().any(|p| p.0 == key.0 && p.1 == key.1 && p.2 == key.2) {
            panels.push(key);
        }
    }
    panels.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();

    let width = PANEL_W * panels.len() as f64;
    let height = PANEL_H + LEGEND_H;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for (i, &(dist, alpha, h)) in panels.iter().enumerate() {
        let in_panel: Vec<&AggregateRow> = rows
            .iter()
            .filter(|r| r.dist.name() == dist && r.alpha == alpha && r.h == h && r.mean_coef_mse.is_finite())
            .collect();
        let x0 = i as f64 * PANEL_W + MARGIN_L;
        let pw = PANEL_W - MARGIN_L - MARGIN_R;
        let ph = PANEL_H - MARGIN_T - MARGIN_B;
        let (kmin, kmax) = in_panel.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            let k = r.k_informative as f64;
            (lo.min(k), hi.max(k))
        });
        let ymax = in_panel
            .iter()
            .map(|r| r.mean_coef_mse + r.se_coef_mse.max(0.0))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE)
            * 1.05;
        let sx = |k: f64| {
            if kmax > kmin {
                x0 + (k - kmin) / (kmax - kmin) * pw
            } else {
                x0 + pw / 2.0
            }
        };
        let sy = |v: f64| MARGIN_T + ph - v / ymax * ph;

        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="16" text-anchor="middle">h = {h}, {dist}, alpha = {alpha}</text>"##,
            x0 + pw / 2.0
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.1}" y="{MARGIN_T:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##
        );
        for t in 0..=4 {
            let v = ymax * t as f64 / 4.0;
            let y = sy(v);
            let _ = writeln!(
                svg,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"##,
                x0 - 4.0,
                y + 4.0,
                v
            );
        }
        let mut ks: Vec<usize> = in_panel.iter().map(|r| r.k_informative).collect();
        ks.sort_unstable();
        ks.dedup();
        for k in &ks {
            let _ = writeln!(
                svg,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{k}</text>"##,
                sx(*k as f64),
                MARGIN_T + ph + 14.0
            );
        }
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">informative sources</text>"##,
            x0 + pw / 2.0,
            MARGIN_T + ph + 30.0
        );

        for &m in &methods {
            let mut pts: Vec<&AggregateRow> = in_panel.iter().copied().filter(|r| r.method == m).collect();
            pts.sort_by_key(|r| r.k_informative);
            if pts.is_empty() {
                continue;
            }
            let c = color(m);
            if pts.len() > 1 {
                let coords: Vec<String> = pts
                    .iter()
                    .map(|r| format!("{:.1},{:.1}", sx(r.k_informative as f64), sy(r.mean_coef_mse)))
                    .collect();
                let _ = writeln!(
                    svg,
                    r##"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"##,
                    coords.join(" ")
                );
            }
            for r in pts {
                let x = sx(r.k_informative as f64);
                let se = if r.se_coef_mse.is_finite() { r.se_coef_mse } else { 0.0 };
                let _ = writeln!(
                    svg,
                    r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{c}"/>"##,
                    sy((r.mean_coef_mse - se).max(0.0)),
                    sy(r.mean_coef_mse + se)
                );
                let _ = writeln!(
                    svg,
                    r##"<circle cx="{x:.1}" cy="{:.1}" r="3" fill="{c}"/>"##,
                    sy(r.mean_coef_mse)
                );
            }
        }
    }

    for (i, &m) in methods.iter().enumerate() {
        let x = MARGIN_L + i as f64 * 90.0;
        let y = PANEL_H + 8.0;
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.1}" y="{y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"##,
            color(m),
            x + 16.0,
            y + 10.0,
            m.name()
        );
    }
    svg.push_str("</svg>\n");

    write_aggregate_csv(rows, svg_path.with_extension("csv"))?;
    std::fs::write(svg_path, svg)?;
    Ok(())
}

/// Reads a table written by [`write_aggregate_csv`].
pub fn read_aggregate_csv(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    let path = path.as_ref();
    let bad = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != AGGREGATE_HEADER {
        return Err(bad("unexpected aggregate header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
    let count = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count `{s}`")));
    let optional = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(AggregateRow {
            method: rec[0].parse()?,
            h: num(&rec[1])?,
            k_informative: count(&rec[2])?,
            dist: rec[3].parse()?,
            alpha: num(&rec[4])?,
            replications: count(&rec[5])?,
            nonconverged: count(&rec[6])?,
            mean_coef_mse: num(&rec[7])?,
            se_coef_mse: num(&rec[8])?,
            mean_precision: optional(&rec[9])?,
            mean_recall: optional(&rec[10])?,
        });
    }
    Ok(out)
}
