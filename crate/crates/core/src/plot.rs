//! SVG learning curves and omega-error curves from metrics CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::metrics::MetricsLog;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// A labelled metrics file.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub log: MetricsLog,
}

/// Every `metrics.csv` in `dir` or its direct subdirectories, labelled by
/// the directory name and sorted by label.
pub fn find_runs(dir: &Path) -> Result<Vec<Series>> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    let direct = dir.join("metrics.csv");
    if direct.is_file() {
        let label = dir
            .file_name()
            .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
        files.push((label, direct));
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let candidate = path.join("metrics.csv");
        if path.is_dir() && candidate.is_file() {
            let label = path
                .file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            files.push((label, candidate));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CoreError::Config(format!(
            "no metrics.csv found in {} or its subdirectories",
            dir.display()
        )));
    }
    files
        .into_iter()
        .map(|(label, path)| {
            Ok(Series {
                label,
                log: MetricsLog::read(&path)?,
            })
        })
        .collect()
}

struct Panel<'a> {
    title: &'a str,
    y_label: &'a str,
    /// `(x, y, optional half-width band)` per series.
    lines: Vec<(String, Vec<(f64, f64, f64)>)>,
}

fn bounds(lines: &[(String, Vec<(f64, f64, f64)>)]) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in lines {
        for &(x, y, e) in pts {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
            b.2 = b.2.min(y - e);
            b.3 = b.3.max(y + e);
        }
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if b.1 <= b.0 {
        b.1 = b.0 + 1.0;
    }
    if b.3 <= b.2 {
        b.3 = b.2 + 1.0;
    }
    b
}

fn draw_panel(svg: &mut String, panel: &Panel<'_>, ox: f64, oy: f64, w: f64, h: f64) {
    let (x0, x1, y0, y1) = bounds(&panel.lines);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 40.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| ox + left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| oy + top + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let _ = writeln!(
        svg,
        r##"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##,
        ox + left,
        oy + top
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        ox + w / 2.0,
        oy + 18.0,
        panel.title
    );
    for i in 0..=4 {
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.3}</text>"#,
            ox + left - 4.0,
            sy(fy) + 3.0,
            fy
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{:.0}</text>"#,
            sx(fx),
            oy + h - bottom + 14.0,
            fx
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">env steps</text>"#,
        ox + left + pw / 2.0,
        oy + h - 6.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        ox + 14.0,
        oy + top + ph / 2.0,
        ox + 14.0,
        oy + top + ph / 2.0,
        panel.y_label
    );
    for (i, (label, pts)) in panel.lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if pts.iter().any(|p| p.2 > 0.0) {
            let mut band = String::new();
            for &(x, y, e) in pts {
                let _ = write!(band, "{:.1},{:.1} ", sx(x), sy(y + e));
            }
            for &(x, y, e) in pts.iter().rev() {
                let _ = write!(band, "{:.1},{:.1} ", sx(x), sy(y - e));
            }
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                band.trim_end()
            );
        }
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y, _)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        let ly = oy + top + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11" fill="{color}">{label}</text>"#,
            ox + left + 8.0
        );
    }
}

/// Two stacked panels: evaluation return (mean ± std band) and omega MSE.
pub fn render_svg(series: &[Series]) -> String {
    let returns = Panel {
        title: "Evaluation return",
        y_label: "return",
        lines: series
            .iter()
            .map(|s| {
                let pts = s
                    .log
                    .rows()
                    .iter()
                    .filter(|r| r.eval_mean.is_finite())
                    .map(|r| (r.env_steps as f64, r.eval_mean, r.eval_std.max(0.0)))
                    .collect();
                (s.label.clone(), pts)
            })
            .collect(),
    };
    let omega = Panel {
        title: "Omega prediction error",
        y_label: "omega MSE",
        lines: series
            .iter()
            .map(|s| {
                let pts: Vec<_> = s
                    .log
                    .rows()
                    .iter()
                    .filter(|r| r.omega_mse.is_finite())
                    .map(|r| (r.env_steps as f64, r.omega_mse, 0.0))
                    .collect();
                (s.label.clone(), pts)
            })
            .filter(|(_, p)| !p.is_empty())
            .collect(),
    };
    let (w, h) = (720.0, 320.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" font-family="sans-serif">"#,
        2.0 * h
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    draw_panel(&mut svg, &returns, 0.0, 0.0, w, h);
    draw_panel(&mut svg, &omega, 0.0, h, w, h);
    svg.push_str("</svg>\n");
    svg
}

/// Render every run found under `dir` into `out`.
pub fn plot_dir(dir: &Path, out: &Path) -> Result<usize> {
    let runs = find_runs(dir)?;
    std::fs::write(out, render_svg(&runs))?;
    Ok(runs.len())
}
