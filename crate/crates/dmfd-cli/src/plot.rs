//! Learning-curve aggregation and a self-contained SVG renderer.
//!
//! Inputs are `label=path` pairs (or bare paths, labelled by their stem)
//! where each path is a `metrics.csv` or a directory searched recursively
//! for them. Per-label runs are aggregated into mean ± std curves, written
//! both as `curves.csv` and as `curves.svg`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dmfd_core::metrics::{aggregate_curves, parse_metrics_csv, CurvePoint};

use crate::cli::PlotArgs;
use crate::errors::CliError;

/// One plotted series: a label and its aggregated curve.
pub struct Series {
    pub label: String,
    pub curve: Vec<CurvePoint>,
}

fn split_label(input: &str) -> (String, PathBuf) {
    if let Some((label, path)) = input.split_once('=') {
        (label.to_string(), PathBuf::from(path))
    } else {
        let path = PathBuf::from(input);
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| input.to_string());
        (label, path)
    }
}

/// Collects `metrics.csv` files under a path: the file itself, or a
/// recursive directory search, sorted for determinism.
fn collect_metrics_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::Config(format!("no such path: {}", path.display())));
    }
    let mut found = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
                found.push(p);
            }
        }
    }
    found.sort();
    Ok(found)
}

fn load_series(label: String, path: &Path) -> Result<Series, CliError> {
    let files = collect_metrics_files(path)?;
    if files.is_empty() {
        return Err(CliError::Config(format!(
            "{}: no metrics.csv found under {}",
            label,
            path.display()
        )));
    }
    let mut runs = Vec::new();
    for file in &files {
        let text = std::fs::read_to_string(file)?;
        let rows = parse_metrics_csv(&text)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", file.display())))?;
        if rows.is_empty() {
            eprintln!("warning: {} has no rows, skipping", file.display());
            continue;
        }
        runs.push(
            rows.iter()
                .map(|r| (r.step, r.mean_p_hat))
                .collect::<Vec<_>>(),
        );
    }
    if runs.is_empty() {
        return Err(CliError::Runtime(format!(
            "{label}: every metrics file was empty"
        )));
    }
    let (curve, resampled) = aggregate_curves(&runs);
    if resampled {
        eprintln!(
            "warning: {label}: runs have mismatched step grids; \
             resampled onto the coarsest"
        );
    }
    Ok(Series { label, curve })
}

pub fn curves_csv(series: &[Series]) -> String {
    let mut out = String::from("label,step,mean,mean_minus_std,mean_plus_std\n");
    for s in series {
        for p in &s.curve {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.label,
                p.step,
                p.mean,
                p.mean - p.std,
                p.mean + p.std
            )
            .unwrap();
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 48.0;

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm <= 1.0 {
            1.0
        } else if norm <= 2.0 {
            2.0
        } else if norm <= 5.0 {
            5.0
        } else {
            10.0
        };
    let mut ticks = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + step * 1e-9 {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.abs() >= 1000.0 && v.abs().fract() == 0.0 {
        format!("{}k", v / 1000.0)
    } else {
        format!("{v}")
    }
}

/// Renders the aggregated curves to a standalone SVG string: a translucent
/// ±σ band plus a mean line per series, with axes and a legend.
pub fn curves_svg(series: &[Series]) -> String {
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for p in &s.curve {
            x_lo = x_lo.min(p.step as f64);
            x_hi = x_hi.max(p.step as f64);
            y_lo = y_lo.min(p.mean - p.std);
            y_hi = y_hi.max(p.mean + p.std);
        }
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    let pad = ((y_hi - y_lo) * 0.05).max(0.01);
    y_lo -= pad;
    y_hi += pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = move |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = move |y: f64| MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    svg.push('\n');
    writeln!(
        svg,
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
    )
    .unwrap();

    // Grid and axis ticks.
    for t in nice_ticks(x_lo, x_hi, 6) {
        let x = sx(t);
        writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        )
        .unwrap();
        writeln!(
            svg,
            r##"<text x="{x:.1}" y="{:.1}" font-size="12" text-anchor="middle" fill="#444444">{}</text>"##,
            MARGIN_TOP + plot_h + 18.0,
            fmt_tick(t)
        )
        .unwrap();
    }
    for t in nice_ticks(y_lo, y_hi, 6) {
        let y = sy(t);
        writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        )
        .unwrap();
        writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="end" fill="#444444">{:.2}</text>"##,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            t
        )
        .unwrap();
    }
    writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444444"/>"##
    )
    .unwrap();
    writeln!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle" fill="#222222">environment step</text>"##,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        svg,
        r##"<text x="14" y="{:.1}" font-size="13" text-anchor="middle" fill="#222222" transform="rotate(-90 14 {:.1})">mean normalized performance</text>"##,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    )
    .unwrap();

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.curve.is_empty() {
            continue;
        }
        // ±σ band: upper edge forward, lower edge backward.
        let mut band = String::new();
        for p in &s.curve {
            write!(band, "{:.1},{:.1} ", sx(p.step as f64), sy(p.mean + p.std)).unwrap();
        }
        for p in s.curve.iter().rev() {
            write!(band, "{:.1},{:.1} ", sx(p.step as f64), sy(p.mean - p.std)).unwrap();
        }
        writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            band.trim_end()
        )
        .unwrap();
        let line: Vec<String> = s
            .curve
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.step as f64), sy(p.mean)))
            .collect();
        writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        )
        .unwrap();
    }

    // Legend, top-left inside the plot.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_TOP + 16.0 + 18.0 * i as f64;
        writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="3"/>"#,
            MARGIN_LEFT + 10.0,
            MARGIN_LEFT + 34.0
        )
        .unwrap();
        writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" fill="#222222">{}</text>"##,
            MARGIN_LEFT + 40.0,
            y + 4.0,
            xml_escape(&s.label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let mut series = Vec::new();
    for input in &args.inputs {
        let (label, path) = split_label(input);
        series.push(load_series(label, &path)?);
    }
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("curves.csv"), curves_csv(&series))?;
    std::fs::write(args.out.join("curves.svg"), curves_svg(&series))?;
    println!(
        "wrote {} curve(s) to {}",
        series.len(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_split_on_equals_and_fall_back_to_the_stem() {
        let (label, path) = split_label("dmfd=runs/dmfd");
        assert_eq!(label, "dmfd");
        assert_eq!(path, PathBuf::from("runs/dmfd"));
        let (label, _) = split_label("runs/sac_baseline");
        assert_eq!(label, "sac_baseline");
    }

    #[test]
    fn csv_and_svg_cover_every_series() {
        let series = vec![
            Series {
                label: "a".into(),
                curve: vec![
                    CurvePoint { step: 0, mean: 0.1, std: 0.02 },
                    CurvePoint { step: 100, mean: 0.5, std: 0.05 },
                ],
            },
            Series {
                label: "b<&>".into(),
                curve: vec![
                    CurvePoint { step: 0, mean: 0.2, std: 0.0 },
                    CurvePoint { step: 100, mean: 0.3, std: 0.0 },
                ],
            },
        ];
        let csv = curves_csv(&series);
        assert!(csv.starts_with("label,step,mean,mean_minus_std,mean_plus_std\n"));
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("a,100,0.5,0.45,0.55"));

        let svg = curves_svg(&series);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("polygon"));
        assert!(svg.contains("b&lt;&amp;&gt;"));
    }

    #[test]
    fn tick_spacing_is_round() {
        let ticks = nice_ticks(0.0, 40_000.0, 6);
        assert!(ticks.contains(&0.0));
        assert!(ticks.contains(&40_000.0));
        for w in ticks.windows(2) {
            assert!((w[1] - w[0] - 10_000.0).abs() < 1e-9, "{ticks:?}");
        }
        let ticks = nice_ticks(0.0, 1.0, 6);
        for w in ticks.windows(2) {
            assert!((w[1] - w[0] - 0.2).abs() < 1e-9, "{ticks:?}");
        }
    }

    #[test]
    fn metrics_collection_recurses_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("seed1")).unwrap();
        std::fs::create_dir_all(root.join("seed0")).unwrap();
        std::fs::write(root.join("seed1/metrics.csv"), "x").unwrap();
        std::fs::write(root.join("seed0/metrics.csv"), "x").unwrap();
        std::fs::write(root.join("seed0/other.csv"), "x").unwrap();
        let files = collect_metrics_files(root).unwrap();
        assert_eq!(files.len(), 2);
        assert!(files[0].ends_with("seed0/metrics.csv"));
        assert!(files[1].ends_with("seed1/metrics.csv"));
    }
}
