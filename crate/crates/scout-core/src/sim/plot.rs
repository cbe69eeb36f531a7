//! Standalone SVG rendering of mission metrics: explored volume over time
//! and a histogram of observed speeds. Pure string assembly, so the output
//! is byte-deterministic.

use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("metrics line {0}: {1}")]
    Parse(usize, String),
    #[error("metrics file has no data rows")]
    Empty,
}

struct Series {
    t: Vec<f64>,
    volume: Vec<f64>,
    speed: Vec<f64>,
}

fn parse_metrics(text: &str) -> Result<Series, PlotError> {
    let mut out = Series {
        t: Vec::new(),
        volume: Vec::new(),
        speed: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 7 {
            return Err(PlotError::Parse(i + 1, "expected 7 columns".into()));
        }
        let f = |j: usize| -> Result<f64, PlotError> {
            cols[j]
                .parse()
                .map_err(|e| PlotError::Parse(i + 1, format!("column {j}: {e}")))
        };
        out.t.push(f(0)?);
        out.volume.push(f(1)?);
        out.speed.push(f(3)?);
    }
    if out.t.is_empty() {
        return Err(PlotError::Empty);
    }
    Ok(out)
}

/// Renders the metrics CSV into a two-panel standalone SVG.
pub fn render_metrics_svg(metrics_csv: &str) -> Result<String, PlotError> {
    let s = parse_metrics(metrics_csv)?;
    let (w, h) = (900.0, 360.0);
    let panel_w = 400.0;
    let panel_h = 280.0;
    let m = 50.0;

    let t_max = s.t.last().copied().unwrap_or(1.0).max(1e-9);
    let v_max = s.volume.iter().copied().fold(1e-9f64, f64::max);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{w}" height="{h}" fill="white" stroke="none"/>"#
    );

    // Panel 1: explored volume vs time.
    let x0 = m;
    let y0 = m;
    let _ = writeln!(
        svg,
        r#"<rect x="{x0}" y="{y0}" width="{panel_w}" height="{panel_h}" fill="none" stroke="black"/>"#
    );
    let mut pts = String::new();
    for (t, v) in s.t.iter().zip(&s.volume) {
        let px = x0 + panel_w * t / t_max;
        let py = y0 + panel_h * (1.0 - v / v_max);
        let _ = write!(pts, "{px:.1},{py:.1} ");
    }
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        pts.trim_end()
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">explored volume [m3] vs time [s]</text>"#,
        x0 + panel_w / 2.0,
        y0 + panel_h + 28.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11">0</text><text x="{:.1}" y="{:.1}" font-size="11">{t_max:.0}</text><text x="{:.1}" y="{:.1}" font-size="11">{v_max:.1}</text>"#,
        x0 - 8.0,
        y0 + panel_h + 12.0,
        x0 + panel_w - 12.0,
        y0 + panel_h + 12.0,
        x0 - 42.0,
        y0 + 10.0
    );

    // Panel 2: speed histogram, 20 bins.
    let x1 = x0 + panel_w + 2.0 * m;
    let bins = 20usize;
    let s_max = s.speed.iter().copied().fold(1e-9f64, f64::max);
    let mut counts = vec![0usize; bins];
    for &v in &s.speed {
        let b = ((v / s_max) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let c_max = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let _ = writeln!(
        svg,
        r#"<rect x="{x1}" y="{y0}" width="{panel_w}" height="{panel_h}" fill="none" stroke="black"/>"#
    );
    let bw = panel_w / bins as f64;
    for (b, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let bh = panel_h * c as f64 / c_max;
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#ff7f0e" stroke="black" stroke-width="0.4"/>"##,
            x1 + b as f64 * bw,
            y0 + panel_h - bh,
            bw,
            bh
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">speed histogram [m/s], max {s_max:.2}</text>"#,
        x1 + panel_w / 2.0,
        y0 + panel_h + 28.0
    );
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}
