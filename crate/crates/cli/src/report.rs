//! Report files: `report.csv`, `report.svg` and `summary.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cusp_core::metrics::RateFit;

use crate::error::Result;

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
    /// Reference slope drawn through the first point, if any.
    pub reference_slope: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub plot: Option<Plot>,
    pub summary: Vec<String>,
}

impl Report {
    pub fn new(header: &[&str]) -> Self {
        Report {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    pub fn csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes all three files. The CSV is written even when empty so that
    /// a failed run leaves its completed rows behind.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.csv())?;
        let mut summary = self.summary.join("\n");
        summary.push('\n');
        fs::write(dir.join("summary.txt"), summary)?;
        if let Some(plot) = &self.plot {
            fs::write(dir.join("report.svg"), svg(plot))?;
        }
        Ok(())
    }
}

/// A self-contained log-log scatter plot with the fitted line.
pub fn svg(plot: &Plot) -> String {
    let (w, h) = (640.0, 480.0);
    let (left, right, top, bottom) = (80.0, 20.0, 40.0, 60.0);
    let pts: Vec<(f64, f64)> = plot
        .points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(&plot.title));
    if pts.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let (mut x0, mut x1, mut y0, mut y1) = bounds(&pts);
    pad(&mut x0, &mut x1);
    pad(&mut y0, &mut y1);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for d in (x0.ceil() as i32)..=(x1.floor() as i32) {
        let x = sx(f64::from(d));
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##, h - bottom);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{d}</text>"#, h - bottom + 16.0);
    }
    for d in (y0.ceil() as i32)..=(y1.floor() as i32) {
        let y = sy(f64::from(d));
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, w - right);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 16.0, escape(&plot.x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(&plot.y_label)
    );
    let line = |s: &mut String, slope: f64, intercept: f64, style: &str| {
        let (ya, yb) = (intercept + slope * x0, intercept + slope * x1);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" {style}/>"#,
            sx(x0),
            sy(ya),
            sx(x1),
            sy(yb)
        );
    };
    let _ = writeln!(s, r#"<clipPath id="frame"><rect x="{left}" y="{top}" width="{}" height="{}"/></clipPath>"#, w - left - right, h - top - bottom);
    s.push_str("<g clip-path=\"url(#frame)\">\n");
    if let Some(fit) = plot.fit {
        // the fit is in natural logs; convert to base 10
        line(&mut s, fit.slope, fit.intercept / std::f64::consts::LN_10, r##"stroke="#c03" stroke-width="1.5""##);
    }
    if let Some(slope) = plot.reference_slope {
        let (px, py) = pts[0];
        line(&mut s, slope, py - slope * px, r##"stroke="#36c" stroke-dasharray="6 4""##);
    }
    s.push_str("</g>\n");
    for (x, y) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#, sx(*x), sy(*y));
    }
    let mut legend = Vec::new();
    if let Some(fit) = plot.fit {
        legend.push(format!("fit: slope {:.4}, r² {:.4}", fit.slope, fit.r2));
    }
    if let Some(slope) = plot.reference_slope {
        legend.push(format!("reference slope {slope:.4}"));
    }
    for (i, text) in legend.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, left + 10.0, top + 18.0 + 16.0 * i as f64, escape(text));
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(pts: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), (x, y)| (a.min(*x), b.max(*x), c.min(*y), d.max(*y)),
    )
}

fn pad(lo: &mut f64, hi: &mut f64) {
    let span = (*hi - *lo).max(0.5);
    *lo -= 0.1 * span;
    *hi += 0.1 * span;
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
