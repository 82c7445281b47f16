//! Text and SVG rendering of simulation results.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::simulation::{MedianEfficiencyReport, MetricsReport};

/// Accepts a list of metrics reports or a median-efficiency report.
pub(crate) fn metrics_from_json(value: serde_json::Value) -> Result<Vec<MetricsReport>> {
    if value.is_array() {
        return Ok(serde_json::from_value(value)?);
    }
    if value.get("median").is_some() {
        let m: MedianEfficiencyReport = serde_json::from_value(value)?;
        return Ok(vec![m.median, m.mean]);
    }
    Ok(vec![serde_json::from_value(value)?])
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
}

/// One aligned row per report.
pub fn metrics_table(reports: &[MetricsReport]) -> String {
    let header = [
        "dgp", "estimand", "arm", "method", "n", "R", "truth", "mean", "bias", "bias/mcse", "sd", "se/sd",
        "coverage", "rmse",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|m| {
            vec![
                m.dgp.clone(),
                m.spec.to_string(),
                m.arm.map_or("-", |a| a.name()).to_string(),
                m.method.name().to_string(),
                m.n.to_string(),
                if m.excluded > 0 {
                    format!("{}/{}", m.completed, m.replications)
                } else {
                    m.completed.to_string()
                },
                format!("{:.4}", m.truth),
                format!("{:.4}", m.mean_estimate),
                format!("{:+.4}", m.bias),
                format!("{:.2}", m.bias_in_mc_se()),
                opt(m.empirical_sd, 4),
                opt(m.se_ratio, 3),
                format!("{:.3}", m.coverage),
                format!("{:.4}", m.rmse),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let text: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, &w))| if j < 4 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", text.join("  ").trim_end());
    };
    line(header.to_vec());
    for r in &rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

/// `(ψ̂ − ψ)/se` per replication, skipping zero standard errors.
pub fn standardized_errors(m: &MetricsReport) -> Vec<f64> {
    m.estimates
        .iter()
        .zip(&m.ses)
        .filter(|(_, &se)| se > 0.0)
        .map(|(e, se)| (e - m.truth) / se)
        .collect()
}

const BINS: usize = 32;
const RANGE: f64 = 4.0;
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;

/// Density histogram of the standardized errors on `[−4, 4]` with the
/// standard normal density on top.
pub fn histogram_svg(m: &MetricsReport) -> Result<String> {
    let z = standardized_errors(m);
    if z.is_empty() {
        return Err(Error::Argument("report has no replications with a positive se".into()));
    }
    let bin_width = 2.0 * RANGE / BINS as f64;
    let mut counts = [0usize; BINS];
    for v in &z {
        if v.abs() < RANGE {
            counts[((v + RANGE) / bin_width) as usize] += 1;
        }
    }
    let density: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / (z.len() as f64 * bin_width))
        .collect();
    let normal = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let top = density.iter().copied().fold(normal(0.0), f64::max) * 1.1;
    let sx = |x: f64| MARGIN + (x + RANGE) / (2.0 * RANGE) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - y / top * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, d) in density.iter().enumerate() {
        let x0 = -RANGE + i as f64 * bin_width;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ab" stroke="#567"/>"##,
            sx(x0),
            sy(*d),
            sx(x0 + bin_width) - sx(x0),
            sy(0.0) - sy(*d)
        );
    }
    let points: Vec<String> = (0..=200)
        .map(|i| {
            let x = -RANGE + 2.0 * RANGE * i as f64 / 200.0;
            format!("{:.2},{:.2}", sx(x), sy(normal(x)))
        })
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#c33" stroke-width="2"/>"##,
        points.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="black"/>"#,
        sy(0.0),
        WIDTH - MARGIN
    );
    for t in -4..=4 {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{t}</text>"#,
            sx(t as f64),
            HEIGHT - MARGIN + 16.0
        );
    }
    let title = format!(
        "{} {} {} n={} R={}: (estimate - truth)/se",
        m.dgp,
        m.spec,
        m.method.name(),
        m.n,
        z.len()
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
    );
    s.push_str("</svg>\n");
    Ok(s)
}
