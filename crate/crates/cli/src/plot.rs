//! Deterministic SVG line charts from a metrics CSV: one panel of loss
//! curves, one of mIoU/mAP curves. Fixed layout, fixed decimal formatting,
//! no external state, so identical input bytes yield identical SVG bytes.

use anyhow::{bail, Result};

const PANEL_W: f64 = 380.0;
const PANEL_H: f64 = 280.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 36.0;
const GAP: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub epochs: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

pub fn parse_metrics_csv(text: &str) -> Result<MetricsTable> {
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => h,
        None => bail!("empty metrics CSV"),
    };
    let names: Vec<&str> = header.split(',').collect();
    if names.first() != Some(&"epoch") || names.len() < 2 {
        bail!("bad metrics header {header:?}");
    }
    let mut epochs = Vec::new();
    let mut columns: Vec<(String, Vec<f64>)> =
        names[1..].iter().map(|n| (n.to_string(), Vec::new())).collect();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            bail!("row {}: {} fields, expected {}", lineno + 2, fields.len(), names.len());
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| anyhow::anyhow!("row {}: bad number {s:?}", lineno + 2))
        };
        epochs.push(parse(fields[0])?);
        for (col, field) in columns.iter_mut().zip(&fields[1..]) {
            col.1.push(parse(field)?);
        }
    }
    Ok(MetricsTable { epochs, columns })
}

const SERIES_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn panel(
    out: &mut String,
    origin_x: f64,
    title: &str,
    epochs: &[f64],
    series: &[(&str, &[f64])],
) {
    let x0 = origin_x + MARGIN_L;
    let y0 = MARGIN_T;
    let x1 = x0 + PANEL_W;
    let y1 = y0 + PANEL_H;

    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" font-family=\"monospace\">{title}</text>\n",
        x0,
        y0 - 12.0
    ));
    out.push_str(&format!(
        "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{PANEL_W:.1}\" height=\"{PANEL_H:.1}\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n"
    ));

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, vals) in series {
        for &v in *vals {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        // axes-only panel for empty data
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo).abs() < 1e-12 {
        hi = lo + 1.0;
    }
    let (e_lo, e_hi) = match (epochs.first(), epochs.last()) {
        (Some(&a), Some(&b)) if (b - a).abs() > 1e-12 => (a, b),
        (Some(&a), Some(_)) => (a, a + 1.0),
        _ => (0.0, 1.0),
    };

    // y ticks
    for t in 0..=4 {
        let frac = t as f64 / 4.0;
        let v = lo + (hi - lo) * frac;
        let y = y1 - PANEL_H * frac;
        out.push_str(&format!(
            "<line x1=\"{x0:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>\n",
            x1
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" font-family=\"monospace\" text-anchor=\"end\">{v:.3}</text>\n",
            x0 - 4.0,
            y + 3.0
        ));
    }
    // x ticks
    for t in 0..=4 {
        let frac = t as f64 / 4.0;
        let e = e_lo + (e_hi - e_lo) * frac;
        let x = x0 + PANEL_W * frac;
        out.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"10\" font-family=\"monospace\" text-anchor=\"middle\">{e:.0}</text>\n",
            y1 + 14.0
        ));
    }

    for (i, (name, vals)) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        if !vals.is_empty() {
            let mut points = String::new();
            for (&e, &v) in epochs.iter().zip(*vals) {
                let x = x0 + PANEL_W * (e - e_lo) / (e_hi - e_lo);
                let y = y1 - PANEL_H * (v - lo) / (hi - lo);
                points.push_str(&format!("{x:.2},{y:.2} "));
            }
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                points.trim_end()
            ));
        }
        let ly = y0 + 14.0 * i as f64 + 10.0;
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            x0 + 8.0,
            x0 + 28.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" font-family=\"monospace\">{name}</text>\n",
            x0 + 32.0,
            ly + 3.0
        ));
    }
}

/// Self-contained SVG with loss and quality panels.
pub fn render_svg(table: &MetricsTable) -> Result<String> {
    let col = |name: &str| -> Result<&[f64]> {
        table
            .columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| anyhow::anyhow!("metrics CSV lacks column {name:?}"))
    };
    let width = MARGIN_L * 2.0 + PANEL_W * 2.0 + GAP;
    let height = MARGIN_T + PANEL_H + MARGIN_B;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    panel(
        &mut out,
        0.0,
        "training loss",
        &table.epochs,
        &[
            ("loss", col("loss")?),
            ("loss_ce", col("loss_ce")?),
            ("loss_contrastive", col("loss_contrastive")?),
        ],
    );
    panel(
        &mut out,
        MARGIN_L + PANEL_W + GAP,
        "segmentation quality",
        &table.epochs,
        &[
            ("train_miou", col("train_miou")?),
            ("val_miou", col("val_miou")?),
            ("val_map", col("val_map")?),
        ],
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "epoch,loss,loss_ce,loss_contrastive,train_miou,val_miou,val_map";

    #[test]
    fn header_only_yields_axes_only_svg() {
        let table = parse_metrics_csv(&format!("{HEADER}\n")).unwrap();
        let svg = render_svg(&table).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("polyline"), "no data, no lines");
        assert!(svg.contains("<rect"), "axes boxes present");
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        let text = format!(
            "{HEADER}\n1,2.0,1.9,0.1,0.2,0.25,0.1\n2,1.5,1.4,0.1,0.3,0.33,0.2\n"
        );
        let a = render_svg(&parse_metrics_csv(&text).unwrap()).unwrap();
        let b = render_svg(&parse_metrics_csv(&text).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.matches("<polyline").count() == 6);
    }

    #[test]
    fn malformed_rows_are_errors() {
        assert!(parse_metrics_csv("nonsense\n").is_err());
        assert!(parse_metrics_csv(&format!("{HEADER}\n1,2.0\n")).is_err());
        assert!(parse_metrics_csv(&format!("{HEADER}\n1,a,b,c,d,e,f\n")).is_err());
    }
}
