//! WER over (teacher bias, EOS threshold), its per-bias argmins and an SVG
//! line plot drawn from the CSV text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::SpokenUtterance;
use crate::decoder::{DecodeConfig, Mode};
use crate::error::{Error, Result};
use crate::segmenters::SegmenterKind;
use crate::transducer::RnntParams;

use super::config::{bias_key, ExperimentConfig};
use super::stages::evaluate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub bias: f64,
    pub threshold: f64,
    pub wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub points: Vec<AblationPoint>,
    pub mode: Mode,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Argmin {
    pub bias: f64,
    pub threshold: f64,
    pub wer: f64,
}

/// Evaluates every (bias, threshold) point with the checkpoint fine-tuned
/// on annotations at that bias. Biases without a checkpoint are skipped
/// with a warning.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    per_bias: &BTreeMap<String, RnntParams>,
    eval: &[SpokenUtterance],
) -> Result<AblationReport> {
    let mut report = AblationReport {
        points: Vec::new(),
        mode: cfg.ablation.mode,
        warnings: Vec::new(),
    };
    for &bias in &cfg.ablation.biases {
        let Some(params) = per_bias.get(&bias_key(bias)) else {
            report
                .warnings
                .push(format!("no checkpoint for bias {bias}; line omitted"));
            continue;
        };
        for &threshold in &cfg.ablation.thresholds {
            let dcfg = DecodeConfig {
                mode: cfg.ablation.mode,
                segmenter: SegmenterKind::Eos { threshold },
                ..cfg.decode.clone()
            };
            let wer = evaluate(params, eval, &dcfg)?.wer;
            report.points.push(AblationPoint {
                bias,
                threshold,
                wer,
            });
        }
    }
    Ok(report)
}

/// `bias,threshold,wer` with shortest round-trip number formatting.
pub fn write_ablation_csv<W: Write>(w: W, points: &[AblationPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bias", "threshold", "wer"])?;
    for p in points {
        out.write_record([
            p.bias.to_string(),
            p.threshold.to_string(),
            p.wer.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_ablation_csv(text: &str) -> Result<Vec<AblationPoint>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::invalid("ablation csv", format!("bad number in column {i}")))
        };
        out.push(AblationPoint {
            bias: num(0)?,
            threshold: num(1)?,
            wer: num(2)?,
        });
    }
    Ok(out)
}

/// Per bias, in first-seen order, the threshold with the lowest WER. Ties
/// go to the larger threshold.
pub fn argmins(points: &[AblationPoint]) -> Vec<Argmin> {
    let mut out: Vec<Argmin> = Vec::new();
    for p in points {
        match out.iter_mut().find(|a| a.bias == p.bias) {
            None => out.push(Argmin {
                bias: p.bias,
                threshold: p.threshold,
                wer: p.wer,
            }),
            Some(a) => {
                if p.wer < a.wer || (p.wer == a.wer && p.threshold > a.threshold) {
                    a.threshold = p.threshold;
                    a.wer = p.wer;
                }
            }
        }
    }
    out
}

pub fn write_argmins_csv<W: Write>(w: W, argmins: &[Argmin]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bias", "argmin_threshold", "min_wer"])?;
    for a in argmins {
        out.write_record([
            a.bias.to_string(),
            a.threshold.to_string(),
            a.wer.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Line plot, one line per bias, x = threshold, y = WER (%). Built from the
/// CSV text so the figure and the table cannot disagree. Every marker
/// carries its CSV fields verbatim as `data-*` attributes.
pub fn ablation_svg(csv_text: &str, mode: Mode) -> Result<String> {
    let mut rd = csv::Reader::from_reader(csv_text.as_bytes());
    let mut raw: Vec<[String; 3]> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        raw.push([0, 1, 2].map(|i| rec.get(i).unwrap_or_default().to_string()));
    }
    let points = parse_ablation_csv(csv_text)?;
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(&mut points.iter().map(|p| p.threshold));
    let (y0, y1) = span(&mut points.iter().map(|p| 100.0 * p.wer));
    let (y0, y1) = (y0 - 0.05 * (y1 - y0), y1 + 0.05 * (y1 - y0));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">WER (mode {}) vs EOS threshold</text>"#,
        left + pw / 2.0,
        mode.number()
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{:.2}</text>"#,
            sx(xv),
            top + ph + 18.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{:.1}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">EOS threshold (negative log posterior)</text>"#,
        left + pw / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 18 {})">WER (%)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    let mut biases: Vec<f64> = Vec::new();
    for p in &points {
        if !biases.contains(&p.bias) {
            biases.push(p.bias);
        }
    }
    for (i, b) in biases.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let idx: Vec<usize> = (0..points.len())
            .filter(|&j| points[j].bias == *b)
            .collect();
        let coords: Vec<String> = idx
            .iter()
            .map(|&j| {
                format!(
                    "{:.2},{:.2}",
                    sx(points[j].threshold),
                    sy(100.0 * points[j].wer)
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="bias-line" data-bias="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(&raw[idx[0]][0]),
            coords.join(" ")
        );
        for &j in &idx {
            let _ = writeln!(
                s,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}" data-bias="{}" data-threshold="{}" data-wer="{}"/>"#,
                sx(points[j].threshold),
                sy(100.0 * points[j].wer),
                escape(&raw[j][0]),
                escape(&raw[j][1]),
                escape(&raw[j][2])
            );
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            left + pw + 15.0,
            left + pw + 40.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">bias {}</text>"#,
            left + pw + 46.0,
            ly + 4.0,
            escape(&raw[idx[0]][0])
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
