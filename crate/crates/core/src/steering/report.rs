//! CSV tables and the SVG plot of steering curves.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{SteeringCurve, Strategy};

pub const CURVES_HEADER: &str =
    "strategy,fraction,offloaded_bytes_mean,offloaded_bytes_std,unnecessary_rate_mean";

pub fn curves_to_csv(curves: &[SteeringCurve]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for c in curves {
        for p in &c.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.strategy.name(),
                p.fraction,
                p.offloaded_bytes_mean,
                p.offloaded_bytes_std,
                p.unnecessary_rate_mean
            );
        }
    }
    out
}

/// Mean unnecessary-measurement rate per strategy at each grid fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsTable {
    pub fractions: Vec<f64>,
    pub rows: Vec<(Strategy, Vec<f64>)>,
}

impl SavingsTable {
    pub fn row(&self, strategy: Strategy) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|(s, _)| *s == strategy)
            .map(|(_, r)| r.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy");
        for f in &self.fractions {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
        for (s, row) in &self.rows {
            out.push_str(s.name());
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for SavingsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<18}", "unnecessary rate")?;
        for x in &self.fractions {
            write!(f, "{:>8}", format!("f={x}"))?;
        }
        writeln!(f)?;
        for (s, row) in &self.rows {
            write!(f, "{:<18}", s.name())?;
            for v in row {
                write!(f, "{:>7.1}%", 100.0 * v)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn measurement_savings(curves: &[SteeringCurve]) -> SavingsTable {
    let fractions = curves
        .first()
        .map(|c| c.points.iter().map(|p| p.fraction).collect())
        .unwrap_or_default();
    let rows = curves
        .iter()
        .map(|c| {
            (
                c.strategy,
                c.points.iter().map(|p| p.unnecessary_rate_mean).collect(),
            )
        })
        .collect();
    SavingsTable { fractions, rows }
}

fn colour(s: Strategy) -> &'static str {
    match s {
        Strategy::Random => "#7f7f7f",
        Strategy::Coverage => "#1f77b4",
        Strategy::Traffic => "#ff7f0e",
        Strategy::CoverageTraffic => "#2ca02c",
        Strategy::Oracle => "#d62728",
    }
}

/// Mean offloaded volume against selected fraction, log-scale volume axis.
/// Zero means are drawn at the bottom edge.
pub fn curves_to_svg(curves: &[SteeringCurve]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 50.0;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;

    let positive: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.offloaded_bytes_mean))
        .filter(|&v| v > 0.0)
        .collect();
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = positive.iter().copied().fold(0.0, f64::max);
    let (lo_dec, hi_dec) = if positive.is_empty() {
        (0, 1)
    } else {
        let a = lo.log10().floor() as i32;
        let b = (hi.log10().ceil() as i32).max(a + 1);
        (a, b)
    };
    let y_of = |v: f64| {
        let l = if v > 0.0 { v.log10() } else { lo_dec as f64 };
        let t = (l - lo_dec as f64) / (hi_dec - lo_dec) as f64;
        TOP + ph * (1.0 - t.clamp(0.0, 1.0))
    };
    let x_of = |f: f64| LEFT + pw * f;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for d in lo_dec..=hi_dec {
        let y = y_of(10f64.powi(d));
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{d}</text>",
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let x = x_of(f);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{TOP}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#eee\"/>\n<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{f}</text>",
            TOP + ph,
            TOP + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">fraction of devices selected</text>",
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        "<text transform=\"translate(16 {:.1}) rotate(-90)\" text-anchor=\"middle\">offloaded volume (bytes)</text>",
        TOP + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| {
                format!(
                    "{:.1},{:.1}",
                    x_of(p.fraction),
                    y_of(p.offloaded_bytes_mean)
                )
            })
            .collect();
        let col = colour(c.strategy);
        let dash = if c.strategy == Strategy::Oracle {
            " stroke-dasharray=\"4 3\""
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{col}\" stroke-width=\"2\"{dash}/>",
            pts.join(" ")
        );
        for p in &c.points {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{col}\"/>",
                x_of(p.fraction),
                y_of(p.offloaded_bytes_mean)
            );
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{col}\" stroke-width=\"2\"{dash}/>\n<text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            c.strategy.name()
        );
    }
    s.push_str("</svg>\n");
    s
}
