//! Deterministic SVG figures: ego time series and progress boxplots.
//!
//! Every panel records its data window and pixel box as `data-*`
//! attributes, so plotted points can be mapped back to data values.

use std::fmt::Write;

use ideam_core::harness::TrackLog;

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 180.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_T: f64 = 30.0;
const GAP: f64 = 50.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Affine map from a data window onto a pixel box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl Panel {
    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.width
    }

    pub fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y0) / (self.y1 - self.y0) * self.height
    }

    /// Inverse of [`Panel::px`].
    pub fn data_x(&self, px: f64) -> f64 {
        self.x0 + (px - self.left) / self.width * (self.x1 - self.x0)
    }

    /// Inverse of [`Panel::py`].
    pub fn data_y(&self, py: f64) -> f64 {
        self.y0 + (self.top + self.height - py) / self.height * (self.y1 - self.y0)
    }
}

/// Data window covering `values`, padded and never degenerate.
fn window(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn open_svg(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn axes(out: &mut String, p: &Panel, title: &str, x_label: &str) {
    let _ = writeln!(
        out,
        r#"<g class="panel" data-title="{title}" data-x0="{:.9e}" data-x1="{:.9e}" data-y0="{:.9e}" data-y1="{:.9e}" data-left="{:.3}" data-top="{:.3}" data-width="{:.3}" data-height="{:.3}">"#,
        p.x0, p.x1, p.y0, p.y1, p.left, p.top, p.width, p.height
    );
    let _ = writeln!(
        out,
        r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="black"/>"#,
        p.left, p.top, p.width, p.height
    );
    let _ = writeln!(out, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{title}</text>"#, p.left + p.width / 2.0, p.top - 8.0);
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{x_label}</text>"#,
        p.left + p.width / 2.0,
        p.top + p.height + 30.0
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (x, y) = (p.x0 + f * (p.x1 - p.x0), p.y0 + f * (p.y1 - p.y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{x:.1}</text>"#,
            p.px(x),
            p.top + p.height + 14.0
        );
        let _ = writeln!(out, r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{y:.2}</text>"#, p.left - 6.0, p.py(y) + 4.0);
    }
}

/// Time series of longitudinal speed, acceleration command and lateral
/// offset, one panel each. Each series is a polyline with one vertex per
/// logged step.
pub fn time_series_svg(log: &TrackLog) -> String {
    let r = &log.records;
    let t_end = r.last().map_or(log.duration, |x| x.t).max(log.dt);
    let series: [(&str, &str, Vec<f64>); 3] = [
        ("v_x", "v_x [m/s]", r.iter().map(|x| x.ego.v_x).collect()),
        ("a_x", "a_x [m/s^2]", r.iter().map(|x| x.input.a_x).collect()),
        ("e_y", "e_y [m]", r.iter().map(|x| x.ego.e_y).collect()),
    ];
    let height = MARGIN_T + 3.0 * (PANEL_H + GAP);
    let mut out = String::new();
    open_svg(&mut out, MARGIN_L + PANEL_W + 30.0, height);
    let _ = writeln!(out, r#"<text x="10" y="16">{} seed {}</text>"#, log.policy.name(), log.seed);
    for (i, (key, title, ys)) in series.iter().enumerate() {
        let (y0, y1) = window(ys.iter().copied());
        let p = Panel {
            x0: 0.0,
            x1: t_end,
            y0,
            y1,
            left: MARGIN_L,
            top: MARGIN_T + i as f64 * (PANEL_H + GAP),
            width: PANEL_W,
            height: PANEL_H,
        };
        axes(&mut out, &p, title, "t [s]");
        if !ys.is_empty() {
            let pts: Vec<String> =
                r.iter().zip(ys).map(|(rec, y)| format!("{:.3},{:.3}", p.px(rec.t), p.py(*y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline class="series" data-series="{key}" fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                PALETTE[0],
                pts.join(" ")
            );
        }
        let _ = writeln!(out, "</g>");
    }
    let _ = writeln!(out, "</svg>");
    out
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (i, f) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// One boxplot panel per title; `groups` holds `(label, values)` per box.
pub fn boxplot_svg(panels: &[(&str, Vec<(String, Vec<f64>)>)]) -> String {
    let height = MARGIN_T + panels.len().max(1) as f64 * (PANEL_H + GAP);
    let mut out = String::new();
    open_svg(&mut out, MARGIN_L + PANEL_W + 30.0, height);
    for (i, (title, groups)) in panels.iter().enumerate() {
        let (y0, y1) = window(groups.iter().flat_map(|(_, v)| v.iter().copied()));
        let n = groups.len().max(1) as f64;
        let p = Panel {
            x0: 0.0,
            x1: n,
            y0,
            y1,
            left: MARGIN_L,
            top: MARGIN_T + i as f64 * (PANEL_H + GAP),
            width: PANEL_W,
            height: PANEL_H,
        };
        axes(&mut out, &p, title, "");
        for (j, (label, values)) in groups.iter().enumerate() {
            let cx = p.px(j as f64 + 0.5);
            let half = 0.3 * p.width / n;
            let _ = writeln!(
                out,
                r#"<text x="{cx:.3}" y="{:.3}" text-anchor="middle">{label}</text>"#,
                p.top + p.height + 28.0
            );
            let Some(b) = BoxStats::of(values) else { continue };
            let color = PALETTE[j % PALETTE.len()];
            let _ = writeln!(
                out,
                r#"<g class="box" data-label="{label}" data-min="{:.9e}" data-q1="{:.9e}" data-median="{:.9e}" data-q3="{:.9e}" data-max="{:.9e}">"#,
                b.min, b.q1, b.median, b.q3, b.max
            );
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.3}" y1="{:.3}" x2="{cx:.3}" y2="{:.3}" stroke="black"/>"#,
                p.py(b.min),
                p.py(b.max)
            );
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{color}" fill-opacity="0.4" stroke="{color}"/>"#,
                cx - half,
                p.py(b.q3),
                2.0 * half,
                (p.py(b.q1) - p.py(b.q3)).max(0.0)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                p.py(b.median),
                cx + half,
                p.py(b.median)
            );
            let _ = writeln!(out, "</g>");
        }
        let _ = writeln!(out, "</g>");
    }
    let _ = writeln!(out, "</svg>");
    out
}
