//! Static SVG figures written as plain strings.

use std::fmt::Write as _;

use nalgebra::DMatrix;

const BLUE: (f64, f64, f64) = (33.0, 102.0, 172.0);
const RED: (f64, f64, f64) = (178.0, 24.0, 43.0);
const SERIES: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Diverging colour centered at zero: blue for negative, white at zero, red
/// for positive, saturating at `|v| = scale`.
pub fn diverging_color(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let target = if t < 0.0 { BLUE } else { RED };
    let a = t.abs();
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(target.0), mix(target.1), mix(target.2))
}

/// Heatmap of `m` on the symmetric scale `[-scale, scale]`.
pub fn heatmap(title: &str, m: &DMatrix<f64>, scale: f64) -> String {
    let n = m.nrows();
    let cell = (480.0 / n.max(1) as f64).clamp(2.0, 24.0);
    let side = cell * n as f64;
    let (left, top) = (40.0, 40.0);
    let bar_x = left + side + 30.0;
    let width = bar_x + 90.0;
    let height = top + side.max(200.0) + 30.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" data-scale-min="{}" data-scale-max="{}">"#,
        -scale, scale
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{left}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title)).unwrap();
    for i in 0..n {
        for j in 0..n {
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"/>"#,
                left + j as f64 * cell,
                top + i as f64 * cell,
                diverging_color(m[(i, j)], scale)
            )
            .unwrap();
        }
    }
    let steps = 20;
    let bar_h = 200.0;
    for k in 0..steps {
        let v = scale - 2.0 * scale * (k as f64 + 0.5) / steps as f64;
        writeln!(
            s,
            r#"<rect x="{bar_x}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            top + bar_h * k as f64 / steps as f64,
            bar_h / steps as f64 + 0.5,
            diverging_color(v, scale)
        )
        .unwrap();
    }
    for (y, v) in [(top, scale), (top + bar_h / 2.0, 0.0), (top + bar_h, -scale)] {
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11">{v:.4}</text>"#,
            bar_x + 22.0,
            y + 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub struct Bar {
    pub group: String,
    pub series: String,
    pub mean: f64,
    pub err: f64,
}

/// Grouped bars on a `[0, 1]` axis with ± error bars.
pub fn grouped_bars(title: &str, groups: &[String], series: &[String], bars: &[Bar]) -> String {
    let (left, top, plot_h) = (50.0, 40.0, 260.0);
    let bar_w = 18.0;
    let group_w = bar_w * series.len() as f64 + 24.0;
    let width = left + group_w * groups.len() as f64 + 140.0;
    let height = top + plot_h + 50.0;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{left}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title)).unwrap();
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        writeln!(
            s,
            r##"<line x1="{left}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.1}</text>"##,
            left + group_w * groups.len() as f64,
            y(v),
            y(v),
            left - 6.0,
            y(v) + 3.0
        )
        .unwrap();
    }
    for (g, gname) in groups.iter().enumerate() {
        let gx = left + g as f64 * group_w + 12.0;
        for (k, sname) in series.iter().enumerate() {
            let Some(b) = bars.iter().find(|b| &b.group == gname && &b.series == sname) else {
                continue;
            };
            let x = gx + k as f64 * bar_w;
            writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                y(b.mean),
                bar_w - 2.0,
                y(0.0) - y(b.mean),
                SERIES[k % SERIES.len()]
            )
            .unwrap();
            let cx = x + (bar_w - 2.0) / 2.0;
            writeln!(
                s,
                r#"<line x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
                y(b.mean + b.err),
                y(b.mean - b.err)
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            gx + bar_w * series.len() as f64 / 2.0,
            top + plot_h + 18.0,
            escape(gname)
        )
        .unwrap();
    }
    let lx = left + group_w * groups.len() as f64 + 16.0;
    for (k, sname) in series.iter().enumerate() {
        let ly = top + 16.0 * k as f64;
        writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{ly:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
            SERIES[k % SERIES.len()],
            lx + 14.0,
            ly + 9.0,
            escape(sname)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Equal-width histogram of several series over a shared range.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<Vec<usize>>,
}

impl Histogram {
    pub fn new(series: &[&[f64]], bins: usize) -> Self {
        let all = series.iter().flat_map(|s| s.iter().copied()).filter(|v| v.is_finite());
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        } else if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let counts = series
            .iter()
            .map(|s| {
                let mut c = vec![0; bins];
                for v in s.iter().copied().filter(|v| v.is_finite()) {
                    c[(((v - lo) / width) as usize).min(bins - 1)] += 1;
                }
                c
            })
            .collect();
        Self { lo, hi, counts }
    }

    pub fn bins(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.bins() as f64;
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }

    pub fn svg(&self, title: &str, names: &[&str]) -> String {
        let (left, top, plot_w, plot_h) = (50.0, 40.0, 420.0, 220.0);
        let max = self.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
        let bins = self.bins().max(1) as f64;
        let bw = plot_w / bins;
        let sub = bw / self.counts.len().max(1) as f64;
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}">"#,
            left + plot_w + 130.0,
            top + plot_h + 50.0
        )
        .unwrap();
        writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(s, r#"<text x="{left}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title)).unwrap();
        for (k, series) in self.counts.iter().enumerate() {
            for (b, &c) in series.iter().enumerate() {
                let h = plot_h * c as f64 / max;
                writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}" fill-opacity="0.8"/>"#,
                    left + b as f64 * bw + k as f64 * sub,
                    top + plot_h - h,
                    sub.max(0.5),
                    SERIES[k % SERIES.len()]
                )
                .unwrap();
            }
        }
        for (x, v) in [(left, self.lo), (left + plot_w, self.hi)] {
            writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.4}</text>"#,
                top + plot_h + 16.0
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{max:.0}</text>"#,
            left - 6.0,
            top + 4.0
        )
        .unwrap();
        for (k, name) in names.iter().enumerate() {
            let ly = top + 16.0 * k as f64;
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{ly:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
                left + plot_w + 16.0,
                SERIES[k % SERIES.len()],
                left + plot_w + 30.0,
                ly + 9.0,
                escape(name)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}
