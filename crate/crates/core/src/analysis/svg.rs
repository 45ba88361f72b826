//! Small static SVG charts. Output depends only on the input values, so
//! reports stay byte-stable.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    s
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            return Self { lo: lo - 0.5, hi: hi + 0.5 };
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad }
    }

    fn to_px(&self, v: f64, start: f64, len: f64) -> f64 {
        start + (v - self.lo) / (self.hi - self.lo) * len
    }
}

fn frame(s: &mut String, x: &Axis, y: &Axis) {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x.lo + f * (x.hi - x.lo);
        let px = LEFT + f * pw;
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick(xv));
        let yv = y.lo + f * (y.hi - y.lo);
        let py = TOP + ph - f * ph;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, tick(yv));
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = TOP + 14.0 + 16.0 * k as f64;
        let x = W - RIGHT - 150.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(name));
    }
}

/// Points `(x, y, series)`.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, usize)], series: &[&str]) -> String {
    let mut s = header(title, xlabel, ylabel);
    let x = Axis::fit(points.iter().map(|p| p.0));
    let y = Axis::fit(points.iter().map(|p| p.1));
    frame(&mut s, &x, &y);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    for &(a, b, k) in points {
        if !(a.is_finite() && b.is_finite()) {
            continue;
        }
        let px = x.to_px(a, LEFT, pw);
        let py = TOP + ph - (y.to_px(b, 0.0, ph));
        let _ = writeln!(
            s,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{}" fill-opacity="0.6"/>"#,
            PALETTE[k % PALETTE.len()]
        );
    }
    if series.len() > 1 {
        legend(&mut s, series);
    }
    s.push_str("</svg>\n");
    s
}

/// Side-by-side bars over shared bin edges; `counts[series][bin]`.
pub fn histogram(title: &str, xlabel: &str, edges: &[f64], counts: &[Vec<usize>], series: &[&str]) -> String {
    let mut s = header(title, xlabel, "subpopulations");
    let x = Axis { lo: edges[0], hi: *edges.last().expect("edges") };
    let top = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let y = Axis { lo: 0.0, hi: top * 1.05 };
    frame(&mut s, &x, &y);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let m = counts.len().max(1) as f64;
    for (k, row) in counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            let x0 = x.to_px(edges[b], LEFT, pw);
            let x1 = x.to_px(edges[b + 1], LEFT, pw);
            let bw = (x1 - x0) / m;
            let h = y.to_px(c as f64, 0.0, ph);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
                x0 + bw * k as f64,
                TOP + ph - h,
                bw,
                PALETTE[k % PALETTE.len()]
            );
        }
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

/// Grid of cells `values[row][col]`, rows drawn bottom-up; empty cells grey.
pub fn heat_grid(title: &str, xlabel: &str, ylabel: &str, cols: &[String], rows: &[String], values: &[Vec<Option<f64>>]) -> String {
    let mut s = header(title, xlabel, ylabel);
    let (pw, ph) = (W - LEFT - RIGHT - 60.0, H - TOP - BOTTOM);
    let finite: Vec<f64> = values.iter().flatten().flatten().copied().collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cw = pw / cols.len().max(1) as f64;
    let chh = ph / rows.len().max(1) as f64;
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let x = LEFT + c as f64 * cw;
            let y = TOP + ph - (r + 1) as f64 * chh;
            let fill = match v {
                Some(v) => {
                    let t = ((v - lo) / span).clamp(0.0, 1.0);
                    let red = (255.0 * t).round() as u8;
                    let blue = (255.0 * (1.0 - t)).round() as u8;
                    format!("#{red:02x}40{blue:02x}")
                }
                None => "#cccccc".into(),
            };
            let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{chh:.2}" fill="{fill}" stroke="white"/>"#);
            if let Some(v) = v {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9" fill="white">{:.3}</text>"#,
                    x + cw / 2.0,
                    y + chh / 2.0 + 3.0,
                    v
                );
            }
        }
    }
    for (c, name) in cols.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + (c as f64 + 0.5) * cw, TOP + ph + 16.0, escape(name));
    }
    for (r, name) in rows.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, TOP + ph - (r as f64 + 0.5) * chh + 4.0, escape(name));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{TOP}">max {:.3}</text>"#, W - RIGHT - 55.0, if finite.is_empty() { 0.0 } else { hi });
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">min {:.3}</text>"#, W - RIGHT - 55.0, TOP + ph, if finite.is_empty() { 0.0 } else { lo });
    s.push_str("</svg>\n");
    s
}
