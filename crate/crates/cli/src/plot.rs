//! Standalone SVG output: accuracy-vs-SNR polylines and confusion heatmaps.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub struct Series {
    pub name: String,
    /// (snr_db, accuracy); infinite SNRs are listed in the legend, not plotted.
    pub points: Vec<(f64, f64)>,
}

/// Accuracy against SNR, one polyline per series. Y spans [0, 1].
pub fn accuracy_svg(title: &str, series: &[Series]) -> String {
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .filter(|x| x.is_finite())
        .collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0) };
    let x = |v: f64| MARGIN + (v - lo) / (hi - lo) * (W - 2.0 * MARGIN);
    let y = |a: f64| H - MARGIN - a * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r##"<path d="M{m} {t} V{b} H{r}" fill="none" stroke="#333"/>"##,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{a:.1}</text>"#,
            MARGIN - 6.0,
            y(a) + 4.0
        );
    }
    let ticks = 5;
    for i in 0..=ticks {
        let v = lo + (hi - lo) * i as f64 / ticks as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{v:.0}</text>"#,
            x(v),
            H - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">SNR (dB)</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = ser.points.iter().copied().filter(|p| p.0.is_finite()).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let coords: Vec<String> = pts.iter().map(|&(v, a)| format!("{:.2},{:.2}", x(v), y(a))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        for &(v, a) in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, x(v), y(a));
        }
        let clean = ser
            .points
            .iter()
            .find(|p| p.0.is_infinite())
            .map(|p| format!(" (clean {:.3})", p.1))
            .unwrap_or_default();
        let ly = MARGIN + 4.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}{}</text>"#,
            W - MARGIN - 150.0,
            W - MARGIN - 130.0,
            W - MARGIN - 124.0,
            ly + 4.0,
            escape(&ser.name),
            clean
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Confusion heatmap with one `rect class="cell"` per (true, predicted)
/// pair, shaded by the row-normalized count.
pub fn confusion_svg(title: &str, confusion: &[Vec<usize>], classes: &[String]) -> String {
    let k = confusion.len();
    let cell = (360.0 / k.max(1) as f64).clamp(12.0, 48.0);
    let left = 120.0;
    let top = 60.0;
    let size = cell * k as f64;
    let (w, h) = (left + size + 20.0, top + size + 100.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    for (i, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (j, &count) in row.iter().enumerate() {
            let frac = if total > 0 { count as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let (cx, cy) = (left + j as f64 * cell, top + i as f64 * cell);
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{cx}" y="{cy}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#999"><title>{} -> {}: {count}</title></rect>"##,
                escape(classes.get(i).map_or("", String::as_str)),
                escape(classes.get(j).map_or("", String::as_str)),
            );
            if cell >= 20.0 {
                let color = if frac > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{color}">{count}</text>"#,
                    cx + cell / 2.0,
                    cy + cell / 2.0 + 4.0
                );
            }
        }
        let name = classes.get(i).map_or_else(|| i.to_string(), Clone::clone);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6.0,
            top + i as f64 * cell + cell / 2.0 + 4.0,
            escape(&name)
        );
    }
    for j in 0..k {
        let name = classes.get(j).map_or_else(|| j.to_string(), Clone::clone);
        let (tx, ty) = (left + j as f64 * cell + cell / 2.0, top + size + 10.0);
        let _ = writeln!(
            s,
            r#"<text x="{tx}" y="{ty}" transform="rotate(60 {tx} {ty})">{}</text>"#,
            escape(&name)
        );
    }
    let _ = writeln!(s, r#"<text x="12" y="{}">true</text>"#, top - 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#, left + size / 2.0, h - 8.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_has_k_squared_cells() {
        for k in [2, 3, 10, 14] {
            let m = vec![vec![1; k]; k];
            let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
            let svg = confusion_svg("t", &m, &names);
            assert_eq!(svg.matches(r#"class="cell""#).count(), k * k);
            assert!(!svg.contains("href"));
        }
    }

    #[test]
    fn polyline_skips_clean_point() {
        let s = Series {
            name: "a<b".into(),
            points: vec![(-2.0, 0.5), (f64::INFINITY, 0.9), (2.0, 0.7)],
        };
        let svg = accuracy_svg("x", &[s]);
        let line = svg.lines().find(|l| l.contains("<polyline")).unwrap();
        assert_eq!(line.split("points=\"").nth(1).unwrap().split_whitespace().count(), 2);
        assert!(svg.contains("a&lt;b (clean 0.900)"));
    }
}
