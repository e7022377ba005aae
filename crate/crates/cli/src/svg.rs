//! Tiny SVG charts. Best effort; the CSV files are the real output.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

fn header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        "<path d=\"M{PAD} {PAD} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        H - PAD,
        W - PAD / 2.0
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Bars with optional ± error whiskers.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64], errors: Option<&[f64]>) -> String {
    let mut s = header(title);
    let err = |i: usize| errors.map_or(0.0, |e| e[i]);
    let (_, hi) = range(values.iter().enumerate().map(|(i, v)| v + err(i)));
    let lo = values
        .iter()
        .enumerate()
        .map(|(i, v)| v - err(i))
        .fold(0.0f64, f64::min);
    let (lo, hi) = if hi <= lo { (lo, lo + 1.0) } else { (lo, hi) };
    let plot_h = H - 2.0 * PAD;
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * plot_h;
    let slot = (W - 1.5 * PAD) / values.len().max(1) as f64;
    for (i, (&v, label)) in values.iter().zip(labels).enumerate() {
        let x = PAD + slot * (i as f64 + 0.15);
        let w = slot * 0.7;
        let (top, base) = (y(v.max(0.0)), y(v.min(0.0)));
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>",
            (base - top).max(0.5)
        );
        if errors.is_some() {
            let cx = x + w / 2.0;
            let _ = writeln!(
                s,
                "<path d=\"M{cx:.2} {:.2} V{:.2}\" stroke=\"black\"/>",
                y(v - err(i)),
                y(v + err(i))
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            x + w / 2.0,
            H - PAD + 14.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v:.3}</text>",
            x + w / 2.0,
            top - 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per series, sharing axes.
pub fn line_chart(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    const COLORS: [&str; 4] = ["steelblue", "darkorange", "seagreen", "firebrick"];
    let mut s = header(title);
    let (x0, x1) = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y0, y1) = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 1.5 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let _ = writeln!(s, "<text x=\"4\" y=\"{PAD}\">{y1:.3}</text>");
    let _ = writeln!(s, "<text x=\"4\" y=\"{}\">{y0:.3}</text>", H - PAD);
    for (k, (name, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"/>",
            d.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            W - 4.0 * PAD,
            PAD + 14.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let b = bar_chart("a<b", &["x".into(), "y".into()], &[0.5, -0.2], Some(&[0.1, 0.05]));
        assert!(b.starts_with("<svg") && b.ends_with("</svg>\n"));
        assert!(b.contains("a&lt;b"));
        assert_eq!(b.matches("<rect").count(), 3);
        let l = line_chart("loss", &[("train", vec![(1.0, 0.7), (2.0, 0.5)]), ("val", vec![])]);
        assert_eq!(l.matches("<polyline").count(), 1);
    }
}
