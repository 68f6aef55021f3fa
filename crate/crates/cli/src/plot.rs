//! Minimal static SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", W / 2.0, escape(title));
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>", H - PAD);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 15.0, escape(x_label));
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn ticks(s: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let x = PAD + f * (W - 2.0 * PAD);
        let y = H - PAD - f * (H - 2.0 * PAD);
        let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>", H - PAD + 16.0, x0 + f * (x1 - x0));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>", PAD - 6.0, y + 4.0, y0 + f * (y1 - y0));
    }
}

/// Vertical bars, one per label.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64], y_label: &str) -> String {
    let mut s = open(title);
    axes(&mut s, "", y_label);
    let top = values.iter().copied().fold(0.0, f64::max).max(1e-12);
    let n = labels.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    for (k, (l, v)) in labels.iter().zip(values).enumerate() {
        let h = v / top * (H - 2.0 * PAD);
        let x = PAD + k as f64 * slot + slot * 0.15;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>",
            H - PAD - h,
            slot * 0.7,
            COLORS[0]
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(s, "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.1}</text>", H - PAD - h - 4.0);
        let _ = writeln!(s, "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", H - PAD + 16.0, escape(l));
    }
    s.push_str("</svg>\n");
    s
}

/// Polylines with markers; `diagonal` adds the chance line of a ROC plot.
pub fn line_chart(
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
    x_label: &str,
    y_label: &str,
    diagonal: bool,
) -> String {
    let mut s = open(title);
    axes(&mut s, x_label, y_label);
    let (xr, yr) = if diagonal {
        ((0.0, 1.0), (0.0, 1.0))
    } else {
        (
            range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0))),
            range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1))),
        )
    };
    ticks(&mut s, xr, yr);
    let px = |x: f64| PAD + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * PAD);
    if diagonal {
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"grey\" stroke-dasharray=\"4\"/>",
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        );
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{c}\"/>", px(x), py(y));
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>",
            W - PAD - 120.0,
            PAD + 16.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// 2×2 grid, rows actual (positive, negative), columns predicted.
pub fn confusion_matrix(title: &str, tp: usize, fn_: usize, fp: usize, tn: usize) -> String {
    let mut s = open(title);
    let cells = [[tp, fn_], [fp, tn]];
    let max = (*[tp, fn_, fp, tn].iter().max().unwrap_or(&1)).max(1) as f64;
    let size = 140.0;
    let (x0, y0) = (W / 2.0 - size, 90.0);
    let names = ["deterioration", "improvement"];
    for (r, row) in cells.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let shade = 255.0 - 200.0 * v as f64 / max;
            let (x, y) = (x0 + c as f64 * size, y0 + r as f64 * size);
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{size}\" height=\"{size}\" fill=\"rgb({0:.0},{0:.0},255)\" stroke=\"black\"/>",
                shade
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"20\">{v}</text>",
                x + size / 2.0,
                y + size / 2.0 + 7.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            x0 - 8.0,
            y0 + r as f64 * size + size / 2.0,
            names[r]
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x0 + r as f64 * size + size / 2.0,
            y0 - 8.0,
            names[r]
        );
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">predicted</text>", W / 2.0, y0 - 28.0);
    s.push_str("</svg>\n");
    s
}
