use std::fmt::Write as _;

use super::csv::MetricsRow;

/// Per-class IoU table (percent), one line per run, classes in id order
/// followed by mIoU. Uses each run's last row.
pub fn class_table(runs: &[(String, Vec<MetricsRow>)]) -> String {
    let num_classes = runs
        .iter()
        .filter_map(|(_, rows)| rows.last())
        .map(|r| r.ious.len())
        .max()
        .unwrap_or(0);
    let name_w = runs.iter().map(|(n, _)| n.len()).max().unwrap_or(3).max(3);
    let mut out = format!("{:<name_w$} {:>6}", "run", "iter");
    for c in 0..num_classes {
        let _ = write!(out, " {:>6}", format!("c{c}"));
    }
    out.push_str("   mIoU\n");
    for (name, rows) in runs {
        let Some(last) = rows.last() else {
            let _ = writeln!(out, "{name:<name_w$} (no rows)");
            continue;
        };
        let _ = write!(out, "{name:<name_w$} {:>6}", last.iter);
        for c in 0..num_classes {
            match last.ious.get(c).copied().flatten() {
                Some(v) => {
                    let _ = write!(out, " {:>6.1}", v * 100.0);
                }
                None => out.push_str("      -"),
            }
        }
        let _ = writeln!(out, " {:>6.1}", last.miou * 100.0);
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Two stacked line charts, mIoU and Prob against iteration, one line per run.
pub fn metrics_svg(runs: &[(String, Vec<MetricsRow>)]) -> String {
    let (w, ph, margin) = (640.0f64, 220.0f64, 48.0f64);
    let height = 2.0 * ph + 3.0 * margin;
    let max_iter = runs
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.iter))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    type Series = fn(&MetricsRow) -> Option<f64>;
    let panels: [(&str, Series); 2] = [("mIoU", |r| Some(r.miou)), ("Prob", |r| r.prob)];
    for (p, (title, value)) in panels.iter().enumerate() {
        let top = margin + p as f64 * (ph + margin);
        let (x0, x1) = (margin, w - margin);
        let y_of = |v: f64| top + ph - v.clamp(0.0, 1.0) * ph;
        let _ = writeln!(
            s,
            "<rect x=\"{x0}\" y=\"{top}\" width=\"{}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>",
            x1 - x0
        );
        let _ = writeln!(s, "<text x=\"{x0}\" y=\"{}\">{title}</text>", top - 6.0);
        for tick in [0.0, 0.5, 1.0] {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{tick:.1}</text>",
                x0 - 4.0,
                y_of(tick) + 4.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{x1}\" y=\"{:.1}\" text-anchor=\"end\">iter {}</text>",
            top + ph + 14.0,
            max_iter as usize
        );
        for (i, (name, rows)) in runs.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = rows
                .iter()
                .filter_map(|r| value(r).map(|v| (r.iter, v)))
                .map(|(it, v)| {
                    format!(
                        "{:.1},{:.1}",
                        x0 + (x1 - x0) * it as f64 / max_iter,
                        y_of(v)
                    )
                })
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(
                    s,
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                    pts.join(" ")
                );
            }
            if p == 0 {
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{:.1}\" fill=\"{color}\">{}</text>",
                    x0 + 8.0,
                    top + 14.0 + 13.0 * i as f64,
                    escape(name)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
