//! Minimal SVG line charts. CSV is the authoritative output; these plots
//! are quick-look companions with linear or log-x axes and simple ticks.

use std::io::Write;

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub series: Vec<Series<'a>>,
}

const W: f64 = 860.0;
const H: f64 = 520.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

impl Chart<'_> {
    pub fn write<Wr: Write>(&self, mut w: Wr) -> std::io::Result<()> {
        let xt = |x: f64| if self.log_x { x.log10() } else { x };
        let mut x_min = f64::MAX;
        let mut x_max = f64::MIN;
        let mut y_min = f64::MAX;
        let mut y_max = f64::MIN;
        for s in &self.series {
            for &(x, y) in &s.points {
                if !x.is_finite() || !y.is_finite() {
                    continue;
                }
                x_min = x_min.min(xt(x));
                x_max = x_max.max(xt(x));
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
        if x_min >= x_max {
            x_max = x_min + 1.0;
        }
        if y_min >= y_max {
            y_max = y_min + 1.0;
        }
        let y_pad = (y_max - y_min) * 0.06;
        y_min -= y_pad;
        y_max += y_pad;

        let px = |x: f64| ML + (xt(x) - x_min) / (x_max - x_min) * (W - ML - MR);
        let py = |y: f64| H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB);

        writeln!(
            w,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
        )?;
        writeln!(w, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>")?;
        writeln!(
            w,
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
            W / 2.0,
            xml(self.title)
        )?;

        // Axes and ticks.
        writeln!(
            w,
            "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>",
            W - ML - MR,
            H - MT - MB
        )?;
        for i in 0..=5 {
            let fx = x_min + (x_max - x_min) * i as f64 / 5.0;
            let xpix = ML + (W - ML - MR) * i as f64 / 5.0;
            let label = if self.log_x {
                format_tick(10f64.powf(fx))
            } else {
                format_tick(fx)
            };
            writeln!(
                w,
                "<line x1=\"{xpix}\" y1=\"{}\" x2=\"{xpix}\" y2=\"{}\" stroke=\"#ccc\"/>",
                MT,
                H - MB
            )?;
            writeln!(
                w,
                "<text x=\"{xpix}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>",
                H - MB + 18.0
            )?;
            let fy = y_min + (y_max - y_min) * i as f64 / 5.0;
            let ypix = py(fy);
            writeln!(
                w,
                "<line x1=\"{ML}\" y1=\"{ypix}\" x2=\"{}\" y2=\"{ypix}\" stroke=\"#ccc\"/>",
                W - MR
            )?;
            writeln!(
                w,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
                ML - 6.0,
                ypix + 4.0,
                format_tick(fy)
            )?;
        }
        writeln!(
            w,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
            (ML + W - MR) / 2.0,
            H - 12.0,
            xml(self.x_label)
        )?;
        writeln!(
            w,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>",
            (MT + H - MB) / 2.0,
            (MT + H - MB) / 2.0,
            xml(self.y_label)
        )?;

        for (si, s) in self.series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            if pts.len() >= 2 {
                writeln!(
                    w,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
                    pts.join(" ")
                )?;
            }
            writeln!(
                w,
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
                W - MR - 150.0,
                MT + 18.0 + 16.0 * si as f64,
                xml(s.label)
            )?;
        }
        writeln!(w, "</svg>")
    }
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1e9 {
        format!("{:.1}G", v / 1e9)
    } else if a >= 1e6 {
        format!("{:.1}M", v / 1e6)
    } else if a >= 1e3 {
        format!("{:.1}k", v / 1e3)
    } else if a >= 1.0 || a == 0.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2e}")
    }
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
