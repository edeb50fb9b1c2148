//! Hand-written SVG line plots for traces and sweeps.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::gates::GateName;
use crate::io::{SweepRecord, TraceRecord};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub const FIDELITY_THRESHOLD: f64 = 0.99;

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
struct Guide {
    value: f64,
    label: String,
}

#[derive(Clone, Debug, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    hlines: Vec<Guide>,
    vlines: Vec<Guide>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let d = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        return (lo - d, hi + d);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Default::default() }
    }

    pub fn hline(&mut self, value: f64, label: &str) {
        self.hlines.push(Guide { value, label: label.into() });
    }

    pub fn vline(&mut self, value: f64, label: &str) {
        self.vlines.push(Guide { value, label: label.into() });
    }

    pub fn render(&self) -> Result<String> {
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Numeric(format!("non-finite point ({x}, {y}) in plot '{}'", self.title)));
            }
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return Err(Error::Contract("nothing to plot".into()));
        }
        for g in &self.hlines {
            y0 = y0.min(g.value);
            y1 = y1.max(g.value);
        }
        for g in &self.vlines {
            x0 = x0.min(g.value);
            x1 = x1.max(g.value);
        }
        let (x0, x1) = padded(x0, x1);
        let (y0, y1) = padded(y0, y1);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in ticks(x0, x1) {
            let _ = writeln!(s, r#"<line class="tick" x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black"/><text x="{0:.2}" y="{3}" text-anchor="middle">{4}</text>"#, sx(t), TOP + ph, TOP + ph + 5.0, TOP + ph + 18.0, fmt_tick(t));
        }
        for t in ticks(y0, y1) {
            let _ = writeln!(s, r#"<line class="tick" x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="black"/><text x="{3}" y="{4:.2}" text-anchor="end">{5}</text>"#, LEFT - 5.0, sy(t), LEFT, LEFT - 8.0, sy(t) + 4.0, fmt_tick(t));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 10.0, escape(&self.x_label));
        let _ = writeln!(s, r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#, TOP + ph / 2.0, escape(&self.y_label));

        for g in &self.hlines {
            let y = sy(g.value);
            let _ = writeln!(s, r#"<line class="threshold" x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="gray" stroke-dasharray="6 4"/>"#, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" fill="gray">{}</text>"#, LEFT + pw + 4.0, y + 4.0, escape(&g.label));
        }
        for g in &self.vlines {
            let x = sx(g.value);
            let _ = writeln!(s, r#"<line class="boundary" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="gray" stroke-dasharray="2 3"/>"#, TOP + ph);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" fill="gray">{}</text>"#, x + 3.0, TOP + 12.0, escape(&g.label));
        }
        for (i, ser) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            let ly = TOP + 18.0 * (i as f64 + 1.0);
            let lx = LEFT + pw + 10.0;
            let _ = writeln!(
                s,
                r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
                lx + 18.0,
                lx + 22.0,
                ly + 4.0,
                escape(&ser.label)
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn stage_boundary(trace: &[TraceRecord]) -> Option<f64> {
    trace.iter().filter(|r| r.stage == 1).map(|r| r.iteration).max().filter(|_| trace.iter().any(|r| r.stage == 2)).map(|i| i as f64)
}

/// Ensemble fidelity against iteration with the 0.99 reference line.
pub fn convergence_plot(traces: &[(String, Vec<TraceRecord>)]) -> Result<String> {
    let mut p = LinePlot::new("Noise-averaged fidelity", "iteration", "fidelity");
    for (label, rows) in traces {
        p.series.push(Series { label: label.clone(), points: rows.iter().map(|r| (r.iteration as f64, r.fidelity)).collect() });
    }
    p.hline(FIDELITY_THRESHOLD, "F_th = 0.99");
    p.render()
}

/// Gate duration against iteration, marking where compression starts.
pub fn duration_plot(traces: &[(String, Vec<TraceRecord>)]) -> Result<String> {
    let mut p = LinePlot::new("Total pulse duration", "iteration", "T_g (ns)");
    for (label, rows) in traces {
        p.series.push(Series { label: label.clone(), points: rows.iter().map(|r| (r.iteration as f64, r.t_g_ns)).collect() });
    }
    if let Some(b) = traces.iter().find_map(|(_, rows)| stage_boundary(rows)) {
        p.vline(b, "stage II");
    }
    p.render()
}

/// Fidelity against σ, one line per gate and mode.
pub fn sigma_sweep_plot(rows: &[SweepRecord]) -> Result<String> {
    let mut p = LinePlot::new("Fidelity vs noise", "sigma", "fidelity");
    let name = |r: &SweepRecord| if r.qubits == 2 && r.gate != GateName::Cx { format!("{} (2Q)", r.gate) } else { r.gate.to_string() };
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.mode.clone(), name(r));
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (mode, gate) in keys {
        let mut pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.mode == mode && name(r) == gate).filter_map(|r| r.fidelity.map(|f| (r.sigma, f))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !pts.is_empty() {
            p.series.push(Series { label: format!("{gate} {mode}"), points: pts });
        }
    }
    p.render()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::CompressFlag;

    fn trace(n: usize, split: usize) -> Vec<TraceRecord> {
        (1..=n)
            .map(|i| TraceRecord {
                iteration: i,
                stage: if i <= split { 1 } else { 2 },
                fidelity: 1.0 - 0.5 / i as f64,
                loss_mse: 0.0,
                loss_pde: 0.0,
                loss_leak: 0.0,
                loss_phys: 0.0,
                loss_time: 0.0,
                loss_pen: 0.0,
                t_g_ns: if i <= split { 5.77 } else { 5.77 * 0.982f64.powi((i - split) as i32) },
                lr: 1e-3,
                compress_flag: CompressFlag::Fixed,
            })
            .collect()
    }

    #[test]
    fn single_trace_has_one_line_and_threshold() {
        let svg = convergence_plot(&[("x".into(), trace(20, 10))]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("class=\"threshold\"").count(), 1);
        assert!(svg.contains("F_th = 0.99"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn three_traces_get_a_legend() {
        let t: Vec<_> = ["0.01", "0.05", "0.10"].iter().map(|s| (format!("sigma {s}"), trace(15, 5))).collect();
        let svg = convergence_plot(&t).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("class=\"legend\"").count(), 3);
        assert!(svg.contains("sigma 0.05"));
    }

    #[test]
    fn duration_marks_boundary() {
        let svg = duration_plot(&[("x".into(), trace(30, 10))]).unwrap();
        assert!(svg.contains("class=\"boundary\""));
        let none = duration_plot(&[("x".into(), trace(8, 10))]).unwrap();
        assert!(!none.contains("class=\"boundary\""));
    }

    #[test]
    fn sweep_plot_groups_by_gate() {
        let mk = |g, s, f| SweepRecord { mode: "baseline".into(), gate: g, qubits: 1, sigma: s, fidelity: Some(f), std_error: None, t_g_ns: None, crossing_iteration: None, status: "ok".into() };
        let rows = vec![mk(GateName::X, 0.01, 0.99), mk(GateName::X, 0.1, 0.9), mk(GateName::Z, 0.01, 0.98), mk(GateName::Z, 0.1, 0.8)];
        let svg = sigma_sweep_plot(&rows).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn labels_are_escaped_and_bad_points_rejected() {
        let mut p = LinePlot::new("a<b", "x", "y");
        p.series.push(Series { label: "&".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] });
        let svg = p.render().unwrap();
        assert!(svg.contains("a&lt;b") && svg.contains("&amp;"));
        p.series[0].points.push((2.0, f64::NAN));
        assert!(p.render().is_err());
        assert!(LinePlot::new("", "", "").render().is_err());
    }

    #[test]
    fn tick_values_cover_range() {
        let t = ticks(0.0, 1.0);
        assert_eq!(t.first(), Some(&0.0));
        assert!((t.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(ticks(0.94, 1.002).len() >= 3);
    }
}
