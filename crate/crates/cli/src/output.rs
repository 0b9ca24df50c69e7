//! Trajectory CSV and SVG plots.

use std::fmt::Write as _;

use hybrid_attitude::controllers::{ControllerKind, LoopRecord, LoopState};
use hybrid_attitude::hybrid::HybridArc;
use hybrid_attitude::monitors::{CertificationReport, MonitorRecord};
use hybrid_attitude::potential::{potential, PotentialParams};
use hybrid_attitude::so3::rot_distance;

pub const BASE_COLUMNS: [&str; 13] = [
    "t",
    "j",
    "dist_Re",
    "theta",
    "we_x",
    "we_y",
    "we_z",
    "tau_x",
    "tau_y",
    "tau_z",
    "U",
    "lyap",
    "in_jump_set",
];

pub fn extra_columns(kind: ControllerKind) -> &'static [&'static str] {
    match kind {
        ControllerKind::Smooth(_) => &["zeta_x", "zeta_y", "zeta_z"],
        ControllerKind::VelocityFree => &["dist_Rtilde", "theta_bar"],
        ControllerKind::Basic | ControllerKind::NonHybrid => &[],
    }
}

pub fn header(kind: ControllerKind) -> String {
    BASE_COLUMNS
        .iter()
        .chain(extra_columns(kind))
        .copied()
        .collect::<Vec<_>>()
        .join(",")
}

/// Indices of the samples written to CSV: every `stride`-th sample plus
/// both sides of each jump and the final sample.
pub fn kept_samples<R>(arc: &HybridArc<R>, stride: usize) -> Vec<usize> {
    let n = arc.samples.len();
    let mut keep = vec![false; n];
    for (i, k) in keep.iter_mut().enumerate() {
        *k = i % stride.max(1) == 0;
    }
    for e in &arc.jumps {
        keep[e.pre] = true;
        keep[e.post] = true;
    }
    keep[n - 1] = true;
    (0..n).filter(|&i| keep[i]).collect()
}

/// Renders the arc as CSV with a `#` footer summarizing the certification.
pub fn trajectory_csv(
    arc: &HybridArc<LoopRecord>,
    series: &[MonitorRecord],
    kind: ControllerKind,
    p: &PotentialParams,
    report: &CertificationReport,
    stride: usize,
) -> String {
    let mut out = header(kind);
    out.push('\n');
    for i in kept_samples(arc, stride) {
        let sample = &arc.samples[i];
        let s = LoopState::from_slice(&sample.state);
        let tau = sample.record.torque;
        let mut fields: Vec<String> = vec![
            sample.time.t.to_string(),
            sample.time.j.to_string(),
            rot_distance(&s.re).to_string(),
            s.theta.to_string(),
            s.omega_e.x.to_string(),
            s.omega_e.y.to_string(),
            s.omega_e.z.to_string(),
            tau.x.to_string(),
            tau.y.to_string(),
            tau.z.to_string(),
            potential(&s.re, s.theta, p).to_string(),
            series[i].lyapunov.to_string(),
            u8::from(sample.record.in_jump_set).to_string(),
        ];
        match kind {
            ControllerKind::Smooth(_) => {
                fields.extend([s.zeta.x, s.zeta.y, s.zeta.z].map(|v| v.to_string()));
            }
            ControllerKind::VelocityFree => {
                fields.push(rot_distance(&s.rtilde).to_string());
                fields.push(s.theta_bar.to_string());
            }
            ControllerKind::Basic | ControllerKind::NonHybrid => {}
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out.push_str(&csv_footer(report));
    out
}

fn csv_footer(r: &CertificationReport) -> String {
    let list = |v: &[f64]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(";");
    let mut s = String::new();
    let _ = writeln!(s, "# certification: {}", if r.passed() { "PASS" } else { "FAIL" });
    let _ = writeln!(s, "# monitor: {}", r.monitor);
    let _ = writeln!(s, "# jumps: {} (bound {})", r.jump_count, r.jump_bound);
    let _ = writeln!(s, "# required_drop: {}", r.required_drop);
    let _ = writeln!(s, "# jump_drops: {}", list(&r.jump_drops));
    let _ = writeln!(s, "# measured_jump_drops: {}", list(&r.measured_jump_drops));
    if r.flow_checked {
        let _ = writeln!(s, "# max_flow_increase: {}", r.max_flow_increase);
    } else {
        let _ = writeln!(s, "# max_flow_increase: not checked (noisy measurements)");
    }
    let _ = writeln!(s, "# max_torque_jump: {}", r.max_torque_jump);
    if let Some(fit) = &r.rate {
        let _ = writeln!(s, "# tail_rate: slope {} r_squared {}", fit.slope, fit.r_squared);
    }
    for f in &r.failures {
        let _ = writeln!(s, "# failure: {f}");
    }
    s
}

/// One named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a line chart with axes, ticks and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 170.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);

    let finite = series.iter().flat_map(|s| &s.points).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="#ddd"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-2 && v.abs() < 1e4) {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}
