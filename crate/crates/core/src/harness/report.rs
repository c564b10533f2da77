//! Per-episode report rows, trace CSV reading and SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{forward_kinematics, ArmParams};
use crate::error::{Error, Result};
use crate::reach::{TaskSpec, TraceRow};

/// Summary of one evaluation episode in report units (cm, s, N m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: usize,
    pub reached: bool,
    /// Time to reach the target, or the episode length when not reached [s].
    pub target_time_s: f64,
    /// Final tip-to-target distance [cm].
    pub target_error_cm: f64,
    /// RMS distance between the desired and the actual tip [cm].
    pub tracking_error_cm: f64,
    /// Largest per-joint torque magnitude over the episode [N m].
    pub max_torque_nm: f64,
    /// Controller ticks with the tip inside an obstacle.
    pub collision_ticks: usize,
}

/// Aggregate a trace. Read-only: the trace is not modified.
pub fn report_row(task_id: usize, trace: &[TraceRow], params: &ArmParams, task: &TaskSpec) -> Result<ReportRow> {
    let last = trace.last().ok_or_else(|| Error::InvalidParameter("empty trace".into()))?;
    let final_error = last.tip_error;
    let sq: f64 = trace
        .iter()
        .map(|r| {
            let d = forward_kinematics(&DVector::from_column_slice(&r.q_desired), params);
            (d.x - r.tip[0]).powi(2) + (d.y - r.tip[1]).powi(2)
        })
        .sum();
    let max_torque = trace.iter().flat_map(|r| r.tau.iter()).fold(0.0, |m: f64, t| m.max(t.abs()));
    Ok(ReportRow {
        task: task_id,
        reached: final_error < task.threshold,
        target_time_s: last.t,
        target_error_cm: 100.0 * final_error,
        tracking_error_cm: 100.0 * (sq / trace.len() as f64).sqrt(),
        max_torque_nm: max_torque,
        collision_ticks: trace.iter().filter(|r| task.tip_collides(r.tip)).count(),
    })
}

/// Parse a trace written by [`crate::reach::write_trace`].
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with('q') && !h.ends_with('d')).count();
    if header.len() != 1 + 3 * n + 4 {
        return Err(Error::Config(format!("{}: unexpected trace header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
            .collect::<Result<_>>()?;
        rows.push(TraceRow {
            t: v[0],
            q: v[1..1 + n].to_vec(),
            q_desired: v[1 + n..1 + 2 * n].to_vec(),
            tau: v[1 + 2 * n..1 + 3 * n].to_vec(),
            tip: [v[1 + 3 * n], v[2 + 3 * n]],
            tip_error: v[3 + 3 * n],
            reward: v[4 + 3 * n],
        });
    }
    Ok(rows)
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text table of report rows.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut s = String::from("task  reached  time[s]  target_err[cm]  tracking_err[cm]  max_torque[Nm]  collisions\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>4}  {:>7}  {:>7.2}  {:>14.2}  {:>16.3}  {:>14.1}  {:>10}",
            r.task, r.reached, r.target_time_s, r.target_error_cm, r.tracking_error_cm, r.max_torque_nm, r.collision_ticks
        );
    }
    s
}

/// One named polyline.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Minimal SVG line chart with axes, tick labels and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 70.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, ml + pw / 2.0, escape(title));
    let _ = writeln!(svg, r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
    for k in 0..=5 {
        let fx = x0 + (x1 - x0) * k as f64 / 5.0;
        let fy = y0 + (y1 - y0) * k as f64 / 5.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(fx), mt + ph + 18.0, tick(fx));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ml - 6.0, sy(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = mt + 16.0 * i as f64 + 10.0;
        let lx = ml + pw + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
