//! Self-contained SVG plots from trajectory CSVs.
//!
//! Two kinds: a phase portrait in the pitch/pitch-rate plane with the
//! barrier's zero level set overlaid, and the barrier value over time with
//! the zero line. No plotting dependency; fixed-precision coordinates keep
//! the output byte-reproducible for golden-file tests.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use crate::barrier::BarrierDescriptor;
use crate::harness::csv::read_trajectory_csv;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Pitch vs. pitch rate with the zero level set.
    PhasePortrait,
    /// Barrier value vs. time with the zero line.
    BarrierOverTime,
}

#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub csv: PathBuf,
    pub label: String,
    /// SVG color of the trace.
    pub color: String,
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub barrier: BarrierDescriptor,
    pub series: Vec<PlotSeries>,
    pub output: PathBuf,
}

/// Zero level set of a barrier in the pitch/pitch-rate plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelSet {
    /// Ellipse centered at `(theta_e, 0)` with the given semi-axes.
    Ellipse { center_theta: f64, semi_theta: f64, semi_rate: f64 },
    /// Horizontal band between `-rate` and `+rate`.
    Band { rate: f64 },
}

/// Analytic geometry of the `h = 0` set.
pub fn level_set_geometry(descriptor: &BarrierDescriptor) -> LevelSet {
    match *descriptor {
        BarrierDescriptor::PitchEllipse { theta_max, theta_e, c } => LevelSet::Ellipse {
            center_theta: theta_e,
            semi_theta: theta_max,
            semi_rate: theta_max / c.sqrt(),
        },
        BarrierDescriptor::PitchRate { c } => LevelSet::Band { rate: 1.0 / c.sqrt() },
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

/// Linear data-to-pixel map with a y flip.
struct AxisMap {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl AxisMap {
    fn from_bounds(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        let pad = |lo: f64, hi: f64| {
            let span = (hi - lo).max(1e-9);
            (lo - 0.08 * span, hi + 0.08 * span)
        };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Self { x_min, x_max, y_min, y_max }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn polyline(out: &mut String, points: impl Iterator<Item = (f64, f64)>, color: &str, width: f64) {
    let mut attr = String::new();
    for (x, y) in points {
        if !attr.is_empty() {
            attr.push(' ');
        }
        let _ = write!(attr, "{},{}", px(x), px(y));
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{attr}" fill="none" stroke="{color}" stroke-width="{width}"/>"#
    );
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, content: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="{anchor}" font-family="monospace" font-size="12">{content}</text>"#,
        px(x),
        px(y)
    );
}

struct LoadedSeries {
    label: String,
    color: String,
    t: Vec<f64>,
    theta: Vec<f64>,
    theta_dot: Vec<f64>,
    h: Vec<f64>,
}

fn load_series(spec: &PlotSpec) -> Result<Vec<LoadedSeries>> {
    spec.series
        .iter()
        .map(|s| {
            let cols = read_trajectory_csv(&s.csv)?;
            if spec.kind == PlotKind::BarrierOverTime && cols.h.is_empty() {
                return Err(Error::Malformed {
                    path: s.csv.clone(),
                    reason: "barrier-over-time plot needs an `h` column".into(),
                });
            }
            Ok(LoadedSeries {
                label: s.label.clone(),
                color: s.color.clone(),
                t: cols.t,
                theta: cols.theta,
                theta_dot: cols.theta_dot,
                h: cols.h,
            })
        })
        .collect()
}

fn svg_header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
}

fn axes_frame(out: &mut String, map: &AxisMap, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black" stroke-width="1"/>"#,
        px(MARGIN),
        px(MARGIN),
        px(WIDTH - 2.0 * MARGIN),
        px(HEIGHT - 2.0 * MARGIN)
    );
    text(out, WIDTH / 2.0, HEIGHT - 12.0, "middle", x_label);
    text(out, 14.0, MARGIN - 10.0, "start", y_label);
    // Corner tick labels carry the data ranges.
    text(out, MARGIN, HEIGHT - MARGIN + 16.0, "middle", &format!("{:.3}", map.x_min));
    text(out, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, "middle", &format!("{:.3}", map.x_max));
    text(out, MARGIN - 6.0, HEIGHT - MARGIN, "end", &format!("{:.3}", map.y_min));
    text(out, MARGIN - 6.0, MARGIN + 4.0, "end", &format!("{:.3}", map.y_max));
}

fn legend(out: &mut String, series: &[LoadedSeries]) {
    let mut seen: Vec<(&str, &str)> = Vec::new();
    for s in series {
        if !seen.iter().any(|(l, _)| *l == s.label) {
            seen.push((&s.label, &s.color));
        }
    }
    for (i, (label, color)) in seen.iter().enumerate() {
        let y = MARGIN + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            px(WIDTH - MARGIN - 110.0),
            px(y - 4.0),
            px(WIDTH - MARGIN - 86.0),
            px(y - 4.0)
        );
        text(out, WIDTH - MARGIN - 80.0, y, "start", label);
    }
}

fn phase_portrait(spec: &PlotSpec, series: &[LoadedSeries]) -> String {
    let geom = level_set_geometry(&spec.barrier);
    // Bounds cover the level set plus every trace.
    let (mut x_min, mut x_max, mut y_min, mut y_max) = match geom {
        LevelSet::Ellipse { center_theta, semi_theta, semi_rate } => (
            center_theta - semi_theta,
            center_theta + semi_theta,
            -semi_rate,
            semi_rate,
        ),
        LevelSet::Band { rate } => (-0.5, 0.5, -1.3 * rate, 1.3 * rate),
    };
    for s in series {
        for (&th, &thd) in s.theta.iter().zip(&s.theta_dot) {
            x_min = x_min.min(th);
            x_max = x_max.max(th);
            y_min = y_min.min(thd);
            y_max = y_max.max(thd);
        }
    }
    let map = AxisMap::from_bounds(x_min, x_max, y_min, y_max);

    let mut out = String::new();
    svg_header(&mut out);
    axes_frame(&mut out, &map, "theta (rad)", "theta_dot (rad/s)");

    match geom {
        LevelSet::Ellipse { center_theta, semi_theta, semi_rate } => {
            let rx = map.x(center_theta + semi_theta) - map.x(center_theta);
            let ry = map.y(0.0) - map.y(semi_rate);
            let _ = writeln!(
                out,
                r#"<ellipse cx="{}" cy="{}" rx="{}" ry="{}" fill="none" stroke="black" stroke-width="2"/>"#,
                px(map.x(center_theta)),
                px(map.y(0.0)),
                px(rx),
                px(ry)
            );
        }
        LevelSet::Band { rate } => {
            for sign in [-1.0, 1.0] {
                let y = map.y(sign * rate);
                let _ = writeln!(
                    out,
                    r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="2"/>"#,
                    px(map.x(map.x_min)),
                    px(y),
                    px(map.x(map.x_max)),
                    px(y)
                );
            }
        }
    }

    for s in series {
        polyline(
            &mut out,
            s.theta.iter().zip(&s.theta_dot).map(|(&th, &thd)| (map.x(th), map.y(thd))),
            &s.color,
            1.2,
        );
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

fn barrier_over_time(series: &[LoadedSeries]) -> String {
    let mut t_max: f64 = 1e-9;
    let mut h_min: f64 = 0.0;
    let mut h_max: f64 = 0.0;
    for s in series {
        for &t in &s.t {
            t_max = t_max.max(t);
        }
        for &h in &s.h {
            h_min = h_min.min(h);
            h_max = h_max.max(h);
        }
    }
    let map = AxisMap::from_bounds(0.0, t_max, h_min, h_max.max(1e-9));

    let mut out = String::new();
    svg_header(&mut out);
    axes_frame(&mut out, &map, "t (s)", "h");

    // Zero line.
    let y0 = map.y(0.0);
    let _ = writeln!(
        out,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="1" stroke-dasharray="6 4"/>"#,
        px(MARGIN),
        px(y0),
        px(WIDTH - MARGIN),
        px(y0)
    );

    for s in series {
        polyline(
            &mut out,
            s.t.iter().zip(&s.h).map(|(&t, &h)| (map.x(t), map.y(h))),
            &s.color,
            1.2,
        );
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

/// Render the plot and write it to `spec.output`.
pub fn emit_plot(spec: &PlotSpec) -> Result<()> {
    let series = load_series(spec)?;
    let svg = match spec.kind {
        PlotKind::PhasePortrait => phase_portrait(spec, &series),
        PlotKind::BarrierOverTime => barrier_over_time(&series),
    };
    let mut f = std::fs::File::create(&spec.output).map_err(|e| Error::io(&spec.output, e))?;
    f.write_all(svg.as_bytes()).map_err(|e| Error::io(&spec.output, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_geometry_matches_barrier_parameters() {
        let geom = level_set_geometry(&BarrierDescriptor::PitchEllipse {
            theta_max: 0.3,
            theta_e: 0.05,
            c: 0.1,
        });
        match geom {
            LevelSet::Ellipse { center_theta, semi_theta, semi_rate } => {
                assert_eq!(center_theta, 0.05);
                assert_eq!(semi_theta, 0.3);
                assert!((semi_rate - 0.3 / 0.1f64.sqrt()).abs() < 1e-15);
            }
            _ => panic!("expected ellipse"),
        }
    }

    #[test]
    fn band_geometry_matches_rate_bound() {
        let geom = level_set_geometry(&BarrierDescriptor::PitchRate { c: 0.25 });
        assert_eq!(geom, LevelSet::Band { rate: 2.0 });
    }

    #[test]
    fn empty_series_emits_level_set_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("empty.svg");
        let spec = PlotSpec {
            kind: PlotKind::PhasePortrait,
            barrier: BarrierDescriptor::PitchEllipse { theta_max: 0.3, theta_e: 0.0, c: 0.1 },
            series: vec![],
            output: out.clone(),
        };
        emit_plot(&spec).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<ellipse"));
        assert!(!svg.contains("<polyline"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn missing_csv_is_an_error() {
        let spec = PlotSpec {
            kind: PlotKind::BarrierOverTime,
            barrier: BarrierDescriptor::PitchRate { c: 0.25 },
            series: vec![PlotSeries {
                csv: PathBuf::from("/nonexistent/file.csv"),
                label: "x".into(),
                color: "green".into(),
            }],
            output: PathBuf::from("/tmp/never-written.svg"),
        };
        assert!(emit_plot(&spec).is_err());
    }
}
