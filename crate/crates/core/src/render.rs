//! Deterministic SVG output for surfaces, curves, and trajectories.
//!
//! All coordinates are printed with a fixed number of decimals, so identical
//! inputs give identical bytes.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::{SurfaceGrid, SurfaceKind, TrajectoryProjection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderKind {
    Contour,
    Heatmap,
    Curve,
    TrajectoryOverlay,
}

impl std::str::FromStr for RenderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contour" => Ok(Self::Contour),
            "heatmap" => Ok(Self::Heatmap),
            "curve" => Ok(Self::Curve),
            "trajectory_overlay" | "trajectory-overlay" => Ok(Self::TrajectoryOverlay),
            other => Err(Error::InvalidConfig(format!(
                "unknown render kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSpec {
    pub kind: RenderKind,
    /// Values above the cap share the top color. Only the picture is clipped.
    pub color_cap: f64,
    /// Contour levels; empty means `DEFAULT_LEVELS` evenly spaced below the cap.
    pub levels: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

const DEFAULT_LEVELS: usize = 10;

impl RenderSpec {
    /// Defaults for `kind`, with the color cap chosen by what a surface holds.
    pub fn new(kind: RenderKind, surface: Option<SurfaceKind>) -> Self {
        Self {
            kind,
            color_cap: match surface {
                Some(SurfaceKind::DevError) => 1.0,
                _ => 3.0,
            },
            levels: Vec::new(),
            width: 480,
            height: 480,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.color_cap > 0.0 && self.color_cap.is_finite()) {
            return Err(Error::InvalidConfig("color cap must be positive".into()));
        }
        if !self.levels.windows(2).all(|w| w[1] > w[0])
            || self.levels.iter().any(|l| !l.is_finite())
        {
            return Err(Error::InvalidConfig(
                "contour levels must be finite and strictly increasing".into(),
            ));
        }
        if self.width < 64 || self.height < 64 {
            return Err(Error::InvalidConfig("canvas must be at least 64x64".into()));
        }
        Ok(())
    }

    fn resolved_levels(&self) -> Vec<f64> {
        if self.levels.is_empty() {
            (1..=DEFAULT_LEVELS)
                .map(|i| self.color_cap * i as f64 / (DEFAULT_LEVELS + 1) as f64)
                .collect()
        } else {
            self.levels.clone()
        }
    }
}

/// A straight piece of a level set, in grid coordinates.
pub type Segment = [(f64, f64); 2];

/// The level set of one contour value.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub level: f64,
    pub segments: Vec<Segment>,
}

/// Crossing of `level` on the edge between two lattice nodes. The nodes are
/// put in a fixed order first, so the cells on either side of an edge
/// compute the same point bit for bit.
fn crossing(
    p: (usize, usize),
    q: (usize, usize),
    vp: f64,
    vq: f64,
    level: f64,
    xs: &[f64],
    ys: &[f64],
) -> (f64, f64) {
    let ((p, vp), (q, vq)) = if p <= q {
        ((p, vp), (q, vq))
    } else {
        ((q, vq), (p, vp))
    };
    let t = (level - vp) / (vq - vp);
    let at = |i: usize, j: usize| (xs[i], ys[j]);
    let (a, b) = (at(p.0, p.1), at(q.0, q.1));
    ((1.0 - t) * a.0 + t * b.0, (1.0 - t) * a.1 + t * b.1)
}

/// Marching squares over `values[i][j]` sampled at `(xs[i], ys[j])`.
///
/// Only levels strictly inside the finite value range produce a set. Saddle
/// cells are split by the mean of their corners.
pub fn contours(values: &[Vec<f64>], xs: &[f64], ys: &[f64], levels: &[f64]) -> Vec<LevelSet> {
    let finite = values.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    levels
        .iter()
        .filter(|&&l| l > lo && l < hi)
        .map(|&level| {
            let mut segments = Vec::new();
            for i in 0..xs.len().saturating_sub(1) {
                for j in 0..ys.len().saturating_sub(1) {
                    cell_segments(values, xs, ys, i, j, level, &mut segments);
                }
            }
            LevelSet { level, segments }
        })
        .collect()
}

fn cell_segments(
    values: &[Vec<f64>],
    xs: &[f64],
    ys: &[f64],
    i: usize,
    j: usize,
    level: f64,
    out: &mut Vec<Segment>,
) {
    // Corners counter-clockwise from (i, j).
    let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
    let v: Vec<f64> = corners.iter().map(|&(a, b)| values[a][b]).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return;
    }
    let above: Vec<bool> = v.iter().map(|&x| x > level).collect();
    let edge = |e: usize| {
        let (a, b) = (e, (e + 1) % 4);
        crossing(corners[a], corners[b], v[a], v[b], level, xs, ys)
    };
    // A lattice node lying exactly on the level can make both ends coincide.
    let mut push = |a: (f64, f64), b: (f64, f64)| {
        if a != b {
            out.push([a, b]);
        }
    };
    let cut: Vec<usize> = (0..4).filter(|&e| above[e] != above[(e + 1) % 4]).collect();
    match cut.len() {
        2 => push(edge(cut[0]), edge(cut[1])),
        4 => {
            let center_above = v.iter().sum::<f64>() / 4.0 > level;
            // Corner 0 and its opposite share a side; join the edges that
            // separate them from the other pair accordingly.
            if center_above == above[0] {
                push(edge(0), edge(1));
                push(edge(2), edge(3));
            } else {
                push(edge(3), edge(0));
                push(edge(1), edge(2));
            }
        }
        _ => {}
    }
}

const MARGIN: f64 = 48.0;

/// Linear map from data to canvas coordinates.
struct Frame {
    x: [f64; 2],
    y: [f64; 2],
    w: f64,
    h: f64,
}

impl Frame {
    fn new(x: [f64; 2], y: [f64; 2], spec: &RenderSpec) -> Self {
        let pad = |[a, b]: [f64; 2]| if b > a { [a, b] } else { [a - 0.5, b + 0.5] };
        Self {
            x: pad(x),
            y: pad(y),
            w: spec.width as f64 - 2.0 * MARGIN,
            h: spec.height as f64 - 2.0 * MARGIN,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x[0]) / (self.x[1] - self.x[0]) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        MARGIN + self.h - (y - self.y[0]) / (self.y[1] - self.y[0]) * self.h
    }
}

/// Five-stop perceptual ramp from dark blue to yellow.
const RAMP: [(u8, u8, u8); 5] = [
    (68, 1, 84),
    (59, 82, 139),
    (33, 145, 140),
    (94, 201, 98),
    (253, 231, 37),
];

fn color(v: f64, cap: f64) -> String {
    if !v.is_finite() {
        return "#ffffff".into();
    }
    let t = (v / cap).clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - k as f64;
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    let (a, b) = (RAMP[k], RAMP[k + 1]);
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(a.0, b.0),
        mix(a.1, b.1),
        mix(a.2, b.2)
    )
}

fn header(spec: &RenderSpec) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
        w = spec.width,
        h = spec.height
    )
}

fn axes(svg: &mut String, frame: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1) = (frame.px(frame.x[0]), frame.px(frame.x[1]));
    let (y0, y1) = (frame.py(frame.y[0]), frame.py(frame.y[1]));
    let _ = writeln!(
        svg,
        "<rect x=\"{x0:.2}\" y=\"{y1:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#000000\"/>",
        x1 - x0,
        y0 - y1
    );
    for (v, x) in [(frame.x[0], x0), (frame.x[1], x1)] {
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            y0 + 14.0,
            tick(v)
        );
    }
    for (v, y) in [(frame.y[0], y0), (frame.y[1], y1)] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            x0 - 4.0,
            y + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        y0 + 30.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 {:.2} {:.2})\">{}</text>",
        x0 - 30.0,
        (y0 + y1) / 2.0,
        x0 - 30.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders a surface as a heatmap, with contour lines for `Contour` and
/// `TrajectoryOverlay`, and the projected path for `TrajectoryOverlay`.
pub fn render_surface(
    grid: &SurfaceGrid,
    spec: &RenderSpec,
    trajectory: Option<&TrajectoryProjection>,
) -> Result<String> {
    spec.validate()?;
    grid.validate()?;
    if spec.kind == RenderKind::Curve {
        return Err(Error::InvalidConfig(
            "a surface cannot be drawn as a curve".into(),
        ));
    }
    if spec.kind == RenderKind::TrajectoryOverlay && trajectory.is_none() {
        return Err(Error::InvalidConfig(
            "trajectory overlay needs a trajectory".into(),
        ));
    }
    let (xs, ys) = (grid.spec.alphas(), grid.spec.betas());
    let frame = Frame::new(grid.spec.alpha_range, grid.spec.beta_range, spec);
    let mut svg = header(spec);
    // Cells are centred on their samples and cover half a step either way.
    let half = |v: &[f64], k: usize| {
        let lo = if k == 0 {
            v[0]
        } else {
            (v[k - 1] + v[k]) / 2.0
        };
        let hi = if k + 1 == v.len() {
            v[k]
        } else {
            (v[k] + v[k + 1]) / 2.0
        };
        (lo, hi)
    };
    for (i, row) in grid.values.iter().enumerate() {
        let (a0, a1) = half(&xs, i);
        for (j, &v) in row.iter().enumerate() {
            let (b0, b1) = half(&ys, j);
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                frame.px(a0),
                frame.py(b1),
                frame.px(a1) - frame.px(a0),
                frame.py(b0) - frame.py(b1),
                color(v, spec.color_cap)
            );
        }
    }
    if spec.kind != RenderKind::Heatmap {
        for set in contours(&grid.values, &xs, &ys, &spec.resolved_levels()) {
            let mut d = String::new();
            for [(x0, y0), (x1, y1)] in &set.segments {
                let _ = write!(
                    d,
                    "M{:.2} {:.2}L{:.2} {:.2}",
                    frame.px(*x0),
                    frame.py(*y0),
                    frame.px(*x1),
                    frame.py(*y1)
                );
            }
            let _ = writeln!(
                svg,
                "<path data-level=\"{}\" d=\"{d}\" fill=\"none\" stroke=\"#ffffff\" stroke-width=\"1\"/>",
                tick(set.level)
            );
        }
    }
    if let Some(traj) = trajectory {
        draw_trajectory(&mut svg, &frame, traj);
    }
    let ylabel = match grid.axes.group.as_deref() {
        Some(g) => format!("beta ({g})"),
        None => "beta".to_string(),
    };
    axes(&mut svg, &frame, "alpha", &ylabel);
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn draw_trajectory(svg: &mut String, frame: &Frame, traj: &TrajectoryProjection) {
    // The path starts at the plane origin, where every run begins.
    let pts: Vec<(f64, f64)> = std::iter::once((0.0, 0.0))
        .chain(traj.points.iter().map(|p| (p.d_alpha, p.d_beta)))
        .collect();
    let d: Vec<String> = pts
        .iter()
        .map(|&(a, b)| format!("{:.2},{:.2}", frame.px(a), frame.py(b)))
        .collect();
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>",
        d.join(" ")
    );
    for &(a, b) in &pts[1..] {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#d62728\"/>",
            frame.px(a),
            frame.py(b)
        );
    }
    let (sa, sb) = pts[0];
    let _ = writeln!(
        svg,
        "<rect class=\"start\" x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"#ffffff\" stroke=\"#000000\"/>",
        frame.px(sa) - 4.0,
        frame.py(sb) - 4.0
    );
    let &(ea, eb) = pts.last().expect("nonempty path");
    let _ = writeln!(
        svg,
        "<circle class=\"end\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"#000000\"/>",
        frame.px(ea),
        frame.py(eb)
    );
}

/// One named polyline of a line chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Line chart of `series`. The y axis is capped at the spec's color cap.
pub fn render_curves(
    series: &[Series],
    spec: &RenderSpec,
    xlabel: &str,
    ylabel: &str,
) -> Result<String> {
    spec.validate()?;
    let all = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.0.is_finite() && p.1.is_finite())
    };
    if all().next().is_none() {
        return Err(Error::InvalidConfig("nothing to plot".into()));
    }
    let (xmin, xmax) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p.0), b.max(p.0))
    });
    let ymax = all().fold(0.0f64, |m, p| m.max(p.1)).min(spec.color_cap);
    let ymin = all().fold(0.0f64, |m, p| m.min(p.1));
    let frame = Frame::new([xmin, xmax], [ymin, ymax], spec);
    let mut svg = header(spec);
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y.min(ymax))))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"{colour}\">{}</text>",
            MARGIN + 6.0,
            MARGIN + 14.0 * (k + 1) as f64,
            escape(&s.label)
        );
    }
    axes(&mut svg, &frame, xlabel, ylabel);
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{Anchor, AxesMeta, GridSpec, OriginMeta, TrajectoryPoint};

    /// Counts how often each endpoint occurs across a level set's segments.
    fn endpoint_degrees(set: &LevelSet) -> std::collections::HashMap<(u64, u64), usize> {
        let mut deg = std::collections::HashMap::new();
        for seg in &set.segments {
            for &(x, y) in seg {
                *deg.entry((x.to_bits(), y.to_bits())).or_insert(0) += 1;
            }
        }
        deg
    }

    fn bowl_grid(n: usize) -> SurfaceGrid {
        let spec = GridSpec::new([-4.0, 4.0], [-4.0, 4.0], n).unwrap();
        let betas = spec.betas();
        let values = spec
            .alphas()
            .iter()
            .map(|a| betas.iter().map(|b| a * a + b * b).collect())
            .collect();
        SurfaceGrid {
            spec,
            values,
            kind: SurfaceKind::TrainLoss,
            axes: AxesMeta {
                first: "a".into(),
                second: Some("b".into()),
                axis_scale: 1.0,
                cosine: Some(0.0),
                group: None,
                subsample: None,
            },
            origin: OriginMeta {
                anchor: Anchor::Initial,
                id: "o".into(),
            },
        }
    }

    #[test]
    fn bowl_contours_are_closed_circles() {
        let g = bowl_grid(41);
        let (xs, ys) = (g.spec.alphas(), g.spec.betas());
        // -1 and 40 miss the value range [0, 32]; 20 crosses the border, so its set is open.
        let levels = [-1.0, 1.0, 4.0, 9.0, 20.0, 40.0];
        let sets = contours(&g.values, &xs, &ys, &levels);
        assert_eq!(sets.len(), 4);
        for set in sets.iter().filter(|s| s.level < 16.0) {
            assert!(
                endpoint_degrees(set).values().all(|&d| d == 2),
                "level {} not closed",
                set.level
            );
            let r = set.level.sqrt();
            for &(x, y) in set.segments.iter().flatten() {
                assert!(((x * x + y * y).sqrt() - r).abs() < 0.05);
            }
        }
    }

    #[test]
    fn saddle_cells_give_two_segments() {
        let values = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let sets = contours(&values, &[0.0, 1.0], &[0.0, 1.0], &[0.5]);
        assert_eq!(sets[0].segments.len(), 2);
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        let g = bowl_grid(9);
        let spec = RenderSpec::new(RenderKind::Contour, Some(SurfaceKind::TrainLoss));
        let a = render_surface(&g, &spec, None).unwrap();
        assert_eq!(a, render_surface(&g, &spec, None).unwrap());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("data-level"));
        let heat = render_surface(&g, &RenderSpec::new(RenderKind::Heatmap, None), None).unwrap();
        assert!(!heat.contains("data-level"));
    }

    #[test]
    fn overlay_marks_start_and_end() {
        let g = bowl_grid(9);
        let traj = TrajectoryProjection {
            points: vec![
                TrajectoryPoint {
                    epoch: 1,
                    d_alpha: 0.4,
                    d_beta: 0.3,
                    v_cos: Some(0.8),
                },
                TrajectoryPoint {
                    epoch: 2,
                    d_alpha: 1.0,
                    d_beta: 0.0,
                    v_cos: Some(1.0),
                },
            ],
        };
        let spec = RenderSpec::new(RenderKind::TrajectoryOverlay, None);
        let svg = render_surface(&g, &spec, Some(&traj)).unwrap();
        assert!(svg.contains("class=\"start\"") && svg.contains("class=\"end\""));
        assert!(svg.contains("<polyline"));
        assert!(render_surface(&g, &spec, None).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = RenderSpec::new(RenderKind::Contour, None);
        spec.levels = vec![1.0, 1.0];
        assert!(spec.validate().is_err());
        spec.levels = vec![1.0, 2.0];
        assert!(spec.validate().is_ok());
        spec.color_cap = 0.0;
        assert!(spec.validate().is_err());
        assert_eq!(color(5.0, 3.0), color(3.0, 3.0));
        assert!("radar".parse::<RenderKind>().is_err());
    }

    #[test]
    fn curves_render_every_series() {
        let s = [
            Series {
                label: "fine-tune".into(),
                points: vec![(0.0, 0.7), (1.0, 0.3)],
            },
            Series {
                label: "scratch".into(),
                points: vec![(0.0, 0.7), (1.0, 9.0)],
            },
        ];
        let spec = RenderSpec::new(RenderKind::Curve, None);
        let svg = render_curves(&s, &spec, "epoch", "loss").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg, render_curves(&s, &spec, "epoch", "loss").unwrap());
        assert!(render_curves(&[], &spec, "x", "y").is_err());
    }
}
