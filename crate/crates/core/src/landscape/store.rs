//! Text formats for surfaces, curves, and trajectories.
//!
//! A surface file is one line of compact JSON (the header) followed by a
//! headerless CSV body with one row per alpha sample.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    AxesMeta, CurveSamples, GridSpec, OriginMeta, SurfaceGrid, SurfaceKind, TrajectoryPoint,
    TrajectoryProjection,
};
use crate::error::{Error, Result};
use crate::num;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceHeader {
    format_version: u32,
    spec: GridSpec,
    kind: SurfaceKind,
    axes: AxesMeta,
    origin: OriginMeta,
}

pub fn write_surface<W: Write>(grid: &SurfaceGrid, mut out: W) -> Result<()> {
    grid.validate()?;
    let header = SurfaceHeader {
        format_version: FORMAT_VERSION,
        spec: grid.spec.clone(),
        kind: grid.kind,
        axes: grid.axes.clone(),
        origin: grid.origin.clone(),
    };
    let mut text = serde_json::to_string(&header)?;
    text.push('\n');
    for row in &grid.values {
        let cells: Vec<String> = row.iter().map(|&v| num::exact(v)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<surface>", e))
}

pub fn read_surface<R: Read>(input: R) -> Result<SurfaceGrid> {
    let mut lines = BufReader::new(input).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format("surface", "empty file"))?
        .map_err(|e| Error::io("<surface>", e))?;
    let header: SurfaceHeader = serde_json::from_str(&first)
        .map_err(|e| Error::format("surface", format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            "surface",
            format!("unsupported format version {}", header.format_version),
        ));
    }
    let values = lines
        .map(|line| {
            let line = line.map_err(|e| Error::io("<surface>", e))?;
            line.split(',')
                .map(|c| num::parse("surface", c))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = SurfaceGrid {
        spec: header.spec,
        values,
        kind: header.kind,
        axes: header.axes,
        origin: header.origin,
    };
    grid.validate()?;
    Ok(grid)
}

const CURVE_HEADER: [&str; 3] = ["alpha", "loss", "axis_scale"];

pub fn write_curve_csv<W: Write>(curve: &CurveSamples, out: W) -> Result<()> {
    curve.validate()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for (&a, &l) in curve.alphas.iter().zip(&curve.losses) {
        w.write_record([num::exact(a), num::exact(l), num::exact(curve.axis_scale)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_curve_csv<R: Read>(input: R) -> Result<CurveSamples> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(CURVE_HEADER) {
        return Err(Error::format("curve", "unexpected header"));
    }
    let mut curve = CurveSamples {
        alphas: Vec::new(),
        losses: Vec::new(),
        axis_scale: f64::NAN,
    };
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::format("curve", "expected 3 columns"));
        }
        curve.alphas.push(num::parse("curve", &rec[0])?);
        curve.losses.push(num::parse("curve", &rec[1])?);
        let scale = num::parse("curve", &rec[2])?;
        if curve.alphas.len() > 1 && scale.to_bits() != curve.axis_scale.to_bits() {
            return Err(Error::format("curve", "axis_scale differs between rows"));
        }
        curve.axis_scale = scale;
    }
    curve.validate()?;
    Ok(curve)
}

const TRAJECTORY_HEADER: [&str; 4] = ["epoch", "d_alpha", "d_beta", "v_cos"];

/// Writes a trajectory; an unmoved checkpoint has an empty `v_cos` cell.
pub fn write_trajectory_csv<W: Write>(traj: &TrajectoryProjection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for p in &traj.points {
        w.write_record([
            p.epoch.to_string(),
            num::exact(p.d_alpha),
            num::exact(p.d_beta),
            p.v_cos.map(num::exact).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<TrajectoryProjection> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::format("trajectory", "unexpected header"));
    }
    let points = r
        .records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::format("trajectory", "expected 4 columns"));
            }
            Ok(TrajectoryPoint {
                epoch: rec[0]
                    .parse()
                    .map_err(|_| Error::format("trajectory", format!("bad epoch `{}`", &rec[0])))?,
                d_alpha: num::parse("trajectory", &rec[1])?,
                d_beta: num::parse("trajectory", &rec[2])?,
                v_cos: match &rec[3] {
                    "" => None,
                    s => Some(num::parse("trajectory", s)?),
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrajectoryProjection { points })
}
