//! Loss-landscape probes over parameter space.
//!
//! Every probe samples a plane spanned by a "first" direction (where training
//! went) and an optional "second" direction (where training on another task
//! went). Points are built in chord form, `(1 - s)·origin + s·target`, so the
//! anchor cells reproduce the stored parameters bit for bit.

mod grid;
mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, Head, Model};
use crate::param::{Direction, LayerGroup, ParamVector};
use crate::train::TrainRun;

pub use grid::{eval_grid, GridEval, GridSpec};
pub use store::{
    read_curve_csv, read_surface, read_trajectory_csv, write_curve_csv, write_surface,
    write_trajectory_csv,
};

/// Scalar function of the parameters sampled over a grid.
pub trait LossEvaluator: Sync {
    fn loss(&self, params: &ParamVector) -> Result<f64>;
}

impl<F> LossEvaluator for F
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    fn loss(&self, params: &ParamVector) -> Result<f64> {
        self(params)
    }
}

/// Mean classification loss over a fixed set of examples.
pub struct DatasetLoss<'a> {
    pub model: &'a Model,
    pub data: &'a [Example],
}

impl LossEvaluator for DatasetLoss<'_> {
    fn loss(&self, params: &ParamVector) -> Result<f64> {
        Ok(self
            .model
            .forward_loss(params, self.data, Head::Classification)?
            .loss)
    }
}

/// Classification error rate over a fixed set of examples.
pub struct DatasetError<'a> {
    pub model: &'a Model,
    pub data: &'a [Example],
}

impl LossEvaluator for DatasetError<'_> {
    fn loss(&self, params: &ParamVector) -> Result<f64> {
        Ok(self
            .model
            .evaluate(params, self.data, Head::Classification)?
            .error_rate)
    }
}

/// A 2D affine slice of parameter space.
///
/// The point at `(alpha, beta)` is `origin + alpha·first + beta·second`, with
/// `first = (target - origin) / reach`. `reach` is `1` when the target sits at
/// `alpha = 1` and `-1` when it sits at `alpha = -1`.
#[derive(Debug, Clone)]
pub struct Plane {
    origin: ParamVector,
    target: ParamVector,
    reach: f64,
    second: Option<Direction>,
    axes: AxesMeta,
    anchor: OriginMeta,
}

impl Plane {
    /// The plane through `theta0` along `theta1 - theta0` and, if given,
    /// `theta2 - theta0` rescaled to the length of the first direction.
    ///
    /// The origin borrows the task head of `theta1`, so the whole plane is
    /// scored with the fine-tuned head and neither direction moves the head.
    pub fn through(
        theta0: &ParamVector,
        theta1: &ParamVector,
        theta2: Option<&ParamVector>,
    ) -> Result<Self> {
        let origin = theta0.with_head_from(theta1)?;
        let first = theta1.diff(&origin)?;
        let axis_scale = first.norm();
        if axis_scale == 0.0 {
            return Err(Error::ZeroDirection);
        }
        let second = theta2
            .map(|t2| t2.diff(theta0).map(|d| d.without_head()))
            .transpose()?
            .map(|d| d.rescale_to(axis_scale))
            .transpose()?;
        let cosine = second.as_ref().map(|s| first.cosine(s)).transpose()?;
        Ok(Self {
            axes: AxesMeta {
                first: format!("{} - {}", theta1.id(), theta0.id()),
                second: theta2.map(|t| format!("{} - {}", t.id(), theta0.id())),
                axis_scale,
                cosine,
                group: None,
                subsample: None,
            },
            anchor: OriginMeta {
                anchor: Anchor::Initial,
                id: theta0.id().to_string(),
            },
            origin,
            target: theta1.clone(),
            reach: 1.0,
            second,
        })
    }

    /// The plane through `theta1` along the `group` part of `theta1 - theta0`
    /// and the `group` part of `second`, rescaled to match.
    ///
    /// `alpha = -1, beta = 0` is `theta1` with `group` rolled back to `theta0`.
    pub fn layer_group(
        theta1: &ParamVector,
        theta0: &ParamVector,
        second: &Direction,
        group: &LayerGroup,
    ) -> Result<Self> {
        let first = theta1.diff(theta0)?.mask_to_group(group)?;
        let axis_scale = first.norm();
        if axis_scale == 0.0 {
            return Err(Error::EmptyGroupDirection(group.label.clone()));
        }
        let masked = second.mask_to_group(group)?;
        if masked.is_zero() {
            return Err(Error::EmptyGroupDirection(group.label.clone()));
        }
        let second_dir = masked.rescale_to(axis_scale)?;
        let cosine = first.cosine(&second_dir)?;
        Ok(Self {
            axes: AxesMeta {
                first: format!("{} - {}", theta1.id(), theta0.id()),
                second: Some(second.provenance().to_string()),
                axis_scale,
                cosine: Some(cosine),
                group: Some(group.label.clone()),
                subsample: None,
            },
            anchor: OriginMeta {
                anchor: Anchor::Finetuned,
                id: theta1.id().to_string(),
            },
            origin: theta1.clone(),
            target: theta1.splice_group(theta0, group)?,
            reach: -1.0,
            second: Some(second_dir),
        })
    }

    pub fn axes(&self) -> &AxesMeta {
        &self.axes
    }

    pub fn origin_meta(&self) -> &OriginMeta {
        &self.anchor
    }

    /// Parameters at plane coordinates `(alpha, beta)`.
    pub fn point(&self, alpha: f64, beta: f64) -> Result<ParamVector> {
        let s = alpha / self.reach;
        let mut values: Vec<f64> = self
            .origin
            .values()
            .iter()
            .zip(self.target.values())
            .map(|(&a, &t)| {
                if a.to_bits() == t.to_bits() {
                    a
                } else {
                    (1.0 - s) * a + s * t
                }
            })
            .collect();
        if let Some(d) = self.second.as_ref().filter(|_| beta != 0.0) {
            for (v, &x) in values.iter_mut().zip(d.values()) {
                if x != 0.0 {
                    *v += beta * x;
                }
            }
        }
        ParamVector::new(self.origin.layout().clone(), values)
    }
}

/// What a surface's axes are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxesMeta {
    pub first: String,
    pub second: Option<String>,
    /// Length of the first direction; both axes share it.
    pub axis_scale: f64,
    /// Cosine between the first and the rescaled second direction.
    pub cosine: Option<f64>,
    pub group: Option<String>,
    /// Number of examples scored per cell when evaluated on a subsample.
    pub subsample: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// The origin is the initialization of the fine-tuning run.
    Initial,
    /// The origin is the fine-tuned endpoint.
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginMeta {
    pub anchor: Anchor,
    pub id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    TrainLoss,
    DevError,
}

/// Loss along the segment through two points.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSamples {
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
    pub axis_scale: f64,
}

impl CurveSamples {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.len() != self.losses.len() || self.alphas.is_empty() {
            return Err(Error::format(
                "curve",
                "alphas and losses must be nonempty and equally long",
            ));
        }
        if !self.alphas.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::format("curve", "alphas must be strictly increasing"));
        }
        Ok(())
    }
}

/// Values sampled over a [`GridSpec`]; `values[i][j]` is at `(alphas[i], betas[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub spec: GridSpec,
    pub values: Vec<Vec<f64>>,
    pub kind: SurfaceKind,
    pub axes: AxesMeta,
    pub origin: OriginMeta,
}

impl SurfaceGrid {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let n = self.spec.samples_per_axis;
        if self.values.len() != n || self.values.iter().any(|r| r.len() != n) {
            return Err(Error::format("surface", format!("expected {n}x{n} values")));
        }
        let ok = |v: f64| match self.kind {
            SurfaceKind::TrainLoss => v.is_finite() && v >= 0.0,
            SurfaceKind::DevError => (0.0..=1.0).contains(&v),
        };
        if let Some(v) = self.values.iter().flatten().find(|&&v| !ok(v)) {
            return Err(Error::format(
                "surface",
                format!("value {v} is out of range for {:?}", self.kind),
            ));
        }
        Ok(())
    }
}

/// Samples `loss` along `theta0 + alpha·(theta1 - theta0)` with the head of
/// `theta1` held fixed.
pub fn curve_1d(
    theta0: &ParamVector,
    theta1: &ParamVector,
    loss: &dyn LossEvaluator,
    spec: &GridSpec,
    workers: usize,
) -> Result<CurveSamples> {
    spec.validate()?;
    let plane = Plane::through(theta0, theta1, None)?;
    let alphas = spec.alphas();
    let points: Vec<(f64, f64)> = alphas.iter().map(|&a| (a, 0.0)).collect();
    let eval = eval_grid(&points, workers, |a, b| loss.loss(&plane.point(a, b)?))?;
    Ok(CurveSamples {
        alphas,
        losses: eval.values,
        axis_scale: plane.axes.axis_scale,
    })
}

/// Samples `loss` over every cell of `spec` on `plane`.
pub fn sample_plane(
    plane: &Plane,
    loss: &dyn LossEvaluator,
    kind: SurfaceKind,
    spec: &GridSpec,
    workers: usize,
) -> Result<SurfaceGrid> {
    spec.validate()?;
    let n = spec.samples_per_axis;
    let eval = eval_grid(&spec.cells(), workers, |a, b| {
        loss.loss(&plane.point(a, b)?)
    })?;
    let grid = SurfaceGrid {
        spec: spec.clone(),
        values: eval.values.chunks(n).map(<[f64]>::to_vec).collect(),
        kind,
        axes: plane.axes.clone(),
        origin: plane.anchor.clone(),
    };
    grid.validate()?;
    Ok(grid)
}

/// Training loss over the plane through `theta0`, `theta1` and `theta2`.
pub fn surface_2d(
    theta0: &ParamVector,
    theta1: &ParamVector,
    theta2: &ParamVector,
    loss: &dyn LossEvaluator,
    spec: &GridSpec,
    workers: usize,
) -> Result<SurfaceGrid> {
    let plane = Plane::through(theta0, theta1, Some(theta2))?;
    sample_plane(&plane, loss, SurfaceKind::TrainLoss, spec, workers)
}

/// Dev-set error rate over the same plane as [`surface_2d`].
pub fn error_surface(
    model: &Model,
    theta0: &ParamVector,
    theta1: &ParamVector,
    theta2: &ParamVector,
    dev: &[Example],
    spec: &GridSpec,
    workers: usize,
) -> Result<SurfaceGrid> {
    if dev.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let plane = Plane::through(theta0, theta1, Some(theta2))?;
    let eval = DatasetError { model, data: dev };
    sample_plane(&plane, &eval, SurfaceKind::DevError, spec, workers)
}

/// Training loss over the `group` subspace around the fine-tuned `theta1`.
/// Cell `(-1, 0)` rolls `group` back to `theta0`.
#[allow(clippy::too_many_arguments)]
pub fn layer_surface(
    theta1: &ParamVector,
    theta0: &ParamVector,
    second: &Direction,
    group: &LayerGroup,
    loss: &dyn LossEvaluator,
    spec: &GridSpec,
    workers: usize,
) -> Result<SurfaceGrid> {
    let plane = Plane::layer_group(theta1, theta0, second, group)?;
    sample_plane(&plane, loss, SurfaceKind::TrainLoss, spec, workers)
}

/// One checkpoint's displacement expressed against the first direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    /// Component along the first direction, in units of its length.
    pub d_alpha: f64,
    /// Length of the orthogonal remainder, in the same units.
    pub d_beta: f64,
    /// Cosine to the first direction; `None` when the checkpoint has not moved.
    pub v_cos: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProjection {
    pub points: Vec<TrajectoryPoint>,
}

/// Projects a single displacement onto `first`, whose squared norm is `first_sq`.
pub fn project_displacement(
    step: &Direction,
    first: &Direction,
    first_sq: f64,
) -> Result<(f64, f64, Option<f64>)> {
    let step_sq = step.norm_sq();
    if step_sq == 0.0 {
        return Ok((0.0, 0.0, None));
    }
    let dot = step.dot(first)?;
    let d_alpha = dot / first_sq;
    let radicand = step_sq / first_sq - d_alpha * d_alpha;
    let v_cos = dot / (step_sq.sqrt() * first_sq.sqrt());
    Ok((d_alpha, radicand.max(0.0).sqrt(), Some(v_cos)))
}

/// Projects every checkpoint after the first of `run` onto `theta1 - theta0`.
/// Head segments are ignored on both sides.
pub fn project_trajectory(
    run: &TrainRun,
    theta0: &ParamVector,
    theta1: &ParamVector,
) -> Result<TrajectoryProjection> {
    let first = theta1.diff(theta0)?.without_head();
    let first_sq = first.norm_sq();
    if first_sq == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let points = run
        .checkpoints
        .iter()
        .skip(1)
        .map(|c| {
            let step = c.params.diff(theta0)?.without_head();
            let (d_alpha, d_beta, v_cos) = project_displacement(&step, &first, first_sq)?;
            Ok(TrajectoryPoint {
                epoch: c.epoch_index,
                d_alpha,
                d_beta,
                v_cos,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrajectoryProjection { points })
}

/// Dev accuracy after rolling one layer group back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackRow {
    pub group: String,
    pub dev_accuracy: f64,
    /// Accuracy change relative to the un-rolled-back model.
    pub delta_vs_full: f64,
}

impl RollbackRow {
    /// Accuracy lost by the rollback.
    pub fn degradation(&self) -> f64 {
        -self.delta_vs_full
    }
}

/// Rolls each of `groups` in `theta1` back to `theta0` and scores it on `dev`.
pub fn rollback_table(
    model: &Model,
    theta1: &ParamVector,
    theta0: &ParamVector,
    groups: &[LayerGroup],
    dev: &[Example],
) -> Result<Vec<RollbackRow>> {
    if groups.is_empty() {
        return Err(Error::InvalidConfig(
            "rollback needs at least one layer group".into(),
        ));
    }
    let accuracy = |p: &ParamVector| -> Result<f64> {
        Ok(1.0 - model.evaluate(p, dev, Head::Classification)?.error_rate)
    };
    let full = accuracy(theta1)?;
    groups
        .iter()
        .map(|g| {
            g.validate(model.config().num_layers)?;
            let acc = accuracy(&theta1.splice_group(theta0, g)?)?;
            Ok(RollbackRow {
                group: g.label.clone(),
                dev_accuracy: acc,
                delta_vs_full: acc - full,
            })
        })
        .collect()
}

/// Loss threshold used when the minimum is too close to zero for a ratio.
pub const ABSOLUTE_THRESHOLD: f64 = 0.01;
const RATIO_FLOOR: f64 = 1e-8;

/// Width of the basin around a curve's minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flatness {
    /// Width in parameter-space distance (alpha units times the axis scale).
    pub width: f64,
    pub left: f64,
    pub right: f64,
    pub threshold: f64,
    /// The basin reaches the edge of the sampled range, so `width` is a lower bound.
    pub truncated: bool,
}

/// Contiguous interval around the minimum where the loss stays at or below
/// `threshold_ratio` times the minimum, with boundaries interpolated linearly.
pub fn flatness_width(curve: &CurveSamples, threshold_ratio: f64) -> Result<Flatness> {
    curve.validate()?;
    if !(threshold_ratio > 1.0 && threshold_ratio.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "threshold ratio must exceed 1, got {threshold_ratio}"
        )));
    }
    let (a, f) = (&curve.alphas, &curve.losses);
    let (k, &min) = f
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or_else(|| Error::format("curve", "no finite loss"))?;
    let threshold = if min < RATIO_FLOOR {
        ABSOLUTE_THRESHOLD
    } else {
        threshold_ratio * min
    };
    let inside = |i: usize| f[i] <= threshold;
    let cross = |out: usize, inn: usize| {
        if f[out].is_finite() {
            a[out] + (threshold - f[out]) * (a[inn] - a[out]) / (f[inn] - f[out])
        } else {
            a[inn]
        }
    };
    let mut truncated = false;
    let mut l = k;
    while l > 0 && inside(l - 1) {
        l -= 1;
    }
    let left = if l == 0 {
        truncated = true;
        a[0]
    } else {
        cross(l - 1, l)
    };
    let mut r = k;
    while r + 1 < f.len() && inside(r + 1) {
        r += 1;
    }
    let right = if r + 1 == f.len() {
        truncated = true;
        a[r]
    } else {
        cross(r + 1, r)
    };
    Ok(Flatness {
        width: (right - left) * curve.axis_scale,
        left,
        right,
        threshold,
        truncated,
    })
}
