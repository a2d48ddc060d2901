//! Central finite-difference check of [`Model::grad`].

use super::{Example, Head, Model};
use crate::error::Result;
use crate::param::ParamVector;

/// Segments whose exact gradient vanishes (a key bias shifts every attention
/// score of a row equally) are measured against this absolute floor.
pub const GRAD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SegmentError {
    pub segment: String,
    /// `‖g − fd‖ / max(‖(g, fd)‖, GRAD_FLOOR)` over the segment's components.
    pub relative_error: f64,
}

/// Compares the analytic gradient with `(J(p + h·e_k) − J(p − h·e_k)) / 2h`
/// for every component, aggregated per layout segment.
pub fn segment_errors(
    model: &Model,
    params: &ParamVector,
    batch: &[Example],
    head: Head,
    step: f64,
) -> Result<Vec<SegmentError>> {
    let (_, g) = model.grad(params, batch, head)?;
    let mut probe = params.values().to_vec();
    let mut loss_at = |k: usize, x: f64| -> Result<f64> {
        let saved = probe[k];
        probe[k] = x;
        let p = ParamVector::new(params.layout().clone(), probe.clone())?;
        probe[k] = saved;
        Ok(model.forward_loss(&p, batch, head)?.loss)
    };
    let mut out = Vec::with_capacity(params.layout().segments().len());
    for seg in params.layout().segments() {
        let mut diff_sq = 0.0;
        let mut scale_sq = 0.0;
        for k in seg.range() {
            let x = params.values()[k];
            let fd = (loss_at(k, x + step)? - loss_at(k, x - step)?) / (2.0 * step);
            let a = g.values()[k];
            diff_sq += (a - fd) * (a - fd);
            scale_sq += a * a + fd * fd;
        }
        out.push(SegmentError {
            segment: seg.name.clone(),
            relative_error: diff_sq.sqrt() / scale_sq.sqrt().max(GRAD_FLOOR),
        });
    }
    Ok(out)
}
