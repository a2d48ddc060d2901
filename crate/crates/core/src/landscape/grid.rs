//! Grid sampling and the parallel cell evaluator.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling ranges of the two plane coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub alpha_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub samples_per_axis: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            alpha_range: [-4.0, 4.0],
            beta_range: [-4.0, 4.0],
            samples_per_axis: 40,
        }
    }
}

impl GridSpec {
    pub fn new(
        alpha_range: [f64; 2],
        beta_range: [f64; 2],
        samples_per_axis: usize,
    ) -> Result<Self> {
        let spec = Self {
            alpha_range,
            beta_range,
            samples_per_axis,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_axis < 2 {
            return Err(Error::InvalidConfig(
                "samples_per_axis must be at least 2".into(),
            ));
        }
        for (name, [lo, hi]) in [("alpha", self.alpha_range), ("beta", self.beta_range)] {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidConfig(format!(
                    "{name} range [{lo}, {hi}] must have positive width"
                )));
            }
        }
        Ok(())
    }

    pub fn alphas(&self) -> Vec<f64> {
        axis(self.alpha_range, self.samples_per_axis)
    }

    pub fn betas(&self) -> Vec<f64> {
        axis(self.beta_range, self.samples_per_axis)
    }

    /// Every `(alpha, beta)` cell in row-major order (row = alpha index).
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let betas = self.betas();
        self.alphas()
            .into_iter()
            .flat_map(|a| betas.iter().map(move |&b| (a, b)))
            .collect()
    }
}

/// `n` evenly spaced samples from `lo` to `hi`. Written as a weighted sum so
/// both ends, and any integer that falls on the lattice, come out exact.
fn axis([lo, hi]: [f64; 2], n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| (lo * (last - i as f64) + hi * i as f64) / last)
        .collect()
}

/// Values of an evaluated point set, in input order, with per-cell timings.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEval {
    pub values: Vec<f64>,
    pub cell_seconds: Vec<f64>,
    pub wall_seconds: f64,
}

/// Evaluates `f` at every point on a pool of `workers` threads.
///
/// Each cell is computed independently and written to its own slot, so the
/// result does not depend on the worker count. The first failing cell in
/// input order aborts the evaluation with its coordinates.
pub fn eval_grid<F>(points: &[(f64, f64)], workers: usize, f: F) -> Result<GridEval>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let cells: Vec<(Result<f64>, f64)> = pool.install(|| {
        points
            .par_iter()
            .map(|&(a, b)| {
                let t = Instant::now();
                let v = f(a, b);
                (v, t.elapsed().as_secs_f64())
            })
            .collect()
    });
    let wall_seconds = start.elapsed().as_secs_f64();
    let mut values = Vec::with_capacity(points.len());
    let mut cell_seconds = Vec::with_capacity(points.len());
    for ((v, secs), &(alpha, beta)) in cells.into_iter().zip(points) {
        let v = v.map_err(|e| Error::Cell {
            alpha,
            beta,
            source: Box::new(e),
        })?;
        values.push(v);
        cell_seconds.push(secs);
    }
    Ok(GridEval {
        values,
        cell_seconds,
        wall_seconds,
    })
}
