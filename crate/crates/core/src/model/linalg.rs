//! Dense row-major kernels used by the encoder. Every reduction runs in index
//! order so forward and backward passes are bitwise reproducible.

/// `out[n×m] = x[n×k] · w[k×m] + bias[m]`.
pub(crate) fn affine(x: &[f64], k: usize, w: &[f64], bias: &[f64], out: &mut [f64]) {
    let m = bias.len();
    for (xi, oi) in x.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        oi.copy_from_slice(bias);
        for (kk, &xv) in xi.iter().enumerate() {
            let wr = &w[kk * m..(kk + 1) * m];
            for (o, &wv) in oi.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
}

/// Backward of [`affine`]: accumulates `dw += xᵀ·dout`, `db += Σ dout`, and
/// when requested `dx += dout · wᵀ`.
pub(crate) fn affine_backward(
    x: &[f64],
    k: usize,
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let m = db.len();
    for (xi, di) in x.chunks_exact(k).zip(dout.chunks_exact(m)) {
        for (b, &g) in db.iter_mut().zip(di) {
            *b += g;
        }
        for (kk, &xv) in xi.iter().enumerate() {
            let dwr = &mut dw[kk * m..(kk + 1) * m];
            for (o, &g) in dwr.iter_mut().zip(di) {
                *o += xv * g;
            }
        }
    }
    if let Some(dx) = dx {
        for (dxi, di) in dx.chunks_exact_mut(k).zip(dout.chunks_exact(m)) {
            for (kk, v) in dxi.iter_mut().enumerate() {
                *v += dot(di, &w[kk * m..(kk + 1) * m]);
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> NormCache {
    let d = gain.len();
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for ((xi, hi), oi) in x
        .chunks_exact(d)
        .zip(xhat.chunks_exact_mut(d))
        .zip(out.chunks_exact_mut(d))
    {
        let mean = xi.iter().sum::<f64>() / d as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            hi[j] = (xi[j] - mean) * inv;
            oi[j] = gain[j] * hi[j] + bias[j];
        }
        inv_std.push(inv);
    }
    NormCache { xhat, inv_std }
}

/// Accumulates gain/bias gradients and adds the input gradient into `dx`.
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    gain: &[f64],
    cache: &NormCache,
    dgain: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    let d = gain.len();
    let n = d as f64;
    let mut dxhat = vec![0.0; d];
    for (((dyi, hi), dxi), &inv) in dy
        .chunks_exact(d)
        .zip(cache.xhat.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(&cache.inv_std)
    {
        let mut sum = 0.0;
        let mut sum_h = 0.0;
        for j in 0..d {
            dgain[j] += dyi[j] * hi[j];
            dbias[j] += dyi[j];
            dxhat[j] = dyi[j] * gain[j];
            sum += dxhat[j];
            sum_h += dxhat[j] * hi[j];
        }
        for j in 0..d {
            dxi[j] += inv / n * (n * dxhat[j] - sum - hi[j] * sum_h);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// In-place softmax; returns log-sum-exp of the original values.
pub(crate) fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

/// Splits one buffer into two disjoint mutable windows, `a` strictly before `b`.
pub(crate) fn pair_mut(
    buf: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = buf.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}
