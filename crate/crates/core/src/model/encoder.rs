use super::linalg::{
    affine, affine_backward, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, pair_mut,
    softmax_in_place, NormCache,
};
use super::{LayerIndex, Model, Target};

struct LayerCache {
    ln1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads × n × n attention probabilities.
    att: Vec<f64>,
    ctx: Vec<f64>,
    ln2: NormCache,
    b: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

/// Activations of one sequence, kept for the backward pass.
pub struct Forward {
    n: usize,
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: NormCache,
    /// Final hidden states, n × d.
    z: Vec<f64>,
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of `logits` against `target`; `logits` become probabilities.
fn xent(logits: &mut [f64], target: usize) -> (f64, bool) {
    let hit = argmax(logits) == target;
    let raw = logits[target];
    let lse = softmax_in_place(logits);
    (lse - raw, hit)
}

impl Forward {
    pub fn run(model: &Model, p: &[f64], tokens: &[u32]) -> Forward {
        let c = &model.config;
        let ix = &model.index;
        let (n, d, f, h, dh) = (
            tokens.len(),
            c.model_dim,
            c.ffn_dim,
            c.num_heads,
            c.head_dim(),
        );
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = vec![0.0; n * d];
        for (i, &t) in tokens.iter().enumerate() {
            let te = &p[ix.tok + t as usize * d..][..d];
            let pe = &p[ix.pos + i * d..][..d];
            for j in 0..d {
                x[i * d + j] = te[j] + pe[j];
            }
        }

        let mut layers = Vec::with_capacity(c.num_layers);
        for li in &ix.layers {
            let mut a = vec![0.0; n * d];
            let ln1 = layer_norm(&x, &p[li.ln1_g..][..d], &p[li.ln1_b..][..d], &mut a);
            let mut q = vec![0.0; n * d];
            let mut k = vec![0.0; n * d];
            let mut v = vec![0.0; n * d];
            affine(&a, d, &p[li.wq..][..d * d], &p[li.bq..][..d], &mut q);
            affine(&a, d, &p[li.wk..][..d * d], &p[li.bk..][..d], &mut k);
            affine(&a, d, &p[li.wv..][..d * d], &p[li.bv..][..d], &mut v);

            let mut att = vec![0.0; h * n * n];
            let mut ctx = vec![0.0; n * d];
            for hh in 0..h {
                let cols = hh * dh..(hh + 1) * dh;
                for i in 0..n {
                    let row = &mut att[(hh * n + i) * n..][..n];
                    let qi = &q[i * d..][cols.clone()];
                    for (jj, r) in row.iter_mut().enumerate() {
                        *r = dot(qi, &k[jj * d..][cols.clone()]) * scale;
                    }
                    softmax_in_place(row);
                    let out = &mut ctx[i * d..][cols.clone()];
                    for (jj, &w) in row.iter().enumerate() {
                        for (o, &vv) in out.iter_mut().zip(&v[jj * d..][cols.clone()]) {
                            *o += w * vv;
                        }
                    }
                }
            }
            let mut attn_out = vec![0.0; n * d];
            affine(
                &ctx,
                d,
                &p[li.wo..][..d * d],
                &p[li.bo..][..d],
                &mut attn_out,
            );
            for (xv, o) in x.iter_mut().zip(&attn_out) {
                *xv += o;
            }

            let mut b = vec![0.0; n * d];
            let ln2 = layer_norm(&x, &p[li.ln2_g..][..d], &p[li.ln2_b..][..d], &mut b);
            let mut u = vec![0.0; n * f];
            affine(&b, d, &p[li.w1..][..d * f], &p[li.b1..][..f], &mut u);
            let g: Vec<f64> = u.iter().map(|&uv| gelu(uv)).collect();
            let mut ffn_out = vec![0.0; n * d];
            affine(&g, f, &p[li.w2..][..f * d], &p[li.b2..][..d], &mut ffn_out);
            for (xv, o) in x.iter_mut().zip(&ffn_out) {
                *xv += o;
            }

            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                att,
                ctx,
                ln2,
                b,
                u,
                g,
            });
        }

        let mut z = vec![0.0; n * d];
        let lnf = layer_norm(&x, &p[ix.lnf_g..][..d], &p[ix.lnf_b..][..d], &mut z);
        Forward {
            n,
            tokens: tokens.to_vec(),
            layers,
            lnf,
            z,
        }
    }

    pub(crate) fn class_logits(&self, model: &Model, p: &[f64]) -> Vec<f64> {
        let c = &model.config;
        let (d, k) = (c.model_dim, c.num_classes);
        let mut logits = vec![0.0; k];
        affine(
            &self.z[..d],
            d,
            &p[model.index.cls_w..][..d * k],
            &p[model.index.cls_b..][..k],
            &mut logits,
        );
        logits
    }

    fn token_logits(&self, model: &Model, p: &[f64], pos: usize) -> Vec<f64> {
        let c = &model.config;
        let (d, v) = (c.model_dim, c.vocab_size);
        let mut logits = vec![0.0; v];
        affine(
            &self.z[pos * d..][..d],
            d,
            &p[model.index.mlm_w..][..d * v],
            &p[model.index.mlm_b..][..v],
            &mut logits,
        );
        logits
    }

    /// Summed loss and number of correct predictions for this sequence.
    pub fn head_loss(&self, model: &Model, p: &[f64], target: &Target) -> (f64, usize) {
        match target {
            Target::Class(y) => {
                let (l, hit) = xent(&mut self.class_logits(model, p), *y);
                (l, hit as usize)
            }
            Target::Masked(targets) => targets.iter().fold((0.0, 0), |(s, c), &(pos, tok)| {
                let (l, hit) = xent(&mut self.token_logits(model, p, pos), tok as usize);
                (s + l, c + hit as usize)
            }),
        }
    }

    /// Adds `scale · ∂loss/∂p` into `grad`; returns the same values as [`Forward::head_loss`].
    pub fn backward(
        &self,
        model: &Model,
        p: &[f64],
        target: &Target,
        scale: f64,
        grad: &mut [f64],
    ) -> (f64, usize) {
        let c = &model.config;
        let ix = &model.index;
        let (n, d) = (self.n, c.model_dim);
        let mut dz = vec![0.0; n * d];

        let mut head_step =
            |pos: usize, class: usize, w: usize, b: usize, k: usize, logits: &mut [f64]| {
                let (l, hit) = xent(logits, class);
                logits[class] -= 1.0;
                for g in logits.iter_mut() {
                    *g *= scale;
                }
                let (dw, db) = pair_mut(grad, w..w + d * k, b..b + k);
                affine_backward(
                    &self.z[pos * d..][..d],
                    d,
                    &p[w..][..d * k],
                    logits,
                    dw,
                    db,
                    Some(&mut dz[pos * d..][..d]),
                );
                (l, hit as usize)
            };
        let (loss, correct) = match target {
            Target::Class(y) => {
                let mut logits = self.class_logits(model, p);
                head_step(0, *y, ix.cls_w, ix.cls_b, c.num_classes, &mut logits)
            }
            Target::Masked(targets) => {
                let mut acc = (0.0, 0);
                for &(pos, tok) in targets {
                    let mut logits = self.token_logits(model, p, pos);
                    let (l, h) = head_step(
                        pos,
                        tok as usize,
                        ix.mlm_w,
                        ix.mlm_b,
                        c.vocab_size,
                        &mut logits,
                    );
                    acc = (acc.0 + l, acc.1 + h);
                }
                acc
            }
        };

        let mut dx = vec![0.0; n * d];
        {
            let gain = &p[ix.lnf_g..][..d];
            let (dg, db) = pair_mut(grad, ix.lnf_g..ix.lnf_g + d, ix.lnf_b..ix.lnf_b + d);
            layer_norm_backward(&dz, gain, &self.lnf, dg, db, &mut dx);
        }

        for (li, cache) in ix.layers.iter().zip(&self.layers).rev() {
            self.layer_backward(model, p, li, cache, &mut dx, grad);
        }

        for (i, &t) in self.tokens.iter().enumerate() {
            let row = &dx[i * d..][..d];
            for (gv, r) in grad[ix.tok + t as usize * d..][..d].iter_mut().zip(row) {
                *gv += r;
            }
            for (gv, r) in grad[ix.pos + i * d..][..d].iter_mut().zip(row) {
                *gv += r;
            }
        }
        (loss, correct)
    }

    /// `dx` holds the gradient at the layer output on entry and at its input on exit.
    fn layer_backward(
        &self,
        model: &Model,
        p: &[f64],
        li: &LayerIndex,
        lc: &LayerCache,
        dx: &mut [f64],
        grad: &mut [f64],
    ) {
        let c = &model.config;
        let (n, d, f, h, dh) = (self.n, c.model_dim, c.ffn_dim, c.num_heads, c.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        // Feed-forward branch.
        let mut dg = vec![0.0; n * f];
        {
            let (dw, db) = pair_mut(grad, li.w2..li.w2 + f * d, li.b2..li.b2 + d);
            affine_backward(&lc.g, f, &p[li.w2..][..f * d], dx, dw, db, Some(&mut dg));
        }
        let du: Vec<f64> = dg
            .iter()
            .zip(&lc.u)
            .map(|(g, &u)| g * gelu_grad(u))
            .collect();
        let mut db_in = vec![0.0; n * d];
        {
            let (dw, db) = pair_mut(grad, li.w1..li.w1 + d * f, li.b1..li.b1 + f);
            affine_backward(
                &lc.b,
                d,
                &p[li.w1..][..d * f],
                &du,
                dw,
                db,
                Some(&mut db_in),
            );
        }
        {
            let (dgain, dbias) = pair_mut(grad, li.ln2_g..li.ln2_g + d, li.ln2_b..li.ln2_b + d);
            layer_norm_backward(&db_in, &p[li.ln2_g..][..d], &lc.ln2, dgain, dbias, dx);
        }

        // Attention branch.
        let mut dctx = vec![0.0; n * d];
        {
            let (dw, db) = pair_mut(grad, li.wo..li.wo + d * d, li.bo..li.bo + d);
            affine_backward(
                &lc.ctx,
                d,
                &p[li.wo..][..d * d],
                dx,
                dw,
                db,
                Some(&mut dctx),
            );
        }
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut datt = vec![0.0; n];
        for hh in 0..h {
            let cols = hh * dh..(hh + 1) * dh;
            for i in 0..n {
                let row = &lc.att[(hh * n + i) * n..][..n];
                let dci = &dctx[i * d..][cols.clone()];
                for jj in 0..n {
                    datt[jj] = dot(dci, &lc.v[jj * d..][cols.clone()]);
                    for (o, &g) in dv[jj * d..][cols.clone()].iter_mut().zip(dci) {
                        *o += row[jj] * g;
                    }
                }
                let inner = dot(row, &datt);
                for jj in 0..n {
                    let ds = row[jj] * (datt[jj] - inner) * scale;
                    for t in cols.clone() {
                        dq[i * d + t] += ds * lc.k[jj * d + t];
                        dk[jj * d + t] += ds * lc.q[i * d + t];
                    }
                }
            }
        }
        let mut da = vec![0.0; n * d];
        for (w, b, dproj) in [
            (li.wq, li.bq, &dq),
            (li.wk, li.bk, &dk),
            (li.wv, li.bv, &dv),
        ] {
            let (dw, db) = pair_mut(grad, w..w + d * d, b..b + d);
            affine_backward(&lc.a, d, &p[w..][..d * d], dproj, dw, db, Some(&mut da));
        }
        let (dgain, dbias) = pair_mut(grad, li.ln1_g..li.ln1_g + d, li.ln1_b..li.ln1_b + d);
        layer_norm_backward(&da, &p[li.ln1_g..][..d], &lc.ln1, dgain, dbias, dx);
    }

    #[cfg(test)]
    pub(crate) fn attention_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(move |l| l.att.chunks_exact(self.n))
    }
}
