//! Batched forward and backward kernels. Activations are row-major with a
//! leading batch axis; images are H×W×C.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn in_len(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo * self.cout
    }

    /// Input coordinate for an output coordinate and kernel offset, if inside the image.
    #[inline]
    fn src(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + kk).checked_sub(self.pad)?;
        (i < limit).then_some(i)
    }
}

pub(crate) fn dense_forward(x: &[f32], n: usize, w: &[f32], b: &[f32], n_in: usize, n_out: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * n_out];
    for r in 0..n {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let o = &mut out[r * n_out..(r + 1) * n_out];
        o.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wr = &w[i * n_out..(i + 1) * n_out];
            for (oj, &wj) in o.iter_mut().zip(wr) {
                *oj += xi * wj;
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub(crate) fn dense_backward(
    x: &[f32],
    dy: &[f32],
    n: usize,
    w: &[f32],
    n_in: usize,
    n_out: usize,
    dw: &mut [f32],
    db: &mut [f32],
) -> Vec<f32> {
    let mut dx = vec![0.0f32; n * n_in];
    for r in 0..n {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (bj, &g) in db.iter_mut().zip(dyr) {
            *bj += g;
        }
        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
        for i in 0..n_in {
            let wr = &w[i * n_out..(i + 1) * n_out];
            let mut acc = 0.0f32;
            for (&wj, &g) in wr.iter().zip(dyr) {
                acc += wj * g;
            }
            dxr[i] = acc;
            let xi = xr[i];
            if xi != 0.0 {
                let dwr = &mut dw[i * n_out..(i + 1) * n_out];
                for (d, &g) in dwr.iter_mut().zip(dyr) {
                    *d += xi * g;
                }
            }
        }
    }
    dx
}

pub(crate) fn conv_forward(x: &[f32], n: usize, g: &ConvGeom, w: &[f32], b: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; n * g.out_len()];
    for bi in 0..n {
        let xin = &x[bi * g.in_len()..(bi + 1) * g.in_len()];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let o = &mut out[bi * g.out_len() + (oy * g.wo + ox) * g.cout..][..g.cout];
                o.copy_from_slice(b);
                for ky in 0..g.k {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.src(ox, kx, g.w) else { continue };
                        let px = &xin[(iy * g.w + ix) * g.cin..][..g.cin];
                        let wbase = (ky * g.k + kx) * g.cin * g.cout;
                        for (ci, &v) in px.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let wr = &w[wbase + ci * g.cout..][..g.cout];
                            for (oc, &wc) in o.iter_mut().zip(wr) {
                                *oc += v * wc;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_backward(
    x: &[f32],
    dy: &[f32],
    n: usize,
    g: &ConvGeom,
    w: &[f32],
    dw: &mut [f32],
    db: &mut [f32],
) -> Vec<f32> {
    let mut dx = vec![0.0f32; n * g.in_len()];
    let mut db64 = vec![0.0f64; g.cout];
    for bi in 0..n {
        let xin = &x[bi * g.in_len()..(bi + 1) * g.in_len()];
        let dxin = &mut dx[bi * g.in_len()..(bi + 1) * g.in_len()];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let d = &dy[bi * g.out_len() + (oy * g.wo + ox) * g.cout..][..g.cout];
                for (bc, &gc) in db64.iter_mut().zip(d) {
                    *bc += f64::from(gc);
                }
                for ky in 0..g.k {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.src(ox, kx, g.w) else { continue };
                        let pbase = (iy * g.w + ix) * g.cin;
                        let wbase = (ky * g.k + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let wr = &w[wbase + ci * g.cout..][..g.cout];
                            let mut acc = 0.0f32;
                            for (&wc, &gc) in wr.iter().zip(d) {
                                acc += wc * gc;
                            }
                            dxin[pbase + ci] += acc;
                            let v = xin[pbase + ci];
                            if v != 0.0 {
                                let dwr = &mut dw[wbase + ci * g.cout..][..g.cout];
                                for (dwc, &gc) in dwr.iter_mut().zip(d) {
                                    *dwc += v * gc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for (b, v) in db.iter_mut().zip(db64) {
        *b += v as f32;
    }
    dx
}

/// Max pooling without padding; returns outputs and the flat input index of each maximum.
pub(crate) fn maxpool_forward(
    x: &[f32],
    n: usize,
    [h, w, c]: [usize; 3],
    k: usize,
    s: usize,
) -> (Vec<f32>, Vec<u32>) {
    let ho = (h - k) / s + 1;
    let wo = (w - k) / s + 1;
    let mut out = Vec::with_capacity(n * ho * wo * c);
    let mut arg = Vec::with_capacity(n * ho * wo * c);
    for bi in 0..n {
        let base = bi * h * w * c;
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = base + ((oy * s) * w + ox * s) * c + ch;
                    for ky in 0..k {
                        for kx in 0..k {
                            let i = base + ((oy * s + ky) * w + ox * s + kx) * c + ch;
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(x[best_i]);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(dy: &[f32], arg: &[u32], in_len: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; in_len];
    for (&g, &i) in dy.iter().zip(arg) {
        dx[i as usize] += g;
    }
    dx
}

pub(crate) struct BnBatch {
    pub y: Vec<f32>,
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
    pub mean: Vec<f32>,
    /// Unbiased variance, used for the running estimate.
    pub var: Vec<f32>,
}

/// Batch-statistics normalization over every axis but the last. Per-channel
/// reductions accumulate in f64.
pub(crate) fn bn_train_forward(x: &[f32], features: usize, gamma: &[f32], beta: &[f32], eps: f32) -> BnBatch {
    let m = x.len() / features;
    let mut sum = vec![0.0f64; features];
    for row in x.chunks_exact(features) {
        for (a, &v) in sum.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    let mean64: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
    let mut sq = vec![0.0f64; features];
    for row in x.chunks_exact(features) {
        for ((a, &v), &mu) in sq.iter_mut().zip(row).zip(&mean64) {
            *a += (f64::from(v) - mu).powi(2);
        }
    }
    let inv64: Vec<f64> = sq.iter().map(|&s| 1.0 / (s / m as f64 + f64::from(eps)).sqrt()).collect();
    let var: Vec<f32> = sq.iter().map(|&s| if m > 1 { (s / (m - 1) as f64) as f32 } else { 0.0 }).collect();
    let mut xhat = vec![0.0f32; x.len()];
    let mut y = vec![0.0f32; x.len()];
    for ((row, hrow), yrow) in x.chunks_exact(features).zip(xhat.chunks_exact_mut(features)).zip(y.chunks_exact_mut(features)) {
        for f in 0..features {
            let h = (f64::from(row[f]) - mean64[f]) * inv64[f];
            hrow[f] = h as f32;
            yrow[f] = (f64::from(gamma[f]) * h + f64::from(beta[f])) as f32;
        }
    }
    BnBatch {
        y,
        xhat,
        inv_std: inv64.iter().map(|&v| v as f32).collect(),
        mean: mean64.iter().map(|&v| v as f32).collect(),
        var,
    }
}

pub(crate) fn bn_train_backward(
    dy: &[f32],
    xhat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) -> Vec<f32> {
    let features = gamma.len();
    let m = dy.len() / features;
    let mut sum_d = vec![0.0f64; features];
    let mut sum_dh = vec![0.0f64; features];
    for (drow, hrow) in dy.chunks_exact(features).zip(xhat.chunks_exact(features)) {
        for f in 0..features {
            let (d, h) = (f64::from(drow[f]), f64::from(hrow[f]));
            sum_d[f] += d;
            sum_dh[f] += d * h;
        }
    }
    for f in 0..features {
        dbeta[f] += sum_d[f] as f32;
        dgamma[f] += sum_dh[f] as f32;
    }
    let mf = m as f64;
    let mut dx = vec![0.0f32; dy.len()];
    for ((dxrow, drow), hrow) in dx.chunks_exact_mut(features).zip(dy.chunks_exact(features)).zip(xhat.chunks_exact(features)) {
        for f in 0..features {
            let g = f64::from(gamma[f]);
            let v = f64::from(inv_std[f]) * g / mf
                * (mf * f64::from(drow[f]) - sum_d[f] - f64::from(hrow[f]) * sum_dh[f]);
            dxrow[f] = v as f32;
        }
    }
    dx
}

pub(crate) fn bn_infer_forward(x: &[f32], gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Vec<f32> {
    let features = gamma.len();
    let scale: Vec<f32> = gamma.iter().zip(var).map(|(&g, &v)| g / (v + eps).sqrt()).collect();
    let mut y = vec![0.0f32; x.len()];
    for (row, yrow) in x.chunks_exact(features).zip(y.chunks_exact_mut(features)) {
        for f in 0..features {
            yrow[f] = (row[f] - mean[f]) * scale[f] + beta[f];
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_infer_backward(
    x: &[f32],
    dy: &[f32],
    gamma: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) -> Vec<f32> {
    let features = gamma.len();
    let inv: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut dx = vec![0.0f32; x.len()];
    for ((row, drow), dxrow) in x.chunks_exact(features).zip(dy.chunks_exact(features)).zip(dx.chunks_exact_mut(features)) {
        for f in 0..features {
            dbeta[f] += drow[f];
            dgamma[f] += drow[f] * (row[f] - mean[f]) * inv[f];
            dxrow[f] = drow[f] * gamma[f] * inv[f];
        }
    }
    dx
}

/// Concatenates rows of `a` (width `wa`) and `b` (width `wb`) along the last axis.
pub(crate) fn concat_last(a: &[f32], wa: usize, b: &[f32], wb: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(wa).zip(b.chunks_exact(wb)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

pub(crate) fn split_last(d: &[f32], wa: usize, wb: usize) -> (Vec<f32>, Vec<f32>) {
    let rows = d.len() / (wa + wb);
    let mut a = Vec::with_capacity(rows * wa);
    let mut b = Vec::with_capacity(rows * wb);
    for r in d.chunks_exact(wa + wb) {
        a.extend_from_slice(&r[..wa]);
        b.extend_from_slice(&r[wa..]);
    }
    (a, b)
}
