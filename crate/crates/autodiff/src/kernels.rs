//! Raw-slice kernels shared by forward and backward passes.

use crate::BCE_CLAMP;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `(m,k)·(k,n)`, row-major.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(crate) fn pool_bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = i * len / out;
    let hi = ((i + 1) * len).div_ceil(out);
    (lo, hi)
}

pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self) -> usize {
        (self.len + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Output positions `t` for which `t·stride + tap − pad` lands inside the
    /// input, as a half-open range.
    fn valid(&self, tap: usize) -> (usize, usize) {
        let out_len = self.out_len();
        // need t*stride + tap >= pad and t*stride + tap - pad < len
        let lo = if tap >= self.pad {
            0
        } else {
            (self.pad - tap).div_ceil(self.stride)
        };
        let limit = self.len + self.pad; // t*stride + tap < limit
        let hi = if limit > tap {
            ((limit - tap).div_ceil(self.stride)).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let out_len = g.out_len();
    let mut out = vec![0.0; g.c_out * out_len];
    for o in 0..g.c_out {
        let orow = &mut out[o * out_len..(o + 1) * out_len];
        if let Some(b) = b {
            orow.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..g.c_in {
            let xrow = &x[c * g.len..(c + 1) * g.len];
            for tap in 0..g.k {
                let wv = w[(o * g.c_in + c) * g.k + tap];
                let (lo, hi) = g.valid(tap);
                for t in lo..hi {
                    orow[t] += wv * xrow[t * g.stride + tap - g.pad];
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    go: &[f64],
    g: &ConvGeom,
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let out_len = g.out_len();
    let mut gx = want_x.then(|| vec![0.0; x.len()]);
    let mut gw = want_w.then(|| vec![0.0; w.len()]);
    let gb: Vec<f64> = go.chunks(out_len).map(|r| r.iter().sum()).collect();
    for o in 0..g.c_out {
        let grow = &go[o * out_len..(o + 1) * out_len];
        for c in 0..g.c_in {
            let xrow = &x[c * g.len..(c + 1) * g.len];
            for tap in 0..g.k {
                let widx = (o * g.c_in + c) * g.k + tap;
                let (lo, hi) = g.valid(tap);
                if let Some(gw) = gw.as_mut() {
                    let mut acc = 0.0;
                    for t in lo..hi {
                        acc += grow[t] * xrow[t * g.stride + tap - g.pad];
                    }
                    gw[widx] += acc;
                }
                if let Some(gx) = gx.as_mut() {
                    let wv = w[widx];
                    let gxrow = &mut gx[c * g.len..(c + 1) * g.len];
                    for t in lo..hi {
                        gxrow[t * g.stride + tap - g.pad] += grow[t] * wv;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub(crate) struct GruCache {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`
    hn: Vec<f64>,
}

fn affine(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + w[i * cols..(i + 1) * cols].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

pub(crate) fn gru_forward(
    x: &[f64],
    h: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    b_ih: &[f64],
    b_hh: &[f64],
) -> (Vec<f64>, GruCache) {
    let hd = h.len();
    let gi = affine(w_ih, x, b_ih);
    let gh = affine(w_hh, h, b_hh);
    let mut r = vec![0.0; hd];
    let mut z = vec![0.0; hd];
    let mut n = vec![0.0; hd];
    let mut out = vec![0.0; hd];
    for k in 0..hd {
        r[k] = sigmoid(gi[k] + gh[k]);
        z[k] = sigmoid(gi[hd + k] + gh[hd + k]);
        n[k] = (gi[2 * hd + k] + r[k] * gh[2 * hd + k]).tanh();
        out[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
    }
    let hn = gh[2 * hd..].to_vec();
    (out, GruCache { r, z, n, hn })
}

/// Gradients for `[x, h, w_ih, w_hh, b_ih, b_hh]`.
pub(crate) fn gru_backward(
    x: &[f64],
    h: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    c: &GruCache,
    dh_out: &[f64],
) -> Vec<Vec<f64>> {
    let hd = h.len();
    let id = x.len();
    let mut dgi = vec![0.0; 3 * hd];
    let mut dgh = vec![0.0; 3 * hd];
    let mut dh = vec![0.0; hd];
    for k in 0..hd {
        let g = dh_out[k];
        let dz = g * (h[k] - c.n[k]);
        let dn = g * (1.0 - c.z[k]);
        dh[k] = g * c.z[k];
        let da_n = dn * (1.0 - c.n[k] * c.n[k]);
        let dr = da_n * c.hn[k];
        let da_r = dr * c.r[k] * (1.0 - c.r[k]);
        let da_z = dz * c.z[k] * (1.0 - c.z[k]);
        dgi[k] = da_r;
        dgi[hd + k] = da_z;
        dgi[2 * hd + k] = da_n;
        dgh[k] = da_r;
        dgh[hd + k] = da_z;
        dgh[2 * hd + k] = da_n * c.r[k];
    }
    let mut dx = vec![0.0; id];
    let mut dw_ih = vec![0.0; 3 * hd * id];
    let mut dw_hh = vec![0.0; 3 * hd * hd];
    for row in 0..3 * hd {
        let (gi, gh) = (dgi[row], dgh[row]);
        for col in 0..id {
            dx[col] += w_ih[row * id + col] * gi;
            dw_ih[row * id + col] = gi * x[col];
        }
        for col in 0..hd {
            dh[col] += w_hh[row * hd + col] * gh;
            dw_hh[row * hd + col] = gh * h[col];
        }
    }
    vec![dx, dh, dw_ih, dw_hh, dgi, dgh]
}
