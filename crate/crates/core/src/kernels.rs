//! Raw loops shared by the tape and the incremental generator.

/// Causal dilated convolution on channels-first buffers.
///
/// `out[o][t] = bias[o] + Σ_{i,k} w[o][i][k] · x[i][t − (K−1−k)·d]`, with
/// out-of-range taps reading zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward(
    x: &[f64],
    cin: usize,
    t: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    dilation: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), cin * t);
    debug_assert_eq!(w.len(), cout * cin * k);
    debug_assert_eq!(out.len(), cout * t);
    for o in 0..cout {
        let row = &mut out[o * t..(o + 1) * t];
        let b = bias.map_or(0.0, |b| b[o]);
        row.iter_mut().for_each(|v| *v = b);
        for i in 0..cin {
            let xi = &x[i * t..(i + 1) * t];
            for kk in 0..k {
                let wv = w[(o * cin + i) * k + kk];
                if wv == 0.0 {
                    continue;
                }
                let shift = (k - 1 - kk) * dilation;
                if shift >= t {
                    continue;
                }
                for (r, &xv) in row[shift..].iter_mut().zip(&xi[..t - shift]) {
                    *r += wv * xv;
                }
            }
        }
    }
}

/// Adjoint of [`conv_forward`]. Any of the gradient buffers may be absent.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    cin: usize,
    t: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    dilation: usize,
    dout: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    if let Some(db) = dbias {
        for o in 0..cout {
            db[o] += dout[o * t..(o + 1) * t].iter().sum::<f64>();
        }
    }
    for o in 0..cout {
        let g = &dout[o * t..(o + 1) * t];
        for i in 0..cin {
            let xi = &x[i * t..(i + 1) * t];
            for kk in 0..k {
                let shift = (k - 1 - kk) * dilation;
                if shift >= t {
                    continue;
                }
                let widx = (o * cin + i) * k + kk;
                if let Some(dw) = dw.as_deref_mut() {
                    dw[widx] += g[shift..].iter().zip(&xi[..t - shift]).map(|(a, b)| a * b).sum::<f64>();
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let wv = w[widx];
                    if wv != 0.0 {
                        let dxi = &mut dx[i * t..(i + 1) * t - shift];
                        for (d, &gv) in dxi.iter_mut().zip(&g[shift..]) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// `y = W·x + b` for a single column, `W` row-major `[rows × cols]`.
pub(crate) fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, yv) in y.iter_mut().enumerate().take(rows) {
        let wr = &w[r * cols..(r + 1) * cols];
        *yv += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-softmax normalizer of one column, stabilized by max subtraction.
pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
