//! Raw numeric kernels shared by the forward and backward passes.

/// Row-major `c = op(a)·op(b) + beta·c`, where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `trans_a` the buffer `a` holds a `k×m` matrix (likewise for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to the extents implied by the
    // strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent of a 3×3 convolution with padding 1.
pub(crate) fn conv_out(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// Unfolds a `c×h×w` image into a `(c·9)×(ho·wo)` patch matrix (zero padding 1).
pub(crate) fn im2col(input: &[f64], c: usize, h: usize, w: usize, stride: usize) -> Vec<f64> {
    let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
    let plane = ho * wo;
    let mut cols = vec![0.0; c * 9 * plane];
    for ci in 0..c {
        let src = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        // ix = ox + kx - 1
                        let (lo, hi) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        for ox in lo..hi {
                            dst[ox] = src_row[ox + kx - 1];
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds patch-matrix gradients back onto the image.
pub(crate) fn col2im(cols: &[f64], c: usize, h: usize, w: usize, stride: usize) -> Vec<f64> {
    let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
    let plane = ho * wo;
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * wo..(oy + 1) * wo];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Source taps for bilinear upsampling of one axis (half-pixel centers, edge clamped).
pub(crate) fn bilinear_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub(crate) fn upsample(input: &[f64], c: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        let src = &input[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(
    grad: &[f64],
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<f64> {
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        let g = &grad[ci * ho * wo..(ci + 1) * ho * wo];
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * wo + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    out
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
