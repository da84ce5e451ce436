//! Nested-loop references for the dense kernels.

/// Direct convolution. Inputs are the production `f32` buffers; all
/// arithmetic runs in `f64`. Returns `(values, out_h, out_w)` in NOHW order.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref(
    input: &[f32],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    c_out: usize,
    kh: usize,
    kw: usize,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0f64; n * c_out * oh * ow];
    for b in 0..n {
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc] as f64;
                    for ic in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi =
                                    ((b * c_in + ic) * h + iy as usize) * w + ix as usize;
                                let wi = ((oc * c_in + ic) * kh + ky) * kw + kx;
                                acc += input[xi] as f64 * weight[wi] as f64;
                            }
                        }
                    }
                    out[((b * c_out + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Triple-loop matrix product of `a` (m x k) and `b` (k x n).
pub fn matmul_ref(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a[i * k + p] as f64 * b[p * n + j] as f64;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Max-subtracted softmax along `axis` of an arbitrary-rank tensor.
pub fn softmax_ref(x: &[f32], shape: &[usize], axis: usize) -> Vec<f64> {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0f64; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * axis_len + a) * inner + i;
            let mut m = f64::NEG_INFINITY;
            for a in 0..axis_len {
                m = m.max(x[idx(a)] as f64);
            }
            let mut sum = 0.0;
            for a in 0..axis_len {
                let e = ((x[idx(a)] as f64) - m).exp();
                out[idx(a)] = e;
                sum += e;
            }
            for a in 0..axis_len {
                out[idx(a)] /= sum;
            }
        }
    }
    out
}

/// Bilinear x2 upsampling with half-pixel (align_corners = false) sampling.
pub fn bilinear2x_ref(x: &[f32], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let oh = 2 * h;
    let ow = 2 * w;
    let mut out = vec![0.0f64; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            let plane = &x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let sy = (oy as f64 + 0.5) / 2.0 - 0.5;
                    let sx = (ox as f64 + 0.5) / 2.0 - 0.5;
                    let y0 = sy.floor().clamp(0.0, (h - 1) as f64) as usize;
                    let x0 = sx.floor().clamp(0.0, (w - 1) as f64) as usize;
                    let y1 = (y0 + 1).min(h - 1);
                    let x1 = (x0 + 1).min(w - 1);
                    let fy = (sy - sy.floor()).clamp(0.0, 1.0);
                    let fx = (sx - sx.floor()).clamp(0.0, 1.0);
                    let fy = if sy < 0.0 { 0.0 } else { fy };
                    let fx = if sx < 0.0 { 0.0 } else { fx };
                    let v = plane[y0 * w + x0] as f64 * (1.0 - fy) * (1.0 - fx)
                        + plane[y0 * w + x1] as f64 * (1.0 - fy) * fx
                        + plane[y1 * w + x0] as f64 * fy * (1.0 - fx)
                        + plane[y1 * w + x1] as f64 * fy * fx;
                    out[((b * c + ch) * oh + oy) * ow + ox] = v;
                }
            }
        }
    }
    out
}

/// Two-pass per-channel mean and standard deviation over batch and spatial
/// dimensions, population variance with `eps` added before the square root.
pub fn channel_stats_ref(
    x: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let count = (n * h * w) as f64;
    let mut mean = vec![0.0f64; c];
    let mut std = vec![0.0f64; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for b in 0..n {
            for i in 0..h * w {
                sum += x[(b * c + ch) * h * w + i] as f64;
            }
        }
        mean[ch] = sum / count;
        let mut sq = 0.0;
        for b in 0..n {
            for i in 0..h * w {
                let d = x[(b * c + ch) * h * w + i] as f64 - mean[ch];
                sq += d * d;
            }
        }
        std[ch] = (sq / count + eps).sqrt();
    }
    (mean, std)
}

/// Trailing-dimension broadcast add, by materializing the tiled right side.
pub fn broadcast_add_ref(lhs: &[f32], lhs_shape: &[usize], rhs: &[f32], rhs_shape: &[usize]) -> Vec<f64> {
    let rhs_len: usize = rhs_shape.iter().product();
    assert_eq!(rhs_len, rhs.len());
    assert!(
        rhs_shape.len() <= lhs_shape.len()
            && lhs_shape[lhs_shape.len() - rhs_shape.len()..] == rhs_shape[..],
        "rhs shape must be a trailing suffix of lhs shape"
    );
    assert!(lhs.len() % rhs_len == 0, "rhs must tile lhs");
    let tiled: Vec<f64> = (0..lhs.len()).map(|i| rhs[i % rhs_len] as f64).collect();
    lhs.iter()
        .zip(tiled.iter())
        .map(|(&a, &b)| a as f64 + b)
        .collect()
}

/// Counts sliding-window placements by actually stepping the window.
pub fn count_windows(h: usize, w: usize, kh: usize, kw: usize, sh: usize, sw: usize) -> usize {
    let mut count = 0;
    let mut y = 0;
    while y + kh <= h {
        let mut x = 0;
        while x + kw <= w {
            count += 1;
            x += sw;
        }
        y += sh;
    }
    count
}

/// Extracts every sliding-window patch of a 1xCxHxW map, one flattened
/// (kh*kw*C) token per window, windows in row-major order.
#[allow(clippy::too_many_arguments)]
pub fn unfold_ref(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
) -> Vec<Vec<f64>> {
    let mut tokens = Vec::new();
    let mut y = 0;
    while y + kh <= h {
        let mut xo = 0;
        while xo + kw <= w {
            let mut tok = Vec::with_capacity(kh * kw * c);
            for ch in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        tok.push(x[(ch * h + y + ky) * w + xo + kx] as f64);
                    }
                }
            }
            tokens.push(tok);
            xo += sw;
        }
        y += sh;
    }
    tokens
}

/// Scalar Adam recurrence with bias correction; returns the parameter value
/// after each step.
pub fn adam_scalar_ref(x0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> Vec<f64> {
    let mut x = x0;
    let mut m = 0.0;
    let mut v = 0.0;
    let mut out = Vec::with_capacity(grads.len());
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as f64;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powf(t));
        let v_hat = v / (1.0 - b2.powf(t));
        x -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(x);
    }
    out
}

/// Layer normalization of each length-`n` row with gain and offset.
pub fn layer_norm_ref(x: &[f32], rows: usize, n: usize, gain: &[f32], offset: &[f32], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0f64; rows * n];
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var: f64 = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..n {
            out[r * n + j] = (row[j] as f64 - mean) * inv * gain[j] as f64 + offset[j] as f64;
        }
    }
    out
}

/// Mean squared distance between two equally shaped buffers.
pub fn mean_square_distance_ref(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Per-tap statistics distance: the L2 norm of the per-channel mean
/// difference plus the L2 norm of the per-channel std difference.
#[allow(clippy::too_many_arguments)]
pub fn stat_distance_ref(
    fa: &[f32],
    fb: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    eps: f64,
) -> f64 {
    let (ma, sa) = channel_stats_ref(fa, n, c, h, w, eps);
    let (mb, sb) = channel_stats_ref(fb, n, c, h, w, eps);
    let mu: f64 = ma
        .iter()
        .zip(mb.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let sigma: f64 = sa
        .iter()
        .zip(sb.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    mu + sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = [0.5f32, -1.0, 2.0, 3.0];
        let (y, oh, ow) = conv2d_ref(&x, 1, 1, 2, 2, &[1.0], 1, 1, 1, &[0.0], 1, 0);
        assert_eq!((oh, ow), (2, 2));
        for (a, b) in y.iter().zip(x.iter()) {
            assert!((a - *b as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn window_count_matches_unfold() {
        let x: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let toks = unfold_ref(&x, 1, 8, 8, 4, 4, 2, 2);
        assert_eq!(toks.len(), count_windows(8, 8, 4, 4, 2, 2));
        assert_eq!(toks.len(), 9);
        assert_eq!(toks[0].len(), 16);
    }

    #[test]
    fn bilinear_single_pixel() {
        let y = bilinear2x_ref(&[3.25], 1, 1, 1, 1);
        assert!(y.iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }
}
