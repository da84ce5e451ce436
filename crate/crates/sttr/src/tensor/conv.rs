//! 2-d convolution and max pooling over `[n, c, h, w]` tensors.

use super::{any_requires_grad, Tape, Tensor};

/// floor((size + 2*padding - kernel) / stride) + 1
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(size + 2 * padding >= kernel, "kernel {kernel} larger than padded input {size}+2*{padding}");
    (size + 2 * padding - kernel) / stride + 1
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f32],
    (n, ci, h, w): (usize, usize, usize, usize),
    weight: &[f32],
    (co, kh, kw): (usize, usize, usize),
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
) -> (Vec<f32>, usize, usize) {
    let oh = conv_out_size(h, kh, stride, padding);
    let ow = conv_out_size(w, kw, stride, padding);
    let mut out = vec![0.0f32; n * co * oh * ow];
    for b in 0..n {
        for oc in 0..co {
            let wbase = oc * ci * kh * kw;
            let bias_v = bias.map_or(0.0f64, |bs| bs[oc] as f64);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ic in 0..ci {
                        let ibase = (b * ci + ic) * h * w;
                        let kbase = wbase + ic * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += input[ibase + iy as usize * w + ix as usize] as f64
                                    * weight[kbase + ky * kw + kx] as f64;
                            }
                        }
                    }
                    out[((b * co + oc) * oh + oy) * ow + ox] = (acc + bias_v) as f32;
                }
            }
        }
    }
    (out, oh, ow)
}

impl Tape {
    /// Cross-correlation of `input [n, ci, h, w]` with `weight [co, ci, kh, kw]`
    /// plus optional per-channel `bias [co]`. Zero padding on all sides.
    pub fn conv2d(
        &self,
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Tensor {
        let is = input.shape();
        let ws = weight.shape();
        assert_eq!(is.len(), 4, "conv2d input must be [n, c, h, w], got {:?}", is);
        assert_eq!(ws.len(), 4, "conv2d weight must be [co, ci, kh, kw], got {:?}", ws);
        assert_eq!(is[1], ws[1], "conv2d channel mismatch: input {:?}, weight {:?}", is, ws);
        assert!(stride >= 1, "stride must be at least 1");
        let (n, ci, h, w) = (is[0], is[1], is[2], is[3]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        if let Some(b) = bias {
            assert_eq!(b.numel(), co, "bias length must equal output channels");
        }
        let bias_data = bias.map(|b| b.to_vec());
        let (out_data, oh, ow) = conv_forward(
            &input.data(),
            (n, ci, h, w),
            &weight.data(),
            (co, kh, kw),
            bias_data.as_deref(),
            stride,
            padding,
        );
        let out = Tensor::new(&[n, co, oh, ow], out_data);

        let mut tracked: Vec<&Tensor> = vec![input, weight];
        if let Some(b) = bias {
            tracked.push(b);
        }
        if any_requires_grad(&tracked) {
            out.set_requires_grad(true);
            let (ii, wi, o) = (input.clone(), weight.clone(), out.clone());
            let bi = bias.cloned();
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let iv = ii.to_vec();
                let wv = wi.to_vec();
                if ii.requires_grad() {
                    let mut gi = vec![0.0f64; iv.len()];
                    for b in 0..n {
                        for oc in 0..co {
                            let wbase = oc * ci * kh * kw;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g[((b * co + oc) * oh + oy) * ow + ox] as f64;
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ic in 0..ci {
                                        let ibase = (b * ci + ic) * h * w;
                                        let kbase = wbase + ic * kh * kw;
                                        for ky in 0..kh {
                                            let iy = (oy * stride + ky) as isize - padding as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = (ox * stride + kx) as isize - padding as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                gi[ibase + iy as usize * w + ix as usize] +=
                                                    gv * wv[kbase + ky * kw + kx] as f64;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let gi32: Vec<f32> = gi.iter().map(|&v| v as f32).collect();
                    ii.accumulate_grad(&gi32);
                }
                if wi.requires_grad() {
                    let mut gw = vec![0.0f64; wv.len()];
                    for b in 0..n {
                        for oc in 0..co {
                            let wbase = oc * ci * kh * kw;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g[((b * co + oc) * oh + oy) * ow + ox] as f64;
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ic in 0..ci {
                                        let ibase = (b * ci + ic) * h * w;
                                        let kbase = wbase + ic * kh * kw;
                                        for ky in 0..kh {
                                            let iy = (oy * stride + ky) as isize - padding as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = (ox * stride + kx) as isize - padding as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                gw[kbase + ky * kw + kx] +=
                                                    gv * iv[ibase + iy as usize * w + ix as usize] as f64;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let gw32: Vec<f32> = gw.iter().map(|&v| v as f32).collect();
                    wi.accumulate_grad(&gw32);
                }
                if let Some(b_t) = &bi {
                    if b_t.requires_grad() {
                        let mut gb = vec![0.0f64; co];
                        for b in 0..n {
                            for oc in 0..co {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        gb[oc] += g[((b * co + oc) * oh + oy) * ow + ox] as f64;
                                    }
                                }
                            }
                        }
                        let gb32: Vec<f32> = gb.iter().map(|&v| v as f32).collect();
                        b_t.accumulate_grad(&gb32);
                    }
                }
            });
        }
        out
    }

    /// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
    /// Ties send the gradient to the first maximal element in scan order.
    pub fn maxpool2d(&self, input: &Tensor) -> Tensor {
        let is = input.shape();
        assert_eq!(is.len(), 4, "maxpool2d input must be [n, c, h, w], got {:?}", is);
        let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
        let (oh, ow) = (h / 2, w / 2);
        let iv = input.to_vec();
        let mut out_data = vec![0.0f32; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for b in 0..n {
            for ch in 0..c {
                let ibase = (b * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = ibase + (oy * 2 + dy) * w + (ox * 2 + dx);
                                if iv[idx] > best {
                                    best = iv[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o_idx = ((b * c + ch) * oh + oy) * ow + ox;
                        out_data[o_idx] = best;
                        argmax[o_idx] = best_idx;
                    }
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out_data);
        if input.requires_grad() {
            out.set_requires_grad(true);
            let (ii, o) = (input.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let mut gi = vec![0.0f32; ii.numel()];
                for (o_idx, &src) in argmax.iter().enumerate() {
                    gi[src] += g[o_idx];
                }
                ii.accumulate_grad(&gi);
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_size_formula() {
        assert_eq!(conv_out_size(8, 3, 2, 1), 4);
        assert_eq!(conv_out_size(5, 5, 1, 0), 1);
        assert_eq!(conv_out_size(64, 7, 2, 3), 32);
        assert_eq!(conv_out_size(7, 3, 3, 0), 2);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let tape = Tape::new();
        let x = Tensor::seeded(9, &[1, 1, 5, 5], -1.0, 1.0);
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]);
        let y = tape.conv2d(&x, &w, None, 1, 0);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let tape = Tape::new();
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = tape.conv2d(&x, &w, None, 1, 0);
        assert_eq!(y.shape(), vec![1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn padding_sees_zeros() {
        let tape = Tape::new();
        let x = Tensor::full(&[1, 1, 2, 2], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = tape.conv2d(&x, &w, None, 1, 1);
        // center tap covers all four ones; corners cover one each
        assert_eq!(y.shape(), vec![1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn bias_adds_per_output_channel() {
        let tape = Tape::new();
        let x = Tensor::full(&[1, 1, 2, 2], 0.0);
        let w = Tensor::full(&[2, 1, 1, 1], 1.0);
        let b = Tensor::new(&[2], vec![0.5, -1.5]);
        let y = tape.conv2d(&x, &w, Some(&b), 1, 0);
        assert_eq!(y.to_vec(), vec![0.5, 0.5, 0.5, 0.5, -1.5, -1.5, -1.5, -1.5]);
    }

    #[test]
    fn conv_gradient_matches_hand_case() {
        // y = conv(x, w), loss = sum(y), 1x1 kernel k: dx = k everywhere, dw = sum(x)
        let tape = Tape::new();
        let x = Tensor::param(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let w = Tensor::param(&[1, 1, 1, 1], vec![3.0]);
        let loss = tape.sum_all(&tape.conv2d(&x, &w, None, 1, 0));
        tape.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![3.0; 4]);
        assert_eq!(w.grad().unwrap(), vec![10.0]);
    }

    #[test]
    fn maxpool_picks_window_maxima_and_routes_gradient() {
        let tape = Tape::new();
        let x = Tensor::param(
            &[1, 1, 4, 4],
            vec![
                1.0, 2.0, 0.0, 0.0, //
                3.0, 4.0, 0.0, 5.0, //
                0.0, 0.0, 7.0, 6.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        let y = tape.maxpool2d(&x);
        assert_eq!(y.shape(), vec![1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![4.0, 5.0, 0.0, 7.0]);
        let loss = tape.sum_all(&y);
        tape.backward(&loss);
        let g = x.grad().unwrap();
        assert_eq!(g[5], 1.0); // the 4.0
        assert_eq!(g[7], 1.0); // the 5.0
        assert_eq!(g[8], 1.0); // first zero of the all-zero window
        assert_eq!(g[10], 1.0); // the 7.0
        assert_eq!(g.iter().sum::<f32>(), 4.0);
    }

    #[test]
    fn maxpool_drops_odd_edges() {
        let tape = Tape::new();
        let x = Tensor::seeded(3, &[1, 1, 5, 5], 0.0, 1.0);
        let y = tape.maxpool2d(&x);
        assert_eq!(y.shape(), vec![1, 1, 2, 2]);
    }
}
