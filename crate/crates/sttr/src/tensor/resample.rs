//! Bilinear 2x upsampling with half-pixel sample alignment.

use super::{Tape, Tensor};

/// Sample positions and blend weights for one output row/column index.
/// Half-pixel convention: source = (out + 0.5) / 2 - 0.5, clamped to the map.
fn taps(out_idx: usize, in_size: usize) -> (usize, usize, f32) {
    let s = (out_idx as f64 + 0.5) / 2.0 - 0.5;
    let lo = s.floor();
    let f = (s - lo) as f32;
    let clamp = |v: f64| -> usize { v.max(0.0).min(in_size as f64 - 1.0) as usize };
    (clamp(lo), clamp(lo + 1.0), f)
}

impl Tape {
    /// `[n, c, h, w] -> [n, c, 2h, 2w]`. Blend weights are quarters, so
    /// constant maps stay bit-exactly constant.
    pub fn bilinear_upsample2x(&self, input: &Tensor) -> Tensor {
        let is = input.shape();
        assert_eq!(is.len(), 4, "bilinear_upsample2x input must be [n, c, h, w], got {:?}", is);
        let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
        let (oh, ow) = (2 * h, 2 * w);
        let iv = input.to_vec();
        let mut out_data = vec![0.0f32; n * c * oh * ow];
        for b in 0..n {
            for ch in 0..c {
                let ibase = (b * c + ch) * h * w;
                let obase = (b * c + ch) * oh * ow;
                for oy in 0..oh {
                    let (y0, y1, fy) = taps(oy, h);
                    for ox in 0..ow {
                        let (x0, x1, fx) = taps(ox, w);
                        let v00 = iv[ibase + y0 * w + x0];
                        let v01 = iv[ibase + y0 * w + x1];
                        let v10 = iv[ibase + y1 * w + x0];
                        let v11 = iv[ibase + y1 * w + x1];
                        let top = v00 * (1.0 - fx) + v01 * fx;
                        let bot = v10 * (1.0 - fx) + v11 * fx;
                        out_data[obase + oy * ow + ox] = top * (1.0 - fy) + bot * fy;
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
                let mut gi = vec![0.0f64; ii.numel()];
                for b in 0..n {
                    for ch in 0..c {
                        let ibase = (b * c + ch) * h * w;
                        let obase = (b * c + ch) * oh * ow;
                        for oy in 0..oh {
                            let (y0, y1, fy) = taps(oy, h);
                            for ox in 0..ow {
                                let (x0, x1, fx) = taps(ox, w);
                                let gv = g[obase + oy * ow + ox] as f64;
                                let (fy, fx) = (fy as f64, fx as f64);
                                gi[ibase + y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                                gi[ibase + y0 * w + x1] += gv * (1.0 - fy) * fx;
                                gi[ibase + y1 * w + x0] += gv * fy * (1.0 - fx);
                                gi[ibase + y1 * w + x1] += gv * fy * fx;
                            }
                        }
                    }
                }
                let gi32: Vec<f32> = gi.iter().map(|&v| v as f32).collect();
                ii.accumulate_grad(&gi32);
            });
        }
        out
    }
}
