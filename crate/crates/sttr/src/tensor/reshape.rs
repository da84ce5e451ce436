//! Layout changes between feature maps `[1, c, h, w]` and token matrices
//! `[h*w, c]`. Tokens follow row-major raster order: token y*w + x is the
//! feature column at (y, x).

use super::{Tape, Tensor};

impl Tape {
    /// `[1, c, h, w] -> [h*w, c]`.
    pub fn flatten_hw(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        assert_eq!(s.len(), 4, "flatten_hw input must be [1, c, h, w], got {:?}", s);
        assert_eq!(s[0], 1, "flatten_hw handles a single image, got batch {}", s[0]);
        let (c, h, w) = (s[1], s[2], s[3]);
        let xv = x.data();
        let mut out_data = vec![0.0f32; c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                out_data[i * c + ch] = xv[ch * h * w + i];
            }
        }
        drop(xv);
        let out = Tensor::new(&[h * w, c], out_data);
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let mut gx = vec![0.0f32; g.len()];
                for ch in 0..c {
                    for i in 0..h * w {
                        gx[ch * h * w + i] = g[i * c + ch];
                    }
                }
                xi.accumulate_grad(&gx);
            });
        }
        out
    }

    /// `[h*w, c] -> [1, c, h, w]`, the inverse of [`Tape::flatten_hw`].
    pub fn unflatten_hw(&self, x: &Tensor, h: usize, w: usize) -> Tensor {
        let s = x.shape();
        assert_eq!(s.len(), 2, "unflatten_hw input must be [tokens, c], got {:?}", s);
        assert_eq!(s[0], h * w, "token count {} != {}x{}", s[0], h, w);
        let c = s[1];
        let xv = x.data();
        let mut out_data = vec![0.0f32; c * h * w];
        for i in 0..h * w {
            for ch in 0..c {
                out_data[ch * h * w + i] = xv[i * c + ch];
            }
        }
        drop(xv);
        let out = Tensor::new(&[1, c, h, w], out_data);
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let mut gx = vec![0.0f32; g.len()];
                for i in 0..h * w {
                    for ch in 0..c {
                        gx[i * c + ch] = g[ch * h * w + i];
                    }
                }
                xi.accumulate_grad(&gx);
            });
        }
        out
    }
}
