//! Reductions and per-channel feature statistics.

use super::{Tape, Tensor};

const STATS_EPS: f64 = 1e-5;

impl Tape {
    /// Sum of every element, as a scalar. Accumulates in `f64`.
    pub fn sum_all(&self, x: &Tensor) -> Tensor {
        let total: f64 = x.data().iter().map(|&v| v as f64).sum();
        let out = Tensor::scalar(total as f32);
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                xi.accumulate_grad(&vec![g[0]; xi.numel()]);
            });
        }
        out
    }

    /// Arithmetic mean of every element, as a scalar.
    pub fn mean_all(&self, x: &Tensor) -> Tensor {
        let n = x.numel();
        self.scalar_mul(&self.sum_all(x), 1.0 / n as f32)
    }

    /// Euclidean norm of all elements, as a scalar. The gradient at the
    /// all-zero input is defined as zero.
    pub fn l2_norm(&self, x: &Tensor) -> Tensor {
        let sq: f64 = x.data().iter().map(|&v| v as f64 * v as f64).sum();
        let norm = sq.sqrt();
        let out = Tensor::scalar(norm as f32);
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                if norm == 0.0 {
                    return;
                }
                let scale = g[0] as f64 / norm;
                let gx: Vec<f32> = xi.data().iter().map(|&v| (v as f64 * scale) as f32).collect();
                xi.accumulate_grad(&gx);
            });
        }
        out
    }

    /// Per-channel mean and standard deviation of `[n, c, h, w]`, reducing
    /// over batch and space. Population variance; epsilon 1e-5 goes under the
    /// square root, so a constant channel has std sqrt(1e-5), never 0.
    pub fn channel_stats(&self, x: &Tensor) -> (Tensor, Tensor) {
        let s = x.shape();
        assert_eq!(s.len(), 4, "channel_stats input must be [n, c, h, w], got {:?}", s);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let m = (n * h * w) as f64;
        let xv = x.to_vec();
        let mut mean = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                for i in 0..h * w {
                    mean[ch] += xv[base + i] as f64;
                }
            }
        }
        for mu in mean.iter_mut() {
            *mu /= m;
        }
        let mut var = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                for i in 0..h * w {
                    let d = xv[base + i] as f64 - mean[ch];
                    var[ch] += d * d;
                }
            }
        }
        let std: Vec<f64> = var.iter().map(|&v| (v / m + STATS_EPS).sqrt()).collect();
        let mean_t = Tensor::new(&[c], mean.iter().map(|&v| v as f32).collect());
        let std_t = Tensor::new(&[c], std.iter().map(|&v| v as f32).collect());
        if x.requires_grad() {
            mean_t.set_requires_grad(true);
            std_t.set_requires_grad(true);
            let (xi, mo, so) = (x.clone(), mean_t.clone(), std_t.clone());
            self.record(move || {
                let gm = mo.grad();
                let gs = so.grad();
                if gm.is_none() && gs.is_none() {
                    return;
                }
                let xv = xi.to_vec();
                let mut gx = vec![0.0f64; xv.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * h * w;
                        let gmc = gm.as_ref().map_or(0.0, |g| g[ch] as f64);
                        let gsc = gs.as_ref().map_or(0.0, |g| g[ch] as f64);
                        for i in 0..h * w {
                            let mut v = gmc / m;
                            if gsc != 0.0 {
                                v += gsc * (xv[base + i] as f64 - mean[ch]) / (m * std[ch]);
                            }
                            gx[base + i] += v;
                        }
                    }
                }
                let gx32: Vec<f32> = gx.iter().map(|&v| v as f32).collect();
                xi.accumulate_grad(&gx32);
            });
        }
        (mean_t, std_t)
    }
}
