//! Matrix products, transposes, softmax and layer norm.

use super::{any_requires_grad, Tape, Tensor};

const LN_EPS: f64 = 1e-5;

fn matmul_f64(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a[i * k + p] as f64 * b[p * n + j] as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
    out
}

fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Splits a shape around `axis` into (lanes before, axis length, stride after).
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {} out of range for {:?}", axis, shape);
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Tape {
    /// `[m, k] x [k, n] -> [m, n]` with 64-bit accumulation.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (sa, sb) = (a.shape(), b.shape());
        assert_eq!(sa.len(), 2, "matmul lhs must be 2-d, got {:?}", sa);
        assert_eq!(sb.len(), 2, "matmul rhs must be 2-d, got {:?}", sb);
        assert_eq!(sa[1], sb[0], "matmul inner dims differ: {:?} x {:?}", sa, sb);
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out_data = matmul_f64(&a.data(), &b.data(), m, k, n);
        let out = Tensor::new(&[m, n], out_data);
        if any_requires_grad(&[a, b]) {
            out.set_requires_grad(true);
            let (ai, bi, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                if ai.requires_grad() {
                    // dA = G B^T
                    let bt = transpose(&bi.data(), k, n);
                    ai.accumulate_grad(&matmul_f64(&g, &bt, m, n, k));
                }
                if bi.requires_grad() {
                    // dB = A^T G
                    let at = transpose(&ai.data(), m, k);
                    bi.accumulate_grad(&matmul_f64(&at, &g, k, m, n));
                }
            });
        }
        out
    }

    pub fn transpose2d(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        assert_eq!(s.len(), 2, "transpose2d needs a 2-d tensor, got {:?}", s);
        let (m, n) = (s[0], s[1]);
        let out = Tensor::new(&[n, m], transpose(&x.data(), m, n));
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                xi.accumulate_grad(&transpose(&g, n, m));
            });
        }
        out
    }

    /// Numerically stable softmax along `axis`: every slice along the axis
    /// sums to 1.
    pub fn softmax(&self, x: &Tensor, axis: usize) -> Tensor {
        let shape = x.shape();
        let (outer, len, inner) = lanes(&shape, axis);
        let xv = x.to_vec();
        let mut out_data = vec![0.0f32; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = f32::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(xv[idx(j)]);
                }
                let mut sum = 0.0f64;
                for j in 0..len {
                    let e = (xv[idx(j)] - mx).exp();
                    out_data[idx(j)] = e;
                    sum += e as f64;
                }
                for j in 0..len {
                    out_data[idx(j)] = (out_data[idx(j)] as f64 / sum) as f32;
                }
            }
        }
        let out = Tensor::new(&shape, out_data);
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o_t) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o_t.grad() else { return };
                let y = o_t.to_vec();
                let mut gx = vec![0.0f32; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let mut dot = 0.0f64;
                        for j in 0..len {
                            dot += g[idx(j)] as f64 * y[idx(j)] as f64;
                        }
                        for j in 0..len {
                            gx[idx(j)] = (y[idx(j)] as f64 * (g[idx(j)] as f64 - dot)) as f32;
                        }
                    }
                }
                xi.accumulate_grad(&gx);
            });
        }
        out
    }

    /// Normalizes along `axis` to zero mean and unit variance (population
    /// variance, epsilon 1e-5 under the square root), then applies per-index
    /// `gain` and `offset` of length `shape[axis]`.
    pub fn layer_norm(&self, x: &Tensor, axis: usize, gain: &Tensor, offset: &Tensor) -> Tensor {
        let shape = x.shape();
        let (outer, len, inner) = lanes(&shape, axis);
        assert_eq!(gain.numel(), len, "gain length must match normalized axis");
        assert_eq!(offset.numel(), len, "offset length must match normalized axis");
        let xv = x.to_vec();
        let gv = gain.to_vec();
        let bv = offset.to_vec();
        let mut norm = vec![0.0f32; xv.len()]; // (x - mean) / sigma, saved for backward
        let mut inv_sigma = vec![0.0f64; outer * inner];
        let mut out_data = vec![0.0f32; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mean = 0.0f64;
                for j in 0..len {
                    mean += xv[idx(j)] as f64;
                }
                mean /= len as f64;
                let mut var = 0.0f64;
                for j in 0..len {
                    let d = xv[idx(j)] as f64 - mean;
                    var += d * d;
                }
                var /= len as f64;
                let inv = 1.0 / (var + LN_EPS).sqrt();
                inv_sigma[o * inner + i] = inv;
                for j in 0..len {
                    let n = ((xv[idx(j)] as f64 - mean) * inv) as f32;
                    norm[idx(j)] = n;
                    out_data[idx(j)] = n * gv[j] + bv[j];
                }
            }
        }
        let out = Tensor::new(&shape, out_data);
        if any_requires_grad(&[x, gain, offset]) {
            out.set_requires_grad(true);
            let (xi, gi, bi, o_t) = (x.clone(), gain.clone(), offset.clone(), out.clone());
            self.record(move || {
                let Some(g) = o_t.grad() else { return };
                let gv = gi.to_vec();
                let mut gx = vec![0.0f32; norm.len()];
                let mut ggain = vec![0.0f64; len];
                let mut goff = vec![0.0f64; len];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let inv = inv_sigma[o * inner + i];
                        // a_j = g_j * gain_j; dx = (a - mean(a) - norm * mean(a*norm)) * inv
                        let mut mean_a = 0.0f64;
                        let mut mean_an = 0.0f64;
                        for j in 0..len {
                            let a = g[idx(j)] as f64 * gv[j] as f64;
                            mean_a += a;
                            mean_an += a * norm[idx(j)] as f64;
                            ggain[j] += g[idx(j)] as f64 * norm[idx(j)] as f64;
                            goff[j] += g[idx(j)] as f64;
                        }
                        mean_a /= len as f64;
                        mean_an /= len as f64;
                        for j in 0..len {
                            let a = g[idx(j)] as f64 * gv[j] as f64;
                            gx[idx(j)] = ((a - mean_a - norm[idx(j)] as f64 * mean_an) * inv) as f32;
                        }
                    }
                }
                if xi.requires_grad() {
                    xi.accumulate_grad(&gx);
                }
                if gi.requires_grad() {
                    let gg: Vec<f32> = ggain.iter().map(|&v| v as f32).collect();
                    gi.accumulate_grad(&gg);
                }
                if bi.requires_grad() {
                    let gb: Vec<f32> = goff.iter().map(|&v| v as f32).collect();
                    bi.accumulate_grad(&gb);
                }
            });
        }
        out
    }

    /// Concatenates 2-d tensors with equal row counts along the column axis.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = parts[0].shape()[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let s = p.shape();
                assert_eq!(s.len(), 2, "concat_cols parts must be 2-d");
                assert_eq!(s[0], rows, "concat_cols parts must share the row count");
                s[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out_data = vec![0.0f32; rows * total];
        let mut col = 0;
        for (p, &w) in parts.iter().zip(widths.iter()) {
            let d = p.data();
            for r in 0..rows {
                out_data[r * total + col..r * total + col + w]
                    .copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let out = Tensor::new(&[rows, total], out_data);
        if parts.iter().any(|p| p.requires_grad()) {
            out.set_requires_grad(true);
            let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
            let o = out.clone();
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let mut col = 0;
                for (p, &w) in owned.iter().zip(widths.iter()) {
                    if p.requires_grad() {
                        let mut gp = vec![0.0f32; rows * w];
                        for r in 0..rows {
                            gp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + col..r * total + col + w]);
                        }
                        p.accumulate_grad(&gp);
                    }
                    col += w;
                }
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_case() {
        let tape = Tape::new();
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::new(&[2, 1], vec![5.0, 6.0]);
        assert_eq!(tape.matmul(&a, &b).to_vec(), vec![17.0, 39.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let tape = Tape::new();
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(tape.matmul(&a, &eye).to_vec(), a.to_vec());
    }

    #[test]
    fn matmul_backward_matches_hand_derivation() {
        // loss = sum(A B): dA = ones * B^T, dB = A^T * ones
        let tape = Tape::new();
        let a = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::param(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let loss = tape.sum_all(&tape.matmul(&a, &b));
        tape.backward(&loss);
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn transpose_roundtrips() {
        let tape = Tape::new();
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = tape.transpose2d(&a);
        assert_eq!(t.shape(), vec![3, 2]);
        assert_eq!(t.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(tape.transpose2d(&t).to_vec(), a.to_vec());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_uniform() {
        let tape = Tape::new();
        let x = Tensor::new(&[2, 4], vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = tape.softmax(&x, 1);
        let v = y.to_vec();
        for &u in &v[..4] {
            assert!((u - 0.25).abs() < 1e-7);
        }
        let s: f32 = v[4..].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(v[7] > v[6] && v[6] > v[5] && v[5] > v[4]);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let tape = Tape::new();
        let x = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]);
        let shifted = Tensor::new(&[1, 3], vec![101.0, 102.0, 103.0]);
        let a = tape.softmax(&x, 1).to_vec();
        let b = tape.softmax(&shifted, 1).to_vec();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_axis0_normalizes_columns() {
        let tape = Tape::new();
        let x = Tensor::new(&[2, 2], vec![5.0, -1.0, 5.0, -1.0]);
        let y = tape.softmax(&x, 0).to_vec();
        for &v in &y {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_constant_gain_offset() {
        let tape = Tape::new();
        let x = Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let gain = Tensor::new(&[4], vec![1.0; 4]);
        let offset = Tensor::new(&[4], vec![0.0; 4]);
        let y = tape.layer_norm(&x, 1, &gain, &offset).to_vec();
        let mean: f32 = y.iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        // population sigma of [1,2,3,4] is sqrt(1.25)
        let want = (1.5f64 / (1.25f64 + 1e-5).sqrt()) as f32;
        assert!((y[3] - want).abs() < 1e-6);
        assert!((y[0] + want).abs() < 1e-6);
    }

    #[test]
    fn concat_cols_stitches_and_splits_gradient() {
        let tape = Tape::new();
        let a = Tensor::param(&[2, 1], vec![1.0, 2.0]);
        let b = Tensor::param(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = tape.concat_cols(&[&a, &b]);
        assert_eq!(c.shape(), vec![2, 3]);
        assert_eq!(c.to_vec(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = Tensor::new(&[2, 3], vec![1.0, 10.0, 100.0, 2.0, 20.0, 200.0]);
        let loss = tape.sum_all(&tape.mul(&c, &w));
        tape.backward(&loss);
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![10.0, 100.0, 20.0, 200.0]);
    }
}
