//! Element-wise ops. All arithmetic here is pure `f32`, so identities like
//! `total = content + lambda * style` hold bit-exactly for the caller.

use super::{any_requires_grad, Tape, Tensor};

/// Checks the trailing-suffix broadcast rule: `rhs`'s shape must equal the
/// last `rhs.rank()` dims of `lhs`. Returns the repeat count (lhs len / rhs len).
fn broadcast_reps(lhs: &Tensor, rhs: &Tensor) -> usize {
    let ls = lhs.shape();
    let rs = rhs.shape();
    assert!(
        rs.len() <= ls.len() && ls[ls.len() - rs.len()..] == rs[..],
        "{:?} cannot broadcast onto {:?}: rhs shape must be a trailing suffix",
        rs,
        ls
    );
    lhs.numel() / rhs.numel().max(1)
}

/// Sums `g` (of lhs's size) over leading repeats down to rhs's size.
fn fold_to_suffix(g: &[f32], suffix: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; suffix];
    for chunk in g.chunks(suffix) {
        for (o, &v) in out.iter_mut().zip(chunk.iter()) {
            *o += v;
        }
    }
    out
}

impl Tape {
    fn binary_broadcast(
        &self,
        lhs: &Tensor,
        rhs: &Tensor,
        forward: impl Fn(f32, f32) -> f32,
        // (out grad element, lhs element, rhs element) -> (d lhs, d rhs)
        backward: impl Fn(f32, f32, f32) -> (f32, f32) + 'static,
    ) -> Tensor {
        let _ = broadcast_reps(lhs, rhs);
        let suffix = rhs.numel();
        let out_data: Vec<f32> = {
            let a = lhs.data();
            let b = rhs.data();
            a.iter()
                .enumerate()
                .map(|(i, &x)| forward(x, b[i % suffix]))
                .collect()
        };
        let out = Tensor::new(&lhs.shape(), out_data);
        if any_requires_grad(&[lhs, rhs]) {
            out.set_requires_grad(true);
            let (l, r, o) = (lhs.clone(), rhs.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let a = l.to_vec();
                let b = r.to_vec();
                let mut gl = vec![0.0f32; a.len()];
                let mut gr_full = vec![0.0f32; a.len()];
                for i in 0..a.len() {
                    let (dl, dr) = backward(g[i], a[i], b[i % suffix]);
                    gl[i] = dl;
                    gr_full[i] = dr;
                }
                if l.requires_grad() {
                    l.accumulate_grad(&gl);
                }
                if r.requires_grad() {
                    r.accumulate_grad(&fold_to_suffix(&gr_full, suffix));
                }
            });
        }
        out
    }

    pub fn add(&self, lhs: &Tensor, rhs: &Tensor) -> Tensor {
        self.binary_broadcast(lhs, rhs, |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, lhs: &Tensor, rhs: &Tensor) -> Tensor {
        self.binary_broadcast(lhs, rhs, |a, b| a - b, |g, _, _| (g, -g))
    }

    pub fn mul(&self, lhs: &Tensor, rhs: &Tensor) -> Tensor {
        self.binary_broadcast(lhs, rhs, |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn scalar_mul(&self, x: &Tensor, s: f32) -> Tensor {
        let out_data: Vec<f32> = x.data().iter().map(|&v| v * s).collect();
        let out = Tensor::new(&x.shape(), out_data);
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let gx: Vec<f32> = g.iter().map(|&v| v * s).collect();
                xi.accumulate_grad(&gx);
            });
        }
        out
    }

    /// max(x, 0); the derivative at exactly 0 is taken as 0.
    pub fn relu(&self, x: &Tensor) -> Tensor {
        let out_data: Vec<f32> = x.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(&x.shape(), out_data);
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let xv = xi.to_vec();
                let gx: Vec<f32> = g
                    .iter()
                    .zip(xv.iter())
                    .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                xi.accumulate_grad(&gx);
            });
        }
        out
    }

    /// Saturation rounds into the open interval: the exact value is always
    /// strictly between 0 and 1 for finite input, so neither endpoint may
    /// escape (largest f32 below 1.0, smallest positive normal above 0).
    pub fn sigmoid(&self, x: &Tensor) -> Tensor {
        const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;
        let out_data: Vec<f32> = x
            .data()
            .iter()
            .map(|&v| (1.0 / (1.0 + (-v).exp())).clamp(f32::MIN_POSITIVE, BELOW_ONE))
            .collect();
        let out = Tensor::new(&x.shape(), out_data);
        if x.requires_grad() {
            out.set_requires_grad(true);
            let (xi, o) = (x.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let s = o.to_vec();
                let gx: Vec<f32> = g.iter().zip(s.iter()).map(|(&gv, &sv)| gv * sv * (1.0 - sv)).collect();
                xi.accumulate_grad(&gx);
            });
        }
        out
    }
}
