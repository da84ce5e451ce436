//! Step-by-step references for the attention stack.
//!
//! The structs mirror the production decoder's wiring so tests can copy its
//! weights in verbatim; every product below is an explicit loop over `f64`.

use crate::Mat;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// softmax(Q K^T / sqrt(dh)) V over plain `f32` buffers.
pub fn attention_ref(q: &[f32], lq: usize, k: &[f32], v: &[f32], lk: usize, dh: usize) -> Vec<f64> {
    let qm = Mat::from_f32(q, lq, dh);
    let km = Mat::from_f32(k, lk, dh);
    let vm = Mat::from_f32(v, lk, dh);
    attention_mat(&qm, &km, &vm).data
}

/// Raw pre-softmax logits Q K^T / sqrt(dh).
pub fn attention_logits_ref(q: &[f32], lq: usize, k: &[f32], lk: usize, dh: usize) -> Vec<f64> {
    let scale = 1.0 / (dh as f64).sqrt();
    let mut logits = vec![0.0f64; lq * lk];
    for i in 0..lq {
        for j in 0..lk {
            let mut acc = 0.0;
            for p in 0..dh {
                acc += q[i * dh + p] as f64 * k[j * dh + p] as f64;
            }
            logits[i * lk + j] = acc * scale;
        }
    }
    logits
}

fn attention_mat(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    let (lq, dh) = (q.rows, q.cols);
    let lk = k.rows;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Mat::zeros(lq, v.cols);
    for i in 0..lq {
        let mut logits = vec![0.0f64; lk];
        for (j, l) in logits.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in 0..dh {
                acc += q.at(i, p) * k.at(j, p);
            }
            *l = acc * scale;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut w = vec![0.0f64; lk];
        for (j, l) in logits.iter().enumerate() {
            let e = (l - m).exp();
            w[j] = e;
            sum += e;
        }
        for j in 0..lk {
            let a = w[j] / sum;
            for p in 0..v.cols {
                out.data[i * v.cols + p] += a * v.at(j, p);
            }
        }
    }
    out
}

fn mat_product(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows);
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for p in 0..a.cols {
                acc += a.at(i, p) * b.at(p, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

fn mat_add(a: &Mat, b: &Mat) -> Mat {
    let mut out = a.clone();
    for (x, y) in out.data.iter_mut().zip(b.data.iter()) {
        *x += y;
    }
    out
}

/// Multi-head attention weights, one d x d/heads projection per head plus a
/// d x d output projection, no biases.
#[derive(Clone)]
pub struct MhaRef {
    pub wq: Vec<Mat>,
    pub wk: Vec<Mat>,
    pub wv: Vec<Mat>,
    pub wo: Mat,
}

impl MhaRef {
    /// q/k carry positional information, v never does.
    pub fn forward(&self, q_src: &Mat, k_src: &Mat, v_src: &Mat) -> Mat {
        let heads = self.wq.len();
        let d = q_src.cols;
        let dh = d / heads;
        let mut concat = Mat::zeros(q_src.rows, d);
        for h in 0..heads {
            let q = mat_product(q_src, &self.wq[h]);
            let k = mat_product(k_src, &self.wk[h]);
            let v = mat_product(v_src, &self.wv[h]);
            let o = attention_mat(&q, &k, &v);
            for i in 0..o.rows {
                for j in 0..dh {
                    concat.set(i, h * dh + j, o.at(i, j));
                }
            }
        }
        mat_product(&concat, &self.wo)
    }
}

#[derive(Clone)]
pub struct LayerNormRef {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
    pub eps: f64,
}

impl LayerNormRef {
    pub fn forward(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros(x.rows, x.cols);
        let n = x.cols as f64;
        for i in 0..x.rows {
            let row = x.row(i);
            let mean: f64 = row.iter().sum::<f64>() / n;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            for j in 0..x.cols {
                out.set(i, j, (row[j] - mean) * inv * self.gain[j] + self.offset[j]);
            }
        }
        out
    }
}

#[derive(Clone)]
pub struct FfnRef {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl FfnRef {
    pub fn forward(&self, x: &Mat) -> Mat {
        let mut h = mat_product(x, &self.w1);
        for i in 0..h.rows {
            for j in 0..h.cols {
                let v = (h.at(i, j) + self.b1[j]).max(0.0);
                h.set(i, j, v);
            }
        }
        let mut out = mat_product(&h, &self.w2);
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.set(i, j, out.at(i, j) + self.b2[j]);
            }
        }
        out
    }
}

/// One decoder layer: content self-attention, content-to-style
/// cross-attention, feed-forward, each followed by residual + layer norm.
#[derive(Clone)]
pub struct DecoderLayerRef {
    pub self_attn: MhaRef,
    pub norm1: LayerNormRef,
    pub cross_attn: MhaRef,
    pub norm2: LayerNormRef,
    pub ffn: FfnRef,
    pub norm3: LayerNormRef,
}

/// Runs the full decoder stack layer by layer.
pub fn decoder_ref(
    layers: &[DecoderLayerRef],
    content: &Mat,
    codes: &Mat,
    pos_c: &Mat,
    pos_s: &Mat,
) -> Mat {
    let mut tgt = content.clone();
    for layer in layers {
        let qk = mat_add(&tgt, pos_c);
        let sa = layer.self_attn.forward(&qk, &qk, &tgt);
        tgt = layer.norm1.forward(&mat_add(&tgt, &sa));

        let q = mat_add(&tgt, pos_c);
        let k = mat_add(codes, pos_s);
        let ca = layer.cross_attn.forward(&q, &k, codes);
        tgt = layer.norm2.forward(&mat_add(&tgt, &ca));

        let ff = layer.ffn.forward(&tgt);
        tgt = layer.norm3.forward(&mat_add(&tgt, &ff));
    }
    tgt
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Mat { rows, cols, data }
}

/// Random but reproducible decoder weights for the oracle's own sanity cases.
pub fn seeded_decoder_layers(
    seed: u64,
    layers: usize,
    d: usize,
    heads: usize,
    ffn_hidden: usize,
) -> Vec<DecoderLayerRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dh = d / heads;
    let mha = |rng: &mut ChaCha8Rng| MhaRef {
        wq: (0..heads).map(|_| rand_mat(rng, d, dh, 0.3)).collect(),
        wk: (0..heads).map(|_| rand_mat(rng, d, dh, 0.3)).collect(),
        wv: (0..heads).map(|_| rand_mat(rng, d, dh, 0.3)).collect(),
        wo: rand_mat(rng, d, d, 0.3),
    };
    (0..layers)
        .map(|_| {
            let self_attn = mha(&mut rng);
            let cross_attn = mha(&mut rng);
            let norm = |_rng: &mut ChaCha8Rng| LayerNormRef {
                gain: vec![1.0; d],
                offset: vec![0.0; d],
                eps: 1e-5,
            };
            DecoderLayerRef {
                self_attn,
                norm1: norm(&mut rng),
                cross_attn,
                norm2: norm(&mut rng),
                ffn: FfnRef {
                    w1: rand_mat(&mut rng, d, ffn_hidden, 0.3),
                    b1: vec![0.0; ffn_hidden],
                    w2: rand_mat(&mut rng, ffn_hidden, d, 0.3),
                    b2: vec![0.0; d],
                },
                norm3: norm(&mut rng),
            }
        })
        .collect()
}
