//! Style encoder and content decoder built from multi-head attention.
//!
//! The encoder contextualizes style tokens with self-attention; the decoder
//! matches content tokens against the encoded style codes with
//! cross-attention. All layers are post-norm (sublayer -> residual ->
//! normalize); positional encodings go into Q and K at every attention
//! layer, never into V.

use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, ones_param, param_seed, zeros_param};
use crate::tensor::{Tape, Tensor};

/// softmax(Q K^T / sqrt(dh)) V. Returns [Lq, v_width].
pub fn attention(tape: &Tape, q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    attention_with_weights(tape, q, k, v).0
}

/// Same, also returning the post-softmax weights [Lq, Lk].
fn attention_with_weights(tape: &Tape, q: &Tensor, k: &Tensor, v: &Tensor) -> (Tensor, Tensor) {
    assert_eq!(q.rank(), 2, "attention expects 2-d Q");
    assert_eq!(
        q.shape()[1],
        k.shape()[1],
        "query width {} != key width {}",
        q.shape()[1],
        k.shape()[1]
    );
    assert_eq!(
        k.shape()[0],
        v.shape()[0],
        "key count {} != value count {}",
        k.shape()[0],
        v.shape()[0]
    );
    let dh = q.shape()[1];
    let logits = tape.matmul(q, &tape.transpose2d(k));
    let scaled = tape.scalar_mul(&logits, 1.0 / (dh as f32).sqrt());
    let weights = tape.softmax(&scaled, 1);
    (tape.matmul(&weights, v), weights)
}

/// Multi-head attention: one [d, d/heads] projection per head for each of
/// Q, K, V (no biases) and a [d, d] output projection.
pub struct Mha {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
    pub heads: usize,
}

impl Mha {
    pub fn new(seed: u64, name: &str, d: usize, heads: usize) -> Mha {
        assert!(heads >= 1 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let proj = |kind: &str, h: usize| {
            fan_in_uniform(param_seed(seed, &format!("{name}.head{h}.{kind}")), &[d, dh], d)
        };
        Mha {
            wq: (0..heads).map(|h| proj("wq", h)).collect(),
            wk: (0..heads).map(|h| proj("wk", h)).collect(),
            wv: (0..heads).map(|h| proj("wv", h)).collect(),
            wo: fan_in_uniform(param_seed(seed, &format!("{name}.wo")), &[d, d], d),
            heads,
        }
    }

    /// `want_weights` additionally returns the head-averaged post-softmax
    /// attention matrix [Lq, Lk], detached from the graph.
    pub fn forward(
        &self,
        tape: &Tape,
        q_src: &Tensor,
        k_src: &Tensor,
        v_src: &Tensor,
        want_weights: bool,
    ) -> (Tensor, Option<Tensor>) {
        let d = self.wo.shape()[0];
        for (t, what) in [(q_src, "query"), (k_src, "key"), (v_src, "value")] {
            assert_eq!(t.shape()[1], d, "{what} width {} != model width {d}", t.shape()[1]);
        }
        assert_eq!(k_src.shape()[0], v_src.shape()[0], "key/value token counts differ");
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = tape.matmul(q_src, &self.wq[h]);
            let k = tape.matmul(k_src, &self.wk[h]);
            let v = tape.matmul(v_src, &self.wv[h]);
            let (o, w) = attention_with_weights(tape, &q, &k, &v);
            outs.push(o);
            if want_weights {
                weights.push(w);
            }
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        let out = tape.matmul(&tape.concat_cols(&refs), &self.wo);
        (out, want_weights.then(|| head_average(&weights)))
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        for h in 0..self.heads {
            f(format!("{name}.head{h}.wq"), self.wq[h].clone());
            f(format!("{name}.head{h}.wk"), self.wk[h].clone());
            f(format!("{name}.head{h}.wv"), self.wv[h].clone());
        }
        f(format!("{name}.wo"), self.wo.clone());
    }
}

fn head_average(mats: &[Tensor]) -> Tensor {
    let shape = mats[0].shape().to_vec();
    let mut acc = vec![0.0f32; mats[0].numel()];
    for m in mats {
        for (a, v) in acc.iter_mut().zip(m.data().iter()) {
            *a += v;
        }
    }
    let inv = 1.0 / mats.len() as f32;
    for a in &mut acc {
        *a *= inv;
    }
    Tensor::new(&shape, acc)
}

pub struct LayerNorm {
    pub gain: Tensor,
    pub offset: Tensor,
}

impl LayerNorm {
    pub fn new(d: usize) -> LayerNorm {
        LayerNorm { gain: ones_param(&[d]), offset: zeros_param(&[d]) }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        tape.layer_norm(x, 1, &self.gain, &self.offset)
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        f(format!("{name}.gain"), self.gain.clone());
        f(format!("{name}.offset"), self.offset.clone());
    }
}

/// Two-layer position-wise feed-forward with ReLU, both layers biased.
pub struct Ffn {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Ffn {
    pub fn new(seed: u64, name: &str, d: usize, hidden: usize) -> Ffn {
        Ffn {
            w1: fan_in_uniform(param_seed(seed, &format!("{name}.w1")), &[d, hidden], d),
            b1: zeros_param(&[hidden]),
            w2: fan_in_uniform(param_seed(seed, &format!("{name}.w2")), &[hidden, d], hidden),
            b2: zeros_param(&[d]),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        let h = tape.relu(&tape.add(&tape.matmul(x, &self.w1), &self.b1));
        tape.add(&tape.matmul(&h, &self.w2), &self.b2)
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        f(format!("{name}.w1"), self.w1.clone());
        f(format!("{name}.b1"), self.b1.clone());
        f(format!("{name}.w2"), self.w2.clone());
        f(format!("{name}.b2"), self.b2.clone());
    }
}

pub struct EncoderLayer {
    pub self_attn: Mha,
    pub norm1: LayerNorm,
    pub ffn: Ffn,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    fn new(seed: u64, name: &str, d: usize, heads: usize) -> EncoderLayer {
        EncoderLayer {
            self_attn: Mha::new(seed, &format!("{name}.self_attn"), d, heads),
            norm1: LayerNorm::new(d),
            ffn: Ffn::new(seed, &format!("{name}.ffn"), d, 4 * d),
            norm2: LayerNorm::new(d),
        }
    }

    fn forward(&self, tape: &Tape, src: &Tensor, pos: &Tensor, want: bool) -> (Tensor, Option<Tensor>) {
        let qk = tape.add(src, pos);
        let (sa, w) = self.self_attn.forward(tape, &qk, &qk, src, want);
        let src = self.norm1.forward(tape, &tape.add(src, &sa));
        let ff = self.ffn.forward(tape, &src);
        (self.norm2.forward(tape, &tape.add(&src, &ff)), w)
    }

    fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        self.self_attn.visit(&format!("{name}.self_attn"), f);
        self.norm1.visit(&format!("{name}.norm1"), f);
        self.ffn.visit(&format!("{name}.ffn"), f);
        self.norm2.visit(&format!("{name}.norm2"), f);
    }
}

pub struct DecoderLayer {
    pub self_attn: Mha,
    pub norm1: LayerNorm,
    pub cross_attn: Mha,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    fn new(seed: u64, name: &str, d: usize, heads: usize) -> DecoderLayer {
        DecoderLayer {
            self_attn: Mha::new(seed, &format!("{name}.self_attn"), d, heads),
            norm1: LayerNorm::new(d),
            cross_attn: Mha::new(seed, &format!("{name}.cross_attn"), d, heads),
            norm2: LayerNorm::new(d),
            ffn: Ffn::new(seed, &format!("{name}.ffn"), d, 4 * d),
            norm3: LayerNorm::new(d),
        }
    }

    /// Returns the new content state and, on request, the head-averaged
    /// cross-attention weights (content query rows over style key columns).
    fn forward(
        &self,
        tape: &Tape,
        tgt: &Tensor,
        codes: &Tensor,
        pos_c: &Tensor,
        pos_s: &Tensor,
        want: bool,
    ) -> (Tensor, Option<Tensor>) {
        let qk = tape.add(tgt, pos_c);
        let (sa, _) = self.self_attn.forward(tape, &qk, &qk, tgt, false);
        let tgt = self.norm1.forward(tape, &tape.add(tgt, &sa));

        let q = tape.add(&tgt, pos_c);
        let k = tape.add(codes, pos_s);
        let (ca, w) = self.cross_attn.forward(tape, &q, &k, codes, want);
        let tgt = self.norm2.forward(tape, &tape.add(&tgt, &ca));

        let ff = self.ffn.forward(tape, &tgt);
        (self.norm3.forward(tape, &tape.add(&tgt, &ff)), w)
    }

    fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        self.self_attn.visit(&format!("{name}.self_attn"), f);
        self.norm1.visit(&format!("{name}.norm1"), f);
        self.cross_attn.visit(&format!("{name}.cross_attn"), f);
        self.norm2.visit(&format!("{name}.norm2"), f);
        self.ffn.visit(&format!("{name}.ffn"), f);
        self.norm3.visit(&format!("{name}.norm3"), f);
    }
}

/// Head-averaged post-softmax weights for one attention site.
pub struct AttentionMap {
    /// [Lq, Lk]; every row is a distribution over key tokens.
    pub weights: Tensor,
    pub layer_index: usize,
    /// -1 means averaged over heads.
    pub head_index: i32,
}

/// Per-layer attention maps recorded during a forward pass: encoder
/// self-attention and decoder cross-attention.
#[derive(Default)]
pub struct AttentionTrace {
    pub encoder: Vec<AttentionMap>,
    pub decoder: Vec<AttentionMap>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionSite {
    Encoder,
    Decoder,
}

/// One query token's attention row from a recorded trace, as a [1, Lk] map
/// reshapeable to the key sequence's grid.
pub fn capture_attention(
    trace: &AttentionTrace,
    site: AttentionSite,
    layer: usize,
    query_index: usize,
) -> Result<AttentionMap> {
    let maps = match site {
        AttentionSite::Encoder => &trace.encoder,
        AttentionSite::Decoder => &trace.decoder,
    };
    let map = maps.get(layer).ok_or_else(|| {
        Error::Shape(format!(
            "attention capture: layer {layer} out of range, {} layers recorded",
            maps.len()
        ))
    })?;
    let s = map.weights.shape();
    let (lq, lk) = (s[0], s[1]);
    if query_index >= lq {
        return Err(Error::Shape(format!(
            "attention capture: query index {query_index} out of range for {lq} tokens"
        )));
    }
    let row = map.weights.to_vec()[query_index * lk..(query_index + 1) * lk].to_vec();
    Ok(AttentionMap { weights: Tensor::new(&[1, lk], row), layer_index: layer, head_index: -1 })
}

/// The full attention stack: style encoder plus content decoder.
pub struct Transformer {
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub d: usize,
    name: String,
}

impl Transformer {
    pub fn new(
        seed: u64,
        name: &str,
        d: usize,
        heads: usize,
        encoder_layers: usize,
        decoder_layers: usize,
    ) -> Transformer {
        assert!(encoder_layers >= 1 && decoder_layers >= 1, "need at least one layer per stack");
        Transformer {
            encoder: (0..encoder_layers)
                .map(|i| EncoderLayer::new(seed, &format!("{name}.encoder.layer{i}"), d, heads))
                .collect(),
            decoder: (0..decoder_layers)
                .map(|i| DecoderLayer::new(seed, &format!("{name}.decoder.layer{i}"), d, heads))
                .collect(),
            d,
            name: name.to_string(),
        }
    }

    /// Contextualizes style tokens [L, d] into style codes of the same shape.
    pub fn encode_style(
        &self,
        tape: &Tape,
        tokens: &Tensor,
        pos: &Tensor,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Tensor {
        assert_eq!(
            tokens.shape(),
            pos.shape(),
            "positional encoding shape {:?} != token shape {:?}",
            pos.shape(),
            tokens.shape()
        );
        let mut src = tokens.clone();
        for (i, layer) in self.encoder.iter().enumerate() {
            let want = trace.is_some();
            let (out, w) = layer.forward(tape, &src, pos, want);
            src = out;
            if let (Some(t), Some(w)) = (trace.as_deref_mut(), w) {
                t.encoder.push(AttentionMap { weights: w, layer_index: i, head_index: -1 });
            }
        }
        src
    }

    /// Matches content tokens [Lc, d] against style codes [Ls, d]; output
    /// keeps the content shape.
    pub fn decode(
        &self,
        tape: &Tape,
        content: &Tensor,
        codes: &Tensor,
        pos_c: &Tensor,
        pos_s: &Tensor,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Tensor {
        assert_eq!(content.shape()[1], self.d, "content token width != model width");
        assert_eq!(codes.shape()[1], self.d, "style code width != model width");
        assert_eq!(content.shape(), pos_c.shape(), "content positional shape mismatch");
        assert_eq!(codes.shape(), pos_s.shape(), "style positional shape mismatch");
        let mut tgt = content.clone();
        for (i, layer) in self.decoder.iter().enumerate() {
            let want = trace.is_some();
            let (out, w) = layer.forward(tape, &tgt, codes, pos_c, pos_s, want);
            tgt = out;
            if let (Some(t), Some(w)) = (trace.as_deref_mut(), w) {
                t.decoder.push(AttentionMap { weights: w, layer_index: i, head_index: -1 });
            }
        }
        tgt
    }

    pub fn visit(&self, f: &mut dyn FnMut(String, Tensor)) {
        let name = self.name.clone();
        for (i, layer) in self.encoder.iter().enumerate() {
            layer.visit(&format!("{name}.encoder.layer{i}"), f);
        }
        for (i, layer) in self.decoder.iter().enumerate() {
            layer.visit(&format!("{name}.decoder.layer{i}"), f);
        }
    }
}
