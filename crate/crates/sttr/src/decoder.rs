//! Paints decoded tokens back into an image.
//!
//! The stack is four RBC stages (residual block, optional bilinear x2,
//! trailing 3x3 convolution); the first three upsample, so a stride-8 token
//! grid comes back at full image resolution. A final sigmoid bounds the
//! output to (0,1).

use crate::features::{Conv, TokenSequence};
use crate::tensor::{Tape, Tensor};

/// One decoder stage. The residual block keeps the channel count; the
/// trailing convolution moves it to `out`, wrapped in its own skip
/// (identity when the widths already match, 1x1 projection otherwise), so a
/// zero-weight stage is the identity map.
pub struct RbcBlock {
    conv1: Conv,
    conv2: Conv,
    tail: Conv,
    skip: Option<Conv>,
    pub upsample: bool,
}

impl RbcBlock {
    /// Convs start at half scale: both the residual and the tail+skip sums
    /// roughly double variance per stage, so unit-gain init would push four
    /// stacked stages far into the sigmoid rails before training begins.
    const INIT_GAIN: f32 = 0.5;

    pub fn new(seed: u64, name: &str, ci: usize, co: usize, upsample: bool) -> RbcBlock {
        let g = RbcBlock::INIT_GAIN;
        RbcBlock {
            conv1: Conv::with_gain(seed, &format!("{name}.conv1"), ci, ci, 3, 1, 1, true, g),
            conv2: Conv::with_gain(seed, &format!("{name}.conv2"), ci, ci, 3, 1, 1, true, g),
            tail: Conv::with_gain(seed, &format!("{name}.tail"), ci, co, 3, 1, 1, true, g),
            skip: (ci != co)
                .then(|| Conv::with_gain(seed, &format!("{name}.skip"), ci, co, 1, 1, 0, true, g)),
            upsample,
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        let r = self.conv2.forward(tape, &tape.relu(&self.conv1.forward(tape, x)));
        let x = tape.add(&r, x);
        let x = if self.upsample { tape.bilinear_upsample2x(&x) } else { x };
        let t = self.tail.forward(tape, &x);
        let s = match &self.skip {
            Some(p) => p.forward(tape, &x),
            None => x,
        };
        tape.add(&t, &s)
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        self.conv1.visit(&format!("{name}.conv1"), f);
        self.conv2.visit(&format!("{name}.conv2"), f);
        self.tail.visit(&format!("{name}.tail"), f);
        if let Some(p) = &self.skip {
            p.visit(&format!("{name}.skip"), f);
        }
    }

    #[cfg(test)]
    fn zero_weights(&self) {
        for c in [&self.conv1, &self.conv2, &self.tail] {
            c.weight.set_data(&vec![0.0; c.weight.numel()]);
        }
        if let Some(p) = &self.skip {
            p.weight.set_data(&vec![0.0; p.weight.numel()]);
        }
    }
}

/// The full token-to-image stack.
pub struct CnnDecoder {
    pub stages: Vec<RbcBlock>,
    name: String,
}

impl CnnDecoder {
    /// `stages` pairs each output width with an upsample flag. Exactly three
    /// stages must upsample and the last must emit 3 channels.
    pub fn new(seed: u64, name: &str, d: usize, stages: &[(usize, bool)]) -> CnnDecoder {
        let ups = stages.iter().filter(|(_, up)| *up).count();
        assert_eq!(ups, 3, "decoder needs exactly three upsampling stages, got {ups}");
        assert_eq!(stages.last().map(|s| s.0), Some(3), "final stage must output 3 channels");
        let mut ci = d;
        let blocks = stages
            .iter()
            .enumerate()
            .map(|(i, &(co, up))| {
                let b = RbcBlock::new(seed, &format!("{name}.stage{i}"), ci, co, up);
                ci = co;
                b
            })
            .collect();
        CnnDecoder { stages: blocks, name: name.to_string() }
    }

    /// Tokens [grid_h*grid_w, d] -> image [1, 3, 8*grid_h, 8*grid_w] in (0,1).
    pub fn reconstruct(&self, tape: &Tape, decoded: &TokenSequence) -> Tensor {
        let mut x = tape.unflatten_hw(&decoded.tokens, decoded.grid_h, decoded.grid_w);
        for b in &self.stages {
            x = b.forward(tape, &x);
        }
        tape.sigmoid(&x)
    }

    pub fn visit(&self, f: &mut dyn FnMut(String, Tensor)) {
        let name = self.name.clone();
        for (i, b) in self.stages.iter().enumerate() {
            b.visit(&format!("{name}.stage{i}"), f);
        }
    }
}
