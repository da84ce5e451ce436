//! From images to token sequences: the two convolutional backbones, 1x1
//! projection, tokenizers, and 2D positional encodings.
//!
//! Backbones are residual bottleneck stacks tapped mid-way: the content path
//! reads stage 2 (stride 8), the style path stage 4 (stride 32). Stage
//! widths follow the 1:2:4:8 ratio off `base_width`; the stem runs at a
//! quarter of `base_width`.

use crate::config::RunConfig;
use crate::init::{fan_in_uniform, param_seed, zeros_param};
use crate::tensor::{Tape, Tensor};

/// A flattened feature map: `tokens` is [L, width] and L = grid_h * grid_w.
/// Token i sits at grid position (i / grid_w, i % grid_w).
#[derive(Clone)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Convolution layer: weight plus optional bias, fixed stride/padding.
pub struct Conv {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new(
        seed: u64,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
    ) -> Conv {
        Conv::with_gain(seed, name, ci, co, k, stride, padding, with_bias, 1.0)
    }

    /// Like [`Conv::new`] with the weight init scaled by `gain`. Stacks of
    /// summed residual paths need gain < 1 to keep activations from
    /// doubling at every block.
    #[allow(clippy::too_many_arguments)]
    pub fn with_gain(
        seed: u64,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        gain: f32,
    ) -> Conv {
        let weight = fan_in_uniform(
            param_seed(seed, &format!("{name}.weight")),
            &[co, ci, k, k],
            ci * k * k,
        );
        if gain != 1.0 {
            let scaled: Vec<f32> = weight.to_vec().iter().map(|v| v * gain).collect();
            weight.set_data(&scaled);
        }
        let bias = with_bias.then(|| zeros_param(&[co]));
        Conv { weight, bias, stride, padding }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        tape.conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        f(format!("{name}.weight"), self.weight.clone());
        if let Some(b) = &self.bias {
            f(format!("{name}.bias"), b.clone());
        }
    }
}

/// 1x1 -> 3x3 -> 1x1 bottleneck with a residual shortcut. The middle width
/// is a quarter of the output width. When stride or channel count changes,
/// the shortcut is a strided 1x1 projection.
pub struct Bottleneck {
    conv1: Conv,
    conv2: Conv,
    conv3: Conv,
    shortcut: Option<Conv>,
}

impl Bottleneck {
    fn new(seed: u64, name: &str, ci: usize, co: usize, stride: usize) -> Bottleneck {
        let mid = (co / 4).max(1);
        let conv1 = Conv::new(seed, &format!("{name}.conv1"), ci, mid, 1, 1, 0, true);
        let conv2 = Conv::new(seed, &format!("{name}.conv2"), mid, mid, 3, stride, 1, true);
        let conv3 = Conv::new(seed, &format!("{name}.conv3"), mid, co, 1, 1, 0, true);
        let shortcut = (ci != co || stride != 1)
            .then(|| Conv::new(seed, &format!("{name}.shortcut"), ci, co, 1, stride, 0, true));
        Bottleneck { conv1, conv2, conv3, shortcut }
    }

    fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        let h = tape.relu(&self.conv1.forward(tape, x));
        let h = tape.relu(&self.conv2.forward(tape, &h));
        let h = self.conv3.forward(tape, &h);
        let skip = match &self.shortcut {
            Some(p) => p.forward(tape, x),
            None => x.clone(),
        };
        tape.relu(&tape.add(&h, &skip))
    }

    fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        self.conv1.visit(&format!("{name}.conv1"), f);
        self.conv2.visit(&format!("{name}.conv2"), f);
        self.conv3.visit(&format!("{name}.conv3"), f);
        if let Some(p) = &self.shortcut {
            p.visit(&format!("{name}.shortcut"), f);
        }
    }
}

/// Feature extractor: 7x7 stride-2 stem, 2x2 max pool, then four bottleneck
/// stages at strides 4, 8, 16, 32 relative to the input.
pub struct Backbone {
    stem: Conv,
    stages: Vec<Vec<Bottleneck>>,
    name: String,
}

impl Backbone {
    /// Builds the stem plus the first `num_stages` stages. An extractor
    /// tapping stage 2 carries no stage 3/4 weights at all.
    pub fn new(
        seed: u64,
        name: &str,
        base_width: usize,
        blocks_per_stage: usize,
        num_stages: usize,
    ) -> Backbone {
        assert!((1..=4).contains(&num_stages), "backbone has 1..=4 stages, got {num_stages}");
        let stem_width = (base_width / 4).max(1);
        let stem = Conv::new(seed, &format!("{name}.stem"), 3, stem_width, 7, 2, 3, true);
        let widths = [base_width, 2 * base_width, 4 * base_width, 8 * base_width];
        let mut stages = Vec::new();
        let mut ci = stem_width;
        for (s, &co) in widths.iter().take(num_stages).enumerate() {
            let mut blocks = Vec::new();
            for b in 0..blocks_per_stage {
                // stage 1 keeps the post-pool stride; later stages halve once
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let bname = format!("{name}.stage{}.block{}", s + 1, b);
                blocks.push(Bottleneck::new(seed, &bname, ci, co, stride));
                ci = co;
            }
            stages.push(blocks);
        }
        Backbone { stem, stages, name: name.to_string() }
    }

    /// Runs the stem and the first `stage` stages (1..=built count).
    pub fn forward_to_stage(&self, tape: &Tape, image: &Tensor, stage: usize) -> Tensor {
        assert!(
            (1..=self.stages.len()).contains(&stage),
            "backbone stage must be 1..={}, got {stage}",
            self.stages.len()
        );
        let s = image.shape();
        assert_eq!(s.len(), 4, "backbone input must be [1, 3, h, w]");
        // every layer halves cleanly when the input divides the tap stride
        let stride = 4 << (stage - 1);
        assert!(
            s[2] % stride == 0 && s[3] % stride == 0,
            "backbone input size {}x{} must be divisible by {stride} to tap stage {stage}",
            s[2],
            s[3]
        );
        let mut h = tape.relu(&self.stem.forward(tape, image));
        h = tape.maxpool2d(&h);
        for blocks in self.stages.iter().take(stage) {
            for b in blocks {
                h = b.forward(tape, &h);
            }
        }
        h
    }

    pub fn visit(&self, f: &mut dyn FnMut(String, Tensor)) {
        let name = self.name.clone();
        self.stem.visit(&format!("{name}.stem"), f);
        for (s, blocks) in self.stages.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                block.visit(&format!("{name}.stage{}.block{}", s + 1, b), f);
            }
        }
    }
}

/// 1x1 convolution down to token width d, then row-major flatten.
pub struct Projector {
    conv: Conv,
}

impl Projector {
    pub fn new(seed: u64, name: &str, ci: usize, d: usize) -> Projector {
        Projector { conv: Conv::new(seed, name, ci, d, 1, 1, 0, true) }
    }

    pub fn project_and_flatten(&self, tape: &Tape, features: &Tensor) -> TokenSequence {
        let projected = self.conv.forward(tape, features);
        let s = projected.shape();
        let (h, w) = (s[2], s[3]);
        TokenSequence { tokens: tape.flatten_hw(&projected), grid_h: h, grid_w: w }
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        self.conv.visit(name, f);
    }
}

/// Fixed 2D sinusoidal positional encoding, [grid_h*grid_w, d]. The first
/// d/2 channels encode the row index, the rest the column index, each as
/// interleaved sin/cos pairs over a geometric frequency ladder.
pub fn positional_encoding(grid_h: usize, grid_w: usize, d: usize) -> Tensor {
    assert!(d % 4 == 0, "positional encoding width {d} must be divisible by 4");
    let half = d / 2;
    let pairs = half / 2;
    let axis = |pos: usize, out: &mut [f32]| {
        for i in 0..pairs {
            let freq = (10000f64).powf(-2.0 * i as f64 / half as f64);
            let angle = pos as f64 * freq;
            out[2 * i] = angle.sin() as f32;
            out[2 * i + 1] = angle.cos() as f32;
        }
    };
    let mut data = vec![0.0f32; grid_h * grid_w * d];
    for y in 0..grid_h {
        for x in 0..grid_w {
            let row = (y * grid_w + x) * d;
            axis(y, &mut data[row..row + half]);
            axis(x, &mut data[row + half..row + d]);
        }
    }
    Tensor::new(&[grid_h * grid_w, d], data)
}

/// Closed-form sliding-window count: prod over axes of
/// floor((spatial - kernel) / stride) + 1.
pub fn token_count(spatial: (usize, usize), kernel: (usize, usize), stride: (usize, usize)) -> usize {
    assert!(
        kernel.0 <= spatial.0 && kernel.1 <= spatial.1,
        "kernel {kernel:?} exceeds input {spatial:?}"
    );
    let per_axis = |sp: usize, k: usize, st: usize| (sp - k) / st + 1;
    per_axis(spatial.0, kernel.0, stride.0) * per_axis(spatial.1, kernel.1, stride.1)
}

/// Sliding-window tokenizer: every kh x kw window becomes one token of width
/// c*kh*kw (channel-major), windows in raster order.
pub fn unfold_tokenize(
    tape: &Tape,
    features: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> TokenSequence {
    let s = features.shape();
    assert_eq!(s.len(), 4, "unfold input must be [1, c, h, w], got {:?}", s);
    assert_eq!(s[0], 1, "unfold handles a single image");
    let (c, h, w) = (s[1], s[2], s[3]);
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    assert!(kh <= h && kw <= w, "kernel {kernel:?} exceeds input {h}x{w}");
    let gh = (h - kh) / sh + 1;
    let gw = (w - kw) / sw + 1;
    let dim = c * kh * kw;
    let xv = features.to_vec();
    let mut data = vec![0.0f32; gh * gw * dim];
    // source index per token element, reused by the backward scatter
    let mut src = vec![0usize; gh * gw * dim];
    let mut t = 0;
    for wy in 0..gh {
        for wx in 0..gw {
            let mut e = 0;
            for ch in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let idx = ch * h * w + (wy * sh + ky) * w + (wx * sw + kx);
                        data[t * dim + e] = xv[idx];
                        src[t * dim + e] = idx;
                        e += 1;
                    }
                }
            }
            t += 1;
        }
    }
    let tokens = Tensor::new(&[gh * gw, dim], data);
    if features.requires_grad() {
        tokens.set_requires_grad(true);
        let (fi, o) = (features.clone(), tokens.clone());
        tape.record(move || {
            let Some(g) = o.grad() else { return };
            let mut gx = vec![0.0f32; fi.numel()];
            for (e, &s_idx) in src.iter().enumerate() {
                gx[s_idx] += g[e];
            }
            fi.accumulate_grad(&gx);
        });
    }
    TokenSequence { tokens, grid_h: gh, grid_w: gw }
}

/// Both tokenizer paths for one image, as configured: `Filter` projects the
/// backbone tap; `Unfold` patchifies the raw image at the same stride so the
/// token grid (and every downstream shape) is unchanged.
pub struct FeatureExtractor {
    pub backbone: Backbone,
    pub projector: Projector,
    /// Linear patch embedding for the unfold path: [3*stride*stride, d].
    pub patch_weight: Tensor,
    pub patch_bias: Tensor,
    pub tap_stage: usize,
    pub stride: usize,
}

impl FeatureExtractor {
    pub fn new(seed: u64, name: &str, cfg: &RunConfig, tap_stage: usize) -> FeatureExtractor {
        let channels = cfg.stage_channels()[tap_stage - 1];
        let stride = RunConfig::stage_stride(tap_stage);
        let d = cfg.model.d;
        let patch_dim = 3 * stride * stride;
        FeatureExtractor {
            backbone: Backbone::new(seed, &format!("{name}.backbone"), cfg.base_width(), 1, tap_stage),
            projector: Projector::new(seed, &format!("{name}.projection"), channels, d),
            patch_weight: fan_in_uniform(
                param_seed(seed, &format!("{name}.patch.weight")),
                &[patch_dim, d],
                patch_dim,
            ),
            patch_bias: zeros_param(&[d]),
            tap_stage,
            stride,
        }
    }

    /// Backbone features at the configured tap.
    pub fn features(&self, tape: &Tape, image: &Tensor) -> Tensor {
        self.backbone.forward_to_stage(tape, image, self.tap_stage)
    }

    pub fn tokenize(&self, tape: &Tape, image: &Tensor, tokenizer: crate::config::Tokenizer) -> TokenSequence {
        match tokenizer {
            crate::config::Tokenizer::Filter => {
                let feats = self.features(tape, image);
                self.projector.project_and_flatten(tape, &feats)
            }
            crate::config::Tokenizer::Unfold => {
                let k = (self.stride, self.stride);
                let patches = unfold_tokenize(tape, image, k, k);
                let projected = tape.matmul(&patches.tokens, &self.patch_weight);
                let tokens = tape.add(&projected, &self.patch_bias);
                TokenSequence { tokens, grid_h: patches.grid_h, grid_w: patches.grid_w }
            }
        }
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, Tensor)) {
        self.backbone.visit(f);
        self.projector.visit(&format!("{name}.projection"), f);
        f(format!("{name}.patch.weight"), self.patch_weight.clone());
        f(format!("{name}.patch.bias"), self.patch_bias.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Tokenizer;

    fn desk() -> RunConfig {
        RunConfig::default()
    }

    #[test]
    fn content_features_are_stride8_with_doubled_width() {
        let tape = Tape::new();
        let bb = Backbone::new(7, "content.backbone", 32, 1, 2);
        let img = Tensor::seeded(1, &[1, 3, 64, 64], 0.0, 1.0);
        let f = bb.forward_to_stage(&tape, &img, 2);
        assert_eq!(f.shape(), vec![1, 64, 8, 8]);
    }

    #[test]
    fn style_features_are_stride32_with_8x_width() {
        let tape = Tape::new();
        let bb = Backbone::new(7, "style.backbone", 32, 1, 4);
        let img = Tensor::seeded(2, &[1, 3, 64, 64], 0.0, 1.0);
        let f = bb.forward_to_stage(&tape, &img, 4);
        assert_eq!(f.shape(), vec![1, 256, 2, 2]);
    }

    #[test]
    fn all_stage_strides() {
        let tape = Tape::new();
        let bb = Backbone::new(3, "bb", 32, 1, 4);
        let img = Tensor::seeded(3, &[1, 3, 64, 32], 0.0, 1.0);
        for (stage, (h, w, c)) in [(1, (16, 8, 32)), (2, (8, 4, 64)), (3, (4, 2, 128)), (4, (2, 1, 256))] {
            let f = bb.forward_to_stage(&tape, &img, stage);
            assert_eq!(f.shape(), vec![1, c, h, w], "stage {stage}");
        }
    }

    #[test]
    fn backbone_output_is_finite_and_connected_to_stem() {
        let tape = Tape::new();
        let bb = Backbone::new(11, "bb", 32, 1, 2);
        let img = Tensor::seeded(4, &[1, 3, 64, 64], 0.0, 1.0);
        let f = bb.forward_to_stage(&tape, &img, 2);
        assert!(f.to_vec().iter().all(|v| v.is_finite()));
        // perturb one stem weight; output must change
        let before = f.to_vec();
        let mut wv = bb.stem.weight.to_vec();
        wv[0] += 0.5;
        bb.stem.weight.set_data(&wv);
        let tape2 = Tape::new();
        let after = bb.forward_to_stage(&tape2, &img, 2).to_vec();
        assert_ne!(before, after);
    }

    #[test]
    fn separate_backbones_share_no_parameters() {
        let tape = Tape::new();
        let content = Backbone::new(5, "content.backbone", 32, 1, 2);
        let style = Backbone::new(5, "style.backbone", 32, 1, 2);
        let img = Tensor::seeded(6, &[1, 3, 32, 32], 0.0, 1.0);
        let before = content.forward_to_stage(&tape, &img, 2).to_vec();
        let mut wv = style.stem.weight.to_vec();
        wv[0] += 1.0;
        style.stem.weight.set_data(&wv);
        let after = content.forward_to_stage(&Tape::new(), &img, 2).to_vec();
        assert_eq!(before, after);
    }

    #[test]
    fn project_and_flatten_shape_and_roundtrip() {
        let tape = Tape::new();
        let proj = Projector::new(1, "proj", 16, 8);
        let feats = Tensor::seeded(2, &[1, 16, 2, 3], -1.0, 1.0);
        let seq = proj.project_and_flatten(&tape, &feats);
        assert_eq!(seq.tokens.shape(), vec![6, 8]);
        assert_eq!((seq.grid_h, seq.grid_w), (2, 3));
        // reshape-and-flatten is the identity
        let back = tape.unflatten_hw(&seq.tokens, 2, 3);
        let again = tape.flatten_hw(&back);
        assert_eq!(again.to_vec(), seq.tokens.to_vec());
    }

    #[test]
    fn projection_preserves_spatial_order() {
        // swapping two feature columns swaps exactly the two token rows
        let tape = Tape::new();
        let proj = Projector::new(9, "proj", 4, 8);
        let feats = Tensor::seeded(8, &[1, 4, 1, 3], -1.0, 1.0);
        let a = proj.project_and_flatten(&tape, &feats).tokens.to_vec();
        let mut swapped = vec![0.0f32; feats.numel()];
        let fv = feats.to_vec();
        for ch in 0..4 {
            swapped[ch * 3] = fv[ch * 3 + 1];
            swapped[ch * 3 + 1] = fv[ch * 3];
            swapped[ch * 3 + 2] = fv[ch * 3 + 2];
        }
        let b = proj
            .project_and_flatten(&tape, &Tensor::new(&[1, 4, 1, 3], swapped))
            .tokens
            .to_vec();
        let d = 8;
        assert_eq!(&a[0..d], &b[d..2 * d]);
        assert_eq!(&a[d..2 * d], &b[0..d]);
        assert_eq!(&a[2 * d..], &b[2 * d..]);
    }

    #[test]
    fn positional_encoding_zero_position_row() {
        let pe = positional_encoding(1, 1, 8);
        let v = pe.to_vec();
        // sin parts 0, cos parts 1, for both axes
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positional_encoding_is_deterministic_and_bounded() {
        let a = positional_encoding(4, 5, 16);
        let b = positional_encoding(4, 5, 16);
        assert_eq!(a.to_vec(), b.to_vec());
        assert!(a.to_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn positional_encoding_rows_are_distinct_up_to_16x16() {
        let d = 16;
        let pe = positional_encoding(16, 16, d).to_vec();
        let l = 16 * 16;
        for i in 0..l {
            for j in (i + 1)..l {
                let linf = (0..d)
                    .map(|k| (pe[i * d + k] - pe[j * d + k]).abs())
                    .fold(0.0f32, f32::max);
                assert!(linf > 1e-3, "rows {i} and {j} are nearly equal (Linf {linf})");
            }
        }
    }

    #[test]
    #[should_panic(expected = "divisible by 4")]
    fn positional_encoding_rejects_odd_widths() {
        positional_encoding(2, 2, 6);
    }

    #[test]
    fn token_count_examples() {
        assert_eq!(token_count((8, 8), (4, 4), (2, 2)), 9);
        assert_eq!(token_count((5, 5), (5, 5), (1, 1)), 1);
        assert_eq!(token_count((7, 9), (3, 3), (2, 3)), 9);
    }

    #[test]
    fn unfold_matches_token_count_and_degenerate_window() {
        let tape = Tape::new();
        let x = Tensor::seeded(5, &[1, 2, 8, 8], -1.0, 1.0);
        let seq = unfold_tokenize(&tape, &x, (4, 4), (2, 2));
        assert_eq!(seq.len(), token_count((8, 8), (4, 4), (2, 2)));
        assert_eq!(seq.width(), 2 * 4 * 4);

        // full-input kernel: one token holding the whole feature map
        let whole = unfold_tokenize(&tape, &x, (8, 8), (1, 1));
        assert_eq!(whole.len(), 1);
        assert_eq!(whole.width(), 2 * 64);

        let rect = unfold_tokenize(&tape, &x, (8, 4), (1, 4));
        assert_eq!(rect.len(), 2);
    }

    #[test]
    fn unfold_gradient_counts_window_coverage() {
        let tape = Tape::new();
        let x = Tensor::param(&[1, 1, 4, 4], vec![0.0; 16]);
        let seq = unfold_tokenize(&tape, &x, (2, 2), (2, 2));
        let loss = tape.sum_all(&seq.tokens);
        tape.backward(&loss);
        // non-overlapping windows cover each pixel exactly once
        assert_eq!(x.grad().unwrap(), vec![1.0; 16]);
    }

    #[test]
    fn extractor_token_grids_match_config_for_both_tokenizers() {
        let cfg = desk();
        let tape = Tape::new();
        let fx = FeatureExtractor::new(1, "content", &cfg, cfg.model.content_tap_stage);
        let img = Tensor::seeded(7, &[1, 3, 64, 64], 0.0, 1.0);
        for tk in [Tokenizer::Filter, Tokenizer::Unfold] {
            let seq = fx.tokenize(&tape, &img, tk);
            assert_eq!((seq.grid_h, seq.grid_w), (8, 8), "{tk:?}");
            assert_eq!(seq.width(), cfg.model.d, "{tk:?}");
        }
    }
}
