//! Perceptual losses through a frozen feature network.
//!
//! The network is a VGG-19-shaped prefix (conv-relu stacks of 2, 2, 4, 1
//! with 2x2 max pools between them) tapped after the first activation of
//! each stack, at strides 1, 2, 4, 8. Weights are fixed-seed random and
//! never trained: random projections keep every property the losses need
//! (determinism, zero at identity, differentiability through the input).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::init::param_seed;
use crate::tensor::{Tape, Tensor};

/// Channel widths per tap and the convs per stack, VGG-19 through conv4_1.
const CONVS_PER_BLOCK: [usize; 4] = [2, 2, 4, 1];

struct FrozenConv {
    weight: Tensor,
    bias: Tensor,
}

impl FrozenConv {
    fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        tape.conv2d(x, &self.weight, Some(&self.bias), 1, 1)
    }
}

pub struct LossNetwork {
    blocks: Vec<Vec<FrozenConv>>,
    widths: [usize; 4],
}

/// Seed behind `loss_net = "random"`. One fixed value so every run scores
/// images against the same frozen network.
pub const DEFAULT_LOSS_SEED: u64 = 0xACE5;

impl LossNetwork {
    /// Builds the network named by `cfg.loss.loss_net`: the literal
    /// `"random"` for the seeded default, anything else is read as a
    /// checkpoint path holding the weights.
    pub fn from_config(cfg: &crate::config::RunConfig) -> Result<LossNetwork> {
        let widths = cfg.loss_widths();
        if cfg.loss.loss_net == "random" {
            Ok(LossNetwork::fixed_random(DEFAULT_LOSS_SEED, widths))
        } else {
            let tensors = crate::checkpoint::load(std::path::Path::new(&cfg.loss.loss_net))?;
            LossNetwork::from_tensors(widths, &tensors)
        }
    }

    /// Deterministic random weights; the same seed and widths always build a
    /// bitwise-identical network.
    pub fn fixed_random(seed: u64, widths: [usize; 4]) -> LossNetwork {
        let mut blocks = Vec::new();
        let mut ci = 3;
        for (bi, (&count, &co)) in CONVS_PER_BLOCK.iter().zip(widths.iter()).enumerate() {
            let mut convs = Vec::new();
            for k in 0..count {
                let name = format!("loss_net.block{}.conv{}", bi + 1, k + 1);
                let fan_in = ci * 9;
                let bound = (6.0 / fan_in as f64).sqrt() as f32;
                convs.push(FrozenConv {
                    weight: Tensor::seeded(
                        param_seed(seed, &format!("{name}.weight")),
                        &[co, ci, 3, 3],
                        -bound,
                        bound,
                    ),
                    bias: Tensor::zeros(&[co]),
                });
                ci = co;
            }
            blocks.push(convs);
        }
        LossNetwork { blocks, widths }
    }

    /// Rebuilds the network from named tensors (e.g. a checkpoint). Every
    /// conv the structure calls for must be present with the right shape.
    pub fn from_tensors(widths: [usize; 4], tensors: &BTreeMap<String, Tensor>) -> Result<LossNetwork> {
        let mut blocks = Vec::new();
        let mut ci = 3;
        for (bi, (&count, &co)) in CONVS_PER_BLOCK.iter().zip(widths.iter()).enumerate() {
            let mut convs = Vec::new();
            for k in 0..count {
                let name = format!("loss_net.block{}.conv{}", bi + 1, k + 1);
                let fetch = |suffix: &str, shape: &[usize]| -> Result<Tensor> {
                    let key = format!("{name}.{suffix}");
                    let t = tensors
                        .get(&key)
                        .ok_or_else(|| Error::Config(format!("loss network weights missing tensor {key}")))?;
                    if t.shape() != shape {
                        return Err(Error::Config(format!(
                            "loss network tensor {key} has shape {:?}, expected {:?}",
                            t.shape(),
                            shape
                        )));
                    }
                    // detached copy so the stored map can't be trained through
                    Ok(Tensor::new(shape, t.to_vec()))
                };
                convs.push(FrozenConv {
                    weight: fetch("weight", &[co, ci, 3, 3])?,
                    bias: fetch("bias", &[co])?,
                });
                ci = co;
            }
            blocks.push(convs);
        }
        Ok(LossNetwork { blocks, widths })
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    /// Every weight as (name, tensor), for saving or freezing checks.
    pub fn visit(&self, f: &mut dyn FnMut(String, Tensor)) {
        for (bi, block) in self.blocks.iter().enumerate() {
            for (k, conv) in block.iter().enumerate() {
                let name = format!("loss_net.block{}.conv{}", bi + 1, k + 1);
                f(format!("{name}.weight"), conv.weight.clone());
                f(format!("{name}.bias"), conv.bias.clone());
            }
        }
    }

    /// The four tap feature maps at strides 1, 2, 4, 8.
    pub fn features(&self, tape: &Tape, img: &Tensor) -> [Tensor; 4] {
        let s = img.shape();
        assert_eq!(s.len(), 4, "loss network input must be [1, 3, h, w]");
        assert!(
            s[2] % 8 == 0 && s[3] % 8 == 0,
            "loss network input size {}x{} must be divisible by 8",
            s[2],
            s[3]
        );
        let mut taps = Vec::with_capacity(4);
        let mut x = img.clone();
        for (bi, block) in self.blocks.iter().enumerate() {
            if bi > 0 {
                x = tape.maxpool2d(&x);
            }
            for (k, conv) in block.iter().enumerate() {
                x = tape.relu(&conv.forward(tape, &x));
                if k == 0 {
                    taps.push(x.clone());
                }
            }
        }
        taps.try_into().ok().expect("four taps")
    }
}

/// Scalar loss terms, all kept as graph nodes so the total can be
/// backpropagated. `total == content + lambda*style` holds bit-exactly as
/// computed in f32.
pub struct LossBreakdown {
    pub content: Tensor,
    pub style: Tensor,
    pub total: Tensor,
    pub per_layer_style: Vec<Tensor>,
}

/// Mean-square distance between the deepest features of the two images.
pub fn content_loss(tape: &Tape, net: &LossNetwork, ic: &Tensor, iout: &Tensor) -> Tensor {
    assert_eq!(ic.shape(), iout.shape(), "content loss needs equal image sizes");
    let fc = net.features(tape, ic);
    let fo = net.features(tape, iout);
    mean_square_distance(tape, &fc[3], &fo[3])
}

fn mean_square_distance(tape: &Tape, a: &Tensor, b: &Tensor) -> Tensor {
    let d = tape.sub(a, b);
    tape.mean_all(&tape.mul(&d, &d))
}

/// Per-tap L2 distances between channel means and standard deviations,
/// summed over `tap_layers` (1-based tap indices). Returns the sum and the
/// individual terms. Style and output sizes may differ; only channel
/// statistics are compared.
pub fn style_loss(
    tape: &Tape,
    net: &LossNetwork,
    is: &Tensor,
    iout: &Tensor,
    tap_layers: &[usize],
) -> (Tensor, Vec<Tensor>) {
    assert!(!tap_layers.is_empty(), "style loss needs at least one tap layer");
    let fs = net.features(tape, is);
    let fo = net.features(tape, iout);
    let mut per_layer = Vec::with_capacity(tap_layers.len());
    for &tap in tap_layers {
        assert!((1..=4).contains(&tap), "tap layer {tap} out of range 1..=4");
        let (mu_s, sd_s) = tape.channel_stats(&fs[tap - 1]);
        let (mu_o, sd_o) = tape.channel_stats(&fo[tap - 1]);
        let mu_term = tape.l2_norm(&tape.sub(&mu_s, &mu_o));
        let sd_term = tape.l2_norm(&tape.sub(&sd_s, &sd_o));
        per_layer.push(tape.add(&mu_term, &sd_term));
    }
    let mut total = per_layer[0].clone();
    for term in &per_layer[1..] {
        total = tape.add(&total, term);
    }
    (total, per_layer)
}

/// Weighted objective: content plus lambda times style.
pub fn total_loss(
    tape: &Tape,
    net: &LossNetwork,
    ic: &Tensor,
    is: &Tensor,
    iout: &Tensor,
    lambda: f32,
    tap_layers: &[usize],
) -> LossBreakdown {
    assert!(lambda >= 0.0 && lambda.is_finite(), "lambda must be finite and nonnegative");
    let content = content_loss(tape, net, ic, iout);
    let (style, per_layer_style) = style_loss(tape, net, is, iout, tap_layers);
    let total = tape.add(&content, &tape.scalar_mul(&style, lambda));
    LossBreakdown { content, style, total, per_layer_style }
}
