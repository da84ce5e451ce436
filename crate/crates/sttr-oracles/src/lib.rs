//! Naive 64-bit reference implementations for cross-checking `sttr`.
//!
//! Everything in this crate is deliberately written with nested loops and
//! `f64` arithmetic, with no code shared with the production crate. Tests in
//! `sttr` compare the fast 32-bit kernels against these references.
//!
//! [`run_all_oracles`] bundles the pinned reference cases into
//! [`OracleReport`] records (one line of JSON each) so that the acceptance
//! suite can both sanity-check the references and reuse their values.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub mod ops;
pub mod transformer;

pub use ops::*;
pub use transformer::*;

/// Row-major `f64` matrix used by the transformer references.
#[derive(Clone, Debug)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_f32(values: &[f32], rows: usize, cols: usize) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix size mismatch");
        Mat { rows, cols, data: values.iter().map(|&v| v as f64).collect() }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Deterministic uniform `f32` samples in `[lo, hi)`, shared by tests so the
/// production kernels and the references see bit-identical inputs.
pub fn seeded_f32(seed: u64, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// One pinned reference case: inputs are reproducible from `seed` and
/// `shapes`, `reference` holds the flattened 64-bit values, and `pass`
/// records whether the reference's own sanity checks held.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub case: String,
    pub seed: u64,
    pub shapes: Vec<Vec<usize>>,
    pub reference: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    fn new(case: &str, seed: u64, shapes: &[&[usize]], reference: Vec<f64>, tol: f64, pass: bool) -> Self {
        OracleReport {
            case: case.to_string(),
            seed,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            reference,
            tolerance: tol,
            pass,
        }
    }
}

/// Runs every pinned oracle case. Each case validates itself against hand
/// arithmetic or an algebraic identity before reporting its reference values.
pub fn run_all_oracles(seed: u64) -> Vec<OracleReport> {
    let mut out = Vec::new();

    // conv2d: random 2x4x8x8 input, 6x4x3x3 weight, stride 2, padding 1.
    {
        let input = seeded_f32(seed, 2 * 4 * 8 * 8, -1.0, 1.0);
        let weight = seeded_f32(seed ^ 0x11, 6 * 4 * 3 * 3, -0.5, 0.5);
        let bias = seeded_f32(seed ^ 0x22, 6, -0.1, 0.1);
        let (reference, oh, ow) = conv2d_ref(&input, 2, 4, 8, 8, &weight, 6, 3, 3, &bias, 2, 1);
        let mut pass = oh == 4 && ow == 4;
        // identity kernel leaves any map unchanged
        let probe = seeded_f32(seed ^ 0x33, 25, -1.0, 1.0);
        let (id_out, _, _) = conv2d_ref(&probe, 1, 1, 5, 5, &[1.0], 1, 1, 1, &[0.0], 1, 0);
        pass &= id_out
            .iter()
            .zip(probe.iter())
            .all(|(&r, &x)| (r - x as f64).abs() < 1e-12);
        // all-ones 3x3 over all-ones 3x3 sums to 9
        let (nine, _, _) = conv2d_ref(&[1.0; 9], 1, 1, 3, 3, &[1.0; 9], 1, 3, 3, &[0.0], 1, 0);
        pass &= (nine[0] - 9.0).abs() < 1e-12;
        out.push(OracleReport::new(
            "conv2d/2x4x8x8_k3_s2_p1",
            seed,
            &[&[2, 4, 8, 8], &[6, 4, 3, 3]],
            reference,
            1e-5,
            pass,
        ));
    }

    // matmul: random 7x5 by 5x9.
    {
        let a = seeded_f32(seed ^ 0x44, 35, -1.0, 1.0);
        let b = seeded_f32(seed ^ 0x55, 45, -1.0, 1.0);
        let reference = matmul_ref(&a, &b, 7, 5, 9);
        let hand = matmul_ref(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1);
        let pass = (hand[0] - 17.0).abs() < 1e-12 && (hand[1] - 39.0).abs() < 1e-12;
        out.push(OracleReport::new(
            "matmul/7x5_5x9",
            seed,
            &[&[7, 5], &[5, 9]],
            reference,
            1e-5,
            pass,
        ));
    }

    // softmax: random 3x5 rows.
    {
        let x = seeded_f32(seed ^ 0x66, 15, -3.0, 3.0);
        let reference = softmax_ref(&x, &[3, 5], 1);
        let mut pass = true;
        for r in 0..3 {
            let s: f64 = reference[r * 5..(r + 1) * 5].iter().sum();
            pass &= (s - 1.0).abs() < 1e-12;
        }
        let uniform = softmax_ref(&[0.0; 4], &[4], 0);
        pass &= uniform.iter().all(|&v| (v - 0.25).abs() < 1e-12);
        out.push(OracleReport::new(
            "softmax/3x5_axis1",
            seed,
            &[&[3, 5]],
            reference,
            1e-6,
            pass,
        ));
    }

    // bilinear x2 of the pinned 2x2 map.
    {
        let reference = bilinear2x_ref(&[0.0, 1.0, 2.0, 3.0], 1, 1, 2, 2);
        let constant = bilinear2x_ref(&[0.7; 4], 1, 1, 2, 2);
        let pass = constant.iter().all(|&v| (v - 0.7f32 as f64).abs() < 1e-12);
        out.push(OracleReport::new(
            "bilinear2x/1x1x2x2",
            seed,
            &[&[1, 1, 2, 2]],
            reference,
            1e-6,
            pass,
        ));
    }

    // channel statistics: random 2x3x4x4.
    {
        let x = seeded_f32(seed ^ 0x77, 2 * 3 * 16, -2.0, 2.0);
        let (mean, std) = channel_stats_ref(&x, 2, 3, 4, 4, 1e-5);
        let (cm, cs) = channel_stats_ref(&[2.0; 8], 1, 1, 2, 4, 1e-5);
        let mut pass = (cm[0] - 2.0).abs() < 1e-12 && (cs[0] - (1e-5f64).sqrt()).abs() < 1e-12;
        let (m2, s2) = channel_stats_ref(&[0.0, 2.0], 1, 1, 1, 2, 1e-5);
        pass &= (m2[0] - 1.0).abs() < 1e-12 && (s2[0] - (1.0f64 + 1e-5).sqrt()).abs() < 1e-12;
        let mut reference = mean;
        reference.extend(std);
        out.push(OracleReport::new(
            "channel_stats/2x3x4x4",
            seed,
            &[&[2, 3, 4, 4]],
            reference,
            1e-5,
            pass,
        ));
    }

    // scaled dot-product attention: Lq=3, Lk=5, dh=8.
    {
        let q = seeded_f32(seed ^ 0x88, 24, -1.0, 1.0);
        let k = seeded_f32(seed ^ 0x99, 40, -1.0, 1.0);
        let v = seeded_f32(seed ^ 0xaa, 40, -1.0, 1.0);
        let reference = attention_ref(&q, 3, &k, &v, 5, 8);
        // single key: output is exactly that value row
        let single = attention_ref(&q, 3, &k[..8], &v[..8], 1, 8);
        let mut pass = (0..3).all(|i| {
            (0..8).all(|j| (single[i * 8 + j] - v[j] as f64).abs() < 1e-12)
        });
        // zero queries: uniform average of value rows
        let zq = vec![0.0f32; 8];
        let avg = attention_ref(&zq, 1, &k, &v, 5, 8);
        for j in 0..8 {
            let want: f64 = (0..5).map(|r| v[r * 8 + j] as f64).sum::<f64>() / 5.0;
            pass &= (avg[j] - want).abs() < 1e-12;
        }
        out.push(OracleReport::new(
            "attention/lq3_lk5_dh8",
            seed,
            &[&[3, 8], &[5, 8], &[5, 8]],
            reference,
            1e-5,
            pass,
        ));
    }

    // Adam: scalar parameter, constant gradient 1, lr 0.1, three steps.
    {
        let reference = adam_scalar_ref(0.0, &[1.0, 1.0, 1.0], 0.1, 0.9, 0.999, 1e-8);
        // with constant g the bias-corrected first step is lr * g / (|g| + eps)
        let expect0 = -0.1 * 1.0 / (1.0 + 1e-8);
        let pass = (reference[0] - expect0).abs() < 1e-12;
        out.push(OracleReport::new(
            "adam/scalar_g1_lr0.1",
            seed,
            &[&[1]],
            reference,
            1e-6,
            pass,
        ));
    }

    // sliding-window token counts by enumeration.
    {
        let cases = [
            ((8, 8), (4, 4), (2, 2), 9usize),
            ((5, 5), (5, 5), (1, 1), 1),
            ((7, 9), (3, 3), (2, 3), 9),
        ];
        let mut pass = true;
        let mut reference = Vec::new();
        for ((h, w), (kh, kw), (sh, sw), want) in cases {
            let got = count_windows(h, w, kh, kw, sh, sw);
            pass &= got == want;
            reference.push(got as f64);
        }
        out.push(OracleReport::new(
            "token_count/enumeration",
            seed,
            &[&[8, 8], &[4, 4], &[2, 2]],
            reference,
            0.0,
            pass,
        ));
    }

    // trailing-dimension broadcast add by explicit tiling.
    {
        let lhs = seeded_f32(seed ^ 0xbb, 6, -1.0, 1.0);
        let rhs = seeded_f32(seed ^ 0xcc, 3, -1.0, 1.0);
        let reference = broadcast_add_ref(&lhs, &[2, 3], &rhs, &[3]);
        let zero = broadcast_add_ref(&lhs, &[2, 3], &[0.0; 3], &[3]);
        let pass = zero
            .iter()
            .zip(lhs.iter())
            .all(|(&r, &x)| (r - x as f64).abs() < 1e-12);
        out.push(OracleReport::new(
            "broadcast_add/2x3_plus_3",
            seed,
            &[&[2, 3], &[3]],
            reference,
            1e-6,
            pass,
        ));
    }

    // transformer decoder reference: permutation of style rows with zeroed
    // positional encodings must not change the output.
    {
        let d = 8;
        let layers = seeded_decoder_layers(seed ^ 0xdd, 2, d, 2, 4 * d);
        let content = Mat::from_f32(&seeded_f32(seed ^ 0xee, 4 * d, -1.0, 1.0), 4, d);
        let codes = Mat::from_f32(&seeded_f32(seed ^ 0xff, 4 * d, -1.0, 1.0), 4, d);
        let zeros = Mat::zeros(4, d);
        let base = decoder_ref(&layers, &content, &codes, &zeros, &zeros);
        let mut permuted = Mat::zeros(4, d);
        let perm = [2usize, 0, 3, 1];
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..d {
                permuted.set(dst, j, codes.at(src, j));
            }
        }
        let swapped = decoder_ref(&layers, &content, &permuted, &zeros, &zeros);
        let pass = base
            .data
            .iter()
            .zip(swapped.data.iter())
            .all(|(a, b)| (a - b).abs() < 1e-9);
        out.push(OracleReport::new(
            "decoder/key_permutation_invariance",
            seed,
            &[&[4, 8], &[4, 8]],
            base.data,
            1e-4,
            pass,
        ));
    }

    out
}

/// Serializes reports as line-delimited JSON.
pub fn write_report(reports: &[OracleReport], path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for r in reports {
        writeln!(f, "{}", serde_json::to_string(r).expect("report serializes"))?;
    }
    Ok(())
}

/// Reads back a line-delimited report file.
pub fn read_report(path: &std::path::Path) -> std::io::Result<Vec<OracleReport>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("report line parses"))
        .collect())
}
