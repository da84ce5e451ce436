//! Acceptance suite: ten numbered criteria, one test each, every test
//! printing a single `criterion N ...: PASS` line (visible with
//! `--nocapture`; a failing criterion panics with details).

use std::collections::BTreeMap;
use std::panic::catch_unwind;
use std::path::Path;
use std::process::Command;

use sttr::config::RunConfig;
use sttr::image::ImageBuffer;
use sttr::loss::{content_loss, style_loss, total_loss, LossNetwork};
use sttr::model::Sttr;
use sttr::tensor::{grad_check, GradCheckOptions, Tape, Tensor};
use sttr::train::train_model;
use sttr::train::TrainSinks;
use sttr::transformer::{attention, AttentionTrace, Mha};

fn report(name: &str, f: impl FnOnce() + std::panic::UnwindSafe) {
    let outcome = catch_unwind(f);
    match outcome {
        Ok(()) => println!("{name}: PASS"),
        Err(cause) => {
            println!("{name}: FAIL");
            std::panic::resume_unwind(cause);
        }
    }
}

/// Small model that still exercises every stage: stride-8 taps on both
/// branches so 16x16 inputs produce 2x2 token grids.
fn small_config() -> RunConfig {
    let mut cfg = RunConfig::preset("desk").unwrap();
    cfg.model.d = 16;
    cfg.model.heads = 4;
    cfg.model.encoder_layers = 1;
    cfg.model.decoder_layers = 1;
    cfg.model.content_tap_stage = 2;
    cfg.model.style_tap_stage = 2;
    cfg.train.image_size = 32;
    cfg.validate().unwrap();
    cfg
}

#[test]
fn criterion_01_architecture_constants() {
    report("criterion 1 (architecture constants)", || {
        let cfg = RunConfig::preset("paper").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model.d, 256);
        assert_eq!(cfg.model.heads, 8);
        assert_eq!(cfg.model.encoder_layers, 6);
        assert_eq!(cfg.model.decoder_layers, 6);
        assert_eq!(cfg.loss.lambda, 10.0);
        assert_eq!(cfg.stage_channels(), [256, 512, 1024, 2048]);

        // content tokens: (H/8 * W/8) rows of width d
        let (h, w) = (512, 512);
        assert_eq!(cfg.content_stride(), 8);
        assert_eq!(cfg.content_grid(h, w), (h / 8, w / 8));
        let token_rows = sttr::features::token_count(
            (h / 8, w / 8),
            (1, 1),
            (1, 1),
        );
        assert_eq!(token_rows, (h / 8) * (w / 8));

        // style features: H/32 x W/32 spatial at 2048 channels
        assert_eq!(cfg.style_stride(), 32);
        assert_eq!(cfg.style_grid(h, w), (h / 32, w / 32));
        assert_eq!(cfg.stage_channels()[cfg.model.style_tap_stage - 1], 2048);
        assert_eq!(cfg.train.image_size, 512);
    });
}

/// Weighted sum with seeded coefficients; keeps every output coordinate in
/// the loss so finite differences see a healthy slope.
fn weighted(tape: &Tape, x: &Tensor, seed: u64) -> Tensor {
    let w = Tensor::seeded(seed, &x.shape(), 0.2, 1.0);
    tape.sum_all(&tape.mul(x, &w))
}

#[test]
fn criterion_02_gradient_suite() {
    report("criterion 2 (gradient suite, < 1e-3 over 5 seeds)", || {
        let smooth = GradCheckOptions { step: 1e-2, max_coords: 3, ..Default::default() };
        let kinky = GradCheckOptions { step: 1e-3, max_coords: 3, ..Default::default() };
        let mut worst: f64 = 0.0;
        for seed in 0..5u64 {
            let s = seed * 1000;
            let checks: Vec<(&str, f64)> = vec![
                ("add", {
                    let a = Tensor::param(&[3, 4], Tensor::seeded(s + 1, &[3, 4], -1.0, 1.0).to_vec());
                    let b = Tensor::param(&[3, 4], Tensor::seeded(s + 2, &[3, 4], -1.0, 1.0).to_vec());
                    grad_check(&[a.clone(), b.clone()], |t, _| weighted(t, &t.add(&a, &b), s + 3), &smooth).max_rel
                }),
                ("mul broadcast", {
                    let a = Tensor::param(&[2, 3, 4], Tensor::seeded(s + 4, &[2, 3, 4], -1.0, 1.0).to_vec());
                    let b = Tensor::param(&[4], Tensor::seeded(s + 5, &[4], 0.5, 1.5).to_vec());
                    grad_check(&[a.clone(), b.clone()], |t, _| weighted(t, &t.mul(&a, &b), s + 6), &smooth).max_rel
                }),
                ("matmul", {
                    let a = Tensor::param(&[4, 3], Tensor::seeded(s + 7, &[4, 3], -1.0, 1.0).to_vec());
                    let b = Tensor::param(&[3, 5], Tensor::seeded(s + 8, &[3, 5], -1.0, 1.0).to_vec());
                    grad_check(&[a.clone(), b.clone()], |t, _| weighted(t, &t.matmul(&a, &b), s + 9), &smooth).max_rel
                }),
                ("relu", {
                    let a = Tensor::param(&[4, 4], Tensor::seeded(s + 10, &[4, 4], -1.0, 1.0).to_vec());
                    grad_check(&[a.clone()], |t, _| weighted(t, &t.relu(&a), s + 11), &kinky).max_rel
                }),
                ("sigmoid", {
                    let a = Tensor::param(&[4, 4], Tensor::seeded(s + 12, &[4, 4], -2.0, 2.0).to_vec());
                    grad_check(&[a.clone()], |t, _| weighted(t, &t.sigmoid(&a), s + 13), &kinky).max_rel
                }),
                ("softmax", {
                    let a = Tensor::param(&[3, 5], Tensor::seeded(s + 14, &[3, 5], -2.0, 2.0).to_vec());
                    grad_check(&[a.clone()], |t, _| weighted(t, &t.softmax(&a, 1), s + 15), &smooth).max_rel
                }),
                ("layer_norm", {
                    let a = Tensor::param(&[3, 6], Tensor::seeded(s + 16, &[3, 6], -1.0, 1.0).to_vec());
                    let g = Tensor::param(&[6], Tensor::seeded(s + 17, &[6], 0.5, 1.5).to_vec());
                    let o = Tensor::param(&[6], Tensor::seeded(s + 18, &[6], -0.5, 0.5).to_vec());
                    grad_check(
                        &[a.clone(), g.clone(), o.clone()],
                        |t, _| weighted(t, &t.layer_norm(&a, 1, &g, &o), s + 19),
                        &smooth,
                    )
                    .max_rel
                }),
                ("conv2d", {
                    let x = Tensor::param(&[1, 2, 6, 6], Tensor::seeded(s + 20, &[1, 2, 6, 6], -1.0, 1.0).to_vec());
                    let w = Tensor::param(&[3, 2, 3, 3], Tensor::seeded(s + 21, &[3, 2, 3, 3], -0.5, 0.5).to_vec());
                    let b = Tensor::param(&[3], Tensor::seeded(s + 22, &[3], -0.5, 0.5).to_vec());
                    grad_check(
                        &[x.clone(), w.clone(), b.clone()],
                        |t, _| weighted(t, &t.conv2d(&x, &w, Some(&b), 2, 1), s + 23),
                        &smooth,
                    )
                    .max_rel
                }),
                ("maxpool", {
                    let x = Tensor::param(&[1, 2, 4, 4], Tensor::seeded(s + 24, &[1, 2, 4, 4], -1.0, 1.0).to_vec());
                    grad_check(&[x.clone()], |t, _| weighted(t, &t.maxpool2d(&x), s + 25), &kinky).max_rel
                }),
                ("bilinear", {
                    let x = Tensor::param(&[1, 2, 3, 3], Tensor::seeded(s + 26, &[1, 2, 3, 3], -1.0, 1.0).to_vec());
                    grad_check(&[x.clone()], |t, _| weighted(t, &t.bilinear_upsample2x(&x), s + 27), &smooth).max_rel
                }),
                ("channel_stats", {
                    let x = Tensor::param(&[1, 3, 4, 4], Tensor::seeded(s + 28, &[1, 3, 4, 4], -1.0, 1.0).to_vec());
                    grad_check(
                        &[x.clone()],
                        |t, _| {
                            let (m, sd) = t.channel_stats(&x);
                            t.add(&weighted(t, &m, s + 29), &weighted(t, &sd, s + 30))
                        },
                        &smooth,
                    )
                    .max_rel
                }),
                ("l2_norm", {
                    let x = Tensor::param(&[7], Tensor::seeded(s + 31, &[7], 0.2, 1.0).to_vec());
                    grad_check(&[x.clone()], |t, _| t.l2_norm(&x), &smooth).max_rel
                }),
            ];
            for (name, rel) in checks {
                assert!(rel < 1e-3, "seed {seed}, op {name}: max rel {rel}");
                worst = worst.max(rel);
            }

            // full composed model: image -> total loss at 16x16
            let cfg = small_config();
            let model = Sttr::new(&cfg, s + 400);
            let net = LossNetwork::fixed_random(s + 500, cfg.loss_widths());
            let content = Tensor::seeded(s + 600, &[1, 3, 16, 16], 0.05, 0.95);
            let style = Tensor::seeded(s + 601, &[1, 3, 16, 16], 0.05, 0.95);
            let trainable = model.trainable_parameters();
            let picks = [
                "content.backbone.stem.weight",
                "style.backbone.stage2.block0.conv2.weight",
                "content.projection.weight",
                "transformer.decoder.layer0.cross_attn.head0.wq",
                "transformer.encoder.layer0.ffn.w1",
                "cnn_decoder.stage0.conv1.weight",
                "cnn_decoder.stage3.tail.weight",
            ];
            let params: Vec<Tensor> = picks
                .iter()
                .map(|n| trainable.get(*n).unwrap_or_else(|| panic!("missing {n}")).clone())
                .collect();
            let opts = GradCheckOptions { step: 1.25e-3, max_coords: 2, ..Default::default() };
            let rep = grad_check(
                &params,
                |tape, _| {
                    let out = model.stylize(tape, &content, &style, None);
                    total_loss(tape, &net, &content, &style, &out, cfg.loss.lambda, &cfg.loss.tap_layers)
                        .total
                },
                &opts,
            );
            assert!(
                rep.max_rel < 1e-3,
                "seed {seed}, composed model: max rel {} at {:?}",
                rep.max_rel,
                rep.worst
            );
            worst = worst.max(rep.max_rel);
        }
        println!("  gradient suite worst relative error: {worst:.3e}");
    });
}

#[test]
fn criterion_03_attention_properties() {
    report("criterion 3 (attention properties)", || {
        // row normalization within 1e-6 on raw and multi-head paths
        let tape = Tape::new();
        let d = 16;
        let q = Tensor::seeded(1, &[5, d], -1.0, 1.0);
        let k = Tensor::seeded(2, &[7, d], -1.0, 1.0);
        let v = Tensor::seeded(3, &[7, d], -1.0, 1.0);
        let mha = Mha::new(9, "acc.mha", d, 4);
        let (_, weights) = mha.forward(&tape, &q, &k, &v, true);
        let w = weights.unwrap();
        for row in 0..5 {
            let sum: f64 = w.to_vec()[row * 7..(row + 1) * 7].iter().map(|&x| x as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {row} sums to {sum}");
        }

        // permutation equivariance of self-attention with zero positions
        let perm = [4usize, 1, 3, 0, 2];
        let permute = |x: &Tensor| -> Tensor {
            let src = x.to_vec();
            let cols = x.shape()[1];
            let mut out = vec![0.0; src.len()];
            for (dst_row, &src_row) in perm.iter().enumerate() {
                out[dst_row * cols..(dst_row + 1) * cols]
                    .copy_from_slice(&src[src_row * cols..(src_row + 1) * cols]);
            }
            Tensor::new(&x.shape(), out)
        };
        let cfg = small_config();
        let model = Sttr::new(&cfg, 77);
        let tokens = Tensor::seeded(4, &[5, cfg.model.d], -1.0, 1.0);
        let zero_pos = Tensor::zeros(&[5, cfg.model.d]);
        let tape = Tape::new();
        let codes = model.transformer.encode_style(&tape, &tokens, &zero_pos, None);
        let codes_perm =
            model.transformer.encode_style(&tape, &permute(&tokens), &zero_pos, None);
        let direct = permute(&codes).to_vec();
        let via = codes_perm.to_vec();
        for (a, b) in direct.iter().zip(via.iter()) {
            assert!((a - b).abs() < 1e-5, "equivariance: {a} vs {b}");
        }

        // permutation invariance of cross-attention over the key set
        let content = Tensor::seeded(5, &[3, cfg.model.d], -1.0, 1.0);
        let zero_pos_c = Tensor::zeros(&[3, cfg.model.d]);
        let out = model
            .transformer
            .decode(&tape, &content, &codes, &zero_pos_c, &zero_pos, None)
            .to_vec();
        let out_perm = model
            .transformer
            .decode(&tape, &content, &permute(&codes), &zero_pos_c, &zero_pos, None)
            .to_vec();
        for (a, b) in out.iter().zip(out_perm.iter()) {
            assert!((a - b).abs() < 1e-5, "invariance: {a} vs {b}");
        }

        // single-key collapse: one key token means output == value row, exactly
        let tape = Tape::new();
        let q1 = Tensor::seeded(6, &[4, 8], -2.0, 2.0);
        let k1 = Tensor::seeded(7, &[1, 8], -2.0, 2.0);
        let v1 = Tensor::seeded(8, &[1, 8], -2.0, 2.0);
        let collapsed = attention(&tape, &q1, &k1, &v1);
        let vrow = v1.to_vec();
        for row in 0..4 {
            assert_eq!(&collapsed.to_vec()[row * 8..(row + 1) * 8], &vrow[..], "row {row}");
        }
    });
}

#[test]
fn criterion_04_loss_identities() {
    report("criterion 4 (loss identities, frozen loss network)", || {
        let cfg = small_config();
        let net = LossNetwork::from_config(&cfg).unwrap();
        let img = Tensor::seeded(21, &[1, 3, 32, 32], 0.0, 1.0);
        let other = Tensor::seeded(22, &[1, 3, 32, 32], 0.0, 1.0);
        let taps = &cfg.loss.tap_layers;

        let tape = Tape::new();
        assert_eq!(content_loss(&tape, &net, &img, &img).item(), 0.0);
        let (style_ii, _) = style_loss(&tape, &net, &img, &img, taps);
        assert!(style_ii.item() <= 1e-6, "style(I,I) = {}", style_ii.item());

        let b = total_loss(&tape, &net, &img, &other, &other, 10.0, taps);
        assert_eq!(b.total.item(), b.content.item() + 10.0 * b.style.item(), "exact identity");
        let b0 = total_loss(&tape, &net, &img, &other, &other, 0.0, taps);
        assert_eq!(b0.total.item(), b0.content.item(), "lambda 0 collapses to content");

        // loss network bitwise frozen through 100 training steps
        let mut cfg = cfg;
        cfg.train.steps = 100;
        let model = Sttr::new(&cfg, 3);
        let mut before = BTreeMap::new();
        net.visit(&mut |name, t| {
            before.insert(name, t.to_vec());
        });
        let content = vec![Tensor::seeded(23, &[1, 3, 32, 32], 0.0, 1.0)];
        let style = vec![Tensor::seeded(24, &[1, 3, 32, 32], 0.0, 1.0)];
        let records =
            train_model(&model, &net, &content, &style, &cfg, TrainSinks::default()).unwrap();
        assert_eq!(records.len(), 100);
        net.visit(&mut |name, t| {
            assert_eq!(before[&name], t.to_vec(), "{name} moved during training");
        });
    });
}

#[test]
fn criterion_05_overfit_smoke() {
    report("criterion 5 (overfit smoke, 200 steps)", || {
        let mut cfg = RunConfig::preset("desk").unwrap();
        cfg.train.steps = 200;
        cfg.train.learning_rate = 1e-3;
        cfg.train.image_size = 64;
        cfg.validate().unwrap();
        // 8-bit-representable planar pixels, as file-loaded images would be
        let paint = |f: &dyn Fn(usize, usize) -> [f32; 3]| -> Tensor {
            let mut data = vec![0.0f32; 3 * 64 * 64];
            for y in 0..64 {
                for x in 0..64 {
                    let px = f(x, y);
                    for (c, v) in px.iter().enumerate() {
                        data[c * 64 * 64 + y * 64 + x] = (v * 255.0).round() / 255.0;
                    }
                }
            }
            Tensor::new(&[1, 3, 64, 64], data)
        };
        // mid-tone ramp with a darker disc; a pair a user would actually feed
        let content = vec![paint(&|x, y| {
            let mut base = 0.35 + 0.3 * y as f32 / 63.0;
            let (dx, dy) = (x as f32 - 32.0, y as f32 - 28.0);
            if (dx * dx + dy * dy).sqrt() < 14.0 {
                base = 0.3 + 0.6 * (base - 0.3);
            }
            [base, base * 0.97, (base * 1.03).min(0.7)]
        })];
        // smooth muted wash: statistics an untrained model can walk to
        // without leaving the sigmoid's linear range
        let style = vec![paint(&|x, y| {
            let (dx, dy) = (x as f32 - 20.0, y as f32 - 40.0);
            let d = (dx * dx + dy * dy).sqrt() / 64.0;
            let base = 0.34 + 0.10 * d + 0.02 * (x as f32 * 0.25).sin();
            [base + 0.08, base, base - 0.04]
        })];

        let model = Sttr::new(&cfg, cfg.train.seed);
        let net = LossNetwork::from_config(&cfg).unwrap();
        let records =
            train_model(&model, &net, &content, &style, &cfg, TrainSinks::default()).unwrap();
        let initial = records[0].total;
        let final_total = records.last().unwrap().total;
        println!("  overfit: initial {initial:.4}, final {final_total:.4}");
        assert!(
            final_total <= 0.5 * initial,
            "final total {final_total} exceeds half of initial {initial}"
        );

        // determinism per seed: an identical fresh run reproduces the curve
        let model2 = Sttr::new(&cfg, cfg.train.seed);
        let mut cfg_head = cfg.clone();
        cfg_head.train.steps = 3;
        let head =
            train_model(&model2, &net, &content, &style, &cfg_head, TrainSinks::default()).unwrap();
        for (a, b) in head.iter().zip(records.iter()) {
            assert_eq!(a.total, b.total, "step {} diverged between runs", a.step);
        }
    });
}

#[test]
fn criterion_06_shape_contract() {
    report("criterion 6 (stylize shape contract)", || {
        let cfg = RunConfig::preset("desk").unwrap();
        assert_eq!(
            cfg.decoder_stages().iter().filter(|(_, up)| *up).count(),
            3,
            "exactly three x2 upsamples"
        );
        let model = Sttr::new(&cfg, 5);
        let style = Tensor::seeded(61, &[1, 3, 64, 64], 0.0, 1.0);
        for (h, w) in [(64, 64), (96, 96), (128, 128), (64, 128)] {
            let tape = Tape::new();
            let content = Tensor::seeded(62, &[1, 3, h, w], 0.0, 1.0);
            let out = model.stylize(&tape, &content, &style, None);
            assert_eq!(out.shape(), vec![1, 3, h, w], "content {h}x{w}");
            tape.clear();
        }
    });
}

#[test]
fn criterion_07_token_count_formula() {
    report("criterion 7 (token count vs window enumeration)", || {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        assert_eq!(sttr::features::token_count((8, 8), (4, 4), (2, 2)), 9);
        assert_eq!(sttr_oracles::ops::count_windows(8, 8, 4, 4, 2, 2), 9);
        for case in 0..50 {
            let kh = rng.gen_range(1..=5);
            let kw = rng.gen_range(1..=5);
            let h = rng.gen_range(kh..=kh + 12);
            let w = rng.gen_range(kw..=kw + 12);
            let sh = rng.gen_range(1..=4);
            let sw = rng.gen_range(1..=4);
            let ours = sttr::features::token_count((h, w), (kh, kw), (sh, sw));
            let brute = sttr_oracles::ops::count_windows(h, w, kh, kw, sh, sw);
            assert_eq!(ours, brute, "case {case}: {h}x{w} kernel {kh}x{kw} stride {sh}x{sw}");
        }
    });
}

fn write_ppm(path: &Path, img: &ImageBuffer) {
    sttr::image::save(path, img).unwrap();
}

fn seeded_image(seed: u64, w: usize, h: usize) -> ImageBuffer {
    let raw = Tensor::seeded(seed, &[w * h * 3], 0.0, 1.0);
    let bytes: Vec<f32> =
        raw.to_vec().iter().map(|v| (v * 255.0).round() / 255.0).collect();
    ImageBuffer::new(w, h, bytes)
}

struct CliWorld {
    _keep: tempfile::TempDir,
    root: std::path::PathBuf,
    config: std::path::PathBuf,
    checkpoint: std::path::PathBuf,
}

/// Writes a small config, an untrained checkpoint, and a style image for
/// binary-level tests.
fn cli_world() -> CliWorld {
    let keep = tempfile::tempdir().unwrap();
    let root = keep.path().to_path_buf();
    let cfg = small_config();
    let config = root.join("config.json");
    std::fs::write(&config, cfg.to_json()).unwrap();
    let model = Sttr::new(&cfg, cfg.train.seed);
    let checkpoint = root.join("model.bin");
    sttr::checkpoint::save(&checkpoint, &model.parameters()).unwrap();
    write_ppm(&root.join("style.ppm"), &seeded_image(90, 32, 32));
    CliWorld { _keep: keep, root, config, checkpoint }
}

fn sttr_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sttr"))
}

#[test]
fn criterion_08_video_framewise_equivalence() {
    report("criterion 8 (video equals per-frame stylize)", || {
        let world = cli_world();
        let frames = world.root.join("frames");
        std::fs::create_dir(&frames).unwrap();
        let a = seeded_image(91, 32, 32);
        let b = seeded_image(92, 32, 32);
        write_ppm(&frames.join("f0.ppm"), &a);
        write_ppm(&frames.join("f1.ppm"), &b);
        write_ppm(&frames.join("f2.ppm"), &b); // duplicated frame

        let vout = world.root.join("vout");
        let report_path = world.root.join("report.jsonl");
        let status = sttr_bin()
            .args(["video", "--config"])
            .arg(&world.config)
            .arg("--frames")
            .arg(&frames)
            .arg("--style")
            .arg(world.root.join("style.ppm"))
            .arg("--checkpoint")
            .arg(&world.checkpoint)
            .arg("--out")
            .arg(&vout)
            .arg("--report")
            .arg(&report_path)
            .status()
            .unwrap();
        assert!(status.success());

        // per-frame stylize must be bit-identical
        for name in ["f0.ppm", "f1.ppm", "f2.ppm"] {
            let single = world.root.join(format!("single_{name}"));
            let status = sttr_bin()
                .args(["stylize", "--config"])
                .arg(&world.config)
                .arg("--content")
                .arg(frames.join(name))
                .arg("--style")
                .arg(world.root.join("style.ppm"))
                .arg("--checkpoint")
                .arg(&world.checkpoint)
                .arg("--out")
                .arg(&single)
                .status()
                .unwrap();
            assert!(status.success());
            let from_video = std::fs::read(vout.join(name)).unwrap();
            let standalone = std::fs::read(&single).unwrap();
            assert_eq!(from_video, standalone, "{name} differs from standalone stylize");
        }

        // duplicated input frames f1/f2 produce bitwise equal outputs
        assert_eq!(
            std::fs::read(vout.join("f1.ppm")).unwrap(),
            std::fs::read(vout.join("f2.ppm")).unwrap()
        );
        let text = std::fs::read_to_string(&report_path).unwrap();
        let rows: Vec<serde_json::Value> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1]["output_mean_abs_diff"].as_f64().unwrap(), 0.0);
        assert!(rows[0]["input_mean_abs_diff"].as_f64().unwrap() > 0.0);
    });
}

#[test]
fn criterion_09_oracle_agreement() {
    report("criterion 9 (oracle agreement)", || {
        let oracle_report = sttr_oracles::run_all_oracles(12345);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracles.jsonl");
        sttr_oracles::write_report(&oracle_report, &path).unwrap();
        let consumed = sttr_oracles::read_report(&path).unwrap();
        assert_eq!(consumed.len(), oracle_report.len());
        for case in &consumed {
            assert!(
                case.pass,
                "oracle case `{}` failed its self-check (tolerance {})",
                case.case, case.tolerance
            );
            assert!(case.reference.iter().all(|v| v.is_finite()), "{}", case.case);
        }
        assert!(consumed.len() >= 10, "expected the full case set, got {}", consumed.len());
    });
}

#[test]
fn criterion_10_checkpoint_roundtrip() {
    report("criterion 10 (checkpoint round-trip)", || {
        let cfg = small_config();
        let model = Sttr::new(&cfg, 10);
        let content = Tensor::seeded(101, &[1, 3, 32, 32], 0.0, 1.0);
        let style = Tensor::seeded(102, &[1, 3, 32, 32], 0.0, 1.0);
        let tape = Tape::new();
        let direct = model.stylize(&tape, &content, &style, None).to_vec();
        tape.clear();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        sttr::checkpoint::save(&path, &model.parameters()).unwrap();

        // a differently seeded model, overwritten by the checkpoint
        let restored = Sttr::new(&cfg, 999);
        let loaded = sttr::checkpoint::load(&path).unwrap();
        sttr::checkpoint::apply(&restored.parameters(), &loaded).unwrap();
        let tape = Tape::new();
        let roundtrip = restored.stylize(&tape, &content, &style, None).to_vec();
        assert_eq!(direct, roundtrip, "stylization changed across save/load");

        // attention traces survive the round trip too
        let mut trace = AttentionTrace::default();
        let tape = Tape::new();
        restored.stylize(&tape, &content, &style, Some(&mut trace));
        assert_eq!(trace.decoder.len(), cfg.model.decoder_layers);
    });
}
