//! Adam optimization and the training loop: sample a content/style pair,
//! stylize, score, backpropagate, update, log, checkpoint on schedule.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image;
use crate::loss::{total_loss, LossNetwork};
use crate::model::Sttr;
use crate::tensor::{Tape, Tensor};

/// Adam with bias correction. Moments are kept in f64 so long runs do not
/// drift from the textbook recurrence; parameters stay f32.
pub struct Adam {
    pub lr: f32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f32) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in the map. Each parameter must
    /// carry a gradient; all gradients are cleared afterward.
    pub fn step(&mut self, params: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, p) in params {
            if p.grad().is_none() {
                return Err(Error::Shape(format!("parameter `{name}` has no gradient to apply")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (name, p) in params {
            let grad = p.grad().expect("checked above");
            let n = p.numel();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            assert_eq!(m.len(), n, "moment shape mirrors parameter shape");
            let mut data = p.to_vec();
            for i in 0..n {
                let g = grad[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= (self.lr as f64 * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
            p.set_data(&data);
            p.zero_grad();
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub content: f64,
    pub style: f64,
    pub total: f64,
    pub ms: f64,
}

/// Sorted list of image files in a directory (by file name). Only
/// extensions the loader understands are picked up.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if path.is_file() && matches!(ext.as_str(), "ppm" | "png") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::ImageDecode(format!("no .ppm or .png images in {}", dir.display())));
    }
    Ok(files)
}

fn load_training_image(path: &Path, size: usize) -> Result<Tensor> {
    let img = image::load(path).map_err(|e| match e {
        Error::ImageDecode(m) => Error::ImageDecode(format!("{}: {m}", path.display())),
        Error::Io(io) => Error::ImageDecode(format!("{}: {io}", path.display())),
        other => other,
    })?;
    let img = img.center_crop(size, size).map_err(|_| {
        Error::ImageDecode(format!(
            "{}: {}x{} is smaller than the {size}x{size} training size",
            path.display(),
            img.width,
            img.height
        ))
    })?;
    Ok(img.to_tensor())
}

/// Where the loop reports checkpoints and step records.
pub struct TrainSinks<'a> {
    /// Receives one JSON line per step.
    pub log: Option<&'a mut dyn Write>,
    /// Receives `step_{n:06}.bin` every `checkpoint_every` steps.
    pub checkpoint_dir: Option<&'a Path>,
}

impl Default for TrainSinks<'_> {
    fn default() -> Self {
        TrainSinks { log: None, checkpoint_dir: None }
    }
}

/// The optimization loop over already-decoded images. Pair selection is
/// seeded by `cfg.train.seed`, so a fixed seed and data give a bitwise
/// identical loss curve. With `steps = 0` the model is left untouched.
pub fn train_model(
    model: &Sttr,
    loss_net: &LossNetwork,
    content_images: &[Tensor],
    style_images: &[Tensor],
    cfg: &RunConfig,
    mut sinks: TrainSinks,
) -> Result<Vec<StepRecord>> {
    assert!(!content_images.is_empty() && !style_images.is_empty(), "need at least one image each");
    let trainable = model.trainable_parameters();
    let mut adam = Adam::new(cfg.train.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut records = Vec::with_capacity(cfg.train.steps);

    for step in 1..=cfg.train.steps {
        let start = Instant::now();
        let content = &content_images[rng.gen_range(0..content_images.len())];
        let style = &style_images[rng.gen_range(0..style_images.len())];

        let tape = Tape::new();
        let out = model.stylize(&tape, content, style, None);
        let breakdown =
            total_loss(&tape, loss_net, content, style, &out, cfg.loss.lambda, &cfg.loss.tap_layers);
        tape.backward(&breakdown.total);
        adam.step(&trainable)?;
        tape.clear();

        let record = StepRecord {
            step,
            content: breakdown.content.item() as f64,
            style: breakdown.style.item() as f64,
            total: breakdown.total.item() as f64,
            ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(log) = sinks.log.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(log, "{line}")?;
        }
        if let Some(dir) = sinks.checkpoint_dir {
            let every = cfg.train.checkpoint_every;
            if every > 0 && step % every == 0 {
                checkpoint::save(&dir.join(format!("step_{step:06}.bin")), &model.parameters())?;
            }
        }
        records.push(record);
    }

    Ok(records)
}

/// Runs the optimization loop over two image directories and returns the
/// trained model plus the per step records.
pub fn train(
    content_dir: &Path,
    style_dir: &Path,
    cfg: &RunConfig,
    sinks: TrainSinks,
) -> Result<(Sttr, Vec<StepRecord>)> {
    cfg.validate()?;
    let content_files = list_images(content_dir)?;
    let style_files = list_images(style_dir)?;
    let size = cfg.train.image_size;
    let content_images: Vec<Tensor> =
        content_files.iter().map(|p| load_training_image(p, size)).collect::<Result<_>>()?;
    let style_images: Vec<Tensor> =
        style_files.iter().map(|p| load_training_image(p, size)).collect::<Result<_>>()?;

    let model = Sttr::new(cfg, cfg.train.seed);
    let loss_net = LossNetwork::from_config(cfg)?;
    let records = train_model(&model, &loss_net, &content_images, &style_images, cfg, sinks)?;
    Ok((model, records))
}
