//! Seeded, single-threaded training loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use egmr_autograd::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::losses::{LossComponents, LossWeights, PerceptualExtractor};
use crate::nn::Session;
use crate::pipeline::{EgmrModel, ModelConfig, ModelInput};
use crate::synth::{Dataset, Sample};

pub const LOG_FORMAT: &str = "egmr-train-log";
pub const LOG_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "model.egck";
pub const LOG_FILE: &str = "train.log";

/// Flat training configuration; every key may appear at the top level of the
/// config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub crop: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub flip: bool,
    pub rotate: bool,
    /// Train on the first `batch` samples, uncropped and unaugmented, every step.
    pub fixed_batch: bool,
    /// Write an intermediate checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub perceptual_seed: u64,
    pub vgg16_weights: Option<PathBuf>,
    #[serde(flatten)]
    pub loss: LossWeights,
    #[serde(flatten)]
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out_dir: None,
            crop: 64,
            batch: 4,
            steps: 2000,
            lr: 1e-4,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            seed: 0,
            flip: true,
            rotate: true,
            fixed_batch: false,
            checkpoint_every: 0,
            perceptual_seed: 0x5eed,
            vgg16_weights: None,
            loss: LossWeights::default(),
            model: ModelConfig::desk(),
        }
    }
}

impl TrainConfig {
    /// The large-scale preset: 256 crops, batch 48 and full network widths.
    pub fn full() -> Self {
        Self {
            crop: 256,
            batch: 48,
            model: ModelConfig::full(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr, self.lr_min];
        if rates.iter().any(|&r| !(r > 0.0)) || self.weight_decay < 0.0 {
            return Err(Error::Parameter("learning rates must be positive and weight decay non-negative".into()));
        }
        if self.crop == 0 || self.crop % 16 != 0 {
            return Err(Error::Parameter(format!("crop {} must be a positive multiple of 16", self.crop)));
        }
        if self.batch == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        let w = self.loss;
        if [w.lambda_r_e, w.lambda_r, w.lambda_p].iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Parameter("loss weights must be non-negative".into()));
        }
        self.model.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parameter(m) => Error::decode(path, m),
            other => other,
        })
    }

    pub fn extractor(&self) -> Result<PerceptualExtractor> {
        match &self.vgg16_weights {
            Some(p) => PerceptualExtractor::load_vgg16(p),
            None => Ok(PerceptualExtractor::random(self.perceptual_seed)),
        }
    }
}

/// Canonical text of a model configuration, stored in checkpoints.
pub fn model_config_text(cfg: &ModelConfig) -> String {
    serde_json::to_string(cfg).expect("model config serializes")
}

pub fn checkpoint_of(model: &EgmrModel) -> Checkpoint {
    Checkpoint::new(model_config_text(&model.config), model.params.clone())
}

/// Rebuilds a model from a checkpoint, verifying its fingerprint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<EgmrModel> {
    ckpt.verify(&checkpoint::fingerprint(&ckpt.config_text))?;
    let config: ModelConfig =
        serde_json::from_str(&ckpt.config_text).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let mut model = EgmrModel::new(config, 0)?;
    model.load_params(ckpt.params.clone())?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<EgmrModel> {
    model_from_checkpoint(&checkpoint::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    #[serde(flatten)]
    pub components: LossComponents,
}

pub struct TrainOutcome {
    pub model: EgmrModel,
    pub log: Vec<LogRecord>,
}

/// Network input and ground truth for a list of samples.
pub fn batch_of(samples: &[Sample], bins: usize) -> Result<(ModelInput<f32>, Tensor<f32>)> {
    let inputs = samples
        .iter()
        .map(|s| ModelInput::from_sample(&s.i0, &s.i1, &s.events, s.tau, bins))
        .collect::<Result<Vec<_>>>()?;
    let gt: Vec<Tensor<f32>> = samples
        .iter()
        .map(|s| s.igt.clone().reshape(&[1, 3, s.height(), s.width()]))
        .collect();
    Ok((ModelInput::concat(&inputs), Tensor::stack(&gt)))
}

/// Versioned header line; omits the output directory.
fn log_header(cfg: &TrainConfig) -> String {
    let cfg = TrainConfig {
        out_dir: None,
        ..cfg.clone()
    };
    serde_json::json!({
        "format": LOG_FORMAT,
        "version": LOG_VERSION,
        "mode": "deterministic single-threaded",
        "fingerprint": checkpoint::fingerprint_hex(&checkpoint::fingerprint(&model_config_text(&cfg.model))),
        "config": cfg,
    })
    .to_string()
}

/// Renders the training log as line-oriented text.
pub fn log_text(cfg: &TrainConfig, log: &[LogRecord]) -> String {
    let mut out = log_header(cfg);
    out.push('\n');
    for r in log {
        out.push_str(&serde_json::to_string(r).unwrap());
        out.push('\n');
    }
    out
}

/// One optimisation step's loss evaluation and gradients.
pub fn loss_and_grads(
    model: &EgmrModel,
    input: &ModelInput<f32>,
    gt: &Tensor<f32>,
    extractor: &PerceptualExtractor,
    weights: &LossWeights,
) -> Result<(LossComponents, f64, Vec<Option<Tensor<f32>>>)> {
    let tape = Tape::new();
    let s = Session::new(&tape, &model.params, true);
    let lv = model.loss_graph(&s, input, gt, extractor, weights)?;
    let scalar = |v| tape.value(v).data()[0] as f64;
    let comps = LossComponents {
        event_recon: scalar(lv.event_recon),
        recon: scalar(lv.recon),
        perceptual: scalar(lv.perceptual),
    };
    let total = scalar(lv.total);
    let mut grads = tape.backward(lv.total);
    let g = s.param_vars().iter().map(|&v| grads.take(v)).collect();
    Ok((comps, total, g))
}

/// Trains a fresh model on `data`. When `cfg.out_dir` is set, the log and
/// checkpoints are written there.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let extractor = cfg.extractor()?;
    let mut model = EgmrModel::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        model.params.tensors(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xda7a);
    let aug = AugmentConfig {
        crop: cfg.crop,
        flip: cfg.flip,
        rotate: cfg.rotate,
    };
    let out_dir = cfg.out_dir.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            let path = dir.join(LOG_FILE);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", log_header(cfg)).map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let save = |model: &EgmrModel, name: &str| -> Result<()> {
        match out_dir {
            Some(dir) => checkpoint::write(&checkpoint_of(model), &dir.join(name)),
            None => Ok(()),
        }
    };

    let fixed = if cfg.fixed_batch {
        let n = cfg.batch.min(data.len());
        Some(batch_of(&data.samples[..n], cfg.model.bins)?)
    } else {
        None
    };
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let lr = cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min);
        let owned;
        let (input, gt) = match &fixed {
            Some((i, g)) => (i, g),
            None => {
                let picks = (0..cfg.batch)
                    .map(|_| augment(&data.samples[rng.random_range(0..data.len())], &aug, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                owned = batch_of(&picks, cfg.model.bins)?;
                (&owned.0, &owned.1)
            }
        };
        let (components, total, grads) = loss_and_grads(&model, input, gt, &extractor, &cfg.loss)?;
        if let Err(e) = crate::losses::total_loss(&components, &LossWeights::default()).and_then(|_| {
            if total.is_finite() {
                Ok(())
            } else {
                Err(Error::Numeric { component: "total", value: total })
            }
        }) {
            save(&model, CHECKPOINT_FILE)?;
            return Err(e);
        }
        opt.step(model.params.tensors_mut(), &grads, lr);
        let rec = LogRecord {
            step,
            lr,
            total,
            components,
        };
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&rec).unwrap()).map_err(|e| Error::io(&*path, e))?;
        }
        log.push(rec);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
            save(&model, &format!("model_step{:06}.egck", step + 1))?;
        }
    }
    save(&model, CHECKPOINT_FILE)?;
    Ok(TrainOutcome { model, log })
}
