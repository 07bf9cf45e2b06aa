//! Pretraining loop: Adam with a constant learning rate, per-step seed
//! streams, JSONL logging and resumable checkpoints.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::augment::ChainConfig;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{MelExtractor, MelParams};
use crate::model::{build_model, Model, ModelConfig, Topology};
use crate::nn::{ParamSet, Scalar};
use crate::objective::{loev_loss, LossConfig};
use crate::seed;
use crate::views::{build_batch, build_positive_masks, SamplingStrategy};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.bin";
pub const NAN_DUMP_FILE: &str = "nan_dump.json";

const INIT_STREAM: u64 = 0x1A17;
const STEP_STREAM: u64 = 0x57E9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the update count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        AdamState {
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &ParamSet<T>, state: &mut AdamState<T>, hyper: &AdamHyper) -> Result<()> {
    params.check_layout(grads)?;
    params.check_layout(&state.m)?;
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let c1 = T::of(1.0 - hyper.beta1.powi(t));
    let c2 = T::of(1.0 - hyper.beta2.powi(t));
    let (lr, eps) = (T::of(hyper.lr), T::of(hyper.eps));
    let one = T::one();
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.m.tensors.iter_mut())
        .zip(state.v.tensors.iter_mut())
    {
        ndarray::Zip::from(&mut p.value)
            .and(&g.value)
            .and(&mut m.value)
            .and(&mut v.value)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

/// Only a constant learning rate is supported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Anchors per batch (N); the batch holds N * M views.
    pub batch_anchors: usize,
    pub learning_rate: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps (0 = final only).
    pub checkpoint_every: u64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_anchors: 16,
            learning_rate: 1e-4,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "must be positive"));
        }
        if self.batch_anchors < 2 {
            return Err(Error::param("batch_anchors", "need at least 2 anchors"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) || !(self.adam_eps > 0.0) {
            return Err(Error::param("adam", "betas must lie in [0, 1) and eps be positive"));
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.adam_betas[0],
            beta2: self.adam_betas[1],
            eps: self.adam_eps,
        }
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, &[INIT_STREAM])
    }

    /// Seed of the batch drawn at 0-based step `step`.
    pub fn step_seed(&self, step: u64) -> u64 {
        seed::derive(self.seed, &[STEP_STREAM, step])
    }
}

/// Everything one pretraining run depends on besides the corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub chain: ChainConfig,
    pub sampling: SamplingStrategy,
    pub features: MelParams,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.chain.validate()?;
        self.sampling.validate()?;
        self.features.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.model.input_frames != self.features.frames() || self.model.mel_bins != self.features.mel_bins {
            return Err(Error::Shape {
                expected: format!("model input {}x{}", self.model.input_frames, self.model.mel_bins),
                actual: format!("features {}x{}", self.features.frames(), self.features.mel_bins),
            });
        }
        if self.model.topology != Topology::SingleHead {
            let tags: Vec<&str> = self.chain.variant.iter().map(|a| a.kind.space_tag()).collect();
            if self.model.variant_tags != tags {
                return Err(Error::param(
                    "variant_tags",
                    format!("model heads {:?} do not match the chain's variant augmentations {:?}", self.model.variant_tags, tags),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// Number of optimizer updates applied so far, this one included.
    pub step: u64,
    pub batch_seed: u64,
    pub total: f64,
    pub all_invariant: f64,
    pub per_subspace: Vec<f64>,
    pub contributing_counts: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub step: u64,
}

impl TrainState {
    pub fn new(config: &PretrainConfig) -> Result<Self> {
        config.validate()?;
        let model = build_model(&config.model, config.train.init_seed())?;
        let adam = AdamState::new(&model.params);
        Ok(TrainState { model, adam, step: 0 })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = ckpt.to_model()?;
        let adam = ckpt.adam.clone().unwrap_or_else(|| AdamState::new(&model.params));
        Ok(TrainState {
            model,
            adam,
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self, config: &PretrainConfig) -> Result<Checkpoint> {
        Ok(Checkpoint::from_model(&self.model, self.step, Some(self.adam.clone()), serde_json::to_value(config)?))
    }
}

#[derive(Serialize)]
struct NanDump<'a> {
    step: u64,
    batch_seed: u64,
    track_indices: &'a [usize],
    loss: &'a str,
}

/// Draw the batch for `state.step`, compute the loss and apply one update.
/// `dump_dir` receives a diagnostic file when the loss is not finite.
pub fn train_step(
    state: &mut TrainState,
    tracks: &[AudioClip],
    config: &PretrainConfig,
    mel: &MelExtractor,
    dump_dir: Option<&Path>,
) -> Result<StepLog> {
    let n = config.train.batch_anchors;
    if tracks.len() < n {
        return Err(Error::param("corpus", format!("{} tracks for a batch of {n} anchors", tracks.len())));
    }
    let batch_seed = config.train.step_seed(state.step);
    let mut rng = seed::rng_for(batch_seed, &[0]);
    let picked: Vec<usize> = sample(&mut rng, tracks.len(), n).into_vec();
    let anchors: Vec<AudioClip> = picked.iter().map(|&i| tracks[i].clone()).collect();
    let batch = build_batch(&anchors, &config.chain, &config.sampling, mel, seed::derive(batch_seed, &[1]))?;
    let mut masks = build_positive_masks(&batch);
    if config.model.topology == Topology::SingleHead {
        masks.per_subspace.clear();
    }

    let (bundle, cache) = state.model.forward(&batch.views)?;
    let loss = loev_loss(&bundle.projections, &masks, &config.loss)?;
    if !loss.total.is_finite() || loss.grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        if let Some(dir) = dump_dir {
            let dump = NanDump {
                step: state.step,
                batch_seed,
                track_indices: &picked,
                loss: &format!("{}", loss.total),
            };
            std::fs::write(dir.join(NAN_DUMP_FILE), serde_json::to_vec_pretty(&dump)?)?;
        }
        log::error!("non-finite loss at step {} (batch seed {batch_seed:#018x}, tracks {picked:?})", state.step);
        return Err(Error::NonFiniteLoss {
            step: state.step,
            batch_seed,
        });
    }
    let dz: Vec<Option<Array2<f32>>> = loss.grads.into_iter().map(Some).collect();
    let grads = state.model.backward(&cache, &dz)?;
    if !grads.all_finite() {
        log::error!("non-finite gradient at step {} (batch seed {batch_seed:#018x})", state.step);
        return Err(Error::NonFiniteLoss {
            step: state.step,
            batch_seed,
        });
    }
    adam_step(&mut state.model.params, &grads, &mut state.adam, &config.train.hyper())?;
    state.step += 1;
    Ok(StepLog {
        step: state.step,
        batch_seed,
        total: loss.total,
        all_invariant: loss.all_invariant,
        per_subspace: loss.per_subspace,
        contributing_counts: loss.contributing_counts,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<StepLog>,
    pub checkpoint_path: Option<PathBuf>,
}

/// Train from scratch. With `out_dir`, writes the log, periodic and final
/// checkpoints there.
pub fn pretrain(tracks: &[AudioClip], config: &PretrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let state = TrainState::new(config)?;
    run(state, tracks, config, out_dir)
}

/// Continue from a checkpoint up to `config.train.steps` total updates.
pub fn resume(tracks: &[AudioClip], config: &PretrainConfig, ckpt: &Checkpoint, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if ckpt.model != config.model {
        return Err(Error::Config("checkpoint model config differs from the run config".into()));
    }
    run(TrainState::from_checkpoint(ckpt)?, tracks, config, out_dir)
}

fn run(mut state: TrainState, tracks: &[AudioClip], config: &PretrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    if tracks.is_empty() {
        return Err(Error::param("corpus", "empty corpus"));
    }
    let mel = MelExtractor::new(&config.features)?;
    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(LOG_FILE);
            let file = if state.step == 0 {
                File::create(path)?
            } else {
                OpenOptions::new().create(true).append(true).open(path)?
            };
            Some(BufWriter::new(file))
        }
        None => None,
    };
    let mut log = Vec::new();
    while state.step < config.train.steps {
        let entry = train_step(&mut state, tracks, config, &mel, out_dir)?;
        log::debug!("step {} loss {:.5}", entry.step, entry.total);
        if let Some(w) = writer.as_mut() {
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
        }
        log.push(entry);
        if let (Some(dir), every) = (out_dir, config.train.checkpoint_every) {
            if every > 0 && state.step % every == 0 && state.step < config.train.steps {
                state.checkpoint(config)?.save(&dir.join(format!("checkpoint-{:06}.bin", state.step)))?;
            }
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    let checkpoint_path = match out_dir {
        Some(dir) => {
            let path = dir.join(FINAL_CHECKPOINT);
            state.checkpoint(config)?.save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        state,
        log,
        checkpoint_path,
    })
}

/// Mean of the first and last `fraction` of a loss log.
pub fn loss_trend(log: &[StepLog], fraction: f64) -> (f64, f64) {
    let w = ((log.len() as f64 * fraction).ceil() as usize).clamp(1, log.len().max(1));
    let mean = |s: &[StepLog]| s.iter().map(|e| e.total).sum::<f64>() / s.len().max(1) as f64;
    (mean(&log[..w.min(log.len())]), mean(&log[log.len().saturating_sub(w)..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use ndarray::{arr1, ArrayD, IxDyn};

    fn scalar(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", ArrayD::from_elem(IxDyn(&[1]), v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.3);
        let mut st = AdamState::new(&p);
        st.m.get_mut(0).fill(0.5);
        st.v.get_mut(0).fill(0.25);
        adam_step(&mut p, &scalar(0.0), &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(st.m.get(0)[[0]], 0.45);
        assert!((st.v.get(0)[[0]] - 0.24975).abs() < 1e-15);
        let mut p = scalar(0.3);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(p.get(0)[[0]], 0.3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&p);
        let h = AdamHyper { lr: 0.1, ..Default::default() };
        adam_step(&mut p, &scalar(1.0), &mut st, &h).unwrap();
        assert!((p.get(0)[[0]] + 0.1).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p);
        let h = AdamHyper { lr: 0.1, ..Default::default() };
        let mut trace = vec![1.0f64];
        for _ in 0..100 {
            let w = p.get(0)[[0]];
            adam_step(&mut p, &scalar(2.0 * w), &mut st, &h).unwrap();
            trace.push(p.get(0)[[0]].abs());
        }
        assert!(*trace.last().unwrap() < 0.01, "{:?}", &trace[90..]);
        // monotone during the approach; Adam overshoots only near zero
        assert!(trace[..8].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn layout_mismatch_errors() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&p);
        let mut g = ParamSet::new();
        g.push("w", arr1(&[0.0, 1.0]).into_dyn());
        assert!(adam_step(&mut p, &g, &mut st, &AdamHyper::default()).is_err());
    }

    fn small() -> (Vec<AudioClip>, PretrainConfig) {
        let corpus = generate_corpus(&CorpusConfig {
            size: 6,
            duration: 6.0,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = PretrainConfig::default();
        cfg.model.channels = vec![2, 4];
        cfg.model.embed_dim = 8;
        cfg.model.head_hidden = vec![8];
        cfg.model.proj_dim = 4;
        cfg.chain.views_per_anchor = 2;
        cfg.train.batch_anchors = 3;
        cfg.train.steps = 2;
        cfg.train.seed = 5;
        (corpus, cfg)
    }

    #[test]
    fn config_checks() {
        let (_, mut cfg) = small();
        cfg.validate().unwrap();
        cfg.model.variant_tags = vec!["t".into(), "p".into()];
        assert!(cfg.validate().is_err());
        cfg.model.topology = Topology::SingleHead;
        cfg.model.variant_tags.clear();
        cfg.validate().unwrap();
        cfg.train.batch_anchors = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn runs_logs_and_is_deterministic() {
        let (corpus, mut cfg) = small();
        cfg.train.steps = 1;
        let dir = tempfile::tempdir().unwrap();
        let out = pretrain(&corpus, &cfg, Some(dir.path())).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.state.adam.t, 1);
        let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1);
        let first = std::fs::read(dir.path().join(FINAL_CHECKPOINT)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        pretrain(&corpus, &cfg, Some(dir2.path())).unwrap();
        assert_eq!(first, std::fs::read(dir2.path().join(FINAL_CHECKPOINT)).unwrap());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (corpus, mut cfg) = small();
        cfg.train.steps = 4;
        let full = pretrain(&corpus, &cfg, None).unwrap();
        let mut half = cfg.clone();
        half.train.steps = 2;
        let first = pretrain(&corpus, &half, None).unwrap();
        let bytes = first.state.checkpoint(&half).unwrap().to_bytes().unwrap();
        let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
        let resumed = resume(&corpus, &cfg, &ckpt, None).unwrap();
        assert_eq!(resumed.state.step, 4);
        assert_eq!(resumed.state.model.params, full.state.model.params);
        assert_eq!(resumed.state.adam, full.state.adam);
        assert_eq!(&full.log[2..], &resumed.log[..]);
    }

    #[test]
    fn nan_aborts_with_batch_seed() {
        let (corpus, cfg) = small();
        let mut state = TrainState::new(&cfg).unwrap();
        state.model.params.get_mut(0).fill(f32::NAN);
        let dir = tempfile::tempdir().unwrap();
        let mel = MelExtractor::new(&cfg.features).unwrap();
        let err = train_step(&mut state, &corpus, &cfg, &mel, Some(dir.path())).unwrap_err();
        match err {
            Error::NonFiniteLoss { step, batch_seed } => {
                assert_eq!(step, 0);
                assert_eq!(batch_seed, cfg.train.step_seed(0));
            }
            e => panic!("unexpected {e}"),
        }
        let dump: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join(NAN_DUMP_FILE)).unwrap()).unwrap();
        assert_eq!(dump["batch_seed"], cfg.train.step_seed(0));
    }
}
