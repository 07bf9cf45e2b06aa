//! Shallow MLP probes on frozen embeddings.
//!
//! Probes train on chunk embeddings of the train split (plus stretched
//! copies when enabled), select the epoch with the lowest validation loss on
//! track means, and report test metrics on track means.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{auroc, average_precision, key_weighted, tempo_acc};
use super::store::{split_tracks, EmbeddingStore, Split};
use crate::corpus::{ClipSpec, KEY_CLASSES, PITCH_CLASSES, TAGS};
use crate::error::{Error, Result};
use crate::nn::params::he_uniform;
use crate::nn::{dense_backward, dense_forward, dropout_mask, relu_backward, relu_inplace, ParamSet};
use crate::seed;
use crate::trainer::{adam_step, AdamHyper, AdamState};

/// Tempo is classified over integer BPM 1..=300.
pub const TEMPO_CLASSES: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PitchClass,
    Key,
    Tempo,
    Tags,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::PitchClass, Task::Key, Task::Tempo, Task::Tags];

    pub fn name(self) -> &'static str {
        match self {
            Task::PitchClass => "pitch_class",
            Task::Key => "key",
            Task::Tempo => "tempo",
            Task::Tags => "tags",
        }
    }

    pub fn parse(name: &str) -> Result<Task> {
        let n = name.to_ascii_lowercase().replace('-', "_");
        match n.as_str() {
            "pitch" | "pitch_class" => Ok(Task::PitchClass),
            "key" => Ok(Task::Key),
            "tempo" => Ok(Task::Tempo),
            "tags" | "tag" => Ok(Task::Tags),
            _ => Err(Error::param("task", format!("unknown task `{name}` (pitch_class, key, tempo, tags)"))),
        }
    }
}

/// Per-track probe targets; `None` marks tracks without the label.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Single-label classification; `key` switches on the weighted key score.
    Class { n_classes: usize, labels: Vec<Option<usize>>, key: bool },
    /// 300-way integer-BPM classification scored with acc1/acc2.
    Tempo { bpm: Vec<Option<f64>> },
    /// Independent binary tags.
    Tags { names: Vec<String>, labels: Vec<Option<Vec<bool>>> },
}

impl Targets {
    pub fn from_labels(task: Task, labels: &[Option<ClipSpec>]) -> Targets {
        match task {
            Task::PitchClass => Targets::Class {
                n_classes: PITCH_CLASSES,
                labels: labels.iter().map(|l| l.as_ref().and_then(|s| s.pitch_class()).map(usize::from)).collect(),
                key: false,
            },
            Task::Key => Targets::Class {
                n_classes: KEY_CLASSES,
                labels: labels.iter().map(|l| l.as_ref().and_then(|s| s.key()).map(usize::from)).collect(),
                key: true,
            },
            Task::Tempo => Targets::Tempo {
                bpm: labels.iter().map(|l| l.as_ref().and_then(|s| s.tempo_bpm())).collect(),
            },
            Task::Tags => Targets::Tags {
                names: TAGS.iter().map(|t| t.to_string()).collect(),
                labels: labels
                    .iter()
                    .map(|l| l.as_ref().map(|s| TAGS.iter().map(|t| s.tags.contains(*t)).collect()))
                    .collect(),
            },
        }
    }

    fn len(&self) -> usize {
        match self {
            Targets::Class { labels, .. } => labels.len(),
            Targets::Tempo { bpm } => bpm.len(),
            Targets::Tags { labels, .. } => labels.len(),
        }
    }

    fn n_outputs(&self) -> usize {
        match self {
            Targets::Class { n_classes, .. } => *n_classes,
            Targets::Tempo { .. } => TEMPO_CLASSES,
            Targets::Tags { names, .. } => names.len(),
        }
    }

    fn multi_label(&self) -> bool {
        matches!(self, Targets::Tags { .. })
    }

    fn has(&self, t: usize) -> bool {
        match self {
            Targets::Class { labels, .. } => labels[t].is_some(),
            Targets::Tempo { bpm } => bpm[t].is_some(),
            Targets::Tags { labels, .. } => labels[t].is_some(),
        }
    }

    /// Training target row for track `t` played at `rate`.
    fn row(&self, t: usize, rate: f64) -> Array1<f32> {
        let mut y = Array1::zeros(self.n_outputs());
        match self {
            Targets::Class { labels, .. } => y[labels[t].unwrap()] = 1.0,
            Targets::Tempo { bpm } => y[tempo_class(bpm[t].unwrap() * rate)] = 1.0,
            Targets::Tags { labels, .. } => {
                for (i, &on) in labels[t].as_ref().unwrap().iter().enumerate() {
                    y[i] = on as u8 as f32;
                }
            }
        }
        y
    }

    fn class_of(&self, t: usize) -> Option<usize> {
        match self {
            Targets::Class { labels, .. } => labels[t],
            Targets::Tempo { bpm } => bpm[t].map(tempo_class),
            Targets::Tags { .. } => None,
        }
    }
}

fn tempo_class(bpm: f64) -> usize {
    (bpm.round() as usize).clamp(1, TEMPO_CLASSES) - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Hidden layer widths; empty gives a linear probe.
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Train on time-stretched chunk copies as well (rate ~ U(0.8, 1.2)).
    pub time_stretch: bool,
    pub stretch_copies: usize,
    pub seed: u64,
    pub split_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: vec![128],
            dropout: 0.2,
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 32,
            time_stretch: true,
            stretch_copies: 1,
            seed: 0,
            split_seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::param("hidden", "layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout", "must be in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::param("probe", "learning_rate, epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub space: String,
    pub metrics: BTreeMap<String, f64>,
    pub n_train_examples: usize,
    pub n_test_tracks: usize,
    pub best_epoch: usize,
}

struct Mlp {
    params: ParamSet<f32>,
    layers: usize,
}

impl Mlp {
    fn new(widths: &[usize], rng: &mut seed::Rng) -> Mlp {
        let mut params = ParamSet::new();
        for (l, w) in widths.windows(2).enumerate() {
            params.push(format!("fc{l}.w"), he_uniform(&[w[0], w[1]], w[0], rng));
            params.push(format!("fc{l}.b"), ndarray::ArrayD::zeros(ndarray::IxDyn(&[w[1]])));
        }
        Mlp {
            params,
            layers: widths.len() - 1,
        }
    }

    fn w(&self, l: usize) -> ndarray::ArrayView2<'_, f32> {
        self.params.get(2 * l).view().into_dimensionality().unwrap()
    }

    fn b(&self, l: usize) -> Array1<f32> {
        self.params.get(2 * l + 1).clone().into_dimensionality().unwrap()
    }

    /// Logits plus per-layer inputs and dropout masks.
    fn forward(&self, x: &Array2<f32>, dropout: Option<(f64, &mut seed::Rng)>) -> (Array2<f32>, Vec<Array2<f32>>, Vec<Array2<f32>>) {
        let mut inputs = vec![x.clone()];
        let mut masks = Vec::new();
        let mut h = x.clone();
        let mut dropout = dropout;
        for l in 0..self.layers {
            h = dense_forward(&h, self.w(l), &self.b(l));
            if l + 1 < self.layers {
                relu_inplace(&mut h);
                if let Some((rate, rng)) = dropout.as_mut() {
                    let m = dropout_mask::<f32>(h.dim(), *rate, rng);
                    h *= &m;
                    masks.push(m);
                }
                inputs.push(h.clone());
            }
        }
        (h, inputs, masks)
    }

    fn backward(&self, mut d: Array2<f32>, inputs: &[Array2<f32>], masks: &[Array2<f32>]) -> ParamSet<f32> {
        let mut grads = self.params.zeros_like();
        for l in (0..self.layers).rev() {
            let (dx, dw, db) = dense_backward(&d, &inputs[l], self.w(l), l > 0);
            *grads.get_mut(2 * l) = dw.into_dyn();
            *grads.get_mut(2 * l + 1) = db.into_dyn();
            if l > 0 {
                d = dx.unwrap();
                if let Some(m) = masks.get(l - 1) {
                    d *= m;
                }
                relu_backward(&mut d, &inputs[l]);
            }
        }
        grads
    }
}

/// Mean loss and its gradient w.r.t. the logits.
fn loss_and_grad(logits: &Array2<f32>, y: &Array2<f32>, multi_label: bool) -> (f64, Array2<f32>) {
    let n = logits.nrows() as f32;
    if multi_label {
        let mut loss = 0.0f64;
        let grad = ndarray::Zip::from(logits).and(y).map_collect(|&z, &t| {
            let p = 1.0 / (1.0 + (-z).exp());
            loss += (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()) as f64;
            (p - t) / n
        });
        (loss / n as f64, grad)
    } else {
        let mut grad = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0f64;
        for (i, row) in logits.rows().into_iter().enumerate() {
            let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let e: Array1<f32> = row.mapv(|v| (v - m).exp());
            let s = e.sum();
            let t = y.row(i);
            loss -= t.iter().zip(row.iter()).map(|(&ti, &zi)| ti as f64 * (zi - m - s.ln()) as f64).sum::<f64>();
            grad.row_mut(i).assign(&((&e / s - &t) / n));
        }
        (loss / n as f64, grad)
    }
}

fn argmax(r: ArrayView1<f32>) -> usize {
    r.iter().enumerate().fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
}

/// Train a probe on `store` and score it on the held-out test split.
pub fn train_probe(store: &EmbeddingStore, targets: &Targets, config: &ProbeConfig) -> Result<ProbeResult> {
    config.validate()?;
    if targets.len() != store.len() {
        return Err(Error::Shape {
            expected: format!("{} targets", store.len()),
            actual: targets.len().to_string(),
        });
    }
    let labelled: Vec<usize> = (0..store.len()).filter(|&t| targets.has(t)).collect();
    let split = split_tracks(labelled.len(), config.split_seed)?;
    let pick = |rows: &[usize]| rows.iter().map(|&r| labelled[r]).collect::<Vec<_>>();
    let split = Split {
        train: pick(&split.train),
        val: pick(&split.val),
        test: pick(&split.test),
    };
    if let Some(t) = split
        .val
        .iter()
        .chain(&split.test)
        .find(|&&t| targets.class_of(t).is_some_and(|c| !split.train.iter().any(|&u| targets.class_of(u) == Some(c))))
    {
        return Err(Error::Split(format!("class {} of track {} is absent from the train split", targets.class_of(*t).unwrap(), store.ids[*t])));
    }
    if config.time_stretch && split.train.iter().all(|&t| store.stretched[t].is_empty()) {
        return Err(Error::param("time_stretch", "the embedding store holds no stretched chunks"));
    }

    let mut xs: Vec<Array1<f32>> = Vec::new();
    let mut ys: Vec<Array1<f32>> = Vec::new();
    for &t in &split.train {
        for c in store.chunks[t].rows() {
            xs.push(c.to_owned());
            ys.push(targets.row(t, 1.0));
        }
        if config.time_stretch {
            for (rate, e) in &store.stretched[t] {
                xs.push(e.clone());
                ys.push(targets.row(t, *rate));
            }
        }
    }
    let stack = |v: &[Array1<f32>]| ndarray::stack(Axis(0), &v.iter().map(|a| a.view()).collect::<Vec<_>>()).unwrap();
    let x_train = stack(&xs);
    let y_train = stack(&ys);

    let mean = x_train.mean_axis(Axis(0)).unwrap();
    let std = x_train.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-6));
    let standardize = |x: &Array2<f32>| (x - &mean) / &std;
    let x_train = standardize(&x_train);
    let track_x = |rows: &[usize]| standardize(&store.track_mean.select(Axis(0), rows));
    let x_val = track_x(&split.val);
    let y_val = stack(&split.val.iter().map(|&t| targets.row(t, 1.0)).collect::<Vec<_>>());

    let mut rng = seed::rng_for(config.seed, &[0x960BE]);
    let mut widths = vec![store.dim];
    widths.extend(&config.hidden);
    widths.push(targets.n_outputs());
    let mut mlp = Mlp::new(&widths, &mut rng);
    let mut adam = AdamState::new(&mlp.params);
    let hyper = AdamHyper {
        lr: config.learning_rate,
        ..Default::default()
    };
    let multi = targets.multi_label();
    let mut order: Vec<usize> = (0..x_train.nrows()).collect();
    let (val_logits, _, _) = mlp.forward(&x_val, None);
    let mut best = (loss_and_grad(&val_logits, &y_val, multi).0, 0usize, mlp.params.clone());
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = x_train.select(Axis(0), batch);
            let yb = y_train.select(Axis(0), batch);
            let (logits, inputs, masks) = mlp.forward(&xb, Some((config.dropout, &mut rng)));
            let (_, d) = loss_and_grad(&logits, &yb, multi);
            let grads = mlp.backward(d, &inputs, &masks);
            adam_step(&mut mlp.params, &grads, &mut adam, &hyper)?;
        }
        let (val_logits, _, _) = mlp.forward(&x_val, None);
        let val_loss = loss_and_grad(&val_logits, &y_val, multi).0;
        if val_loss < best.0 {
            best = (val_loss, epoch, mlp.params.clone());
        }
    }
    mlp.params = best.2;

    let (logits, _, _) = mlp.forward(&track_x(&split.test), None);
    let metrics = score(&logits, &split.test, targets)?;
    Ok(ProbeResult {
        space: store.space.clone(),
        metrics,
        n_train_examples: x_train.nrows(),
        n_test_tracks: split.test.len(),
        best_epoch: best.1,
    })
}

fn score(logits: &Array2<f32>, tracks: &[usize], targets: &Targets) -> Result<BTreeMap<String, f64>> {
    let n = tracks.len() as f64;
    let mut m = BTreeMap::new();
    match targets {
        Targets::Class { labels, key, .. } => {
            let preds: Vec<usize> = logits.rows().into_iter().map(argmax).collect();
            let acc = preds.iter().zip(tracks).filter(|(p, &t)| Some(**p) == labels[t]).count() as f64 / n;
            m.insert("accuracy".into(), acc);
            if *key {
                let mut w = 0.0;
                for (p, &t) in preds.iter().zip(tracks) {
                    w += key_weighted(*p as u8, labels[t].unwrap() as u8)?;
                }
                m.insert("weighted".into(), w / n);
            }
        }
        Targets::Tempo { bpm } => {
            let (mut a1, mut a2) = (0.0, 0.0);
            for (row, &t) in logits.rows().into_iter().zip(tracks) {
                let pred = (argmax(row) + 1) as f64;
                a1 += tempo_acc(pred, bpm[t].unwrap(), 1)?;
                a2 += tempo_acc(pred, bpm[t].unwrap(), 2)?;
            }
            m.insert("acc1".into(), a1 / n);
            m.insert("acc2".into(), a2 / n);
        }
        Targets::Tags { names, labels } => {
            let (mut roc, mut ap, mut used) = (0.0, 0.0, 0usize);
            for (j, name) in names.iter().enumerate() {
                let y: Vec<bool> = tracks.iter().map(|&t| labels[t].as_ref().unwrap()[j]).collect();
                if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
                    log::warn!("tag `{name}` has a single class in the test split; skipped");
                    continue;
                }
                let s: Vec<f64> = logits.column(j).iter().map(|&v| v as f64).collect();
                roc += auroc(&s, &y)?;
                ap += average_precision(&s, &y)?;
                used += 1;
            }
            if used == 0 {
                return Err(Error::Metric("no tag has both classes in the test split".into()));
            }
            m.insert("auroc".into(), roc / used as f64);
            m.insert("ap".into(), ap / used as f64);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn toy_store(n: usize, dim: usize, f: impl Fn(usize, &mut seed::Rng) -> Vec<f32>) -> EmbeddingStore {
        let mut rng = seed::rng(11);
        let chunks = (0..n)
            .map(|t| {
                let rows: Vec<f32> = (0..2).flat_map(|_| f(t, &mut rng)).collect();
                Array2::from_shape_vec((2, dim), rows).unwrap()
            })
            .collect();
        EmbeddingStore::new("toy", (0..n).collect(), chunks, vec![None; n]).unwrap()
    }

    fn quick() -> ProbeConfig {
        ProbeConfig {
            time_stretch: false,
            epochs: 30,
            ..Default::default()
        }
    }

    #[test]
    fn separable_two_class_is_perfect() {
        let store = toy_store(60, 3, |t, rng| {
            let c = (t % 2) as f32 * 4.0 - 2.0;
            (0..3).map(|_| c + 0.3 * rng.sample::<f32, _>(StandardNormal)).collect()
        });
        let targets = Targets::Class {
            n_classes: 2,
            labels: (0..60).map(|t| Some(t % 2)).collect(),
            key: false,
        };
        let r = train_probe(&store, &targets, &quick()).unwrap();
        assert_eq!(r.metrics["accuracy"], 1.0);
        assert_eq!(r, train_probe(&store, &targets, &quick()).unwrap());
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let n = 600;
        let store = toy_store(n, 8, |_, rng| (0..8).map(|_| rng.sample::<f32, _>(StandardNormal)).collect());
        let mut rng = seed::rng(5);
        let targets = Targets::Class {
            n_classes: 12,
            labels: (0..n).map(|_| Some(rng.random_range(0..12))).collect(),
            key: false,
        };
        let r = train_probe(&store, &targets, &quick()).unwrap();
        let p = 1.0 / 12.0;
        let sigma = (p * (1.0 - p) / r.n_test_tracks as f64).sqrt();
        assert!((r.metrics["accuracy"] - p).abs() < 3.0 * sigma, "{:?}", r.metrics);
    }

    #[test]
    fn missing_train_class_is_a_split_error() {
        let store = toy_store(30, 2, |t, _| vec![t as f32, 1.0]);
        let mut labels: Vec<Option<usize>> = (0..30).map(|_| Some(0)).collect();
        let split = split_tracks(30, 0).unwrap();
        labels[split.test[0]] = Some(1);
        let targets = Targets::Class {
            n_classes: 2,
            labels,
            key: false,
        };
        assert!(matches!(train_probe(&store, &targets, &quick()), Err(Error::Split(_))));
    }

    #[test]
    fn stretch_requires_stretched_embeddings() {
        let store = toy_store(30, 2, |t, _| vec![(t % 2) as f32, 1.0]);
        let targets = Targets::Class {
            n_classes: 2,
            labels: (0..30).map(|t| Some(t % 2)).collect(),
            key: false,
        };
        let cfg = ProbeConfig { time_stretch: true, ..quick() };
        assert!(matches!(train_probe(&store, &targets, &cfg), Err(Error::Parameter { .. })));
    }

    #[test]
    fn tempo_and_tag_targets() {
        let store = toy_store(40, 2, |t, _| vec![(t % 2) as f32, ((t / 2) % 2) as f32]);
        let targets = Targets::Tempo {
            bpm: (0..40).map(|t| Some(if t % 2 == 0 { 90.0 } else { 120.0 })).collect(),
        };
        let r = train_probe(&store, &targets, &quick()).unwrap();
        assert_eq!(r.metrics["acc1"], 1.0);
        let tags = Targets::Tags {
            names: vec!["a".into(), "b".into()],
            labels: (0..40).map(|t| Some(vec![t % 2 == 0, (t / 2) % 2 == 1])).collect(),
        };
        let r = train_probe(&store, &tags, &quick()).unwrap();
        assert_eq!(r.metrics["auroc"], 1.0);
        assert_eq!(r.metrics["ap"], 1.0);
    }

    #[test]
    fn stretched_tempo_targets_scale_with_rate() {
        let t = Targets::Tempo { bpm: vec![Some(100.0)] };
        assert_eq!(argmax(t.row(0, 1.2).view()) + 1, 120);
        assert_eq!(Task::parse("pitch").unwrap(), Task::PitchClass);
        assert!(Task::parse("loudness").is_err());
    }
}
