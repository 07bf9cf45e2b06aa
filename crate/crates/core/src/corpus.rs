//! Deterministic synthetic corpus with exact pitch, key, tempo and tag labels.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{peak_normalize, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed;

pub const F0_MIN: f64 = 55.0;
pub const F0_MAX: f64 = 3520.0;
pub const TEMPO_MIN: f64 = 50.0;
pub const TEMPO_MAX: f64 = 250.0;
pub const KEY_CLASSES: usize = 24;
pub const PITCH_CLASSES: usize = 12;

const PEAK_TARGET: f32 = 0.95;
const MAX_HARMONICS: usize = 10;
const HARMONIC_CEILING_HZ: f64 = 4000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    HarmonicTone,
    Chord,
    ClickTrack,
    NoiseTexture,
    Mixture,
}

impl ClipKind {
    pub const ALL: [ClipKind; 5] = [
        ClipKind::HarmonicTone,
        ClipKind::Chord,
        ClipKind::ClickTrack,
        ClipKind::NoiseTexture,
        ClipKind::Mixture,
    ];

    pub fn is_tonal(self) -> bool {
        matches!(self, ClipKind::HarmonicTone | ClipKind::Chord | ClipKind::Mixture)
    }

    pub fn is_rhythmic(self) -> bool {
        matches!(self, ClipKind::ClickTrack | ClipKind::Mixture)
    }
}

/// Everything needed to synthesize one clip, and its ground-truth labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub kind: ClipKind,
    /// Fundamental (tonic for chords) in Hz.
    pub f0: Option<f64>,
    /// 0..12 major tonics C..B, 12..24 minor tonics C..B.
    pub key_class: Option<u8>,
    pub tempo: Option<f64>,
    pub tags: BTreeSet<String>,
    pub duration: f64,
    pub seed: u64,
    /// Harmonic amplitude decay exponent: harmonic h has amplitude h^-brightness.
    pub brightness: f64,
    /// Noise amplitude scale: the whole signal for noise textures, the
    /// background bed for mixtures.
    pub noise_level: f64,
}

impl ClipSpec {
    pub fn tone(f0: f64, duration: f64, seed: u64) -> Self {
        Self::bare(ClipKind::HarmonicTone, duration, seed).with_f0(f0)
    }

    pub fn clicks(tempo: f64, duration: f64, seed: u64) -> Self {
        ClipSpec {
            tempo: Some(tempo),
            ..Self::bare(ClipKind::ClickTrack, duration, seed)
        }
        .with_derived_tags()
    }

    pub fn chord(key_class: u8, octave: i32, duration: f64, seed: u64) -> Self {
        let midi = 12 * (octave + 1) + (key_class % 12) as i32;
        ClipSpec {
            key_class: Some(key_class),
            ..Self::bare(ClipKind::Chord, duration, seed).with_f0(midi_to_hz(midi as f64))
        }
        .with_derived_tags()
    }

    pub fn noise(noise_level: f64, duration: f64, seed: u64) -> Self {
        ClipSpec {
            noise_level,
            ..Self::bare(ClipKind::NoiseTexture, duration, seed)
        }
        .with_derived_tags()
    }

    fn bare(kind: ClipKind, duration: f64, seed: u64) -> Self {
        ClipSpec {
            kind,
            f0: None,
            key_class: None,
            tempo: None,
            tags: BTreeSet::new(),
            duration,
            seed,
            brightness: 1.0,
            noise_level: 0.0,
        }
    }

    fn with_f0(mut self, f0: f64) -> Self {
        self.f0 = Some(f0);
        self.with_derived_tags()
    }

    /// Recompute `tags` from the other fields.
    pub fn with_derived_tags(mut self) -> Self {
        self.tags = derive_tags(&self);
        self
    }

    /// Pitch class (C = 0) of the fundamental, for tonal kinds.
    pub fn pitch_class(&self) -> Option<u8> {
        if !self.kind.is_tonal() {
            return None;
        }
        self.f0.map(hz_to_pitch_class)
    }

    pub fn key(&self) -> Option<u8> {
        if !self.kind.is_tonal() {
            return None;
        }
        self.key_class
    }

    pub fn tempo_bpm(&self) -> Option<f64> {
        if !self.kind.is_rhythmic() {
            return None;
        }
        self.tempo
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0 && self.duration <= 600.0) {
            return Err(Error::param("duration", format!("{} s outside (0, 600]", self.duration)));
        }
        if self.kind.is_tonal() {
            let f0 = self
                .f0
                .ok_or_else(|| Error::param("f0", format!("required for {:?}", self.kind)))?;
            if !(F0_MIN..=F0_MAX).contains(&f0) {
                return Err(Error::param("f0", format!("{f0} Hz outside [{F0_MIN}, {F0_MAX}]")));
            }
        }
        if self.kind == ClipKind::Chord && self.key_class.is_none() {
            return Err(Error::param("key_class", "required for chord clips"));
        }
        if let Some(k) = self.key_class {
            if k as usize >= KEY_CLASSES {
                return Err(Error::param("key_class", format!("{k} outside 0..24")));
            }
        }
        if self.kind.is_rhythmic() {
            let t = self
                .tempo
                .ok_or_else(|| Error::param("tempo", format!("required for {:?}", self.kind)))?;
            if !(TEMPO_MIN..=TEMPO_MAX).contains(&t) {
                return Err(Error::param("tempo", format!("{t} BPM outside [{TEMPO_MIN}, {TEMPO_MAX}]")));
            }
        }
        if !(self.brightness.is_finite() && self.brightness > 0.0 && self.brightness <= 4.0) {
            return Err(Error::param("brightness", format!("{} outside (0, 4]", self.brightness)));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::param("noise_level", format!("{} outside [0, 1]", self.noise_level)));
        }
        Ok(())
    }
}

fn derive_tags(spec: &ClipSpec) -> BTreeSet<String> {
    let mut tags = BTreeSet::new();
    if spec.kind.is_tonal() {
        tags.insert("tonal".to_string());
        if spec.brightness < 1.0 {
            tags.insert("bright".to_string());
        }
    }
    if spec.kind.is_rhythmic() {
        tags.insert("percussive".to_string());
    }
    if spec.noise_level >= 0.3 {
        tags.insert("noisy".to_string());
    }
    if spec.kind.is_tonal() && spec.key_class.is_some_and(|k| k >= 12) {
        tags.insert("minor".to_string());
    }
    tags
}

/// Tag vocabulary in a fixed order.
pub const TAGS: [&str; 5] = ["tonal", "bright", "percussive", "noisy", "minor"];

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

pub fn hz_to_pitch_class(f0: f64) -> u8 {
    let midi = 69.0 + 12.0 * (f0 / 440.0).log2();
    (midi.round() as i64).rem_euclid(12) as u8
}

/// Synthesize one clip. Identical specs give bit-identical buffers.
pub fn generate_clip(spec: &ClipSpec) -> Result<AudioClip> {
    spec.validate()?;
    let n = (spec.duration * SAMPLE_RATE as f64).round() as usize;
    let mut rng = seed::rng(spec.seed);
    let mut out = vec![0.0f64; n];

    match spec.kind {
        ClipKind::HarmonicTone => {
            add_tone(&mut out, spec.f0.unwrap(), spec.brightness, 1.0, &mut rng);
        }
        ClipKind::Chord => add_triad(&mut out, spec, &mut rng),
        ClipKind::ClickTrack => add_clicks(&mut out, spec.tempo.unwrap(), 1.0, &mut rng),
        ClipKind::NoiseTexture => add_noise(&mut out, spec.noise_level, &mut rng),
        ClipKind::Mixture => {
            let mut tonal = vec![0.0f64; n];
            if spec.key_class.is_some() {
                add_triad(&mut tonal, spec, &mut rng);
            } else {
                add_tone(&mut tonal, spec.f0.unwrap(), spec.brightness, 1.0, &mut rng);
            }
            scale_to_rms(&mut tonal, 0.25);
            let mut clicks = vec![0.0f64; n];
            add_clicks(&mut clicks, spec.tempo.unwrap(), 0.9, &mut rng);
            let mut bed = vec![0.0f64; n];
            add_noise(&mut bed, 1.0, &mut rng);
            scale_to_rms(&mut bed, 0.25 * spec.noise_level);
            for i in 0..n {
                out[i] = tonal[i] + clicks[i] + bed[i];
            }
        }
    }

    let mut samples: Vec<f32> = out.iter().map(|&v| v as f32).collect();
    peak_normalize(&mut samples, PEAK_TARGET);
    Ok(AudioClip::with_labels(samples, spec.clone()))
}

fn scale_to_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = target / rms;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Sum of harmonics with h^-brightness amplitudes and random phases.
/// Uses a rotating phasor per harmonic; renormalized every block to stop drift.
fn add_tone(out: &mut [f64], f0: f64, brightness: f64, gain: f64, rng: &mut seed::Rng) {
    let sr = SAMPLE_RATE as f64;
    for h in 1..=MAX_HARMONICS {
        let f = f0 * h as f64;
        if f > HARMONIC_CEILING_HZ && h > 1 {
            break;
        }
        let amp = gain * (h as f64).powf(-brightness);
        let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let w = std::f64::consts::TAU * f / sr;
        let (ws, wc) = w.sin_cos();
        let (mut s, mut c) = phase.sin_cos();
        for (i, o) in out.iter_mut().enumerate() {
            *o += amp * s;
            let ns = s * wc + c * ws;
            let nc = c * wc - s * ws;
            s = ns;
            c = nc;
            if i % 4096 == 4095 {
                let r = (s * s + c * c).sqrt();
                s /= r;
                c /= r;
            }
        }
    }
}

fn add_triad(out: &mut [f64], spec: &ClipSpec, rng: &mut seed::Rng) {
    let root = spec.f0.unwrap();
    let minor = spec.key_class.is_some_and(|k| k >= 12);
    let third = if minor { 3.0 } else { 4.0 };
    add_tone(out, root, spec.brightness, 1.0, rng);
    add_tone(out, root * 2f64.powf(third / 12.0), spec.brightness, 0.7, rng);
    add_tone(out, root * 2f64.powf(7.0 / 12.0), spec.brightness, 0.7, rng);
}

/// Identical damped bursts (tick plus low thump) at round(offset + n * 60/tempo) seconds.
fn add_clicks(out: &mut [f64], tempo: f64, peak: f64, rng: &mut seed::Rng) {
    let sr = SAMPLE_RATE as f64;
    let burst_len = (0.04 * sr) as usize;
    let tau = 0.003 * sr;
    let tau_kick = 0.012 * sr;
    let w = std::f64::consts::TAU * 2000.0 / sr;
    let w_kick = std::f64::consts::TAU * 110.0 / sr;
    // A bright 2 kHz tick over a low 110 Hz thump, so beats survive both
    // strong lowpass and strong highpass filtering.
    let mut burst: Vec<f64> = (0..burst_len)
        .map(|i| {
            let t = i as f64;
            let noise: f64 = StandardNormal.sample(rng);
            let tick = (-t / tau).exp() * (0.7 * (w * t).sin() + 0.3 * noise);
            let kick = 0.6 * (-t / tau_kick).exp() * (w_kick * t).sin();
            tick + kick
        })
        .collect();
    let bpeak = burst.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    burst.iter_mut().for_each(|v| *v *= peak / bpeak);

    let period = 60.0 / tempo * sr;
    let offset = rng.random::<f64>() * period;
    let mut k = 0usize;
    loop {
        let start = (offset + k as f64 * period).round() as usize;
        if start >= out.len() {
            break;
        }
        for (j, b) in burst.iter().enumerate() {
            if let Some(o) = out.get_mut(start + j) {
                *o += b;
            }
        }
        k += 1;
    }
}

/// Gaussian noise through a one-pole lowpass (a soft, slightly dark texture).
fn add_noise(out: &mut [f64], level: f64, rng: &mut seed::Rng) {
    if level == 0.0 {
        return;
    }
    let a = 0.6;
    let mut y = 0.0f64;
    for o in out.iter_mut() {
        let x: f64 = StandardNormal.sample(rng);
        y = a * y + (1.0 - a) * x;
        *o += level * y;
    }
}

/// Corpus layout and label distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub size: usize,
    pub master_seed: u64,
    pub duration: f64,
    /// Relative weights, in [`ClipKind::ALL`] order.
    pub kind_weights: [f64; 5],
    /// Fundamentals are equal-tempered MIDI notes drawn uniformly from this range.
    pub midi_low: u8,
    pub midi_high: u8,
    /// Tempi drawn uniformly from `tempo_min, tempo_min + tempo_step, ..., tempo_max`.
    pub tempo_min: f64,
    pub tempo_max: f64,
    pub tempo_step: f64,
    pub minor_probability: f64,
    pub brightness_range: [f64; 2],
    pub noise_level_range: [f64; 2],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            size: 240,
            master_seed: 0,
            duration: 12.0,
            kind_weights: [0.1, 0.1, 0.1, 0.05, 0.65],
            midi_low: 45,
            midi_high: 80,
            tempo_min: 60.0,
            tempo_max: 180.0,
            tempo_step: 10.0,
            minor_probability: 0.5,
            brightness_range: [0.6, 1.6],
            noise_level_range: [0.0, 0.6],
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::param("size", "corpus size must be positive"));
        }
        if self.kind_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.kind_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::param("kind_weights", "weights must be non-negative with a positive sum"));
        }
        if self.midi_low > self.midi_high {
            return Err(Error::param("midi_low", "midi_low > midi_high"));
        }
        for midi in [self.midi_low, self.midi_high] {
            let f = midi_to_hz(midi as f64);
            if !(F0_MIN..=F0_MAX).contains(&f) {
                return Err(Error::param("midi range", format!("note {midi} ({f:.1} Hz) outside [{F0_MIN}, {F0_MAX}]")));
            }
        }
        if !(self.tempo_min >= TEMPO_MIN && self.tempo_max <= TEMPO_MAX && self.tempo_min <= self.tempo_max) {
            return Err(Error::param("tempo range", format!("[{}, {}] not within [{TEMPO_MIN}, {TEMPO_MAX}]", self.tempo_min, self.tempo_max)));
        }
        if !(self.tempo_step > 0.0) {
            return Err(Error::param("tempo_step", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.minor_probability) {
            return Err(Error::param("minor_probability", "must be in [0, 1]"));
        }
        if self.brightness_range[0] > self.brightness_range[1] || self.noise_level_range[0] > self.noise_level_range[1] {
            return Err(Error::param("ranges", "min > max"));
        }
        Ok(())
    }

    fn tempo_grid(&self) -> Vec<f64> {
        let steps = ((self.tempo_max - self.tempo_min) / self.tempo_step + 1e-9).floor() as usize;
        (0..=steps).map(|i| self.tempo_min + i as f64 * self.tempo_step).collect()
    }
}

/// Draw the clip specs of a corpus (no audio synthesis).
pub fn sample_specs(config: &CorpusConfig) -> Result<Vec<ClipSpec>> {
    config.validate()?;
    let total: f64 = config.kind_weights.iter().sum();
    let tempi = config.tempo_grid();
    Ok((0..config.size)
        .map(|index| {
            let mut rng = seed::rng_for(config.master_seed, &[index as u64]);
            let mut u = rng.random::<f64>() * total;
            let mut kind = ClipKind::Mixture;
            for (k, w) in ClipKind::ALL.iter().zip(config.kind_weights) {
                if w > 0.0 && u < w {
                    kind = *k;
                    break;
                }
                u -= w;
            }
            let midi = rng.random_range(config.midi_low..=config.midi_high);
            let minor = rng.random::<f64>() < config.minor_probability;
            let tempo = tempi[rng.random_range(0..tempi.len())];
            let brightness = lerp(config.brightness_range, rng.random());
            let noise_level = lerp(config.noise_level_range, rng.random());
            let clip_seed = rng.random::<u64>();

            let tonal = kind.is_tonal();
            let keyed = matches!(kind, ClipKind::Chord | ClipKind::Mixture);
            ClipSpec {
                kind,
                f0: tonal.then(|| midi_to_hz(midi as f64)),
                key_class: keyed.then(|| midi % 12 + if minor { 12 } else { 0 }),
                tempo: kind.is_rhythmic().then_some(tempo),
                tags: BTreeSet::new(),
                duration: config.duration,
                seed: clip_seed,
                brightness,
                noise_level: if kind == ClipKind::NoiseTexture { noise_level.max(0.05) } else { noise_level },
            }
            .with_derived_tags()
        })
        .collect())
}

fn lerp(range: [f64; 2], u: f64) -> f64 {
    range[0] + (range[1] - range[0]) * u
}

/// Generate a whole corpus. A pure function of `config`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<AudioClip>> {
    sample_specs(config)?.par_iter().map(generate_clip).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    index: usize,
    path: String,
    #[serde(flatten)]
    spec: ClipSpec,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Write `manifest.jsonl` plus one 16-bit WAV per clip under `dir`.
pub fn write_corpus(dir: &Path, clips: &[AudioClip]) -> Result<()> {
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir)?;
    let mut manifest = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    for (index, clip) in clips.iter().enumerate() {
        let rel = format!("wav/clip_{index:05}.wav");
        clip.write_wav(&dir.join(&rel))?;
        let spec = clip
            .labels
            .clone()
            .ok_or_else(|| Error::param("labels", format!("clip {index} has no spec")))?;
        let record = ManifestRecord { index, path: rel, spec };
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(())
}

/// Load a corpus written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<Vec<AudioClip>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let reader = BufReader::new(File::open(&path)?);
    let mut clips = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line)?;
        let mut clip = AudioClip::read_wav(&dir.join(&record.path))?;
        clip.labels = Some(record.spec);
        clips.push(clip);
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{dominant_frequency, estimate_tempo};

    #[test]
    fn tone_has_peak_at_f0() {
        let clip = generate_clip(&ClipSpec::tone(440.0, 3.0, 7)).unwrap();
        assert_eq!(clip.len(), 48_000);
        let bin_hz = SAMPLE_RATE as f64 / clip.len() as f64;
        let f = dominant_frequency(&clip.samples, SAMPLE_RATE);
        assert!((f - 440.0).abs() <= bin_hz, "peak at {f}");
        assert!(clip.peak() <= 1.0);
    }

    #[test]
    fn silent_noise_texture_is_all_zero() {
        let clip = generate_clip(&ClipSpec::noise(0.0, 1.0, 3)).unwrap();
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn click_track_autocorrelation_peaks_at_beat_period() {
        let clip = generate_clip(&ClipSpec::clicks(120.0, 3.0, 5)).unwrap();
        // Raw autocorrelation by brute force over the plausible lag window.
        let x = &clip.samples;
        let (mut best, mut best_lag) = (f64::MIN, 0);
        for lag in 1600..24_000 {
            let r: f64 = x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            if r > best {
                best = r;
                best_lag = lag;
            }
        }
        assert!((best_lag as i64 - 8000).abs() <= 1, "lag {best_lag}");
    }

    #[test]
    fn out_of_range_fields_are_rejected() {
        assert_eq!(generate_clip(&ClipSpec::tone(20.0, 1.0, 0)).unwrap_err().kind(), "parameter");
        assert_eq!(generate_clip(&ClipSpec::clicks(300.0, 1.0, 0)).unwrap_err().kind(), "parameter");
        let mut chord = ClipSpec::chord(3, 4, 1.0, 0);
        chord.key_class = Some(24);
        assert!(generate_clip(&chord).is_err());
    }

    #[test]
    fn identical_specs_are_bit_identical() {
        let spec = ClipSpec::chord(14, 3, 2.0, 99);
        assert_eq!(generate_clip(&spec).unwrap(), generate_clip(&spec).unwrap());
    }

    #[test]
    fn corpus_size_and_determinism() {
        let cfg = CorpusConfig { size: 1, duration: 1.0, ..Default::default() };
        assert_eq!(generate_corpus(&cfg).unwrap().len(), 1);
        let cfg = CorpusConfig { size: 6, duration: 1.0, master_seed: 4, ..Default::default() };
        assert_eq!(generate_corpus(&cfg).unwrap(), generate_corpus(&cfg).unwrap());
        let zero = CorpusConfig { size: 0, ..Default::default() };
        assert!(generate_corpus(&zero).is_err());
    }

    #[test]
    fn pitch_classes_within_binomial_bounds() {
        let cfg = CorpusConfig {
            size: 200,
            kind_weights: [1.0, 0.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        let specs = sample_specs(&cfg).unwrap();
        let mut counts = [0usize; 12];
        for s in &specs {
            counts[s.pitch_class().unwrap() as usize] += 1;
        }
        // n p +- 3 sqrt(n p (1-p)), p = 1/12
        let (n, p) = (200.0, 1.0 / 12.0);
        let sigma = (n * p * (1.0 - p) as f64).sqrt();
        for c in counts {
            assert!((c as f64 - n * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn label_fidelity_on_generated_corpus() {
        let cfg = CorpusConfig { size: 12, duration: 3.0, master_seed: 21, kind_weights: [1.0, 1.0, 1.0, 0.5, 1.0], ..Default::default() };
        for clip in generate_corpus(&cfg).unwrap() {
            let spec = clip.labels.as_ref().unwrap();
            if spec.kind.is_tonal() && !spec.kind.is_rhythmic() {
                let f = dominant_frequency(&clip.samples, SAMPLE_RATE);
                let f0 = spec.f0.unwrap();
                assert!((f / f0 - 1.0).abs() < 0.01, "{:?}: {f} vs {f0}", spec.kind);
            }
            // Mixtures are excluded: beating triad partials add envelope periodicities.
            if let (ClipKind::ClickTrack, Some(t)) = (spec.kind, spec.tempo_bpm()) {
                let est = estimate_tempo(&clip.samples, SAMPLE_RATE);
                assert!((est / t - 1.0).abs() < 0.02, "{:?}: {est} vs {t}", spec.kind);
            }
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig { size: 3, duration: 0.5, ..Default::default() };
        let clips = generate_corpus(&cfg).unwrap();
        write_corpus(dir.path(), &clips).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].labels, clips[1].labels);
    }

    #[test]
    fn tags_follow_fields() {
        let spec = ClipSpec::chord(15, 3, 1.0, 0);
        assert!(spec.tags.contains("minor") && spec.tags.contains("tonal"));
        assert!(!ClipSpec::clicks(100.0, 1.0, 0).tags.contains("tonal"));
        assert_eq!(hz_to_pitch_class(261.63), 0);
        assert_eq!(hz_to_pitch_class(440.0), 9);
    }
}
