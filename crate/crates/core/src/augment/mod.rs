//! Stochastic nuclear augmentation chain with per-view tracking.
//!
//! A chain has a base list (transforms every embedding space must ignore) and
//! a variant list (transforms that each get a dedicated, sensitive space).
//! Every view records the realized parameters of what was applied and a
//! binary flag per variant augmentation.

pub mod dsp;
pub mod vocoder;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed;

pub use vocoder::{pitch_shift, time_stretch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Gain,
    PolarityInversion,
    ColoredNoise,
    Lowpass,
    Highpass,
    Bandpass,
    Bandcut,
    Reverb,
    Distortion,
    PitchShift,
    TimeStretch,
}

impl AugKind {
    /// Names of the continuous parameters, in the order of `ranges`.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            AugKind::Gain => &["db"],
            AugKind::PolarityInversion => &[],
            AugKind::ColoredNoise => &["snr_db", "decay_db_per_octave"],
            AugKind::Lowpass | AugKind::Highpass => &["cutoff_hz"],
            AugKind::Bandpass | AugKind::Bandcut => &["center_hz", "bandwidth_fraction"],
            AugKind::Reverb => &["room_size", "wet"],
            AugKind::Distortion => &["drive_db"],
            AugKind::PitchShift => &["semitones"],
            AugKind::TimeStretch => &["rate"],
        }
    }

    pub fn is_filter(self) -> bool {
        matches!(self, AugKind::Lowpass | AugKind::Highpass | AugKind::Bandpass | AugKind::Bandcut)
    }

    /// Superscript used to name the dedicated subspace of a variant kind.
    pub fn space_tag(self) -> &'static str {
        match self {
            AugKind::PitchShift => "p",
            AugKind::TimeStretch => "t",
            AugKind::Gain => "gain",
            AugKind::PolarityInversion => "polarity",
            AugKind::ColoredNoise => "noise",
            AugKind::Lowpass => "lowpass",
            AugKind::Highpass => "highpass",
            AugKind::Bandpass => "bandpass",
            AugKind::Bandcut => "bandcut",
            AugKind::Reverb => "reverb",
            AugKind::Distortion => "distortion",
        }
    }
}

/// Realized parameters of one applied augmentation. Randomized transforms
/// carry their own seed so that a record fully determines the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugParams {
    Gain { db: f64 },
    PolarityInversion,
    ColoredNoise { snr_db: f64, decay_db_per_octave: f64, seed: u64 },
    Lowpass { cutoff_hz: f64 },
    Highpass { cutoff_hz: f64 },
    Bandpass { center_hz: f64, bandwidth_fraction: f64 },
    Bandcut { center_hz: f64, bandwidth_fraction: f64 },
    Reverb { room_size: f64, wet: f64, seed: u64 },
    Distortion { drive_db: f64 },
    PitchShift { semitones: f64 },
    TimeStretch { rate: f64 },
}

impl AugParams {
    pub fn kind(&self) -> AugKind {
        match self {
            AugParams::Gain { .. } => AugKind::Gain,
            AugParams::PolarityInversion => AugKind::PolarityInversion,
            AugParams::ColoredNoise { .. } => AugKind::ColoredNoise,
            AugParams::Lowpass { .. } => AugKind::Lowpass,
            AugParams::Highpass { .. } => AugKind::Highpass,
            AugParams::Bandpass { .. } => AugKind::Bandpass,
            AugParams::Bandcut { .. } => AugKind::Bandcut,
            AugParams::Reverb { .. } => AugKind::Reverb,
            AugParams::Distortion { .. } => AugKind::Distortion,
            AugParams::PitchShift { .. } => AugKind::PitchShift,
            AugParams::TimeStretch { .. } => AugKind::TimeStretch,
        }
    }

    fn from_values(kind: AugKind, v: &[f64], seed: u64) -> Self {
        match kind {
            AugKind::Gain => AugParams::Gain { db: v[0] },
            AugKind::PolarityInversion => AugParams::PolarityInversion,
            AugKind::ColoredNoise => AugParams::ColoredNoise { snr_db: v[0], decay_db_per_octave: v[1], seed },
            AugKind::Lowpass => AugParams::Lowpass { cutoff_hz: v[0] },
            AugKind::Highpass => AugParams::Highpass { cutoff_hz: v[0] },
            AugKind::Bandpass => AugParams::Bandpass { center_hz: v[0], bandwidth_fraction: v[1] },
            AugKind::Bandcut => AugParams::Bandcut { center_hz: v[0], bandwidth_fraction: v[1] },
            AugKind::Reverb => AugParams::Reverb { room_size: v[0], wet: v[1], seed },
            AugKind::Distortion => AugParams::Distortion { drive_db: v[0] },
            AugKind::PitchShift => AugParams::PitchShift { semitones: v[0] },
            AugKind::TimeStretch => AugParams::TimeStretch { rate: v[0] },
        }
    }

    /// Physical validity, independent of any configured training range.
    fn validate(&self) -> Result<()> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, "must be finite"))
            }
        };
        let in_band = |name: &str, v: f64| {
            if v > 0.0 && v < nyquist {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} Hz outside (0, {nyquist})")))
            }
        };
        match *self {
            AugParams::Gain { db } => finite("db", db),
            AugParams::PolarityInversion => Ok(()),
            AugParams::ColoredNoise { snr_db, decay_db_per_octave, .. } => {
                finite("snr_db", snr_db)?;
                finite("decay_db_per_octave", decay_db_per_octave)
            }
            AugParams::Lowpass { cutoff_hz } | AugParams::Highpass { cutoff_hz } => in_band("cutoff_hz", cutoff_hz),
            AugParams::Bandpass { center_hz, bandwidth_fraction } | AugParams::Bandcut { center_hz, bandwidth_fraction } => {
                in_band("center_hz", center_hz)?;
                if bandwidth_fraction > 0.0 && bandwidth_fraction.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("bandwidth_fraction", "must be positive"))
                }
            }
            AugParams::Reverb { room_size, wet, .. } => {
                if !(room_size > 0.0 && room_size <= 10.0) {
                    return Err(Error::param("room_size", format!("{room_size} outside (0, 10]")));
                }
                if !(0.0..=1.0).contains(&wet) {
                    return Err(Error::param("wet", format!("{wet} outside [0, 1]")));
                }
                Ok(())
            }
            AugParams::Distortion { drive_db } => {
                if drive_db.is_finite() && drive_db >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::param("drive_db", "must be finite and non-negative"))
                }
            }
            AugParams::PitchShift { semitones } => {
                if semitones.is_finite() && semitones.abs() <= 48.0 {
                    Ok(())
                } else {
                    Err(Error::param("semitones", "must be finite and within +-48"))
                }
            }
            AugParams::TimeStretch { rate } => {
                if rate.is_finite() && rate > 0.0 && rate <= 8.0 {
                    Ok(())
                } else {
                    Err(Error::param("rate", format!("{rate} outside (0, 8]")))
                }
            }
        }
    }
}

/// Apply a single augmentation. Output length always equals input length.
pub fn apply_one(clip: &AudioClip, params: &AugParams) -> Result<AudioClip> {
    clip.check_rate()?;
    params.validate()?;
    let x = &clip.samples;
    let sr = clip.sample_rate;
    let y = match *params {
        AugParams::Gain { db } => dsp::gain(x, db),
        AugParams::PolarityInversion => dsp::invert_polarity(x),
        AugParams::ColoredNoise { snr_db, decay_db_per_octave, seed } => {
            dsp::colored_noise(x, snr_db, decay_db_per_octave, sr, seed)
        }
        AugParams::Lowpass { cutoff_hz } => dsp::lowpass(x, cutoff_hz, sr),
        AugParams::Highpass { cutoff_hz } => dsp::highpass(x, cutoff_hz, sr),
        AugParams::Bandpass { center_hz, bandwidth_fraction } => dsp::bandpass(x, center_hz, bandwidth_fraction, sr),
        AugParams::Bandcut { center_hz, bandwidth_fraction } => dsp::bandcut(x, center_hz, bandwidth_fraction, sr),
        AugParams::Reverb { room_size, wet, seed } => dsp::reverb(x, room_size, wet, sr, seed),
        AugParams::Distortion { drive_db } => dsp::distortion(x, drive_db),
        AugParams::PitchShift { semitones } => pitch_shift(x, semitones),
        AugParams::TimeStretch { rate } => time_stretch(x, rate),
    };
    Ok(clip.replace_samples(y))
}

/// One entry of a chain: kind, application probability and the uniform
/// sampling range of each continuous parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearAugmentation {
    pub kind: AugKind,
    pub probability: f64,
    #[serde(default)]
    pub ranges: Vec<[f64; 2]>,
}

impl NuclearAugmentation {
    pub fn new(kind: AugKind, probability: f64, ranges: &[[f64; 2]]) -> Self {
        NuclearAugmentation {
            kind,
            probability,
            ranges: ranges.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::param(
                format!("{:?}.probability", self.kind),
                format!("{} outside [0, 1]", self.probability),
            ));
        }
        let names = self.kind.param_names();
        if self.ranges.len() != names.len() {
            return Err(Error::param(
                format!("{:?}.ranges", self.kind),
                format!("expected {} ranges ({names:?}), got {}", names.len(), self.ranges.len()),
            ));
        }
        for (r, name) in self.ranges.iter().zip(names) {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::param(format!("{:?}.{name}", self.kind), format!("invalid range {r:?}")));
            }
        }
        Ok(())
    }

    /// Draw the fire decision and parameters. Always consumes the same number
    /// of random values regardless of the outcome.
    fn draw(&self, rng: &mut seed::Rng) -> (bool, AugParams) {
        let fired = rng.random::<f64>() < self.probability;
        let values: Vec<f64> = self
            .ranges
            .iter()
            .map(|r| {
                let u: f64 = rng.random();
                r[0] + (r[1] - r[0]) * u
            })
            .collect();
        let seed = rng.random::<u64>();
        (fired, AugParams::from_values(self.kind, &values, seed))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub base: Vec<NuclearAugmentation>,
    pub variant: Vec<NuclearAugmentation>,
    pub views_per_anchor: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        use AugKind::*;
        ChainConfig {
            base: vec![
                NuclearAugmentation::new(Gain, 0.7, &[[-15.0, 5.0]]),
                NuclearAugmentation::new(PolarityInversion, 0.8, &[]),
                NuclearAugmentation::new(ColoredNoise, 0.8, &[[3.0, 30.0], [-2.0, 2.0]]),
                NuclearAugmentation::new(Lowpass, 0.5, &[[150.0, 7000.0]]),
                NuclearAugmentation::new(Highpass, 0.5, &[[200.0, 2400.0]]),
                NuclearAugmentation::new(Bandpass, 0.5, &[[200.0, 4000.0], [0.5, 2.0]]),
                NuclearAugmentation::new(Bandcut, 0.3, &[[200.0, 4000.0], [0.5, 2.0]]),
                NuclearAugmentation::new(Reverb, 0.5, &[[0.2, 1.0], [0.0, 1.0]]),
                NuclearAugmentation::new(Distortion, 0.6, &[[1.0, 10.0]]),
            ],
            variant: vec![
                NuclearAugmentation::new(PitchShift, 0.5, &[[-4.0, 4.0]]),
                NuclearAugmentation::new(TimeStretch, 0.5, &[[0.7, 1.3]]),
            ],
            views_per_anchor: 4,
        }
    }
}

impl ChainConfig {
    /// Default base chain with only the listed variant augmentations kept.
    pub fn with_variants(kinds: &[AugKind]) -> Self {
        let mut cfg = Self::default();
        cfg.variant.retain(|a| kinds.contains(&a.kind));
        cfg
    }

    /// Every probability set to zero: the chain is the identity.
    pub fn disabled() -> Self {
        let mut cfg = Self::default();
        cfg.base.iter_mut().chain(cfg.variant.iter_mut()).for_each(|a| a.probability = 0.0);
        cfg
    }

    /// Number of variant augmentations (K).
    pub fn k(&self) -> usize {
        self.variant.len()
    }

    pub fn variant_kinds(&self) -> Vec<AugKind> {
        self.variant.iter().map(|a| a.kind).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for a in self.base.iter().chain(&self.variant) {
            a.validate()?;
        }
        for (i, a) in self.variant.iter().enumerate() {
            if self.variant[..i].iter().any(|b| b.kind == a.kind) {
                return Err(Error::param("variant", format!("{:?} listed twice", a.kind)));
            }
            if self.base.iter().any(|b| b.kind == a.kind) {
                return Err(Error::param("variant", format!("{:?} is also a base augmentation", a.kind)));
            }
        }
        if self.views_per_anchor < 2 {
            return Err(Error::param("views_per_anchor", "need at least 2 views per anchor"));
        }
        Ok(())
    }

    /// Realize one view's augmentation plan. Variant augmentations come
    /// first in list order, then the base chain; among the filters whose
    /// own draw fired, exactly one is chosen uniformly.
    pub fn sample_plan(&self, rng: &mut seed::Rng) -> AugmentationRecord {
        let mut applied = Vec::new();
        let mut variant_flags = Vec::with_capacity(self.variant.len());
        for aug in &self.variant {
            let (fired, params) = aug.draw(rng);
            variant_flags.push(fired);
            if fired {
                applied.push(params);
            }
        }
        let draws: Vec<(bool, AugParams)> = self.base.iter().map(|a| a.draw(rng)).collect();
        let filter_pick: f64 = rng.random();
        let fired_filters: Vec<usize> = draws
            .iter()
            .enumerate()
            .filter(|(_, (fired, p))| *fired && p.kind().is_filter())
            .map(|(i, _)| i)
            .collect();
        let chosen_filter = (!fired_filters.is_empty())
            .then(|| fired_filters[((filter_pick * fired_filters.len() as f64) as usize).min(fired_filters.len() - 1)]);
        for (i, (fired, params)) in draws.into_iter().enumerate() {
            if !fired {
                continue;
            }
            if params.kind().is_filter() && Some(i) != chosen_filter {
                continue;
            }
            applied.push(params);
        }
        AugmentationRecord { variant_flags, applied }
    }
}

/// What happened to one view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    /// t_i: one flag per variant augmentation, in chain order.
    pub variant_flags: Vec<bool>,
    /// Every applied augmentation in application order.
    pub applied: Vec<AugParams>,
}

impl AugmentationRecord {
    pub fn applied_kinds(&self) -> Vec<AugKind> {
        self.applied.iter().map(AugParams::kind).collect()
    }
}

/// Run the stochastic chain on a clip. `(clip, config, rng_seed)` fully
/// determines the output and the record.
pub fn apply_chain(clip: &AudioClip, config: &ChainConfig, rng_seed: u64) -> Result<(AudioClip, AugmentationRecord)> {
    config.validate()?;
    let mut rng = seed::rng(rng_seed);
    let record = config.sample_plan(&mut rng);
    let out = apply_record(clip, &record)?;
    Ok((out, record))
}

/// Replay a record's augmentations in order.
pub fn apply_record(clip: &AudioClip, record: &AugmentationRecord) -> Result<AudioClip> {
    let mut out = clip.clone();
    for params in &record.applied {
        out = apply_one(&out, params)?;
    }
    Ok(out)
}
