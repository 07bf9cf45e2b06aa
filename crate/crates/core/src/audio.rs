use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ClipSpec;
use crate::error::{Error, Result};

/// The only sample rate used anywhere in the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;
/// Model input chunk length: 3 s.
pub const CHUNK_SECONDS: f64 = 3.0;
pub const CHUNK_SAMPLES: usize = 48_000;

/// Mono audio at [`SAMPLE_RATE`] with optional provenance labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub labels: Option<ClipSpec>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>) -> Self {
        AudioClip {
            samples,
            sample_rate: SAMPLE_RATE,
            labels: None,
        }
    }

    pub fn with_labels(samples: Vec<f32>, labels: ClipSpec) -> Self {
        AudioClip {
            samples,
            sample_rate: SAMPLE_RATE,
            labels: Some(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same labels, different samples.
    pub fn replace_samples(&self, samples: Vec<f32>) -> Self {
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
            labels: self.labels.clone(),
        }
    }

    /// Copy `len` samples starting at `offset`, zero-filling past the end.
    pub fn slice(&self, offset: usize, len: usize) -> Self {
        let mut out = vec![0.0; len];
        if offset < self.samples.len() {
            let end = (offset + len).min(self.samples.len());
            out[..end - offset].copy_from_slice(&self.samples[offset..end]);
        }
        self.replace_samples(out)
    }

    /// Non-overlapping 3 s chunks; a trailing partial chunk is dropped.
    pub fn chunks(&self) -> Vec<AudioClip> {
        (0..self.samples.len() / CHUNK_SAMPLES)
            .map(|c| self.slice(c * CHUNK_SAMPLES, CHUNK_SAMPLES))
            .collect()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn check_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::param(
                "sample_rate",
                format!("expected {SAMPLE_RATE} Hz, got {}", self.sample_rate),
            ));
        }
        Ok(())
    }

    /// 16-bit PCM mono WAV.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
            writer.write_sample(v)?;
        }
        writer.finalize()?;
        Ok(())
    }

    pub fn read_wav(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 {
            return Err(Error::param(
                "wav",
                format!(
                    "{}: expected 16-bit mono, got {} bit x {} channels",
                    path.display(),
                    spec.bits_per_sample,
                    spec.channels
                ),
            ));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / i16::MAX as f32))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let clip = AudioClip {
            samples,
            sample_rate: spec.sample_rate,
            labels: None,
        };
        clip.check_rate()?;
        Ok(clip)
    }
}

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Scale so the largest magnitude is exactly `target` (no-op on silence).
pub fn peak_normalize(x: &mut [f32], target: f32) {
    let peak = x.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = target / peak;
        x.iter_mut().for_each(|s| *s *= g);
    }
}

/// Center-crop or center-zero-pad to exactly `len` samples.
pub fn fit_center(x: &[f32], len: usize) -> Vec<f32> {
    use std::cmp::Ordering;
    match x.len().cmp(&len) {
        Ordering::Equal => x.to_vec(),
        Ordering::Greater => {
            let start = (x.len() - len) / 2;
            x[start..start + len].to_vec()
        }
        Ordering::Less => {
            let mut out = vec![0.0; len];
            let start = (len - x.len()) / 2;
            out[start..start + x.len()].copy_from_slice(x);
            out
        }
    }
}
