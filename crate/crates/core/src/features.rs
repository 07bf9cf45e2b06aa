//! Log-mel spectrograms.
//!
//! Frame `m` is centred at `m * hop + hop / 2`, with zeros outside the clip,
//! so a 48000-sample chunk gives exactly `48000 / hop` frames. Power is
//! normalized by the squared window sum: a full-scale sine peaks near 0.25.
//! Filters are HTK-mel triangles of unit height; at 128 bands over 0-8 kHz
//! the lowest band falls between FFT bins and stays at the floor.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, CHUNK_SAMPLES};
use crate::error::{Error, Result};
use crate::fft;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelParams {
    pub n_fft: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub epsilon: f64,
    /// Expected input length in samples.
    pub input_samples: usize,
    pub sample_rate: u32,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            n_fft: 512,
            hop: 120,
            mel_bins: 128,
            f_min: 0.0,
            f_max: 8000.0,
            epsilon: 1e-5,
            input_samples: CHUNK_SAMPLES,
            sample_rate: crate::audio::SAMPLE_RATE,
        }
    }
}

impl MelParams {
    pub fn frames(&self) -> usize {
        self.input_samples / self.hop
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 16 || !self.n_fft.is_power_of_two() {
            return Err(Error::param("n_fft", "must be a power of two >= 16"));
        }
        if self.hop == 0 || self.input_samples % self.hop != 0 {
            return Err(Error::param("hop", "must divide input_samples"));
        }
        if self.mel_bins == 0 {
            return Err(Error::param("mel_bins", "must be positive"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(Error::param("f_max", format!("need 0 <= f_min < f_max <= {nyquist}")));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// time_frames x mel_bins
    pub values: Array2<f32>,
    pub frame_rate: f64,
    pub mel_bins: usize,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }
}

/// Precomputed window and filterbank for repeated extraction.
#[derive(Clone, Debug)]
pub struct MelExtractor {
    params: MelParams,
    window: Vec<f32>,
    /// Per band: first FFT bin and its weights.
    bands: Vec<(usize, Vec<f32>)>,
    power_scale: f32,
}

impl MelExtractor {
    pub fn new(params: &MelParams) -> Result<Self> {
        params.validate()?;
        let window = fft::hann(params.n_fft);
        let wsum: f32 = window.iter().sum();
        let n_bins = params.n_fft / 2 + 1;
        let bin_hz = params.sample_rate as f64 / params.n_fft as f64;
        let (m_lo, m_hi) = (hz_to_mel(params.f_min), hz_to_mel(params.f_max));
        let edges: Vec<f64> = (0..params.mel_bins + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (params.mel_bins + 1) as f64))
            .collect();
        let bands = (0..params.mel_bins)
            .map(|b| {
                let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let weights: Vec<(usize, f32)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= c {
                            (f - lo) / (c - lo)
                        } else if f > c && f < hi {
                            (hi - f) / (hi - c)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w as f32))
                    })
                    .collect();
                let start = weights.first().map_or(0, |w| w.0);
                (start, weights.into_iter().map(|w| w.1).collect())
            })
            .collect();
        Ok(MelExtractor {
            params: params.clone(),
            window,
            bands,
            power_scale: 1.0 / (wsum * wsum),
        })
    }

    pub fn params(&self) -> &MelParams {
        &self.params
    }

    /// Linear-power mel spectrogram of a raw sample buffer.
    pub fn mel_power(&self, x: &[f32]) -> Result<Array2<f32>> {
        let p = &self.params;
        if x.len() != p.input_samples {
            return Err(Error::Shape {
                expected: format!("{} samples", p.input_samples),
                actual: format!("{} samples", x.len()),
            });
        }
        let frames = p.frames();
        let n = p.n_fft;
        let plan = fft::forward(n);
        let mut buf = vec![Complex32::new(0.0, 0.0); n];
        let mut scratch = vec![Complex32::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut power = vec![0.0f32; n / 2 + 1];
        let mut out = Array2::<f32>::zeros((frames, p.mel_bins));
        for m in 0..frames {
            let start = (m * p.hop + p.hop / 2) as isize - (n / 2) as isize;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let v = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
                *b = Complex32::new(v * self.window[i], 0.0);
            }
            plan.process_with_scratch(&mut buf, &mut scratch);
            for (k, pw) in power.iter_mut().enumerate() {
                *pw = buf[k].norm_sqr() * self.power_scale;
            }
            let mut row = out.row_mut(m);
            for (b, (start, weights)) in self.bands.iter().enumerate() {
                row[b] = weights.iter().zip(&power[*start..]).map(|(w, pw)| w * pw).sum();
            }
        }
        Ok(out)
    }

    pub fn log_mel_samples(&self, x: &[f32]) -> Result<MelSpectrogram> {
        let eps = self.params.epsilon as f32;
        let mut values = self.mel_power(x)?;
        values.mapv_inplace(|v| (v + eps).ln());
        Ok(MelSpectrogram {
            values,
            frame_rate: self.params.sample_rate as f64 / self.params.hop as f64,
            mel_bins: self.params.mel_bins,
        })
    }

    pub fn log_mel(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.sample_rate != self.params.sample_rate {
            return Err(Error::param(
                "sample_rate",
                format!("expected {} Hz, got {}", self.params.sample_rate, clip.sample_rate),
            ));
        }
        self.log_mel_samples(&clip.samples)
    }
}

pub fn log_mel(clip: &AudioClip, params: &MelParams) -> Result<MelSpectrogram> {
    MelExtractor::new(params)?.log_mel(clip)
}

const MATRIX_MAGIC: &[u8; 8] = b"LOEVMAT1";
const DTYPE_F32_LE: u32 = 1;

/// Debug dump: magic, u32 rows, u32 cols, u32 dtype (1 = f32 LE), row-major data.
pub fn write_matrix(path: &Path, m: &Array2<f32>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MATRIX_MAGIC)?;
    f.write_all(&(m.nrows() as u32).to_le_bytes())?;
    f.write_all(&(m.ncols() as u32).to_le_bytes())?;
    f.write_all(&DTYPE_F32_LE.to_le_bytes())?;
    for v in m.iter() {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f32>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |why: &str| Error::Shape { expected: "matrix dump".into(), actual: why.into() };
    if bytes.len() < 20 || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad("bad header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, dtype) = (word(8), word(12), word(16));
    if dtype != DTYPE_F32_LE as usize || bytes.len() != 20 + rows * cols * 4 {
        return Err(bad("bad dtype or length"));
    }
    let data: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::dsp::gain;

    fn sine(f: f64, amp: f64) -> AudioClip {
        AudioClip::new(
            (0..CHUNK_SAMPLES)
                .map(|i| (amp * (std::f64::consts::TAU * f * i as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
    }

    fn argmax_band(s: &MelSpectrogram) -> usize {
        let mean = s.values.mean_axis(ndarray::Axis(0)).unwrap();
        (0..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap()
    }

    /// Band whose triangle is highest at `f`, from the HTK formula directly.
    fn oracle_band(f: f64) -> usize {
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let step = mel(8000.0) / 129.0;
        let pos = mel(f) / step;
        (pos.round() as usize).clamp(1, 128) - 1
    }

    #[test]
    fn shape_and_silence_floor() {
        let s = log_mel(&AudioClip::new(vec![0.0; CHUNK_SAMPLES]), &MelParams::default()).unwrap();
        assert_eq!(s.values.dim(), (400, 128));
        let floor = (1e-5f32).ln();
        assert!(s.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn wrong_length_is_shape_error() {
        let err = log_mel(&AudioClip::new(vec![0.0; 1000]), &MelParams::default()).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn tone_lands_in_its_band() {
        for f in [440.0, 1000.0, 3000.0] {
            let s = log_mel(&sine(f, 0.5), &MelParams::default()).unwrap();
            assert_eq!(argmax_band(&s), oracle_band(f), "{f}");
        }
    }

    #[test]
    fn pitch_is_monotone_in_band() {
        let ex = MelExtractor::new(&MelParams::default()).unwrap();
        let mut last = 0;
        for f in (100..7500).step_by(173) {
            let b = argmax_band(&ex.log_mel(&sine(f as f64, 0.5)).unwrap());
            assert!(b >= last, "{f}");
            last = b;
        }
    }

    #[test]
    fn gain_is_a_constant_shift_above_floor() {
        let params = MelParams { epsilon: 1e-12, ..Default::default() };
        let ex = MelExtractor::new(&params).unwrap();
        let clip = sine(700.0, 0.2);
        let a = ex.log_mel(&clip).unwrap();
        let b = ex.log_mel(&clip.replace_samples(gain(&clip.samples, 6.0))).unwrap();
        let shift = 2.0 * (6.0f64 / 20.0 * std::f64::consts::LN_10);
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            if *x > -10.0 {
                assert!(((y - x) as f64 - shift).abs() < 1e-3, "{x} {y}");
            }
        }
    }

    #[test]
    fn deterministic_and_dump_roundtrip() {
        let clip = sine(523.0, 0.3);
        let a = log_mel(&clip, &MelParams::default()).unwrap();
        let b = log_mel(&clip, &MelParams::default()).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        write_matrix(&path, &a.values).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), a.values);
    }
}
