//! Phase-vocoder time stretching and resample-based pitch shifting.
//!
//! Rate convention: `rate` is a playback speed factor. Rate 1.25 shortens the
//! signal to 80% of its duration and multiplies any tempo by 1.25.

use rustfft::num_complex::Complex32;

use crate::audio::fit_center;
use crate::fft;

use super::dsp::resample;

const FRAME: usize = 1024;
const SYNTH_HOP: usize = FRAME / 4;

fn wrap_phase(p: f32) -> f32 {
    let tau = std::f32::consts::TAU;
    let q = (p + std::f32::consts::PI) / tau;
    // f32::floor is a libm call on baseline x86-64
    let mut f = q as i64 as f32;
    if f > q {
        f -= 1.0;
    }
    p - tau * f
}

// Polynomial atan2, max error about 2e-6 rad. The libm calls dominated the
// vocoder's running time.
fn fast_atan2(y: f32, x: f32) -> f32 {
    use std::f32::consts::{FRAC_PI_2, PI};
    let (ax, ay) = (x.abs(), y.abs());
    let hi = ax.max(ay);
    if hi == 0.0 {
        return 0.0;
    }
    let a = ax.min(ay) / hi;
    let s = a * a;
    let mut r = a * (0.999_977_3 + s * (-0.332_623_5 + s * (0.193_543_5 + s * (-0.116_432_9 + s * (0.052_653_32 - s * 0.011_721_2)))));
    if ay > ax {
        r = FRAC_PI_2 - r;
    }
    if x < 0.0 {
        r = PI - r;
    }
    if y < 0.0 {
        -r
    } else {
        r
    }
}

// (sin, cos) for p in [-pi, pi], max error about 1e-6.
fn fast_sin_cos(p: f32) -> (f32, f32) {
    use std::f32::consts::{FRAC_PI_2, PI};
    // Fold into [-pi/2, pi/2]; cos changes sign on the folded half.
    let (q, flip) = if p > FRAC_PI_2 {
        (PI - p, -1.0)
    } else if p < -FRAC_PI_2 {
        (-PI - p, -1.0)
    } else {
        (p, 1.0)
    };
    let s2 = q * q;
    let sin = q * (1.0 + s2 * (-1.0 / 6.0 + s2 * (1.0 / 120.0 + s2 * (-1.0 / 5040.0 + s2 * (1.0 / 362_880.0 - s2 / 39_916_800.0)))));
    let cos = 1.0 + s2 * (-0.5 + s2 * (1.0 / 24.0 + s2 * (-1.0 / 720.0 + s2 * (1.0 / 40_320.0 - s2 / 3_628_800.0))));
    (sin, flip * cos)
}

/// Stretch to `round(len / rate)` samples, preserving pitch.
pub fn stretch_raw(x: &[f32], rate: f64) -> Vec<f32> {
    let out_len = (x.len() as f64 / rate).round() as usize;
    if x.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let half = FRAME / 2;
    let bins = half + 1;
    let window = fft::hann(FRAME);
    let fwd = fft::forward(FRAME);
    let inv = fft::inverse(FRAME);
    let analysis_hop = SYNTH_HOP as f64 * rate;
    let frames = out_len.div_ceil(SYNTH_HOP) + 1;

    // Output buffer spans [-half, out_len + half).
    let mut acc = vec![0.0f32; out_len + FRAME + SYNTH_HOP];
    let mut norm = vec![0.0f32; acc.len()];
    let mut prev_phase = vec![0.0f32; bins];
    let mut synth_phase = vec![0.0f32; bins];
    let mut prev_start = 0isize;
    let mut buf = vec![Complex32::new(0.0, 0.0); FRAME];
    let mut scratch = vec![Complex32::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
    let omega: Vec<f32> = (0..bins)
        .map(|k| std::f32::consts::TAU * k as f32 / FRAME as f32)
        .collect();

    for m in 0..frames {
        let start = (m as f64 * analysis_hop).round() as isize - half as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let v = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
            *b = Complex32::new(v * window[i], 0.0);
        }
        fwd.process_with_scratch(&mut buf, &mut scratch);
        let hop = (start - prev_start) as f32;
        for k in 0..bins {
            let c = buf[k];
            let mag = (c.re * c.re + c.im * c.im).sqrt();
            let phase = fast_atan2(c.im, c.re);
            if m == 0 || hop <= 0.0 {
                synth_phase[k] = phase;
            } else {
                let dev = wrap_phase(phase - prev_phase[k] - omega[k] * hop);
                let inst = omega[k] + dev / hop;
                synth_phase[k] = wrap_phase(synth_phase[k] + inst * SYNTH_HOP as f32);
            }
            prev_phase[k] = phase;
            let (sin, cos) = fast_sin_cos(synth_phase[k]);
            buf[k] = Complex32::new(mag * cos, mag * sin);
        }
        for k in 1..half {
            buf[FRAME - k] = buf[k].conj();
        }
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        inv.process_with_scratch(&mut buf, &mut scratch);
        let offset = m * SYNTH_HOP;
        let scale = 1.0 / FRAME as f32;
        for i in 0..FRAME {
            let w = window[i];
            acc[offset + i] += buf[i].re * scale * w;
            norm[offset + i] += w * w;
        }
        prev_start = start;
    }

    (0..out_len)
        .map(|i| {
            let j = i + half;
            let n = norm[j];
            if n > 1e-3 {
                acc[j] / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Change playback speed by `rate` without changing pitch, then center-crop
/// or zero-pad back to the input length. Rate 1 is an exact identity.
pub fn time_stretch(x: &[f32], rate: f64) -> Vec<f32> {
    if rate == 1.0 {
        return x.to_vec();
    }
    fit_center(&stretch_raw(x, rate), x.len())
}

/// Multiply every frequency by 2^(semitones/12), keeping the duration:
/// stretch by the pitch factor, then resample back. Zero is an exact identity.
pub fn pitch_shift(x: &[f32], semitones: f64) -> Vec<f32> {
    if semitones == 0.0 {
        return x.to_vec();
    }
    let factor = 2f64.powf(semitones / 12.0);
    let stretched = stretch_raw(x, 1.0 / factor);
    resample(&stretched, factor, x.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{dominant_frequency, estimate_tempo};
    use crate::corpus::{generate_clip, ClipSpec};

    fn tone(f: f64, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (0.5 * (std::f64::consts::TAU * f * i as f64 / 16000.0).sin()) as f32)
            .collect()
    }

    #[test]
    fn fast_trig_matches_libm() {
        for i in 0..=20_000 {
            let p = -std::f32::consts::PI + std::f32::consts::TAU * i as f32 / 20_000.0;
            let (s, c) = fast_sin_cos(p);
            assert!((s - p.sin()).abs() < 2e-6 && (c - p.cos()).abs() < 2e-6, "{p}");
            let (y, x) = (p.sin() * 3.0, p.cos() * 3.0);
            assert!((fast_atan2(y, x) - y.atan2(x)).abs() < 2e-5, "{p}");
        }
        assert_eq!(fast_atan2(0.0, 0.0), 0.0);
    }

    #[test]
    fn octave_up_doubles_frequency() {
        let y = pitch_shift(&tone(440.0, 48000), 12.0);
        assert_eq!(y.len(), 48000);
        let f = dominant_frequency(&y, 16000);
        assert!((f / 880.0 - 1.0).abs() < 0.01, "{f}");
    }

    #[test]
    fn four_down() {
        let y = pitch_shift(&tone(440.0, 48000), -4.0);
        let f = dominant_frequency(&y, 16000);
        assert!((f / 349.228 - 1.0).abs() < 0.01, "{f}");
    }

    #[test]
    fn zero_shift_and_unit_rate_are_identity() {
        let x = tone(300.0, 5000);
        assert_eq!(pitch_shift(&x, 0.0), x);
        assert_eq!(time_stretch(&x, 1.0), x);
    }

    #[test]
    fn stretch_preserves_pitch() {
        let y = time_stretch(&tone(440.0, 48000), 0.8);
        let f = dominant_frequency(&y, 16000);
        assert!((f / 440.0 - 1.0).abs() < 0.01, "{f}");
    }

    #[test]
    fn stretch_scales_tempo() {
        let clip = generate_clip(&ClipSpec::clicks(120.0, 3.0, 1)).unwrap();
        let y = time_stretch(&clip.samples, 1.25);
        assert_eq!(y.len(), clip.len());
        let bpm = estimate_tempo(&y, 16000);
        assert!((bpm / 150.0 - 1.0).abs() < 0.02, "{bpm}");
    }

    #[test]
    fn raw_stretch_length() {
        assert_eq!(stretch_raw(&tone(200.0, 1000), 0.5).len(), 2000);
        assert_eq!(stretch_raw(&tone(200.0, 1000), 1.3).len(), 769);
    }
}
