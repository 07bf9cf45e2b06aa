//! Memoryless and linear-filter nuclear augmentations.

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex32;

use crate::audio::rms;
use crate::fft;
use crate::seed;

pub fn gain(x: &[f32], db: f64) -> Vec<f32> {
    let g = 10f64.powf(db / 20.0) as f32;
    x.iter().map(|&v| v * g).collect()
}

pub fn invert_polarity(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| -v).collect()
}

/// Add Gaussian noise whose amplitude spectrum falls by `decay_db_per_octave`
/// (negative values tilt it upwards), scaled so that the signal-to-noise
/// ratio is `snr_db`. Silence stays silent.
pub fn colored_noise(x: &[f32], snr_db: f64, decay_db_per_octave: f64, sample_rate: u32, noise_seed: u64) -> Vec<f32> {
    let n = x.len();
    let signal_rms = rms(x);
    if n == 0 || signal_rms == 0.0 {
        return x.to_vec();
    }
    let mut rng = seed::rng(noise_seed);
    let mut spec: Vec<Complex32> = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            Complex32::new(v as f32, 0.0)
        })
        .collect();
    fft::forward(n).process(&mut spec);
    // |H(f)| = (f / 1 kHz)^(-decay / 20log10(2))
    let exponent = -decay_db_per_octave / (20.0 * 2f64.log10());
    for (k, c) in spec.iter_mut().enumerate() {
        let bin = k.min(n - k);
        if bin == 0 {
            *c = Complex32::new(0.0, 0.0);
            continue;
        }
        let f = bin as f64 * sample_rate as f64 / n as f64;
        *c *= (f / 1000.0).powf(exponent) as f32;
    }
    fft::inverse(n).process(&mut spec);
    let noise: Vec<f32> = spec.iter().map(|c| c.re).collect();
    let noise_rms = rms(&noise);
    if noise_rms == 0.0 {
        return x.to_vec();
    }
    let g = (signal_rms / 10f64.powf(snr_db / 20.0) / noise_rms) as f32;
    x.iter().zip(&noise).map(|(&s, &w)| s + g * w).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn normalized(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Biquad {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    fn omega(freq: f64, sample_rate: u32) -> (f64, f64) {
        let w = std::f64::consts::TAU * freq / sample_rate as f64;
        (w.cos(), w.sin())
    }

    pub fn lowpass(cutoff: f64, q: f64, sample_rate: u32) -> Self {
        let (c, s) = Self::omega(cutoff, sample_rate);
        let alpha = s / (2.0 * q);
        Self::normalized((1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn highpass(cutoff: f64, q: f64, sample_rate: u32) -> Self {
        let (c, s) = Self::omega(cutoff, sample_rate);
        let alpha = s / (2.0 * q);
        Self::normalized((1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    /// Constant 0 dB peak gain band-pass.
    pub fn bandpass(center: f64, q: f64, sample_rate: u32) -> Self {
        let (c, s) = Self::omega(center, sample_rate);
        let alpha = s / (2.0 * q);
        Self::normalized(alpha, 0.0, -alpha, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn notch(center: f64, q: f64, sample_rate: u32) -> Self {
        let (c, s) = Self::omega(center, sample_rate);
        let alpha = s / (2.0 * q);
        Self::normalized(1.0, -2.0 * c, 1.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    /// Direct form I over a whole buffer.
    pub fn run(&self, x: &[f32]) -> Vec<f32> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0f64, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&v| {
                let v = v as f64;
                let y = self.b[0] * v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = v;
                y2 = y1;
                y1 = y;
                y as f32
            })
            .collect()
    }
}

/// Section Qs of a 4th-order Butterworth.
const BUTTERWORTH4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];

pub fn lowpass(x: &[f32], cutoff: f64, sample_rate: u32) -> Vec<f32> {
    BUTTERWORTH4_Q
        .iter()
        .fold(x.to_vec(), |acc, &q| Biquad::lowpass(cutoff, q, sample_rate).run(&acc))
}

pub fn highpass(x: &[f32], cutoff: f64, sample_rate: u32) -> Vec<f32> {
    BUTTERWORTH4_Q
        .iter()
        .fold(x.to_vec(), |acc, &q| Biquad::highpass(cutoff, q, sample_rate).run(&acc))
}

/// Band-pass with bandwidth `fraction * center` (Q = 1 / fraction).
pub fn bandpass(x: &[f32], center: f64, fraction: f64, sample_rate: u32) -> Vec<f32> {
    Biquad::bandpass(center, 1.0 / fraction, sample_rate).run(x)
}

pub fn bandcut(x: &[f32], center: f64, fraction: f64, sample_rate: u32) -> Vec<f32> {
    Biquad::notch(center, 1.0 / fraction, sample_rate).run(x)
}

/// Exponentially decaying noise impulse response: 60 dB decay after
/// `room_size` seconds, unit energy.
pub fn impulse_response(room_size: f64, sample_rate: u32, ir_seed: u64) -> Vec<f32> {
    let t60 = room_size;
    let len = ((t60 * sample_rate as f64).round() as usize).max(1);
    let mut rng = seed::rng(ir_seed);
    let mut ir: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let v: f64 = StandardNormal.sample(&mut rng);
            v * 10f64.powf(-3.0 * t / t60)
        })
        .collect();
    ir[0] = ir[0].abs().max(1.0);
    let energy = ir.iter().map(|v| v * v).sum::<f64>().sqrt();
    ir.iter_mut().for_each(|v| *v /= energy);
    ir.into_iter().map(|v| v as f32).collect()
}

/// Linear dry/wet crossfade with the convolved signal.
pub fn reverb(x: &[f32], room_size: f64, wet: f64, sample_rate: u32, ir_seed: u64) -> Vec<f32> {
    if wet == 0.0 {
        return x.to_vec();
    }
    let ir = impulse_response(room_size, sample_rate, ir_seed);
    let wet_signal = fft::convolve_truncated(x, &ir);
    let (d, w) = ((1.0 - wet) as f32, wet as f32);
    x.iter().zip(&wet_signal).map(|(&a, &b)| d * a + w * b).collect()
}

/// tanh waveshaper with `drive_db` of input gain.
pub fn distortion(x: &[f32], drive_db: f64) -> Vec<f32> {
    let g = 10f64.powf(drive_db / 20.0) as f32;
    x.iter().map(|&v| (g * v).tanh()).collect()
}

/// Read `x` at positions `n * step` with Catmull-Rom interpolation.
pub fn resample(x: &[f32], step: f64, out_len: usize) -> Vec<f32> {
    let at = |i: isize| -> f32 {
        if i < 0 || i as usize >= x.len() {
            0.0
        } else {
            x[i as usize]
        }
    };
    (0..out_len)
        .map(|n| {
            let pos = n as f64 * step;
            let i = pos.floor() as isize;
            let t = (pos - i as f64) as f32;
            let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
            let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
            let c = -0.5 * p0 + 0.5 * p2;
            ((a * t + b) * t + c) * t + p1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white(n: usize, s: u64) -> Vec<f32> {
        let mut rng = seed::rng(s);
        (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                (0.2 * v) as f32
            })
            .collect()
    }

    /// Band energy through a Hann-windowed FFT; written independently of
    /// the filter code.
    fn band_energy(x: &[f32], lo: f64, hi: f64) -> f64 {
        use rustfft::num_complex::Complex64;
        let n = x.len();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        (0..n / 2)
            .filter(|&k| {
                let f = k as f64 * 16000.0 / n as f64;
                f >= lo && f < hi
            })
            .map(|k| buf[k].norm_sqr())
            .sum::<f64>()
    }

    #[test]
    fn unit_gain_is_identity_and_minus_20db_is_tenth() {
        let x = white(4000, 1);
        assert_eq!(gain(&x, 0.0), x);
        let y = gain(&x, -20.0);
        assert!((rms(&y) / rms(&x) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn lowpass_attenuates_above_twice_cutoff() {
        let x = white(32000, 2);
        let y = lowpass(&x, 1000.0, 16000);
        let pass = band_energy(&y, 50.0, 800.0) / band_energy(&x, 50.0, 800.0);
        let stop = band_energy(&y, 2000.0, 8000.0) / band_energy(&x, 2000.0, 8000.0);
        let db = 10.0 * (pass / stop).log10();
        assert!(db >= 12.0, "only {db:.1} dB");
    }

    #[test]
    fn highpass_attenuates_below_half_cutoff() {
        let x = white(32000, 3);
        let y = highpass(&x, 2000.0, 16000);
        let pass = band_energy(&y, 3000.0, 7000.0) / band_energy(&x, 3000.0, 7000.0);
        let stop = band_energy(&y, 50.0, 1000.0) / band_energy(&x, 50.0, 1000.0);
        assert!(10.0 * (pass / stop).log10() >= 12.0);
    }

    #[test]
    fn bandpass_and_bandcut_are_complementary_around_center() {
        let x = white(32000, 4);
        let bp = bandpass(&x, 1000.0, 0.5, 16000);
        let bc = bandcut(&x, 1000.0, 0.5, 16000);
        let bp_in = band_energy(&bp, 900.0, 1100.0) / band_energy(&x, 900.0, 1100.0);
        let bc_in = band_energy(&bc, 950.0, 1050.0) / band_energy(&x, 950.0, 1050.0);
        let bp_out = band_energy(&bp, 4000.0, 7000.0) / band_energy(&x, 4000.0, 7000.0);
        assert!(bp_in > 0.7 && bp_out < 0.05, "{bp_in} {bp_out}");
        assert!(bc_in < 0.2, "{bc_in}");
    }

    #[test]
    fn colored_noise_hits_requested_snr() {
        let x = white(16000, 5);
        for (snr, decay) in [(3.0, -2.0), (30.0, 2.0), (10.0, 0.0)] {
            let y = colored_noise(&x, snr, decay, 16000, 9);
            let noise: Vec<f32> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let got = 20.0 * (rms(&x) / rms(&noise)).log10();
            assert!((got - snr).abs() < 1e-3, "{got} vs {snr}");
        }
    }

    #[test]
    fn colored_noise_spectral_tilt() {
        let x = vec![0.0f32; 4];
        assert_eq!(colored_noise(&x, 10.0, 0.0, 16000, 1), x);
        let sig = white(64000, 6);
        let y = colored_noise(&sig, 0.0, 2.0, 16000, 7);
        let noise: Vec<f32> = y.iter().zip(&sig).map(|(a, b)| a - b).collect();
        // 2 dB/octave decay over the two octaves 500 Hz -> 2 kHz: -4 dB per-Hz density.
        let lo = band_energy(&noise, 450.0, 550.0);
        let hi = band_energy(&noise, 1800.0, 2200.0) / 4.0;
        let db = 10.0 * (lo / hi).log10();
        assert!((db - 4.0).abs() < 1.0, "{db}");
    }

    #[test]
    fn reverb_dry_is_identity_and_ir_unit_energy() {
        let x = white(2000, 8);
        assert_eq!(reverb(&x, 0.5, 0.0, 16000, 1), x);
        let ir = impulse_response(0.4, 16000, 3);
        assert_eq!(ir.len(), 6400);
        let e: f64 = ir.iter().map(|&v| (v as f64).powi(2)).sum();
        assert!((e - 1.0).abs() < 1e-5);
        let y = reverb(&x, 0.4, 1.0, 16000, 3);
        assert_eq!(y.len(), x.len());
    }

    #[test]
    fn distortion_is_bounded_and_odd() {
        let x = white(1000, 9);
        let y = distortion(&x, 10.0);
        assert!(y.iter().all(|v| v.abs() <= 1.0));
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        let yn = distortion(&neg, 10.0);
        assert!(y.iter().zip(&yn).all(|(a, b)| (a + b).abs() < 1e-7));
    }

    #[test]
    fn resample_unit_step_is_identity() {
        let x = white(100, 10);
        let y = resample(&x, 1.0, 100);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-7));
    }
}
