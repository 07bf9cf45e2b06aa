//! Signal estimators used to check labels and DSP fidelity: FFT peak picking
//! for fundamentals and envelope autocorrelation for tempo. Deliberately
//! independent of the augmentation code they are used to check.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

const ENVELOPE_HOP: usize = 32;
const ENVELOPE_FRAME: usize = 128;
const SUM_LIMIT_HZ: f64 = 5000.0;

/// Frequency (Hz) of the largest Hann-windowed FFT magnitude in
/// `[30 Hz, sr/2)`, refined by parabolic interpolation on log magnitude.
pub fn dominant_frequency(x: &[f32], sample_rate: u32) -> f64 {
    let n = x.len();
    if n < 4 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos();
            Complex::new(v as f64 * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bin_hz = sample_rate as f64 / n as f64;
    let lo = ((30.0 / bin_hz).ceil() as usize).max(1);
    let hi = n / 2 - 1;
    let mags: Vec<f64> = buf[..=hi + 1].iter().map(|c| c.norm()).collect();
    let k = (lo..hi)
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
        .unwrap_or(lo);
    let (a, b, c) = (
        mags[k - 1].max(1e-300).ln(),
        mags[k].max(1e-300).ln(),
        mags[k + 1].max(1e-300).ln(),
    );
    let denom = a - 2.0 * b + c;
    let delta = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
    (k as f64 + delta.clamp(-0.5, 0.5)) * bin_hz
}

/// Fundamental (Hz) by harmonic summation over a Hann-windowed FFT. Each
/// candidate in `[lo, hi]` Hz scores the log-magnitude excess of spectral peaks
/// over a local noise floor at its harmonics; the highest candidate scoring
/// within 75% of the best is returned. Survives a missing fundamental.
pub fn harmonic_f0(x: &[f32], sample_rate: u32, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    if n < 64 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos();
            Complex::new(v as f64 * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let mags: Vec<f64> = buf[..half].iter().map(|c| c.norm()).collect();
    let top = mags.iter().cloned().fold(0.0, f64::max);
    // Median per block of bins: a local floor that follows colored noise.
    const BLOCK: usize = 256;
    let block_floor: Vec<f64> = mags
        .chunks(BLOCK)
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_by(f64::total_cmp);
            (20.0 * v[v.len() / 2]).max(1e-2 * top).max(1e-300)
        })
        .collect();
    // Only local spectral maxima count, so window leakage cannot add score.
    let excess: Vec<f64> = (0..half)
        .map(|k| {
            let m = mags[k];
            let floor = block_floor[k / BLOCK];
            let is_peak = k > 0 && k + 1 < half && m >= mags[k - 1] && m >= mags[k + 1];
            if is_peak && m > floor {
                (m / floor).ln()
            } else {
                0.0
            }
        })
        .collect();
    let bin_hz = sample_rate as f64 / n as f64;
    let nyquist = sample_rate as f64 / 2.0;
    let peak_near = |f: f64| {
        let c = f / bin_hz;
        let w = (c * 0.001).max(1.0);
        let a = ((c - w).floor().max(1.0)) as usize;
        let b = ((c + w).ceil() as usize).min(half - 1);
        (a..=b).map(|k| excess[k]).fold(0.0, f64::max)
    };
    let mut candidates = Vec::new();
    let mut f = lo;
    while f <= hi {
        let score: f64 = (1..).map(|h| h as f64 * f).take_while(|&fh| fh < SUM_LIMIT_HZ.min(nyquist * 0.98)).map(peak_near).sum();
        candidates.push((f, score));
        f *= 1.001;
    }
    let best = candidates.iter().map(|c| c.1).fold(0.0, f64::max);
    if best <= 0.0 {
        return 0.0;
    }
    candidates
        .iter()
        .rev()
        .find(|c| c.1 >= 0.75 * best)
        .map(|c| c.0)
        .unwrap_or(0.0)
}

/// Tempo (BPM) from the autocorrelation of the smoothed, half-wave
/// rectified log-energy difference, searching periods between 40 and
/// 320 BPM. The shortest lag within 75% of the best peak wins, which avoids
/// locking onto multiples of the beat period.
pub fn estimate_tempo(x: &[f32], sample_rate: u32) -> f64 {
    if x.len() < ENVELOPE_FRAME * 4 {
        return 0.0;
    }
    let frames = (x.len() - ENVELOPE_FRAME) / ENVELOPE_HOP + 1;
    let env: Vec<f64> = (0..frames)
        .map(|m| {
            let e: f64 = x[m * ENVELOPE_HOP..m * ENVELOPE_HOP + ENVELOPE_FRAME]
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum();
            (1e-8 + e / ENVELOPE_FRAME as f64).ln()
        })
        .collect();
    let onset: Vec<f64> = env.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    // Gaussian smoothing (sigma 3 frames) so that beat periods falling between
    // two integer lags still produce a single clear peak.
    let kernel: Vec<f64> = (-9..=9).map(|j: i32| (-(j * j) as f64 / 18.0).exp()).collect();
    let ksum: f64 = kernel.iter().sum();
    let smooth: Vec<f64> = (0..onset.len())
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(j, w)| onset.get((i + j).checked_sub(9)?).map(|v| w * v))
                .sum::<f64>()
                / ksum
        })
        .collect();
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let env: Vec<f64> = smooth.iter().map(|v| v - mean).collect();
    let frame_rate = sample_rate as f64 / ENVELOPE_HOP as f64;
    let min_lag = ((frame_rate * 60.0 / 320.0).floor() as usize).max(2);
    let max_lag = ((frame_rate * 60.0 / 40.0).ceil() as usize).min(env.len().saturating_sub(2));
    if max_lag <= min_lag + 2 {
        return 0.0;
    }
    let n = env.len() as f64;
    // Unbiased estimate so that longer lags are not penalized for overlap.
    let acf: Vec<f64> = (0..=max_lag + 1)
        .map(|lag| {
            let s: f64 = env[..env.len() - lag].iter().zip(&env[lag..]).map(|(a, b)| a * b).sum();
            s / (n - lag as f64)
        })
        .collect();
    let best = (min_lag..=max_lag).map(|k| acf[k]).fold(f64::NEG_INFINITY, f64::max);
    if best <= 0.0 {
        return 0.0;
    }
    let is_peak = |k: usize| acf[k] >= acf[k - 1] && acf[k] >= acf[k + 1];
    let k = (min_lag..=max_lag)
        .find(|&k| is_peak(k) && acf[k] >= 0.75 * best)
        .unwrap_or(min_lag);
    let (a, b, c) = (acf[k - 1], acf[k], acf[k + 1]);
    let denom = a - 2.0 * b + c;
    let delta = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    60.0 * frame_rate / (k as f64 + delta)
}
