//! Thread-local cached FFT plans.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
}

pub fn forward(n: usize) -> Arc<dyn Fft<f32>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub fn inverse(n: usize) -> Arc<dyn Fft<f32>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos()) as f32)
        .collect()
}

/// Linear convolution of `x` with `h`, truncated to `x.len()`.
pub fn convolve_truncated(x: &[f32], h: &[f32]) -> Vec<f32> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut a: Vec<Complex32> = x.iter().map(|&v| Complex32::new(v, 0.0)).collect();
    a.resize(n, Complex32::new(0.0, 0.0));
    let mut b: Vec<Complex32> = h.iter().map(|&v| Complex32::new(v, 0.0)).collect();
    b.resize(n, Complex32::new(0.0, 0.0));
    let fwd = forward(n);
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inverse(n).process(&mut a);
    let scale = 1.0 / n as f32;
    a[..x.len()].iter().map(|c| c.re * scale).collect()
}
