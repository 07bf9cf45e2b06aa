//! Shared inputs for the pipeline benchmarks.

use loev_core::corpus::{generate_clip, ClipSpec};
use loev_core::{AudioClip, Result};

/// A 6 s harmonic tone, long enough for two adjacent 3 s chunks.
pub fn tone_track() -> Result<AudioClip> {
    generate_clip(&ClipSpec::tone(220.0, 6.0, 11))
}

/// A 3 s chunk of the tone track.
pub fn chunk() -> Result<AudioClip> {
    Ok(tone_track()?.chunks().remove(0))
}

/// `n` 12 s tracks alternating tones and click tracks.
pub fn tracks(n: usize) -> Result<Vec<AudioClip>> {
    (0..n)
        .map(|i| {
            let spec = if i % 2 == 0 {
                ClipSpec::tone(200.0 + 20.0 * i as f64, 12.0, i as u64)
            } else {
                ClipSpec::clicks(90.0 + 5.0 * i as f64, 12.0, i as u64)
            };
            generate_clip(&spec)
        })
        .collect()
}
