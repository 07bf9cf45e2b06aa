//! Cosine-distance sweeps: how far embeddings move under a controlled
//! transform, per space.

use std::str::FromStr;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::metrics::cosine_distance;
use super::store::embed_chunks;
use crate::audio::AudioClip;
use crate::augment::{pitch_shift, time_stretch};
use crate::error::{Error, Result};
use crate::features::MelExtractor;
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Parameter in semitones; identity 0.
    PitchShift,
    /// Parameter is the playback rate; identity 1.
    TimeStretch,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::PitchShift => "pitch_shift",
            SweepKind::TimeStretch => "time_stretch",
        }
    }

    pub fn identity(self) -> f64 {
        match self {
            SweepKind::PitchShift => 0.0,
            SweepKind::TimeStretch => 1.0,
        }
    }

    pub fn apply(self, x: &[f32], p: f64) -> Vec<f32> {
        match self {
            SweepKind::PitchShift => pitch_shift(x, p),
            SweepKind::TimeStretch => time_stretch(x, p),
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pitch_shift" | "ps" | "pitch" => Ok(SweepKind::PitchShift),
            "time_stretch" | "ts" | "tempo" => Ok(SweepKind::TimeStretch),
            _ => Err(Error::param("kind", format!("unknown sweep kind `{s}` (pitch_shift, time_stretch)"))),
        }
    }
}

/// `lo:hi:step` inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::param("grid", format!("expected lo:hi:step, got `{spec}`"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [lo, hi, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || hi < lo {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    // round to the step's precision so 0 lands exactly on 0
    Ok((0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSweepResult {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub spaces: Vec<String>,
    /// `curves[s][g]`: mean d_c in space `s` at grid point `g`.
    pub curves: Vec<Vec<f64>>,
    pub n_tracks: usize,
}

impl CosineSweepResult {
    /// Mean of a curve over grid points with |p - identity| <= `radius`.
    pub fn mean_within(&self, space: usize, radius: f64) -> f64 {
        let id = self.kind.identity();
        let vals: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.curves[space])
            .filter(|(p, _)| (**p - id).abs() <= radius + 1e-9)
            .map(|(_, v)| *v)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// max - min of a curve.
    pub fn range(&self, space: usize) -> f64 {
        let c = &self.curves[space];
        c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - c.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// For each grid point, transform every chunk of every track, embed clean
/// and transformed chunks, average each over the track, and average
/// d_c(z, z*) over tracks.
pub fn cosine_sweep(
    model: &Model<f32>,
    mel: &MelExtractor,
    tracks: &[AudioClip],
    kind: SweepKind,
    grid: &[f64],
    space_names: &[&str],
) -> Result<CosineSweepResult> {
    if !grid.iter().any(|&p| p == kind.identity()) {
        return Err(Error::param("grid", format!("must contain the identity parameter {}", kind.identity())));
    }
    if tracks.is_empty() {
        return Err(Error::param("tracks", "no tracks to sweep"));
    }
    let spaces = space_names
        .iter()
        .map(|n| model.config.resolve_space(n))
        .collect::<Result<Vec<_>>>()?;
    let mut chunks = Vec::new();
    let mut owner = Vec::new();
    for (t, track) in tracks.iter().enumerate() {
        let c = track.chunks();
        owner.extend(std::iter::repeat_n(t, c.len()));
        chunks.extend(c);
    }
    let track_means = |clips: &[AudioClip]| -> Result<Vec<Vec<Vec<f32>>>> {
        let emb = embed_chunks(model, mel, clips, &spaces)?;
        Ok(emb
            .iter()
            .map(|e| {
                (0..tracks.len())
                    .map(|t| {
                        let rows: Vec<usize> = (0..owner.len()).filter(|&i| owner[i] == t).collect();
                        e.select(Axis(0), &rows).mean_axis(Axis(0)).unwrap().to_vec()
                    })
                    .collect()
            })
            .collect())
    };
    let clean = track_means(&chunks)?;
    let mut curves = vec![Vec::with_capacity(grid.len()); spaces.len()];
    for &p in grid {
        let moved: Vec<AudioClip> = chunks.iter().map(|c| c.replace_samples(kind.apply(&c.samples, p))).collect();
        let shifted = track_means(&moved)?;
        for s in 0..spaces.len() {
            let d: f64 = (0..tracks.len()).map(|t| cosine_distance(&clean[s][t], &shifted[s][t])).sum();
            curves[s].push(d / tracks.len() as f64);
        }
    }
    Ok(CosineSweepResult {
        kind,
        grid: grid.to_vec(),
        spaces: spaces.iter().map(|&s| model.config.space_name(s)).collect(),
        curves,
        n_tracks: tracks.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_clip, ClipSpec};
    use crate::features::MelParams;
    use crate::model::{build_model, ModelConfig, Topology};

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("-2:2:1").unwrap(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(parse_grid("0.8:1.2:0.1").unwrap().len(), 5);
        assert!(parse_grid("0.8:1.2:0.1").unwrap().contains(&1.0));
        assert!(parse_grid("1:0:1").is_err());
        assert!(parse_grid("1:2").is_err());
        assert_eq!("ts".parse::<SweepKind>().unwrap(), SweepKind::TimeStretch);
    }

    #[test]
    fn identity_is_zero_and_range_holds() {
        let cfg = ModelConfig {
            channels: vec![4, 4],
            embed_dim: 8,
            head_hidden: vec![8],
            proj_dim: 6,
            topology: Topology::LoevPlusPlus,
            ..Default::default()
        };
        let model = build_model(&cfg, 2).unwrap();
        let mel = MelExtractor::new(&MelParams::default()).unwrap();
        let tracks = vec![
            generate_clip(&ClipSpec::tone(196.0, 3.0, 1)).unwrap(),
            generate_clip(&ClipSpec::chord(3, 3, 3.0, 2)).unwrap(),
        ];
        let r = cosine_sweep(&model, &mel, &tracks, SweepKind::PitchShift, &[-4.0, 0.0, 4.0], &["Zi", "Zp", "V++"]).unwrap();
        for c in &r.curves {
            assert!(c[1] < 0.02);
            assert!(c.iter().all(|v| v.is_finite() && (0.0..=2.0).contains(v)));
        }
        assert!(cosine_sweep(&model, &mel, &tracks, SweepKind::PitchShift, &[1.0], &["Zi"]).is_err());
    }
}
