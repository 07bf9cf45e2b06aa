//! Multi-view batch construction and positive masks.
//!
//! View `i` of a batch belongs to anchor `i / M`. Seeds are derived per
//! anchor and per view from the batch seed, so results do not depend on the
//! thread schedule.

use ndarray::{Array2, Array3};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, CHUNK_SAMPLES};
use crate::augment::{apply_chain, AugmentationRecord, ChainConfig};
use crate::error::{Error, Result};
use crate::features::MelExtractor;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Same,
    Adjacent,
    Random,
}

/// Mixture over the three chunk strategies, drawn once per anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingStrategy {
    pub same: f64,
    pub adjacent: f64,
    pub random: f64,
}

impl Default for SamplingStrategy {
    fn default() -> Self {
        SamplingStrategy {
            same: 1.0 / 3.0,
            adjacent: 1.0 / 3.0,
            random: 1.0 / 3.0,
        }
    }
}

impl SamplingStrategy {
    pub fn only(kind: Strategy) -> Self {
        let mut s = SamplingStrategy { same: 0.0, adjacent: 0.0, random: 0.0 };
        match kind {
            Strategy::Same => s.same = 1.0,
            Strategy::Adjacent => s.adjacent = 1.0,
            Strategy::Random => s.random = 1.0,
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.same, self.adjacent, self.random];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("strategy", "weights must be finite and non-negative"));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("strategy", format!("weights {w:?} must sum to 1")));
        }
        Ok(())
    }

    pub fn pick(&self, rng: &mut seed::Rng) -> Strategy {
        let u: f64 = rng.random();
        if u < self.same {
            Strategy::Same
        } else if u < self.same + self.adjacent {
            Strategy::Adjacent
        } else {
            Strategy::Random
        }
    }
}

/// Offsets (in samples) of `m` chunks of `chunk` samples within a track of
/// `track_len` samples.
pub fn sample_offsets(track_len: usize, chunk: usize, strategy: Strategy, m: usize, rng: &mut seed::Rng) -> Result<Vec<usize>> {
    let needed = if strategy == Strategy::Adjacent { chunk * m } else { chunk };
    if track_len < needed || m == 0 {
        return Err(Error::Length { needed, available: track_len });
    }
    Ok(match strategy {
        Strategy::Same => {
            let o = rng.random_range(0..=track_len - chunk);
            vec![o; m]
        }
        Strategy::Adjacent => {
            let start = rng.random_range(0..=track_len - needed);
            (0..m).map(|i| start + i * chunk).collect()
        }
        Strategy::Random => (0..m).map(|_| rng.random_range(0..=track_len - chunk)).collect(),
    })
}

pub fn sample_chunks(track: &AudioClip, strategy: Strategy, m: usize, rng_seed: u64) -> Result<Vec<usize>> {
    sample_offsets(track.len(), CHUNK_SAMPLES, strategy, m, &mut seed::rng(rng_seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    /// (N*M) x frames x mel_bins log-mel inputs.
    pub views: Array3<f32>,
    pub anchor_id: Vec<usize>,
    pub records: Vec<AugmentationRecord>,
    /// (N*M) x K, 1 where the variant augmentation was applied.
    pub t_matrix: Array2<u8>,
    pub strategies: Vec<Strategy>,
    pub offsets: Vec<usize>,
    pub views_per_anchor: usize,
}

impl ViewBatch {
    pub fn len(&self) -> usize {
        self.anchor_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_id.is_empty()
    }

    pub fn k(&self) -> usize {
        self.t_matrix.ncols()
    }
}

pub fn t_matrix(records: &[AugmentationRecord], k: usize) -> Array2<u8> {
    Array2::from_shape_fn((records.len(), k), |(i, j)| records[i].variant_flags[j] as u8)
}

pub fn build_batch(
    tracks: &[AudioClip],
    chain: &ChainConfig,
    strategy: &SamplingStrategy,
    mel: &MelExtractor,
    rng_seed: u64,
) -> Result<ViewBatch> {
    if tracks.len() < 2 {
        return Err(Error::param("tracks", format!("need at least 2 anchors, got {}", tracks.len())));
    }
    chain.validate()?;
    strategy.validate()?;
    let m = chain.views_per_anchor;
    let k = chain.k();
    let params = mel.params();
    let (frames, bins) = (params.frames(), params.mel_bins);
    let chunk = params.input_samples;

    type AnchorOut = (Strategy, Vec<usize>, Vec<(Array2<f32>, AugmentationRecord)>);
    let per_anchor: Vec<AnchorOut> = tracks
        .par_iter()
        .enumerate()
        .map(|(a, track)| -> Result<AnchorOut> {
            let mut rng = seed::rng_for(rng_seed, &[a as u64]);
            let kind = strategy.pick(&mut rng);
            let offsets = sample_offsets(track.len(), chunk, kind, m, &mut rng)?;
            let views = offsets
                .iter()
                .enumerate()
                .map(|(v, &off)| {
                    let piece = track.slice(off, chunk);
                    let (aug, rec) = apply_chain(&piece, chain, seed::derive(rng_seed, &[a as u64, v as u64, 1]))?;
                    Ok((mel.log_mel(&aug)?.values, rec))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((kind, offsets, views))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = tracks.len() * m;
    let mut views = Array3::<f32>::zeros((n, frames, bins));
    let mut anchor_id = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let mut strategies = Vec::with_capacity(tracks.len());
    let mut all_offsets = Vec::with_capacity(n);
    for (a, (kind, offsets, anchor_views)) in per_anchor.into_iter().enumerate() {
        strategies.push(kind);
        all_offsets.extend(offsets);
        for (v, (spec, rec)) in anchor_views.into_iter().enumerate() {
            views.index_axis_mut(ndarray::Axis(0), a * m + v).assign(&spec);
            anchor_id.push(a);
            records.push(rec);
        }
    }
    let t_matrix = t_matrix(&records, k);
    Ok(ViewBatch {
        views,
        anchor_id,
        records,
        t_matrix,
        strategies,
        offsets: all_offsets,
        views_per_anchor: m,
    })
}

/// P(i) and P_k(i) as dense boolean matrices with zero diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveMasks {
    pub all_invariant: Array2<bool>,
    pub per_subspace: Vec<Array2<bool>>,
}

impl PositiveMasks {
    pub fn k(&self) -> usize {
        self.per_subspace.len()
    }

    /// Number of rows of subspace `k` with at least one positive.
    pub fn contributing(&self, k: usize) -> usize {
        self.per_subspace[k].rows().into_iter().filter(|r| r.iter().any(|&b| b)).count()
    }
}

pub fn positive_masks(anchor_id: &[usize], t: &Array2<u8>) -> PositiveMasks {
    let n = anchor_id.len();
    let all = Array2::from_shape_fn((n, n), |(i, j)| i != j && anchor_id[i] == anchor_id[j]);
    let per_subspace = (0..t.ncols())
        .map(|k| Array2::from_shape_fn((n, n), |(i, j)| all[[i, j]] && t[[i, k]] == 0 && t[[j, k]] == 0))
        .collect();
    PositiveMasks {
        all_invariant: all,
        per_subspace,
    }
}

pub fn build_positive_masks(batch: &ViewBatch) -> PositiveMasks {
    positive_masks(&batch.anchor_id, &batch.t_matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugKind;
    use crate::corpus::{generate_clip, ClipSpec};
    use crate::features::MelParams;
    use proptest::prelude::*;
    use super::Strategy;

    #[test]
    fn same_and_adjacent_offsets() {
        let mut rng = seed::rng(3);
        let same = sample_offsets(192_000, CHUNK_SAMPLES, Strategy::Same, 4, &mut rng).unwrap();
        assert!(same.iter().all(|&o| o == same[0]));
        let adj = sample_offsets(192_000, CHUNK_SAMPLES, Strategy::Adjacent, 4, &mut rng).unwrap();
        assert_eq!(adj, vec![0, 48_000, 96_000, 144_000]);
        let err = sample_offsets(150_000, CHUNK_SAMPLES, Strategy::Adjacent, 4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Length { needed: 192_000, .. }));
        assert!(sample_offsets(40_000, CHUNK_SAMPLES, Strategy::Random, 4, &mut rng).is_err());
    }

    #[test]
    fn random_offsets_are_uniform() {
        let mut rng = seed::rng(11);
        let bins = 9;
        let span = 192_000 - CHUNK_SAMPLES;
        let mut counts = vec![0usize; bins];
        let draws = 10_000;
        for _ in 0..draws {
            let o = sample_offsets(192_000, CHUNK_SAMPLES, Strategy::Random, 1, &mut rng).unwrap()[0];
            assert!(o <= span);
            counts[(o * bins / (span + 1)).min(bins - 1)] += 1;
        }
        let expected = draws as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 8 degrees of freedom.
        assert!(chi2 < 26.12, "{chi2} {counts:?}");
    }

    fn tracks(n: usize, secs: f64) -> Vec<AudioClip> {
        (0..n)
            .map(|i| generate_clip(&ClipSpec::tone(200.0 + 50.0 * i as f64, secs, i as u64)).unwrap())
            .collect()
    }

    #[test]
    fn batch_layout_and_identity_views() {
        let mel = MelExtractor::new(&MelParams::default()).unwrap();
        let b = build_batch(&tracks(2, 6.0), &ChainConfig::disabled(), &SamplingStrategy::only(Strategy::Same), &mel, 5).unwrap();
        assert_eq!(b.len(), 8);
        assert_eq!(b.anchor_id, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(b.views.dim(), (8, 400, 128));
        for i in 1..4 {
            assert_eq!(b.views.index_axis(ndarray::Axis(0), 0), b.views.index_axis(ndarray::Axis(0), i));
        }
        let again = build_batch(&tracks(2, 6.0), &ChainConfig::disabled(), &SamplingStrategy::only(Strategy::Same), &mel, 5).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn batch_is_deterministic_with_augmentation() {
        let mel = MelExtractor::new(&MelParams::default()).unwrap();
        let ts = tracks(2, 12.0);
        let chain = ChainConfig::default();
        let a = build_batch(&ts, &chain, &SamplingStrategy::default(), &mel, 99).unwrap();
        let b = build_batch(&ts, &chain, &SamplingStrategy::default(), &mel, 99).unwrap();
        assert_eq!(a, b);
        for (i, r) in a.records.iter().enumerate() {
            for k in 0..a.k() {
                assert_eq!(a.t_matrix[[i, k]] == 1, r.variant_flags[k]);
            }
        }
        assert!(a.views.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_batch_rejected() {
        let mel = MelExtractor::new(&MelParams::default()).unwrap();
        assert!(build_batch(&tracks(1, 3.0), &ChainConfig::disabled(), &SamplingStrategy::default(), &mel, 0).is_err());
    }

    #[test]
    fn pitch_shift_breaks_positive_in_its_subspace() {
        let t = ndarray::arr2(&[[1u8, 0], [0, 0]]);
        let masks = positive_masks(&[0, 0], &t);
        assert!(masks.all_invariant[[0, 1]]);
        assert!(!masks.per_subspace[0][[0, 1]]);
        assert!(masks.per_subspace[1][[0, 1]]);
    }

    fn brute(anchor: &[usize], t: &Array2<u8>) -> (Vec<Vec<bool>>, Vec<Vec<Vec<bool>>>) {
        let n = anchor.len();
        let mut all = vec![vec![false; n]; n];
        let mut sub = vec![vec![vec![false; n]; n]; t.ncols()];
        for i in 0..n {
            for j in 0..n {
                if i != j && anchor[i] == anchor[j] {
                    all[i][j] = true;
                    for k in 0..t.ncols() {
                        if t[[i, k]] == 0 && t[[j, k]] == 0 {
                            sub[k][i][j] = true;
                        }
                    }
                }
            }
        }
        (all, sub)
    }

    #[test]
    fn masks_match_brute_force_on_sampled_plans() {
        let chain = ChainConfig::default();
        for s in 0..1000u64 {
            let mut rng = seed::rng(s);
            let n = rng.random_range(1..=4usize);
            let anchor: Vec<usize> = (0..n * 4).map(|i| i / 4).collect();
            let records: Vec<_> = (0..n * 4).map(|_| chain.sample_plan(&mut rng)).collect();
            let t = t_matrix(&records, 2);
            let masks = positive_masks(&anchor, &t);
            let (all, sub) = brute(&anchor, &t);
            for i in 0..n * 4 {
                for j in 0..n * 4 {
                    assert_eq!(masks.all_invariant[[i, j]], all[i][j]);
                    for k in 0..2 {
                        assert_eq!(masks.per_subspace[k][[i, j]], sub[k][i][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn raising_probability_shrinks_subspace_positives() {
        let mean_positives = |p: f64| {
            let mut chain = ChainConfig::with_variants(&[AugKind::PitchShift]);
            chain.variant[0].probability = p;
            let anchor: Vec<usize> = (0..16).map(|i| i / 4).collect();
            let mut total = 0usize;
            let batches = 10_000u64;
            for s in 0..batches {
                let mut rng = seed::rng(s);
                let recs: Vec<_> = (0..16).map(|_| chain.sample_plan(&mut rng)).collect();
                let masks = positive_masks(&anchor, &t_matrix(&recs, 1));
                total += masks.per_subspace[0].iter().filter(|&&b| b).count();
            }
            total as f64 / batches as f64
        };
        let curve: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&p| mean_positives(p)).collect();
        assert_eq!(curve[0], 48.0);
        assert_eq!(curve[4], 0.0);
        assert!(curve.windows(2).all(|w| w[1] < w[0]), "{curve:?}");
    }

    proptest! {
        #[test]
        fn mask_invariants(n in 1usize..5, m in 2usize..5, bits in proptest::collection::vec(0u8..2, 40)) {
            let anchor: Vec<usize> = (0..n * m).map(|i| i / m).collect();
            let t = Array2::from_shape_fn((n * m, 2), |(i, k)| bits[(i * 2 + k) % bits.len()]);
            let masks = positive_masks(&anchor, &t);
            for i in 0..n * m {
                prop_assert_eq!(masks.all_invariant.row(i).iter().filter(|&&b| b).count(), m - 1);
                prop_assert!(!masks.all_invariant[[i, i]]);
                for k in 0..2 {
                    let sub = &masks.per_subspace[k];
                    prop_assert!(!sub[[i, i]]);
                    for j in 0..n * m {
                        prop_assert_eq!(sub[[i, j]], sub[[j, i]]);
                        prop_assert!(!sub[[i, j]] || masks.all_invariant[[i, j]]);
                    }
                }
            }
            for a in 0..n {
                for k in 0..2 {
                    if (0..m).all(|v| t[[a * m + v, k]] == 0) {
                        for v in 0..m {
                            let i = a * m + v;
                            prop_assert_eq!(masks.per_subspace[k].row(i), masks.all_invariant.row(i));
                        }
                    }
                }
            }
        }
    }
}
