//! Frozen chunk embeddings and deterministic track splits.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::audio::{AudioClip, CHUNK_SAMPLES};
use crate::augment::time_stretch;
use crate::corpus::ClipSpec;
use crate::error::{Error, Result};
use crate::features::MelExtractor;
use crate::model::{Model, Space};
use crate::seed;

/// Chunks embedded per forward pass.
const EMBED_BATCH: usize = 32;

/// Probe-time stretch rates are drawn from U(0.8, 1.2).
pub const PROBE_STRETCH_RANGE: [f64; 2] = [0.8, 1.2];

/// Chunk embeddings of one space for a list of tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub space: String,
    pub dim: usize,
    /// Original track index of each entry; ties in retrieval break on it.
    pub ids: Vec<usize>,
    /// Per track, (chunks x dim).
    pub chunks: Vec<Array2<f32>>,
    /// Per track, time-stretched chunk embeddings with their playback rate.
    pub stretched: Vec<Vec<(f64, Array1<f32>)>>,
    /// (tracks x dim) mean over each track's chunks.
    pub track_mean: Array2<f32>,
    pub labels: Vec<Option<ClipSpec>>,
}

impl EmbeddingStore {
    pub fn new(space: impl Into<String>, ids: Vec<usize>, chunks: Vec<Array2<f32>>, labels: Vec<Option<ClipSpec>>) -> Result<Self> {
        let dim = chunks.first().map(|c| c.ncols()).unwrap_or(0);
        if chunks.len() != ids.len() || labels.len() != ids.len() {
            return Err(Error::Shape {
                expected: format!("{} tracks", ids.len()),
                actual: format!("{} chunk sets, {} labels", chunks.len(), labels.len()),
            });
        }
        let mut track_mean = Array2::zeros((chunks.len(), dim));
        for (t, c) in chunks.iter().enumerate() {
            if c.ncols() != dim || c.nrows() == 0 {
                return Err(Error::Shape {
                    expected: format!("nonempty (_, {dim})"),
                    actual: format!("{:?}", c.dim()),
                });
            }
            track_mean.row_mut(t).assign(&c.mean_axis(Axis(0)).unwrap());
        }
        let n = ids.len();
        Ok(EmbeddingStore {
            space: space.into(),
            dim,
            ids,
            chunks,
            stretched: vec![Vec::new(); n],
            track_mean,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Entries at `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> EmbeddingStore {
        EmbeddingStore {
            space: self.space.clone(),
            dim: self.dim,
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            chunks: rows.iter().map(|&r| self.chunks[r].clone()).collect(),
            stretched: rows.iter().map(|&r| self.stretched[r].clone()).collect(),
            track_mean: self.track_mean.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
        }
    }
}

/// Embed a list of 3 s chunks into every requested space.
pub fn embed_chunks(model: &Model<f32>, mel: &MelExtractor, chunks: &[AudioClip], spaces: &[Space]) -> Result<Vec<Array2<f32>>> {
    let frames = mel.params().frames();
    let bins = mel.params().mel_bins;
    let dims: Vec<usize> = spaces.iter().map(|&s| model.config.space_dim(s)).collect();
    let parts: Vec<Vec<Array2<f32>>> = chunks
        .par_chunks(EMBED_BATCH)
        .map(|group| -> Result<Vec<Array2<f32>>> {
            let mut x = Array3::<f32>::zeros((group.len(), frames, bins));
            for (i, c) in group.iter().enumerate() {
                x.index_axis_mut(Axis(0), i).assign(&mel.log_mel(c)?.values);
            }
            let bundle = model.embed(&x)?;
            Ok(spaces.iter().map(|&s| bundle.space(s)).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..spaces.len())
        .map(|s| {
            if parts.is_empty() {
                return Array2::zeros((0, dims[s]));
            }
            let views: Vec<_> = parts.iter().map(|p| p[s].view()).collect();
            ndarray::concatenate(Axis(0), &views).unwrap()
        })
        .collect())
}

/// Embed every track's non-overlapping 3 s chunks into each named space.
/// With `stretch_copies > 0`, also embeds that many copies of every chunk
/// played at a rate drawn from U(0.8, 1.2), seeded per (track, chunk, copy).
pub fn embed_corpus_spaces(
    model: &Model<f32>,
    mel: &MelExtractor,
    tracks: &[AudioClip],
    space_names: &[&str],
    stretch_copies: usize,
    stretch_seed: u64,
) -> Result<Vec<EmbeddingStore>> {
    let spaces = space_names
        .iter()
        .map(|n| model.config.resolve_space(n))
        .collect::<Result<Vec<_>>>()?;
    let mut chunks = Vec::new();
    let mut owner = Vec::new();
    for (t, track) in tracks.iter().enumerate() {
        let c = track.chunks();
        if c.is_empty() {
            return Err(Error::Length {
                needed: CHUNK_SAMPLES,
                available: track.len(),
            });
        }
        owner.extend(std::iter::repeat_n(t, c.len()));
        chunks.extend(c);
    }
    let embedded = embed_chunks(model, mel, &chunks, &spaces)?;

    let mut stretched_clips = Vec::new();
    let mut stretched_meta = Vec::new();
    for (i, chunk) in chunks.iter().enumerate() {
        for copy in 0..stretch_copies {
            let mut rng = seed::rng_for(stretch_seed, &[owner[i] as u64, i as u64, copy as u64]);
            let rate = rng.random_range(PROBE_STRETCH_RANGE[0]..PROBE_STRETCH_RANGE[1]);
            stretched_meta.push((owner[i], rate));
            stretched_clips.push(chunk.replace_samples(time_stretch(&chunk.samples, rate)));
        }
    }
    let stretched = embed_chunks(model, mel, &stretched_clips, &spaces)?;

    let labels: Vec<Option<ClipSpec>> = tracks.iter().map(|t| t.labels.clone()).collect();
    spaces
        .iter()
        .enumerate()
        .map(|(s, &space)| {
            let per_track: Vec<Array2<f32>> = (0..tracks.len())
                .map(|t| {
                    let rows: Vec<usize> = (0..owner.len()).filter(|&i| owner[i] == t).collect();
                    embedded[s].select(Axis(0), &rows)
                })
                .collect();
            let mut store = EmbeddingStore::new(model.config.space_name(space), (0..tracks.len()).collect(), per_track, labels.clone())?;
            for (j, &(t, rate)) in stretched_meta.iter().enumerate() {
                store.stretched[t].push((rate, stretched[s].row(j).to_owned()));
            }
            Ok(store)
        })
        .collect()
}

/// Single-space convenience wrapper without probe-time stretching.
pub fn embed_corpus(model: &Model<f32>, mel: &MelExtractor, tracks: &[AudioClip], space_name: &str) -> Result<EmbeddingStore> {
    Ok(embed_corpus_spaces(model, mel, tracks, &[space_name], 0, 0)?.remove(0))
}

/// Seeded 70/10/20 train/val/test split by track.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_tracks(n: usize, split_seed: u64) -> Result<Split> {
    if n < 3 {
        return Err(Error::Split(format!("need at least 3 tracks, have {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(split_seed));
    let n_train = ((n as f64 * 0.7).round() as usize).clamp(1, n - 2);
    let n_val = ((n as f64 * 0.1).round() as usize).clamp(1, n - n_train - 1);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_clip, ClipSpec};
    use crate::features::MelParams;
    use crate::model::{build_model, ModelConfig, Topology};

    fn small_model(topology: Topology) -> Model<f32> {
        let cfg = ModelConfig {
            channels: vec![2, 4],
            embed_dim: 6,
            head_hidden: vec![8],
            proj_dim: 5,
            topology,
            ..Default::default()
        };
        build_model(&cfg, 1).unwrap()
    }

    #[test]
    fn tiling_dimensions_and_determinism() {
        let mel = MelExtractor::new(&MelParams::default()).unwrap();
        let tracks = vec![
            generate_clip(&ClipSpec::tone(220.0, 12.0, 1)).unwrap(),
            generate_clip(&ClipSpec::clicks(100.0, 7.0, 2)).unwrap(),
        ];
        let model = small_model(Topology::LoevPlusPlus);
        let stores = embed_corpus_spaces(&model, &mel, &tracks, &["V++", "Vi", "Vp", "Vt"], 0, 0).unwrap();
        assert_eq!(stores[0].chunks[0].nrows(), 4);
        assert_eq!(stores[0].chunks[1].nrows(), 2);
        assert_eq!(stores[0].dim, stores[1].dim + stores[2].dim + stores[3].dim);
        let mean = stores[1].chunks[0].mean_axis(Axis(0)).unwrap();
        assert_eq!(stores[1].track_mean.row(0), mean);
        let again = embed_corpus(&model, &mel, &tracks, "V++").unwrap();
        assert_eq!(again, stores[0]);
        assert!(matches!(embed_corpus(&small_model(Topology::Loev), &mel, &tracks, "Vp"), Err(Error::UnknownSpace(_))));
    }

    #[test]
    fn stretched_copies_are_recorded() {
        let mel = MelExtractor::new(&MelParams::default()).unwrap();
        let tracks = vec![generate_clip(&ClipSpec::tone(220.0, 6.0, 1)).unwrap()];
        let model = small_model(Topology::Loev);
        let s = embed_corpus_spaces(&model, &mel, &tracks, &["V"], 2, 9).unwrap().remove(0);
        assert_eq!(s.stretched[0].len(), 4);
        assert!(s.stretched[0].iter().all(|(r, e)| (0.8..1.2).contains(r) && e.len() == s.dim));
    }

    #[test]
    fn splits_partition_and_are_seeded() {
        let s = split_tracks(100, 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_tracks(100, 4).unwrap());
        assert_ne!(s, split_tracks(100, 5).unwrap());
        assert!(split_tracks(2, 0).is_err());
    }
}
