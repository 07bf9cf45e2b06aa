//! Frozen-embedding evaluation: probes, metrics, retrieval and sweeps.

pub mod metrics;
pub mod probe;
pub mod report;
pub mod retrieval;
pub mod store;
pub mod sweep;

pub use metrics::{auroc, average_precision, cosine_distance, key_weighted, tempo_acc};
pub use probe::{train_probe, ProbeConfig, ProbeResult, Targets, Task};
pub use retrieval::{knn_retrieve, retrieval_scores, Neighbor, RetrievalScores};
pub use store::{embed_chunks, embed_corpus, embed_corpus_spaces, split_tracks, EmbeddingStore, Split};
pub use sweep::{cosine_sweep, parse_grid, CosineSweepResult, SweepKind};
