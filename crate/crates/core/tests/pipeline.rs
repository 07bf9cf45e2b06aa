//! Public-API walk through a tiny LOEV++ run: pretrain, checkpoint round
//! trip, frozen embeddings, retrieval and a sweep.

use loev_core::checkpoint::Checkpoint;
use loev_core::corpus::CorpusConfig;
use loev_core::eval::{cosine_sweep, embed_corpus_spaces, retrieval_scores, SweepKind};
use loev_core::trainer::{self, FINAL_CHECKPOINT};
use loev_core::{generate_corpus, MelExtractor, PretrainConfig, Topology};

fn tiny() -> PretrainConfig {
    let mut cfg = PretrainConfig::default();
    cfg.model.topology = Topology::LoevPlusPlus;
    cfg.model.channels = vec![2, 4];
    cfg.model.embed_dim = 8;
    cfg.model.head_hidden = vec![8];
    cfg.model.proj_dim = 4;
    cfg.chain.views_per_anchor = 2;
    cfg.train.batch_anchors = 3;
    cfg.train.steps = 3;
    cfg.train.seed = 4;
    cfg
}

#[test]
fn tiny_run_end_to_end() {
    let corpus = generate_corpus(&CorpusConfig {
        size: 12,
        duration: 6.0,
        ..Default::default()
    })
    .unwrap();
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = trainer::pretrain(&corpus, &cfg, Some(dir.path())).unwrap();
    assert_eq!(out.state.step, 3);
    assert_eq!(out.log.len(), 3);
    assert!(out.log.iter().all(|l| l.total.is_finite() && l.per_subspace.len() == 2));

    let model = Checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap().to_model().unwrap();
    let names: Vec<String> = model.config.spaces().into_iter().map(|s| model.config.space_name(s)).collect();
    for want in ["V^i", "V^p", "V^t", "V^++", "Z^i", "Z^p", "Z^t"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }

    let mel = MelExtractor::new(&cfg.features).unwrap();
    let stores = embed_corpus_spaces(&model, &mel, &corpus, &["V^p", "V^t"], 0, 0).unwrap();
    let direct = embed_corpus_spaces(&out.state.model, &mel, &corpus, &["V^p"], 0, 0).unwrap();
    assert_eq!(stores[0].track_mean, direct[0].track_mean);
    for store in &stores {
        assert_eq!(store.ids.len(), corpus.len());
        assert_eq!(store.chunks[0].nrows(), 2);
        let scores = retrieval_scores(store, &[1, 3]).unwrap();
        assert_eq!(scores.len(), 2);
        for s in scores {
            assert_eq!(s.n_queries, corpus.len());
            assert!(s.tag_precision.is_nan() || (0.0..=1.0).contains(&s.tag_precision));
        }
    }

    let sweep = cosine_sweep(&model, &mel, &corpus[..2], SweepKind::PitchShift, &[-1.0, 0.0, 1.0], &["Z^i", "Z^p"]).unwrap();
    for curve in &sweep.curves {
        assert!(curve[1].abs() < 1e-6, "identity point should be at zero distance: {curve:?}");
        assert!(curve.iter().all(|d| (0.0..=2.0).contains(d)));
    }
}
