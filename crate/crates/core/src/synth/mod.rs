//! Deterministic phantom corpora with ground-truth pair labels.

mod corpus;
mod phantom;

pub use corpus::{
    curate_test_set, generate_corpus, real_id, render_perturbed, synth_id, synthesize_corpus, Corpus,
    CorpusConfig, CorpusFiles, CurationConfig, GeneratedImage, Nuisance, PairRecord, PerRealCounts,
    PerturbationRanges, PerturbationSpec,
};
pub use phantom::{generate_phantom, BackgroundField, Ellipse, PhantomParams, PhantomSpec, Wave};
