//! Corpus schema and ingestion, preprocessing, feature extraction,
//! minibatching and synthetic corpora.

mod batching;
mod corpus;
mod features;
mod synthetic;

pub use batching::make_batches;
pub use corpus::{dedup, ingest, split, Corpus, MutantRecord};
pub use features::{extract_features, featurize, tokenize, FeatureRecord, FeatureSource, FeatureSpec, FeatureTable, HashKind};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticCorpus, SyntheticMode};
