//! Noisy-label curation from side information.
//!
//! Class names, descriptions and a class hierarchy are turned into a class
//! relation graph. Visual prototypes are built per class, with samples whose
//! visual class-similarity profile agrees with the graph counting more. Each
//! sample is then weighted by its distance to its labeled class's prototype,
//! and a softmax classifier is trained on the weighted cross-entropy.
//!
//! Everything operates on precomputed feature vectors. [`synth`] produces
//! datasets with a known hierarchy and controlled label noise, and [`bench`]
//! runs ablation grids over them.

pub mod bench;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod prototype;
pub mod synth;
pub mod trainer;
pub mod weighting;

pub use dataset::{normalize_features, ClassMeta, Dataset, Sample, Taxonomy};
pub use embed::{embed_labels, EmbeddingMode, HashingEmbedder, LabelEmbedder, LabelEmbedding};
pub use error::{Error, Result};
pub use graph::{blend, embedding_similarity, taxonomy_similarity, GraphSources, RelationMatrix, RelationSource};
pub use io::{load_dataset, save_dataset};
pub use metrics::{roc_auc, weight_separation};
pub use pipeline::PipelineSettings;
pub use prototype::{
    consistence_score, initial_prototypes, refresh, weighted_prototype, ConsistenceParams, PrototypeParams,
    PrototypeSet, PrototypeWeighting, SimilarityVectors, TopK,
};
pub use synth::{corrupt, generate, simulate, NoiseRecord, SynthConfig};
pub use trainer::{evaluate, predict, train, weighted_ce_loss, ClassifierModel, Metrics, TrainConfig};
pub use weighting::{assign_weights, sample_weight, smooth_labels, SmoothedTarget, WeightAssignment, WeightStrategy};
