//! Core library for building instruction datasets from real tabular data,
//! sampling synthetic rows through a text-generation backend, and scoring
//! the result for utility and privacy.
//!
//! The pipeline is: ingest a CSV into a typed [`Dataset`], group training
//! rows with their nearest neighbors ([`neighbors`]), encode each group as
//! an instruction sample ([`codec`]), drive a generation backend to emit
//! synthetic rows ([`sampler`]), and evaluate the synthetic table against
//! the real one ([`privacy`], [`efficacy`]).

pub mod backend;
pub mod codec;
pub mod efficacy;
pub mod fixtures;
pub mod neighbors;
pub mod privacy;
pub mod sampler;
pub mod seeds;
pub mod table;

pub use backend::{
    BackendConfig, BackendError, BackendKind, GenerationBackend, GenerationRequest, ScoredText,
};
pub use codec::{
    decode_record, encode_record, DecodeError, DownstreamTaskConfig, EncodedRecord,
    InstructionSample, TemplateConfig,
};
pub use efficacy::{ClassMetrics, ClassifierKind, EfficacyError, EfficacyReport, PredictionRecord};
pub use neighbors::{GroupPurpose, GroupSet, NeighborError, NeighborGroup};
pub use privacy::{MetricError, PrivacyReport};
pub use sampler::{SampleError, SamplerOptions, SamplingReport};
pub use table::{
    Dataset, FeatureKind, FeatureSpec, Record, Schema, Split, TableError, Transform, Value,
};
