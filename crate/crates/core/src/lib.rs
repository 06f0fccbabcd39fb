//! Closed-loop correction of images generated from classical poetry.
//!
//! A query poem is matched against an annotated corpus, a chat model lists
//! the key picture elements, and an initial image is generated from the
//! translation. Each correction round then detects which elements are
//! present, asks a suggester for an updated box layout, diffs it into
//! Retain/Remove/Add/Move/Replace operations and hands the result to a
//! grounded editor. Every model sits behind a trait with a remote and a
//! deterministic simulated implementation.

pub mod assets;
pub mod backends;
pub mod boxmodel;
pub mod config;
pub mod corpus;
pub mod elements;
pub mod embedding;
pub mod evaluate;
pub mod fixtures;
pub mod manifest;
pub mod pipeline;
pub mod suggest;
pub mod text;

pub use assets::PromptAssets;
pub use boxmodel::{BoundingBox, ObjectList, SceneObject};
pub use corpus::{Corpus, PoemRecord};
pub use elements::{KeyElement, KeyElementSet};
pub use embedding::{Embedder, EmbeddingVector, HashedNgramEmbedder};
pub use evaluate::{EvalConfig, EvalScore};
pub use manifest::RunManifest;
pub use pipeline::{Clients, PipelineConfig, PipelineResult};
pub use suggest::{EditOp, EditPlan, EditPrompt};
