//! Procedural grounding problems: rendered scenes, templated queries with a
//! unique referent, letterbox preprocessing and the dataset files.

pub mod dataset;
pub mod letterbox;
pub mod query;
pub mod scene;

pub use crate::encoders::tokenize;
pub use dataset::{
    generate_sample, generate_split, grammar_vocabulary, read_split, read_vocabulary, sample_seed, split_of_seed,
    write_split, write_vocabulary, CategoryMix, GenerationSpec, Sample, Split,
};
pub use letterbox::{letterbox, LetterboxTransform};
pub use query::{generate_query, Category, Descriptor, GroundedQuery, Query, Relation, Superlative};
pub use scene::{generate_scene, render, Color, Scene, SceneObject, SceneSpec, ShapeKind, SizeClass};
