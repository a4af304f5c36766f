//! Generative retrieval with n-gram identifiers.
//!
//! Contexts (documents, passages, sentences or entities) are identified by
//! sampled important n-grams. A next-token model decodes n-grams under an
//! FM-index constraint so every generated n-gram occurs in the corpus, and
//! candidate contexts are ranked by combining the weights of all generated
//! n-grams they contain.

mod binio;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod fm_index;
pub mod identifiers;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod scorer;

pub use error::{Error, Result};
