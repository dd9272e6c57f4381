//! Personalized ranking of tag-search results.
//!
//! Search engines order tag matches the same way for everyone, even though an
//! ambiguous tag ("tiger" the cat, the lily, the shark) means different things
//! to different people. This crate ranks a pool of tag-search results per
//! user instead. It learns a latent-topic model over who annotates what: each
//! user mixes topics, each topic emits tags (and optionally group names), and
//! an image's probability under a querying user's topic mix becomes its rank
//! score. A separate, model-free path filters results to images owned by the
//! searcher's social contacts.
//!
//! The pieces, in pipeline order:
//!
//! - [`corpus`]: ingest and index annotated images, tag histograms, contact
//!   lists, and relevance labels.
//! - [`model`]: train the topic model with EM; inspect topics.
//! - [`model_file`]: lossless, byte-stable model serialization.
//! - [`personalize`]: project a user's tag usage into topic space and rank
//!   candidate images by their probability under that profile.
//! - [`contacts`]: direct and friend-of-friend contact sets, and filtering
//!   result lists by them.
//! - [`eval`]: precision / recall / R-precision over labeled result sets.
//! - [`synth`]: synthetic corpora with planted topic structure, for testing
//!   recovery and ranking quality end to end.
//!
//! All randomness is seeded and all iteration orders are fixed, so equal
//! inputs produce byte-identical outputs.

pub mod contacts;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod model_file;
pub mod personalize;
pub mod synth;

pub use error::{Error, Result};
