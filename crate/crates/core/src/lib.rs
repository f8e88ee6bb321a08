//! Character-level natural language generation from slot-value meaning
//! representations, with synthetic adequacy data and n-best re-ranking.
//!
//! Pipeline: [`mr`] parses inputs, [`neural`] generates n-best lists,
//! [`augment`] and [`adequacy`] build the omission classifier, [`rerank`]
//! picks the final utterance and [`eval`] scores the output.

pub mod adequacy;
pub mod augment;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod mr;
pub mod nbest;
pub mod neural;
pub mod rerank;
