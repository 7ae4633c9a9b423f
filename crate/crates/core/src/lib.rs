//! Core of `pulsemon`, a self-updating monitor of emotional expression in
//! social media posts.
//!
//! The crate scores posts against category lexica ([`lexicon`]), collects
//! posts from paginated liveticker endpoints and flat files ([`ingest`]),
//! turns match counts into weekday-corrected daily indicators
//! ([`metrics`]), weighs terms for comparative word clouds ([`wordcloud`])
//! and runs the daily update routine ([`pipeline`]).

pub mod ingest;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod wordcloud;

pub use lexicon::{
    apply_exclusions, compile_matcher, load_lexicon, match_post, ExclusionList, Lexicon, LexiconEntry,
    MatchResult, Matcher,
};
