//! Probabilistic GLR parsing of part-of-speech and punctuation label
//! sequences.
//!
//! A feature-based grammar ([`grammar`]) is compiled into a context-free
//! backbone plus feature residue, the backbone into LALR(1) tables with all
//! conflicts retained ([`lalr`]), and label sequences are parsed into packed
//! forests by a graph-structured-stack parser that unifies residue at every
//! reduce ([`glr`]). Analyses are ranked by a model over LR transitions
//! ([`prob`]); [`text`] supplies the punctuation text grammar and [`eval`] the
//! corpus metrics.

pub mod eval;
pub mod glr;
pub mod grammar;
pub mod lalr;
pub mod pipeline;
pub mod prob;
pub mod text;
