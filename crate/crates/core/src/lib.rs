//! Knowledgeable preference alignment for domain-specific question answering.
//!
//! The pipeline has four stages:
//!
//! 1. [`retrieval`]: embed questions and knowledge-base items, keep the
//!    top-`k` items (K1), an empty group (K2) and ranks `k+1..=2k` (K3).
//! 2. [`prefset`]: build a style preference set (golden answer plus answers
//!    from generators of decreasing capability) and a knowledge preference
//!    set (golden answer plus answers generated with K1, K2 and K3).
//! 3. [`trainer`]: fine-tune a [`model::TrainableModel`] on the golden
//!    answers while aligning its sequence scores with both preference
//!    orderings ([`objectives`]).
//! 4. [`eval`]: BLEU, ROUGE, a simplified METEOR, perplexity, preference
//!    score and human win/tie/lose tallies.

pub mod data_io;
pub mod eval;
pub mod http;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod prefset;
pub mod retrieval;
pub mod synthetic;
pub mod text;
pub mod trainer;
