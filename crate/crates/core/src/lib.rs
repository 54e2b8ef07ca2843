//! Label-guided synthetic speech corpora and low-resource spoken language
//! understanding experiments.
//!
//! The crate covers the full pipeline: prompt construction for a labelled
//! classification task ([`tasks`]), text generation against a pluggable LLM
//! backend ([`textgen`]), speech synthesis with sampled speaker embeddings
//! ([`speechsynth`]), corpus manifests with session folds and stratified
//! subsampling ([`corpus`]), a frozen speech encoder with optional low-rank
//! adapters ([`encoder`]), a lightweight classification head over weighted
//! layer averages ([`model`]), training and evaluation ([`trainer`],
//! [`metrics`]), and a resumable experiment matrix with report emission
//! ([`experiments`]).
//!
//! Everything downstream of a seed is deterministic: random state is always
//! derived from explicit seeds via [`seeds`], never from ambient entropy.

pub mod audio;
pub mod cache;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod params;
pub mod seeds;
pub mod speechsynth;
pub mod tasks;
pub mod textgen;
pub mod trainer;
