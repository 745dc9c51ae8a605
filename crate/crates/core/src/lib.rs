//! Hybrid claim verification: knowledge-graph evidence first, web search as fallback.

pub mod annotation;
pub mod classify;
pub mod config;
pub mod domain;
pub mod eval;
pub mod kg;
pub mod linking;
pub mod pipeline;
pub mod ranking;
pub mod sparql;
pub mod transport;
pub mod web;

pub use domain::{Claim, EvidenceItem, Label, Stage, Verdict, VerificationResult};
