//! Data-flow extraction and analysis for privacy policies.
//!
//! The pipeline runs segment → screen → extract → classify → graph → analyse.
//! Each stage lives in its own module and can be used on its own.

pub mod agents;
pub mod analyser;
pub mod gateway;
pub mod graph;
pub mod knowledge;
pub mod parser;
pub mod report;
pub mod segmenter;
