//! Attribute-guided visual search for catalog images.
//!
//! Items are indexed offline under a generated set of attribute symbols
//! (an inverted index keyed by attribute), and ranked online by a weighted
//! combination of binary-code Hamming distance and HSV color-histogram
//! distance. Attribute sets come from an LSTM that decodes them as a
//! sequence, optionally with a *guided* category forced as the first
//! symbol; detector ROIs are filtered by that same category before color
//! features are extracted.
//!
//! Module map:
//!
//! - [`taxonomy`]: attribute vocabulary, groups, category applicability.
//! - [`residual`]: shortcut-connected dense stack used as the image encoder.
//! - [`attrseq`]: LSTM attribute-sequence model, training, guided decoding.
//! - [`visfeat`]: binarization, popcount Hamming, HSV histograms, fusion.
//! - [`roi`]: boxes, detector interface, guided filtering, IoU and mAP.
//! - [`index`]: inverted index, candidate generation, top-k search, snapshots.
//! - [`pipeline`]: offline ingestion and the three online query options.
//! - [`service`]: HTTP daemon over the online phase.
//! - [`cli`]: the operator command line.
//! - [`synth`]: deterministic synthetic catalogs for demos and tests.

pub mod attrseq;
pub mod cli;
mod error;
pub mod index;
pub mod pipeline;
pub mod residual;
pub mod roi;
pub mod service;
pub mod synth;
pub mod taxonomy;
pub mod visfeat;

pub use error::{Error, Result};
