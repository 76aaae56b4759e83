//! Analyses of how a layered transformer encoder represents argument structure
//! constructions (transitive, ditransitive, caused-motion, resultative).
//!
//! The crate works on activation archives: per-sentence, per-layer token hidden
//! states plus per-head attention matrices, stored in a small raw-float on-disk
//! format (see [`archive`]). On top of that it provides
//!
//! - [`gdv`]: the Generalized Discrimination Value clustering score,
//! - [`projection`]: classical MDS and exact t-SNE 2-D projections,
//! - [`probe`]: cross-validated one-vs-rest linear SVM probes,
//! - [`attention`]: attention-mass ANOVA F and Fisher discriminant ratios,
//! - [`report`]: CSV tables and standalone SVG figures,
//!
//! together with a deterministic sentence generator ([`dataset`]), a synthetic
//! archive generator for tests ([`fixtures`]) and the `asc-lens` command line
//! front end ([`cli`]).

pub mod archive;
pub mod attention;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod gdv;
pub mod probe;
pub mod projection;
pub mod report;

pub use archive::{
    read_archive, slice_role, write_archive, ActivationArchive, ArchiveManifest, ConstructionLabel, RoleSlice,
    SentenceRecord, TokenRecord, TokenRole,
};
pub use error::{Error, Result};
