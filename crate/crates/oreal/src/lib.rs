//! Superpixel-based active learning for multi-class semantic segmentation.
//!
//! The crate bundles a query-strategy library (one-vs-rest entropy with
//! class-debt balancing, plus classical uncertainty and class-balancing
//! baselines), a desk-scale pixel classifier, a synthetic scene generator,
//! segmentation metrics, and a closed-loop simulation harness with a CLI.
//!
//! The pieces compose bottom-up:
//!
//! - [`maps`]: image, probability, and label containers
//! - [`superpixel`]: partitioners and the simulated annotator
//! - [`scoring`]: pixel uncertainties and superpixel aggregation
//! - [`balancing`]: max-min budget allocation across classes
//! - [`strategies`]: query selection
//! - [`model`]: trainable softmax pixel classifier
//! - [`synthgen`]: reproducible synthetic datasets
//! - [`metrics`]: mIoU, AuALC, balance, boundary statistics
//! - [`harness`]: the experiment loop and result emission
//! - [`io`]: flat binary containers for all persisted artifacts

pub mod balancing;
pub mod error;
pub mod harness;
pub mod io;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod scoring;
pub mod strategies;
pub mod superpixel;
pub mod synthgen;

pub use error::{Error, Result};
pub use maps::{ClassId, GroundTruthMask, Image, PartialLabelMap, ProbabilityMap};
pub use scoring::AggregationMode;
pub use strategies::{ALState, StrategyKind};
pub use superpixel::{LabelScheme, SuperpixelPartition, SuperpixelRef};
