//! Staggered difference-in-differences with geographically weighted local
//! re-estimation and functional clustering of effect trajectories.
//!
//! The crate is organised bottom-up:
//!
//! * [`panel`]: panel data model, CSV ingestion, cohorts, validation;
//! * [`did`]: group-time effects, event-study aggregation, bootstrap inference;
//! * [`kernel`]: distances, spatial decay kernels, bandwidth selection;
//! * [`local`]: per-unit kernel-weighted event studies and their comparison;
//! * [`fda`]: B-spline smoothing and discriminative functional clustering;
//! * [`synth`]: synthetic panels with planted ground truth;
//! * [`export`]: CSV / JSON / GeoJSON writers for every result type.

pub mod did;
pub mod export;
pub mod fda;
pub mod kernel;
mod linalg;
pub mod local;
pub mod panel;
pub mod synth;
