//! Online data-driven adaptive control for linear time-varying plants.
//!
//! A controller collects short windows of excited closed-loop data and, at
//! every switch instant, solves a robust LMI for a new feedback gain that
//! stabilizes every plant consistent with the data and a drift bound.

pub mod analysis;
pub mod controller;
pub mod harness;
pub mod linalg;
pub mod lmi;
pub mod plant;
pub mod sdp;
pub mod window;
