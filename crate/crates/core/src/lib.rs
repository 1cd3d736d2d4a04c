//! Free-flyer trajectory optimization lab.
//!
//! A desk-scale pipeline for studying learned warm-starts in nonconvex
//! trajectory optimization: planar free-flyer dynamics, a sequential convex
//! programming (SCP) solver built on a dense simplex core, a small
//! decoder-only transformer trained on multimodal trajectory tokens, and a
//! benchmark harness that compares transformer warm-starts against
//! convex-relaxation warm-starts.

pub mod dynamics;
pub mod lp;
pub mod model;
pub mod pipeline;
pub mod repr;
pub mod rollout;
pub mod scenario;
pub mod trajopt;
