//! Inexact proximal quasi-Newton solver for l1-regularized smooth losses.

pub mod inner;
pub mod lbfgs;
pub mod linalg;
pub mod model;
pub mod outer;
pub mod problem;
pub mod reference;
pub mod rng;
pub mod synth;
pub mod theory;
