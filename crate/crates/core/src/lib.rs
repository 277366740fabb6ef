//! Renewal-theory numerics for iterated perturbed random walks on a general
//! branching process tree.
//!
//! A perturbed random walk is the sequence `T_i = S_{i-1} + eta_i` built
//! from i.i.d. positive pairs `(xi, eta)`; iterating it as the offspring law
//! of a branching process yields generation counting processes `N_j(t)` with
//! means `V_j = V^{*(j)}`. This crate computes those objects three
//! independent ways and cross-checks them:
//!
//! * grid tables: the renewal function `U`, `V = U * G`, and the generation
//!   ladder `V_1..V_jmax` via Lebesgue-Stieltjes convolution ([`renewal`],
//!   [`gridfn`]);
//! * closed-form asymptotic predictors and envelope bounds ([`asymp`]),
//!   plus the growth rate `gamma` from the transform functional ([`gamma`]);
//! * exact Monte Carlo simulation of the confined tree ([`branching`]).
//!
//! [`dist`] defines the step-pair laws and [`rng`] the deterministic stream
//! derivation that makes replicas reproducible in isolation.

pub mod asymp;
pub mod branching;
pub mod dist;
mod error;
pub mod gamma;
pub mod gridfn;
pub mod numerics;
pub mod renewal;
pub mod rng;

pub use asymp::{Prediction, PredictionLabel, RatioRecord};
pub use branching::{LeftmostOutcome, SeedTrace, SimConfig, SimResult};
pub use dist::{Coupling, Family, JointStepModel, MomentReport};
pub use error::{Error, Result};
pub use gamma::{GammaResult, MuEval};
pub use gridfn::GridFunction;
pub use renewal::{BoundReport, PlateauEstimate, RenewalTables};
pub use rng::{StreamKey, StreamRole};
