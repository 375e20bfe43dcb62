//! Dependence-robust population-size estimation from k-sample
//! capture-recapture data.
//!
//! A capture-recapture study observes how many units fall in each nonempty
//! intersection of `k` samples; the never-captured count is missing, so the
//! population size `M` is only point-identified under independence
//! assumptions. This crate fits the classical point-identified log-linear
//! models, and, under weak dependence restrictions (a bound on the
//! highest-order log-linear interaction, or bounds on pairwise capture odds
//! ratios), computes the identification interval for `M` together with two
//! confidence constructions: a two-step test-inversion bootstrap over moment
//! inequalities, and a profile-likelihood interval. A simulation harness
//! measures coverage of both against the point-identified baselines.

pub mod ci;
pub mod error;
pub mod loglinear;
pub mod moments;
pub mod optim;
pub mod profile;
pub mod restrictions;
pub mod rng;
pub mod simulate;
pub mod table;
pub mod tib;

pub use ci::CiResult;
pub use error::{Error, Result};
pub use restrictions::{MeanVector, Restriction, RestrictionSpec};
pub use table::ContingencyTable;
