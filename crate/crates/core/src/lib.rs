//! Self-similar solutions of Curve Shortening in R^n.
//!
//! The crate builds, integrates, classifies and analyses solitons of the
//! curve shortening flow: curves that evolve by a one-parameter group of
//! rotations, translations and parabolic dilations.

pub mod asymptotics;
pub mod catalog;
pub mod compact;
pub mod diagnostics;
pub mod error;
pub mod export;
pub mod family;
pub mod flow;
pub mod geometry;
pub mod helix;
pub mod ode;
pub mod skewlin;
pub mod taxonomy;

pub use diagnostics::DiagnosticSample;
pub use error::{Error, Result};
pub use flow::{
    integrate, integrate_bidirectional, integrate_in_sigma, integrate_with_events, vector_field, Event, IntegrateOptions, PhaseState,
    SolitonParams, Termination, Trajectory, TrajectorySample,
};
pub use skewlin::{skew_from_planes, skew_normal_form, Eigenspace, Plane, Resonance, SkewSpectrum};
pub use taxonomy::{classify, CanonicalGenerator, Category, Conjugation, GeneratorRaw};
pub use helix::{HelixSolution, TimeCoefficient};
pub use asymptotics::{Region, RegionSpec, ShootingOptions, ShootingResult, SpiralFit, SpiralSign};
pub use catalog::{make, FixtureParams, Label, NamedSoliton};
