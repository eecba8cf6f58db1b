//! Phase-field gradient flows solved by minimizing movements over separable
//! neural fields.
//!
//! Each time step minimizes the Ginzburg–Landau energy plus a movement
//! penalty `‖φ − φ_prev‖² / 2τ`, evaluated by Gauss quadrature on a
//! structured mesh. An explicit finite-difference solver serves as the
//! reference.

pub mod autodiff;
pub mod driver;
pub mod error;
pub mod functional;
pub mod io;
pub mod optim;
pub mod quadrature;
pub mod reference_fd;
pub mod scalar;
pub mod sepnet;
pub mod snapshot;
pub mod spinn_baseline;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};

/// Double-precision field.
pub type Field = sepnet::SeparableField<f64>;
pub type Mesh = quadrature::QuadMesh<f64>;
pub type Snapshot = snapshot::FieldSnapshot<f64>;
