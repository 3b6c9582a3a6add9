//! CP decompositions of order-3 tensors whose third mode is a function of
//! time observed at subject-specific, unaligned time points.
//!
//! The functional factors live in a reproducing kernel Hilbert space and are
//! stored as kernel coefficients over the union of all observed times. Four
//! solvers are provided:
//!
//! * [`rkhs_td`]: alternating least squares for the squared-error objective.
//! * [`s_rkhs_td`]: the same with row-sampling sketches.
//! * [`grkhs_td`]: gradient descent for generalized losses.
//! * [`s_grkhs_td`]: stochastic gradients over sampled sub-tensors.
//!
//! Everything is generic over the scalar type; the `*64` and `*32` aliases
//! fix it.

pub mod als;
pub mod error;
pub mod gcp;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod sgd;
pub mod sketch;
pub mod synth;
pub mod tensor;
pub mod trajectory;
pub mod transform;

pub use als::{rkhs_td, AlsConfig, FitReport, Init};
pub use error::{Error, Result};
pub use gcp::{generalized_loss, grkhs_td, GdConfig};
pub use kernels::KernelSpec;
pub use losses::{LossKind, LossSpec};
pub use model::{relative_loss, FactorModel, Problem};
pub use scalar::Scalar;
pub use sgd::{s_grkhs_td, SgdConfig};
pub use sketch::{s_rkhs_td, SketchConfig, SketchPlan, SketchSizes};
pub use tensor::{build_tensor, GlobalGrid, Labels, Record, UnalignedTensor};
pub use trajectory::{StopRule, Trajectory, TrajectoryPoint};

pub type Tensor64 = UnalignedTensor<f64>;
pub type Tensor32 = UnalignedTensor<f32>;
pub type Model64 = FactorModel<f64>;
pub type Model32 = FactorModel<f32>;
pub type Problem64<'a> = Problem<'a, f64>;
pub type Problem32<'a> = Problem<'a, f32>;
pub type Loss64 = LossSpec<f64>;
pub type Loss32 = LossSpec<f32>;
pub type Report64 = FitReport<f64>;
pub type Report32 = FitReport<f32>;
