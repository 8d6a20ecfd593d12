pub mod error;
pub mod grid;
pub mod harness;
pub mod baselines;
pub mod detect;
pub mod downlink;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod visibility;

pub use error::{Error, Result};
pub use grid::{ComplexGrid, Domain, RealGrid};
pub use model::{PathParams, Scenario, SystemConfig, Visibility};
