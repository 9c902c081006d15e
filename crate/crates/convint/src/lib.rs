pub mod cover;
pub mod engine;
pub mod analysis;
pub mod blocks;
pub mod cli;
pub mod error;
pub mod geom2;
pub mod inapprox;
pub mod mat2;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat2 = mat2::Matrix2<f64>;
pub type Point2 = mat2::Vec2<f64>;
